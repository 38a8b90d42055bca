mod parser;
mod plan;
mod select;

pub use parser::{parse_query, Aggregate, QuerySpec, Targets};
pub use plan::{
    aggregate, execute, plan, run, CellSelection, Output, QueryMeta, QueryPlan, ResultSet,
};
pub use select::{
    clamp_confidence, h_selection, h_selection_with, per_cell_confidence, SelectionResult,
    BUDGET_SLACK, MIN_CONFIDENCE,
};
