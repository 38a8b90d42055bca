//! Planning and execution: match cells, pick blocks per cell, scan, filter,
//! project or aggregate.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;

use super::parser::{parse_query, Aggregate, QuerySpec, Targets};
use super::select::{clamp_confidence, h_selection, per_cell_confidence, SelectionResult};
use crate::error::{Error, Result};
use crate::probability::not_existence_prob;
use crate::store::codec::encode_fields;
use crate::store::{BlockRef, Table};
use crate::tablespace::{cells_matching, Predicate, PredicateOp, Record, Value, ValueKind};

type Universe = Vec<(BlockRef, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    /// Column indexes in output order.
    Columns(Vec<usize>),
    Aggregate {
        func: Aggregate,
        column: usize,
    },
}

/// Block selection for one matched cell that holds data.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSelection {
    /// Records of the cell across all slots.
    pub omega: u64,
    /// Number of (slot, block) pairs considered.
    pub universe: usize,
    pub selection: SelectionResult<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub spec: QuerySpec,
    /// Requested confidence after clamping.
    pub confidence: f64,
    pub per_cell_confidence: f64,
    /// Every cell the predicates can reach, ascending.
    pub matched_cells: Vec<usize>,
    /// Selections for the matched cells that hold records.
    pub cells: Vec<CellSelection>,
    /// Union of the per-cell selections; the blocks to scan.
    pub blocks: BTreeSet<BlockRef>,
    /// Blocks holding any record of a matched cell with probability > 0.
    pub candidate_blocks: usize,
    /// All predicates, resolved to columns and literal kinds; applied to
    /// every scanned record.
    pub filters: Vec<(usize, PredicateOp)>,
    pub output: Output,
    pub columns: Vec<String>,
    pub combined_expected_pc: f64,
}

impl QueryPlan {
    pub fn data_cells(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.selection.cell).collect()
    }

    pub fn blocks_skipped(&self) -> usize {
        self.candidate_blocks - self.blocks.len()
    }

    /// True when the record passes every predicate.
    pub fn accepts(&self, record: &[Value]) -> bool {
        self.filters
            .iter()
            .all(|(col, op)| op.matches(&record[*col]))
    }
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "table: {}", self.spec.table)?;
        writeln!(f, "output: {}", self.columns.join(", "))?;
        for p in &self.spec.predicates {
            writeln!(f, "predicate: {} {}", p.attribute, p.op)?;
        }
        writeln!(
            f,
            "confidence: {} (per cell {:.6})",
            self.confidence, self.per_cell_confidence
        )?;
        writeln!(
            f,
            "cells: {} matched, {} with data",
            self.matched_cells.len(),
            self.cells.len()
        )?;
        for c in &self.cells {
            let s = &c.selection;
            writeln!(
                f,
                "  cell {}: omega {}, blocks {}, selected {}, skipped {}, expected_pc {:.6}",
                s.cell,
                c.omega,
                c.universe,
                s.selected.len(),
                s.skipped.len(),
                s.expected_pc
            )?;
        }
        writeln!(
            f,
            "blocks: scan {}, skip {} of {}",
            self.blocks.len(),
            self.blocks_skipped(),
            self.candidate_blocks
        )?;
        writeln!(f, "expected_pc: {:.6}", self.combined_expected_pc)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QueryMeta {
    pub expected_pc: f64,
    pub blocks_scanned: usize,
    pub blocks_skipped: usize,
    pub trunks_scanned: usize,
    /// Lines read from the scanned trunks, including other cells' records.
    pub records_scanned: u64,
}

impl fmt::Display for QueryMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "expected_pc={:.6} blocks_scanned={} blocks_skipped={} trunks_scanned={} records_scanned={}",
            self.expected_pc,
            self.blocks_scanned,
            self.blocks_skipped,
            self.trunks_scanned,
            self.records_scanned
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub columns: Vec<String>,
    /// Projected rows; empty for aggregate queries.
    pub rows: Vec<Record>,
    pub aggregate: Option<Value>,
    pub meta: QueryMeta,
}

impl ResultSet {
    /// Tab-separated rows (or the aggregate), one per line, escaped like
    /// trunk lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        match &self.aggregate {
            Some(v) => {
                encode_fields(&mut out, std::slice::from_ref(v));
                out.push('\n');
            }
            None => {
                for r in &self.rows {
                    encode_fields(&mut out, r);
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Resolves `spec` against the table and selects blocks for every matched
/// cell.
pub fn plan<R: Rng + ?Sized>(spec: &QuerySpec, table: &Table, rng: &mut R) -> Result<QueryPlan> {
    let schema = table.schema();
    if spec.table != schema.name() {
        return Err(Error::Planning(format!(
            "unknown table `{}` (this table is `{}`)",
            spec.table,
            schema.name()
        )));
    }
    let column = |name: &str| {
        schema
            .column(name)
            .ok_or_else(|| Error::Planning(format!("unknown attribute `{name}`")))
    };

    let mut filters = Vec::with_capacity(spec.predicates.len());
    let mut dim_preds = Vec::new();
    for p in &spec.predicates {
        let col = column(&p.attribute)?;
        let kind = schema.attributes()[col].kind;
        let op = p.op.clone().map_values(|v| v.coerce(kind))?;
        let resolved = Predicate::new(p.attribute.clone(), op.clone())
            .map_err(|e| Error::Planning(e.to_string()))?;
        if schema.dimension(&p.attribute).is_some() {
            dim_preds.push(resolved);
        }
        filters.push((col, op));
    }

    let (output, columns) = match &spec.targets {
        Targets::All => (
            Output::Columns((0..schema.attributes().len()).collect()),
            schema.attributes().iter().map(|a| a.name.clone()).collect(),
        ),
        Targets::Columns(names) => {
            let cols = names
                .iter()
                .map(|n| column(n))
                .collect::<Result<Vec<_>>>()?;
            (Output::Columns(cols), names.clone())
        }
        Targets::Aggregate { func, attribute } => {
            let col = column(attribute)?;
            let kind = schema.attributes()[col].kind;
            if *func != Aggregate::Count && !matches!(kind, ValueKind::Integer | ValueKind::Float) {
                return Err(Error::Planning(format!(
                    "{func}({attribute}) needs a numeric attribute, `{attribute}` is {kind}"
                )));
            }
            (
                Output::Aggregate {
                    func: *func,
                    column: col,
                },
                vec![format!("{func}({attribute})")],
            )
        }
    };

    let matched_cells: Vec<usize> = cells_matching(schema, &dim_preds)?
        .into_iter()
        .map(|c| c.flat)
        .collect();

    let manifest = table.manifest();
    let cfg = table.config();
    let probs = table.prob_table();
    // (cell, records across slots, blocks with their not-existence probability)
    let universes: Vec<(usize, u64, Universe)> = matched_cells
        .iter()
        .filter_map(|&cell| {
            let mut omega_total = 0;
            let mut universe = Vec::new();
            for slot in 0..cfg.slots {
                let omega = manifest.omega(slot, cell);
                if omega == 0 {
                    continue;
                }
                omega_total += omega;
                universe.extend((1..=cfg.n).map(|block| {
                    let pne = not_existence_prob(probs.dpa(cell + 1, block), omega);
                    (BlockRef { slot, block }, pne)
                }));
            }
            (omega_total > 0).then_some((cell, omega_total, universe))
        })
        .collect();

    let confidence = clamp_confidence(spec.confidence);
    let per_cell = per_cell_confidence(confidence, universes.len());
    let mut cells = Vec::with_capacity(universes.len());
    let mut blocks = BTreeSet::new();
    let mut candidates = BTreeSet::new();
    let mut combined = 1.0;
    for (cell, omega, universe) in universes {
        candidates.extend(universe.iter().map(|&(b, _)| b));
        let selection = h_selection(cell, &universe, per_cell, rng);
        blocks.extend(selection.selected.iter().copied());
        combined *= selection.expected_pc;
        cells.push(CellSelection {
            omega,
            universe: universe.len(),
            selection,
        });
    }

    Ok(QueryPlan {
        spec: spec.clone(),
        confidence,
        per_cell_confidence: per_cell,
        matched_cells,
        cells,
        blocks,
        candidate_blocks: candidates.len(),
        filters,
        output,
        columns,
        combined_expected_pc: combined,
    })
}

/// Scans the planned blocks for records of the matched cells and applies the
/// predicates, projection and aggregate.
pub fn execute(plan: &QueryPlan, table: &Table) -> Result<ResultSet> {
    let scan = table.scan_blocks(&plan.blocks, &plan.data_cells())?;
    let kept = scan
        .rows
        .into_iter()
        .map(|r| r.record)
        .filter(|r| plan.accepts(r));
    let (rows, aggregate) = match &plan.output {
        Output::Columns(cols) => (
            kept.map(|r| cols.iter().map(|&c| r[c].clone()).collect())
                .collect(),
            None,
        ),
        Output::Aggregate { func, column } => {
            let values: Vec<Value> = kept.map(|mut r| r.swap_remove(*column)).collect();
            (Vec::new(), Some(aggregate(*func, &values)))
        }
    };
    Ok(ResultSet {
        columns: plan.columns.clone(),
        rows,
        aggregate,
        meta: QueryMeta {
            expected_pc: plan.combined_expected_pc,
            blocks_scanned: plan.blocks.len(),
            blocks_skipped: plan.blocks_skipped(),
            trunks_scanned: scan.trunks_scanned,
            records_scanned: scan.lines_scanned,
        },
    })
}

/// Parses, plans and executes `text` against `table`.
pub fn run<R: Rng + ?Sized>(text: &str, table: &Table, rng: &mut R) -> Result<ResultSet> {
    let spec = parse_query(text)?;
    let plan = plan(&spec, table, rng)?;
    execute(&plan, table)
}

/// SQL semantics: empty values are ignored; `count` of nothing is 0, `sum`
/// and `avg` of nothing are empty. Integer sums stay integral unless they
/// overflow.
pub fn aggregate(func: Aggregate, values: &[Value]) -> Value {
    let present = values.iter().filter(|v| !v.is_empty());
    match func {
        Aggregate::Count => Value::Int(present.count() as i64),
        Aggregate::Sum | Aggregate::Avg => {
            let mut n = 0u64;
            let mut int_sum = Some(0i64);
            let mut float_sum = 0.0;
            let mut all_int = true;
            for v in present {
                n += 1;
                match v {
                    Value::Int(i) => {
                        int_sum = int_sum.and_then(|s| s.checked_add(*i));
                        float_sum += *i as f64;
                    }
                    Value::Float(x) => {
                        all_int = false;
                        float_sum += x;
                    }
                    _ => unreachable!("planner admits numeric attributes only"),
                }
            }
            if n == 0 {
                return Value::Empty;
            }
            match (func, all_int, int_sum) {
                (Aggregate::Sum, true, Some(s)) => Value::Int(s),
                (Aggregate::Sum, _, _) => Value::Float(float_sum),
                (_, true, Some(s)) => Value::Float(s as f64 / n as f64),
                _ => Value::Float(float_sum / n as f64),
            }
        }
    }
}
