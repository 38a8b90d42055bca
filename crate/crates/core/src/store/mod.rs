//! Physical layer: slots of blocks, blocks of capped trunk files, the
//! placement that routes records to blocks, and the table manifest.
//!
//! ```text
//! <table_dir>/manifest.json
//! <table_dir>/slot_<s>/block_<j>/trunk_<t>.dat
//! ```

pub mod codec;
mod ingest;
mod manifest;
mod table;

pub use ingest::read_delimited;
pub use manifest::{Manifest, TrunkState, FORMAT_VERSION, MANIFEST_FILE};
pub use table::{
    is_table_dir, BalanceStats, BlockRef, LoadStats, Placement, Placer, ScanOutput, ScanRow,
    SlotBalance, Table, TrunkPosition, VerifyReport,
};
