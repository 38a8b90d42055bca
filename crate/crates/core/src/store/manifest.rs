use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probability::PlacementConfig;
use crate::tablespace::TableSchema;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Current trunk of a block and how many lines it holds. Earlier trunks are
/// full, so the block holds `trunk * capacity + fill` records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrunkState {
    pub trunk: u32,
    pub fill: usize,
}

/// Persistent table metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub schema: TableSchema,
    pub cfg: PlacementConfig<f64>,
    /// `(slot, cell) -> ω`, records of a cell placed in a slot.
    #[serde(with = "count_entries")]
    pub counts: BTreeMap<(usize, usize), u64>,
    /// `(slot, block)` with 1-based block.
    #[serde(with = "trunk_entries")]
    pub trunk_state: BTreeMap<(usize, usize), TrunkState>,
    pub created: DateTime<Utc>,
    pub modified: DateTime<Utc>,
}

impl Manifest {
    pub fn new(schema: TableSchema, cfg: PlacementConfig<f64>) -> Self {
        let now = Utc::now();
        Manifest {
            format_version: FORMAT_VERSION,
            schema,
            cfg,
            counts: BTreeMap::new(),
            trunk_state: BTreeMap::new(),
            created: now,
            modified: now,
        }
    }

    pub fn omega(&self, slot: usize, cell: usize) -> u64 {
        self.counts.get(&(slot, cell)).copied().unwrap_or(0)
    }

    pub fn total_records(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Records stored in a block, from its trunk state.
    pub fn block_records(&self, slot: usize, block: usize) -> u64 {
        self.trunk_state.get(&(slot, block)).map_or(0, |t| {
            t.trunk as u64 * self.cfg.trunk_capacity as u64 + t.fill as u64
        })
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::storage(&path, e))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::corruption(&path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::corruption(
                &path,
                format!("unsupported format version {}", manifest.format_version),
            ));
        }
        manifest
            .cfg
            .validate()
            .map_err(|e| Error::corruption(&path, e.to_string()))?;
        Ok(manifest)
    }

    /// Writes `manifest.json` through a temporary file and a rename.
    pub fn store(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&json)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| Error::storage(&path, e))
    }
}

mod count_entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        slot: usize,
        cell: usize,
        count: u64,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(usize, usize), u64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(
            map.iter()
                .map(|(&(slot, cell), &count)| Entry { slot, cell, count }),
        )
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<(usize, usize), u64>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries
            .into_iter()
            .map(|e| ((e.slot, e.cell), e.count))
            .collect())
    }
}

mod trunk_entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        slot: usize,
        block: usize,
        trunk: u32,
        fill: usize,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(usize, usize), TrunkState>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(&(slot, block), t)| Entry {
            slot,
            block,
            trunk: t.trunk,
            fill: t.fill,
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<(usize, usize), TrunkState>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries
            .into_iter()
            .map(|e| {
                (
                    (e.slot, e.block),
                    TrunkState {
                        trunk: e.trunk,
                        fill: e.fill,
                    },
                )
            })
            .collect())
    }
}
