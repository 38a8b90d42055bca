use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use super::codec::{decode_line, encode_line, line_cell};
use super::manifest::{Manifest, TrunkState, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::probability::{PlacementConfig, ProbTable};
use crate::tablespace::{Record, TableSchema, Value};

/// Where a record landed. `block` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Placement {
    pub cell: usize,
    pub slot: usize,
    pub block: usize,
    pub trunk: u32,
}

/// A block within a slot; the unit of scan skipping. `block` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRef {
    pub slot: usize,
    pub block: usize,
}

/// Position of an appended line: trunk id and 0-based line number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrunkPosition {
    pub trunk: u32,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoadStats {
    pub count: u64,
    pub placement_time: Duration,
    pub write_time: Duration,
}

/// A record returned by a scan together with its header cell and block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub block: BlockRef,
    pub cell: usize,
    pub record: Record,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanOutput {
    pub rows: Vec<ScanRow>,
    pub trunks_scanned: usize,
    pub lines_scanned: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotBalance {
    pub slot: usize,
    /// `counts[b]` is the record count of block `b + 1`.
    pub counts: Vec<u64>,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceStats {
    pub slots: Vec<SlotBalance>,
    pub total: u64,
    /// `total / (n · s)`.
    pub mean: f64,
    /// Population standard deviation over all blocks of all slots.
    pub stddev: f64,
}

impl BalanceStats {
    pub fn coefficient_of_variation(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.stddev / self.mean
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub trunks: usize,
    pub lines: u64,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Pure placement decision: cell lookup, uniform slot, block drawn from the
/// cell's rotated probability row.
#[derive(Debug, Clone, Copy)]
pub struct Placer<'a> {
    schema: &'a TableSchema,
    table: &'a ProbTable<f64>,
}

impl<'a> Placer<'a> {
    pub fn new(schema: &'a TableSchema, table: &'a ProbTable<f64>) -> Self {
        Placer { schema, table }
    }

    /// Returns `(cell, slot, block)`, cell 0-based and block 1-based.
    pub fn place<R: Rng + ?Sized>(
        &self,
        record: &[Value],
        rng: &mut R,
    ) -> Result<(usize, usize, usize)> {
        let cell = self.schema.locate_flat(record)?;
        Ok(self.place_cell(cell, rng))
    }

    pub fn place_cell<R: Rng + ?Sized>(&self, cell: usize, rng: &mut R) -> (usize, usize, usize) {
        let cfg = self.table.config();
        let slot = if cfg.slots == 1 {
            0
        } else {
            rng.gen_range(0..cfg.slots)
        };
        let u = rng.gen_range(0.0..self.table.total());
        let block = self
            .table
            .sample_cell_block(cell + 1, u)
            .expect("u drawn from [0, total)");
        (cell, slot, block)
    }
}

pub(crate) fn slot_dir(root: &Path, slot: usize) -> PathBuf {
    root.join(format!("slot_{slot:03}"))
}

pub(crate) fn block_dir(root: &Path, slot: usize, block: usize) -> PathBuf {
    slot_dir(root, slot).join(format!("block_{block:05}"))
}

pub(crate) fn trunk_path(root: &Path, slot: usize, block: usize, trunk: u32) -> PathBuf {
    block_dir(root, slot, block).join(format!("trunk_{trunk:06}.dat"))
}

// Bound on simultaneously open trunk writers during a load.
const MAX_OPEN_WRITERS: usize = 256;

struct TrunkWriters {
    open: HashMap<(usize, usize), (u32, BufWriter<File>)>,
}

impl TrunkWriters {
    fn new() -> Self {
        TrunkWriters {
            open: HashMap::new(),
        }
    }

    fn write(
        &mut self,
        root: &Path,
        slot: usize,
        block: usize,
        trunk: u32,
        line: &[u8],
    ) -> Result<()> {
        let stale = matches!(self.open.get(&(slot, block)), Some((t, _)) if *t != trunk);
        if stale {
            let (_, mut w) = self.open.remove(&(slot, block)).expect("present");
            let path = trunk_path(root, slot, block, trunk - 1);
            w.flush().map_err(|e| Error::storage(path, e))?;
        }
        if !self.open.contains_key(&(slot, block)) {
            if self.open.len() >= MAX_OPEN_WRITERS {
                self.flush_all(root)?;
            }
            let dir = block_dir(root, slot, block);
            fs::create_dir_all(&dir).map_err(|e| Error::storage(&dir, e))?;
            let path = trunk_path(root, slot, block, trunk);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::storage(&path, e))?;
            self.open.insert(
                (slot, block),
                (trunk, BufWriter::with_capacity(64 * 1024, file)),
            );
        }
        let (_, w) = self.open.get_mut(&(slot, block)).expect("just opened");
        w.write_all(line)
            .map_err(|e| Error::storage(trunk_path(root, slot, block, trunk), e))
    }

    fn flush_all(&mut self, root: &Path) -> Result<()> {
        let mut first_err = None;
        for ((slot, block), (trunk, mut w)) in self.open.drain() {
            if let Err(e) = w.flush() {
                first_err.get_or_insert(Error::storage(trunk_path(root, slot, block, trunk), e));
            }
        }
        first_err.map_or(Ok(()), Err)
    }
}

/// An open table directory: manifest plus the derived probability table.
#[derive(Debug, Clone)]
pub struct Table {
    dir: PathBuf,
    manifest: Manifest,
    probs: ProbTable<f64>,
}

impl Table {
    /// Creates the table directory and persists an empty manifest. Slot and
    /// block directories are created on first write.
    pub fn create(
        dir: impl AsRef<Path>,
        schema: TableSchema,
        cfg: PlacementConfig<f64>,
    ) -> Result<Table> {
        let dir = dir.as_ref().to_path_buf();
        if cfg.m != schema.cell_count() {
            return Err(Error::InvalidConfig(format!(
                "config has m = {} but the schema defines {} cells",
                cfg.m,
                schema.cell_count()
            )));
        }
        let probs = ProbTable::build(&cfg)?;
        if dir.exists() {
            let mut entries = fs::read_dir(&dir).map_err(|e| Error::storage(&dir, e))?;
            if entries.next().is_some() {
                return Err(Error::AlreadyExists(dir));
            }
        }
        fs::create_dir_all(&dir).map_err(|e| Error::storage(&dir, e))?;
        let manifest = Manifest::new(schema, cfg);
        manifest.store(&dir)?;
        Ok(Table {
            dir,
            manifest,
            probs,
        })
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Table> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = Manifest::load(&dir)?;
        let probs = ProbTable::build(&manifest.cfg)?;
        Ok(Table {
            dir,
            manifest,
            probs,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn schema(&self) -> &TableSchema {
        &self.manifest.schema
    }

    pub fn config(&self) -> &PlacementConfig<f64> {
        &self.manifest.cfg
    }

    pub fn prob_table(&self) -> &ProbTable<f64> {
        &self.probs
    }

    pub fn placer(&self) -> Placer<'_> {
        Placer::new(&self.manifest.schema, &self.probs)
    }

    /// Every block of every slot.
    pub fn all_blocks(&self) -> BTreeSet<BlockRef> {
        let cfg = self.config();
        (0..cfg.slots)
            .flat_map(|slot| (1..=cfg.n).map(move |block| BlockRef { slot, block }))
            .collect()
    }

    fn next_trunk(&self, slot: usize, block: usize) -> TrunkState {
        let cap = self.manifest.cfg.trunk_capacity;
        match self.manifest.trunk_state.get(&(slot, block)) {
            None => TrunkState::default(),
            Some(t) if t.fill >= cap => TrunkState {
                trunk: t.trunk + 1,
                fill: 0,
            },
            Some(t) => *t,
        }
    }

    /// Decides where a record goes and counts it against its `(slot, cell)`.
    /// No I/O.
    pub fn place_record<R: Rng + ?Sized>(
        &mut self,
        record: &[Value],
        rng: &mut R,
    ) -> Result<Placement> {
        self.manifest.schema.check_record(record)?;
        let (cell, slot, block) = self.placer().place(record, rng)?;
        *self.manifest.counts.entry((slot, cell)).or_insert(0) += 1;
        Ok(Placement {
            cell,
            slot,
            block,
            trunk: self.next_trunk(slot, block).trunk,
        })
    }

    fn check_placement(&self, p: &Placement) -> Result<()> {
        let cfg = self.config();
        if p.slot >= cfg.slots || p.block == 0 || p.block > cfg.n || p.cell >= cfg.m {
            return Err(Error::InvalidArgument(format!(
                "placement {p:?} out of range"
            )));
        }
        Ok(())
    }

    fn advance_trunk(&mut self, slot: usize, block: usize) -> TrunkPosition {
        let next = self.next_trunk(slot, block);
        self.manifest.trunk_state.insert(
            (slot, block),
            TrunkState {
                trunk: next.trunk,
                fill: next.fill + 1,
            },
        );
        TrunkPosition {
            trunk: next.trunk,
            line: next.fill,
        }
    }

    /// Appends one record line to the placement's block, rotating to a new
    /// trunk when the current one is full. The manifest is updated in memory
    /// only; call [`Table::persist`] to make it durable.
    pub fn append_record(
        &mut self,
        placement: &Placement,
        record: &[Value],
    ) -> Result<TrunkPosition> {
        self.check_placement(placement)?;
        let mut line = String::new();
        encode_line(&mut line, placement.cell, record);
        let mut writers = TrunkWriters::new();
        let next = self.next_trunk(placement.slot, placement.block);
        writers.write(
            &self.dir,
            placement.slot,
            placement.block,
            next.trunk,
            line.as_bytes(),
        )?;
        writers.flush_all(&self.dir)?;
        Ok(self.advance_trunk(placement.slot, placement.block))
    }

    pub fn persist(&mut self) -> Result<()> {
        self.manifest.modified = chrono::Utc::now();
        self.manifest.store(&self.dir)
    }

    /// Places and writes every record, then persists the manifest once.
    ///
    /// Placement and writing are timed separately. On failure the manifest is
    /// persisted with only the records whose lines were written.
    pub fn load_batch<I, R>(&mut self, records: I, rng: &mut R) -> Result<LoadStats>
    where
        I: IntoIterator<Item = Record>,
        R: Rng + ?Sized,
    {
        const CHUNK: usize = 4096;
        let mut stats = LoadStats::default();
        let mut writers = TrunkWriters::new();
        let mut iter = records.into_iter().peekable();
        let mut line = String::new();
        let mut placed: Vec<(Placement, Record)> = Vec::with_capacity(CHUNK);

        let outcome = (|| -> Result<()> {
            while iter.peek().is_some() {
                placed.clear();
                let t0 = Instant::now();
                let mut rejected = None;
                for record in iter.by_ref().take(CHUNK) {
                    let decision = self
                        .manifest
                        .schema
                        .check_record(&record)
                        .and_then(|()| self.placer().place(&record, rng));
                    let (cell, slot, block) = match decision {
                        Ok(d) => d,
                        Err(e) => {
                            rejected = Some(e);
                            break;
                        }
                    };
                    placed.push((
                        Placement {
                            cell,
                            slot,
                            block,
                            trunk: 0,
                        },
                        record,
                    ));
                }
                stats.placement_time += t0.elapsed();

                let t1 = Instant::now();
                for (p, record) in &placed {
                    line.clear();
                    encode_line(&mut line, p.cell, record);
                    let next = self.next_trunk(p.slot, p.block);
                    writers.write(&self.dir, p.slot, p.block, next.trunk, line.as_bytes())?;
                    self.advance_trunk(p.slot, p.block);
                    *self.manifest.counts.entry((p.slot, p.cell)).or_insert(0) += 1;
                    stats.count += 1;
                }
                stats.write_time += t1.elapsed();
                if let Some(e) = rejected {
                    return Err(e);
                }
            }
            Ok(())
        })();

        let t2 = Instant::now();
        let flushed = writers.flush_all(&self.dir);
        stats.write_time += t2.elapsed();
        if stats.count > 0 {
            self.persist()?;
        }
        outcome?;
        flushed?;
        Ok(stats)
    }

    /// Trunk files of a block, in trunk order.
    fn block_trunks(&self, b: BlockRef) -> Vec<(u32, usize)> {
        let cap = self.config().trunk_capacity;
        match self.manifest.trunk_state.get(&(b.slot, b.block)) {
            None => Vec::new(),
            Some(t) => (0..=t.trunk)
                .map(|id| (id, if id == t.trunk { t.fill } else { cap }))
                .filter(|&(_, lines)| lines > 0)
                .collect(),
        }
    }

    /// Streams every record in `blocks` whose line header is one of `cells`.
    /// Only line headers are inspected for records of other cells. Trunks are
    /// read in parallel; rows come back in block, trunk, line order.
    pub fn scan_blocks(&self, blocks: &BTreeSet<BlockRef>, cells: &[usize]) -> Result<ScanOutput> {
        let m = self.config().m;
        let mut wanted = vec![false; m];
        for &c in cells {
            if c < m {
                wanted[c] = true;
            }
        }
        let trunks: Vec<(BlockRef, u32)> = blocks
            .iter()
            .flat_map(|&b| self.block_trunks(b).into_iter().map(move |(t, _)| (b, t)))
            .collect();
        let attributes = self.schema().attributes();
        let parts: Vec<(Vec<ScanRow>, u64)> = trunks
            .par_iter()
            .map(|&(b, t)| {
                let path = trunk_path(&self.dir, b.slot, b.block, t);
                let bytes = fs::read(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::corruption(&path, "trunk file missing"),
                    _ => Error::storage(&path, e),
                })?;
                let mut rows = Vec::new();
                let mut lines = 0u64;
                for raw in bytes.split(|&c| c == b'\n') {
                    if raw.is_empty() {
                        continue;
                    }
                    lines += 1;
                    let cell = line_cell(raw)
                        .ok_or_else(|| Error::corruption(&path, "unreadable line header"))?;
                    if cell >= m || !wanted[cell] {
                        continue;
                    }
                    let text = std::str::from_utf8(raw)
                        .map_err(|_| Error::corruption(&path, "line is not UTF-8"))?;
                    let (_, record) = decode_line(text, attributes)
                        .map_err(|e| Error::corruption(&path, e.to_string()))?;
                    rows.push(ScanRow {
                        block: b,
                        cell,
                        record,
                    });
                }
                Ok((rows, lines))
            })
            .collect::<Result<_>>()?;
        let mut out = ScanOutput {
            trunks_scanned: trunks.len(),
            ..Default::default()
        };
        for (rows, lines) in parts {
            out.rows.extend(rows);
            out.lines_scanned += lines;
        }
        Ok(out)
    }

    /// Per-block record counts with mean and population standard deviation.
    pub fn balance_stats(&self) -> BalanceStats {
        let cfg = self.config();
        let mut slots = Vec::with_capacity(cfg.slots);
        let mut all = Vec::with_capacity(cfg.slots * cfg.n);
        for slot in 0..cfg.slots {
            let counts: Vec<u64> = (1..=cfg.n)
                .map(|b| self.manifest.block_records(slot, b))
                .collect();
            let (mean, stddev) = mean_std(&counts);
            all.extend_from_slice(&counts);
            slots.push(SlotBalance {
                slot,
                counts,
                mean,
                stddev,
            });
        }
        let (mean, stddev) = mean_std(&all);
        BalanceStats {
            slots,
            total: all.iter().sum(),
            mean,
            stddev,
        }
    }

    /// Checks every trunk against the manifest: file presence, line counts,
    /// trunk capacity and header fidelity. Problems are reported, not repaired.
    pub fn verify(&self) -> Result<VerifyReport> {
        let mut report = VerifyReport::default();
        let cap = self.config().trunk_capacity;
        let schema = self.schema();
        for b in self.all_blocks() {
            for (t, expected) in self.block_trunks(b) {
                let path = trunk_path(&self.dir, b.slot, b.block, t);
                report.trunks += 1;
                let bytes = match fs::read(&path) {
                    Ok(bytes) => bytes,
                    Err(e) => {
                        report.problems.push(format!("{}: {e}", path.display()));
                        continue;
                    }
                };
                let text = String::from_utf8_lossy(&bytes);
                let mut lines = 0usize;
                for (no, line) in text.lines().enumerate() {
                    lines += 1;
                    match decode_line(line, schema.attributes()) {
                        Ok((cell, record)) => match schema.locate_flat(&record) {
                            Ok(actual) if actual == cell => {}
                            Ok(actual) => report.problems.push(format!(
                                "{}:{}: header {cell} but record is in cell {actual}",
                                path.display(),
                                no + 1
                            )),
                            Err(e) => {
                                report
                                    .problems
                                    .push(format!("{}:{}: {e}", path.display(), no + 1))
                            }
                        },
                        Err(e) => {
                            report
                                .problems
                                .push(format!("{}:{}: {e}", path.display(), no + 1))
                        }
                    }
                }
                report.lines += lines as u64;
                if lines != expected {
                    report.problems.push(format!(
                        "{}: {lines} lines, manifest records {expected}",
                        path.display()
                    ));
                }
                if lines > cap {
                    report.problems.push(format!(
                        "{}: {lines} lines exceed trunk capacity {cap}",
                        path.display()
                    ));
                }
            }
        }
        let counted = self.manifest.total_records();
        if counted != report.lines {
            report.problems.push(format!(
                "manifest counts {counted} records, trunks hold {}",
                report.lines
            ));
        }
        Ok(report)
    }
}

fn mean_std(xs: &[u64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<u64>() as f64 / n;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// True when `dir` looks like a table directory.
pub fn is_table_dir(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}
