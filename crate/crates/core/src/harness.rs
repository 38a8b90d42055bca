//! Monte-Carlo validation and benchmarks: observed completeness against the
//! requested confidence, query efficiency, block balance, placement
//! throughput and the shape of the existence curve for different peaks.

use std::collections::BTreeSet;
use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::probability::{existence_profile, PlacementConfig, ProbTable, DEFAULT_TRUNK_CAPACITY};
use crate::query::{plan, QueryPlan, QuerySpec, Targets};
use crate::store::{BalanceStats, BlockRef, Placer, Table};
use crate::tablespace::{
    build_segments, Attribute, Predicate, PredicateOp, QueryAttribute, Record, TableSchema, Value,
    ValueKind,
};

/// Synthetic attribute values are uniform integers in `[0, SYNTHETIC_MAX]`.
pub const SYNTHETIC_MAX: i64 = 100_000_000;
pub const SYNTHETIC_ATTRIBUTES: [&str; 3] = ["a", "b", "c"];
/// Values drawn to cut the equal-frequency segments of a synthetic table.
pub const SEGMENT_SAMPLE: usize = 10_000;

/// Shape of a synthetic table: three uniform integer attributes, each a query
/// attribute split into `segments` equal-frequency segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthetic {
    pub records: usize,
    pub segments: usize,
    pub n: usize,
    pub lambda: f64,
    pub slots: usize,
    pub trunk_capacity: usize,
}

impl Default for Synthetic {
    fn default() -> Self {
        Synthetic {
            records: 250_000,
            segments: 5,
            n: 500,
            lambda: 4.0,
            slots: 1,
            trunk_capacity: DEFAULT_TRUNK_CAPACITY,
        }
    }
}

impl Synthetic {
    pub fn cells(&self) -> usize {
        self.segments.pow(SYNTHETIC_ATTRIBUTES.len() as u32)
    }

    pub fn config(&self) -> PlacementConfig<f64> {
        PlacementConfig::new(self.lambda, self.n, self.cells())
            .with_slots(self.slots)
            .with_trunk_capacity(self.trunk_capacity)
    }

    /// Schema named `name` with segments cut from a fresh uniform sample.
    pub fn schema<R: Rng + ?Sized>(&self, name: &str, rng: &mut R) -> Result<TableSchema> {
        let query_attributes = SYNTHETIC_ATTRIBUTES
            .iter()
            .map(|&attr| {
                let sample: Vec<Value> = (0..SEGMENT_SAMPLE)
                    .map(|_| Value::Int(rng.gen_range(0..=SYNTHETIC_MAX)))
                    .collect();
                Ok(QueryAttribute {
                    name: attr.to_string(),
                    segments: build_segments(&sample, self.segments)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TableSchema::new(name, synthetic_attributes(), query_attributes)
    }

    /// Creates the table at `dir` and loads `records` synthetic records.
    pub fn create<R: Rng + ?Sized>(&self, dir: &Path, name: &str, rng: &mut R) -> Result<Table> {
        let schema = self.schema(name, rng)?;
        let mut table = Table::create(dir, schema, self.config())?;
        let mut data_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let records = (0..self.records).map(move |_| synthetic_record(&mut data_rng));
        table.load_batch(records, rng)?;
        Ok(table)
    }
}

pub fn synthetic_attributes() -> Vec<Attribute> {
    SYNTHETIC_ATTRIBUTES
        .iter()
        .map(|n| Attribute {
            name: n.to_string(),
            kind: ValueKind::Integer,
        })
        .collect()
}

pub fn synthetic_record<R: Rng + ?Sized>(rng: &mut R) -> Record {
    SYNTHETIC_ATTRIBUTES
        .iter()
        .map(|_| Value::Int(rng.gen_range(0..=SYNTHETIC_MAX)))
        .collect()
}

/// Writes `count` synthetic records as comma-separated values with a header.
pub fn write_synthetic_csv<W: Write, R: Rng + ?Sized>(
    out: W,
    count: usize,
    rng: &mut R,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(SYNTHETIC_ATTRIBUTES).map_err(io)?;
    for _ in 0..count {
        let r = synthetic_record(rng);
        w.write_record(r.iter().map(|v| v.to_string()))
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}

/// A query selecting one random value segment per dimension: exactly one
/// cell, with predicates that hold for every record of it.
pub fn random_cell_query<R: Rng + ?Sized>(
    schema: &TableSchema,
    confidence: f64,
    rng: &mut R,
) -> Result<QuerySpec> {
    let mut predicates = Vec::new();
    for qa in schema.query_attributes() {
        let b = &qa.segments.boundaries;
        let j = rng.gen_range(0..=b.len());
        let op = match (j, b.len()) {
            (_, 0) => continue,
            (0, _) => PredicateOp::Lt(b[0].clone()),
            (j, k) if j == k => PredicateOp::Ge(b[k - 1].clone()),
            (j, _) => PredicateOp::Range {
                lo: b[j - 1].clone(),
                hi: b[j].clone(),
            },
        };
        predicates.push(Predicate::new(qa.name.clone(), op)?);
    }
    QuerySpec::new(schema.name(), Targets::All, predicates, confidence)
}

/// Every record of the table grouped by cell, with the block holding it.
/// Built from one full scan; lets trials evaluate plans without rereading
/// trunks.
#[derive(Debug, Clone)]
pub struct TableIndex {
    cells: Vec<Vec<(BlockRef, Record)>>,
}

/// How one planned query fared against the full data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    /// Rows the complete answer has.
    pub truth: usize,
    /// Rows found in the planned blocks.
    pub found: usize,
    /// Blocks holding at least one record of a queried cell.
    pub matched_blocks: usize,
    pub searched_blocks: usize,
    pub expected_pc: f64,
}

impl Outcome {
    pub fn complete(&self) -> bool {
        self.found == self.truth
    }

    /// Extent of completeness, `found / truth`.
    pub fn ec(&self) -> f64 {
        self.found as f64 / self.truth as f64
    }

    /// Query efficiency, `matched / searched`. Not bounded by 1: a plan may
    /// skip blocks that do hold matches.
    pub fn qe(&self) -> f64 {
        self.matched_blocks as f64 / self.searched_blocks as f64
    }
}

impl TableIndex {
    pub fn build(table: &Table) -> Result<TableIndex> {
        let m = table.config().m;
        let all: Vec<usize> = (0..m).collect();
        let scan = table.scan_blocks(&table.all_blocks(), &all)?;
        let mut cells = vec![Vec::new(); m];
        for row in scan.rows {
            cells[row.cell].push((row.block, row.record));
        }
        Ok(TableIndex { cells })
    }

    pub fn records(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Same rows `execute` returns for `plan`, counted against the complete
    /// answer.
    pub fn evaluate(&self, plan: &QueryPlan) -> Outcome {
        let mut truth = 0;
        let mut found = 0;
        let mut matched = BTreeSet::new();
        for cell in plan.data_cells() {
            for (block, record) in &self.cells[cell] {
                matched.insert(*block);
                if plan.accepts(record) {
                    truth += 1;
                    if plan.blocks.contains(block) {
                        found += 1;
                    }
                }
            }
        }
        Outcome {
            truth,
            found,
            matched_blocks: matched.len(),
            searched_blocks: plan.blocks.len(),
            expected_pc: plan.combined_expected_pc,
        }
    }
}

/// One trial: a random cell query planned at every confidence with its own
/// rng stream.
fn trial_outcomes(
    table: &Table,
    index: &TableIndex,
    confidences: &[f64],
    seed: u64,
) -> Result<Option<Vec<Outcome>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_cell_query(table.schema(), 1.0, &mut rng)?;
    let mut out = Vec::with_capacity(confidences.len());
    for &c in confidences {
        let spec = spec.clone().with_confidence(c)?;
        let o = index.evaluate(&plan(&spec, table, &mut rng)?);
        // completeness of an empty answer is vacuous
        if o.truth == 0 {
            return Ok(None);
        }
        out.push(o);
    }
    Ok(Some(out))
}

/// Runs trials until `trials` of them have a non-empty answer (or a bounded
/// number of attempts is used up). Outcomes are indexed `[trial][confidence]`.
fn run_trials<R: Rng + ?Sized>(
    table: &Table,
    index: &TableIndex,
    confidences: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Outcome>>> {
    let mut out = Vec::with_capacity(trials);
    let mut attempts = 0;
    while out.len() < trials && attempts < trials.max(1) * 20 {
        let want = trials - out.len();
        let seeds: Vec<u64> = (0..want).map(|_| rng.gen()).collect();
        attempts += want;
        let batch = seeds
            .par_iter()
            .map(|&s| trial_outcomes(table, index, confidences, s))
            .collect::<Result<Vec<_>>>()?;
        out.extend(batch.into_iter().flatten());
    }
    Ok(out)
}

fn check_confidences(confidences: &[f64]) -> Result<()> {
    match confidences.iter().find(|&&c| !(c > 0.0 && c <= 1.0)) {
        Some(&c) => Err(Error::ConfidenceRange(c)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcRow {
    pub confidence: f64,
    pub trials: usize,
    pub complete: usize,
    pub opc: f64,
    /// Mean extent of completeness over the incomplete trials; empty when
    /// every trial was complete.
    pub mean_ec_incomplete: Option<f64>,
    pub mean_expected_pc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcReport {
    pub rows: Vec<PcRow>,
}

impl PcReport {
    /// Confidences whose observed completeness is below the previous row's.
    pub fn non_monotone(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .filter(|w| w[1].opc < w[0].opc)
            .map(|w| w[1].confidence)
            .collect()
    }
}

/// Observed probability of completeness per confidence.
pub fn validate_pc<R: Rng + ?Sized>(
    table: &Table,
    index: &TableIndex,
    confidences: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<PcReport> {
    check_confidences(confidences)?;
    let outcomes = run_trials(table, index, confidences, trials, rng)?;
    let rows = confidences
        .iter()
        .enumerate()
        .map(|(k, &confidence)| {
            let os: Vec<&Outcome> = outcomes.iter().map(|t| &t[k]).collect();
            let n = os.len();
            let complete = os.iter().filter(|o| o.complete()).count();
            let incomplete: Vec<f64> = os
                .iter()
                .filter(|o| !o.complete())
                .map(|o| o.ec())
                .collect();
            PcRow {
                confidence,
                trials: n,
                complete,
                opc: ratio(complete as f64, n),
                mean_ec_incomplete: (!incomplete.is_empty())
                    .then(|| incomplete.iter().sum::<f64>() / incomplete.len() as f64),
                mean_expected_pc: ratio(os.iter().map(|o| o.expected_pc).sum(), n),
            }
        })
        .collect();
    Ok(PcReport { rows })
}

fn ratio(x: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        x / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QeRow {
    pub confidence: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub trials: usize,
    #[serde(skip)]
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QeReport {
    pub rows: Vec<QeRow>,
}

/// Five-number summaries of query efficiency per confidence. Every trial
/// plans the same query at all confidences.
pub fn measure_qe<R: Rng + ?Sized>(
    table: &Table,
    index: &TableIndex,
    confidences: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<QeReport> {
    check_confidences(confidences)?;
    let outcomes = run_trials(table, index, confidences, trials, rng)?;
    let rows = confidences
        .iter()
        .enumerate()
        .map(|(k, &confidence)| {
            let mut qe: Vec<f64> = outcomes.iter().map(|t| t[k].qe()).collect();
            qe.sort_by(f64::total_cmp);
            QeRow {
                confidence,
                min: quantile(&qe, 0.0),
                q1: quantile(&qe, 0.25),
                median: quantile(&qe, 0.5),
                q3: quantile(&qe, 0.75),
                max: quantile(&qe, 1.0),
                trials: qe.len(),
                mean: ratio(qe.iter().sum(), qe.len()),
            }
        })
        .collect();
    Ok(QeReport { rows })
}

/// Linear interpolation between closest ranks of sorted data; NaN when empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let pos = q * (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpaBench {
    pub n: usize,
    pub count: usize,
    pub seconds: f64,
    pub per_second: f64,
    #[serde(skip)]
    pub build_seconds: f64,
}

/// Times `count` in-memory placement decisions (cell lookup plus block
/// sample) for synthetic records. Record generation and table construction
/// are excluded from `seconds`.
pub fn bench_dpa<R: Rng + ?Sized>(
    schema: &TableSchema,
    cfg: &PlacementConfig<f64>,
    count: usize,
    rng: &mut R,
) -> Result<DpaBench> {
    const CHUNK: usize = 1 << 16;
    let started = Instant::now();
    let probs = ProbTable::build(cfg)?;
    let build_seconds = started.elapsed().as_secs_f64();
    let placer = Placer::new(schema, &probs);
    let mut elapsed = Duration::ZERO;
    let mut done = 0;
    let mut chunk: Vec<Record> = Vec::with_capacity(CHUNK.min(count));
    while done < count {
        let len = CHUNK.min(count - done);
        chunk.clear();
        chunk.extend((0..len).map(|_| synthetic_record(rng)));
        let t = Instant::now();
        let mut check = 0usize;
        for r in &chunk {
            let (cell, slot, block) = placer.place(r, rng)?;
            check = check.wrapping_add(cell ^ slot ^ block);
        }
        black_box(check);
        elapsed += t.elapsed();
        done += len;
    }
    let seconds = elapsed.as_secs_f64();
    Ok(DpaBench {
        n: cfg.n,
        count,
        seconds,
        per_second: if seconds > 0.0 {
            count as f64 / seconds
        } else {
            0.0
        },
        build_seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuShape {
    pub mu: f64,
    /// Fraction of blocks with existence probability below 0.01.
    pub below_0_01: f64,
    /// Fraction of blocks with existence probability above 0.99.
    pub above_0_99: f64,
    pub gini: f64,
    /// Total placement mass over `[0, λ]`.
    pub mass: f64,
}

/// Existence probability of every block for a cell with `omega` records.
pub fn g_profile(cfg: &PlacementConfig<f64>, omega: u64) -> Result<Vec<f64>> {
    Ok(existence_profile(&ProbTable::build(cfg)?, omega))
}

/// Shape of the existence curve as the density peak `mu` moves.
pub fn sweep_mu(cfg: &PlacementConfig<f64>, mus: &[f64], omega: u64) -> Result<Vec<MuShape>> {
    mus.iter()
        .map(|&mu| {
            let table = ProbTable::build(&cfg.with_mu(mu))?;
            let g = existence_profile(&table, omega);
            let n = g.len() as f64;
            Ok(MuShape {
                mu,
                below_0_01: g.iter().filter(|&&x| x < 0.01).count() as f64 / n,
                above_0_99: g.iter().filter(|&&x| x > 0.99).count() as f64 / n,
                gini: gini(&g),
                mass: table.total(),
            })
        })
        .collect()
}

/// Gini coefficient of non-negative values; 0 for all-zero input.
pub fn gini(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let total: f64 = v.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let weighted: f64 = v.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum();
    2.0 * weighted / (n * total) - (n + 1.0) / n
}

#[derive(Debug, Clone, Copy, Serialize)]
struct BalanceRow {
    slot: usize,
    block: usize,
    count: u64,
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}

/// `confidence,trials,complete,opc,mean_ec_incomplete,mean_expected_pc`
pub fn write_pc_report<W: Write>(out: W, report: &PcReport) -> Result<()> {
    write_rows(out, &report.rows)
}

/// `confidence,min,q1,median,q3,max,trials`
pub fn write_qe_report<W: Write>(out: W, report: &QeReport) -> Result<()> {
    write_rows(out, &report.rows)
}

/// `slot,block,count`
pub fn write_balance<W: Write>(out: W, stats: &BalanceStats) -> Result<()> {
    let rows = stats.slots.iter().flat_map(|s| {
        s.counts
            .iter()
            .enumerate()
            .map(move |(b, &count)| BalanceRow {
                slot: s.slot,
                block: b + 1,
                count,
            })
    });
    write_rows(out, rows)
}

/// `n,count,seconds,per_second`
pub fn write_dpa_bench<W: Write>(out: W, rows: &[DpaBench]) -> Result<()> {
    write_rows(out, rows)
}

/// `mu,below_0_01,above_0_99,gini,mass`
pub fn write_mu_sweep<W: Write>(out: W, rows: &[MuShape]) -> Result<()> {
    write_rows(out, rows)
}
