//! Command-line front end. [`run_cli`] parses arguments, dispatches and maps
//! errors to exit codes: 0 on success, 1 for user errors (bad arguments,
//! queries, configs or input), 2 for storage errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::{
    bench_dpa, measure_qe, validate_pc, write_balance, write_dpa_bench, write_pc_report,
    write_qe_report, write_synthetic_csv, Synthetic, TableIndex,
};
use crate::probability::{PlacementConfig, DEFAULT_SIGMA, DEFAULT_TRUNK_CAPACITY};
use crate::query::{execute, parse_query, plan};
use crate::store::{is_table_dir, read_delimited, Table};
use crate::tablespace::TableSchema;

#[derive(Debug, Parser)]
#[command(
    name = "probery",
    version,
    about = "Confidence-annotated queries over probabilistically placed records"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an empty table from a JSON config, or a synthetic-schema table.
    Create(CreateArgs),
    /// Write synthetic records (three uniform integer attributes) as CSV.
    Gen(GenArgs),
    /// Place and append records from a delimited file with a header row.
    Load(LoadArgs),
    /// Run a query; rows go to stdout, metadata to stderr.
    Query(QueryArgs),
    /// Observed completeness per confidence (pc_report.csv).
    ValidatePc(TrialArgs),
    /// Query efficiency summaries per confidence (qe_report.csv).
    MeasureQe(TrialArgs),
    /// Time in-memory placement decisions (dpa_bench.csv).
    BenchDpa(BenchArgs),
    /// Record counts and block balance.
    Stats(StatsArgs),
    /// Check trunk files against the manifest.
    Verify(TableArg),
}

#[derive(Debug, Args)]
struct TableArg {
    /// Table directory.
    #[arg(long)]
    table: PathBuf,
}

#[derive(Debug, Args)]
struct CreateArgs {
    #[arg(long)]
    table: PathBuf,
    /// JSON file with `schema` and `cfg` objects, as in a table manifest.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    config: Option<PathBuf>,
    /// Use the synthetic schema (attributes a, b, c) with equal-frequency
    /// segments cut from a uniform sample.
    #[arg(long)]
    synthetic: bool,
    /// Table name for --synthetic.
    #[arg(long, default_value = "t")]
    name: String,
    /// Segments per attribute for --synthetic.
    #[arg(long, default_value_t = 5)]
    segments: usize,
    #[arg(long, default_value_t = 500)]
    blocks: usize,
    #[arg(long, default_value_t = 4.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    slots: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 250_000)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct LoadArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Field delimiter (single byte).
    #[arg(long, default_value = ",")]
    delimiter: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    table: PathBuf,
    /// Print the plan instead of executing it.
    #[arg(long)]
    explain: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Query text, e.g. "select a from t where b >= 10 with 0.8".
    text: String,
}

#[derive(Debug, Args)]
struct TrialArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
    )]
    confidences: Vec<f64>,
    #[arg(long, default_value_t = 400)]
    trials: usize,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Block counts to benchmark.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "2000,4000,6000,8000,10000"
    )]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    segments: usize,
    #[arg(long, default_value_t = 4.0)]
    lambda: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    table: PathBuf,
    /// Also write per-block counts (balance.csv) here.
    #[arg(long)]
    balance_out: Option<PathBuf>,
}

/// `cfg` section of a create config. Omitted fields take the defaults; `m`
/// defaults to the schema's cell count.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CfgInput {
    #[serde(default = "default_lambda")]
    lambda: f64,
    #[serde(default = "default_sigma")]
    sigma: f64,
    mu: Option<f64>,
    n: usize,
    m: Option<usize>,
    #[serde(default = "one")]
    slots: usize,
    #[serde(default = "default_trunk_capacity")]
    trunk_capacity: usize,
}

fn default_lambda() -> f64 {
    4.0
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

fn one() -> usize {
    1
}

fn default_trunk_capacity() -> usize {
    DEFAULT_TRUNK_CAPACITY
}

#[derive(Debug, Deserialize)]
struct CreateConfig {
    schema: TableSchema,
    cfg: CfgInput,
}

impl CreateConfig {
    fn read(path: &Path) -> Result<(TableSchema, PlacementConfig<f64>)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        let c: CreateConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let cfg = PlacementConfig {
            lambda: c.cfg.lambda,
            sigma: c.cfg.sigma,
            mu: c.cfg.mu.unwrap_or(0.5 * c.cfg.lambda),
            n: c.cfg.n,
            m: c.cfg.m.unwrap_or_else(|| c.schema.cell_count()),
            slots: c.cfg.slots,
            trunk_capacity: c.cfg.trunk_capacity,
        };
        Ok((c.schema, cfg))
    }
}

fn rng(seed: Option<u64>) -> ChaCha8Rng {
    match seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_entropy(),
    }
}

/// A missing table is the caller's mistake; anything wrong inside an existing
/// one is a storage error.
fn open_table(dir: &Path) -> Result<Table> {
    if !is_table_dir(dir) {
        return Err(Error::InvalidArgument(format!(
            "no table at {}",
            dir.display()
        )));
    }
    Table::open(dir)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::storage(path, e))
}

/// Runs `write` against the file at `path`, or against `stdout`.
fn with_output(
    path: Option<&Path>,
    stdout: &mut dyn Write,
    write: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = create_file(p)?;
            write(&mut f)?;
            f.flush().map_err(|e| Error::storage(p, e))
        }
        None => write(stdout),
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::storage("<output>", e)
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Create(a) => {
            let (schema, cfg) = if a.synthetic {
                let syn = Synthetic {
                    records: 0,
                    segments: a.segments,
                    n: a.blocks,
                    lambda: a.lambda,
                    slots: a.slots,
                    ..Synthetic::default()
                };
                (syn.schema(&a.name, &mut rng(a.seed))?, syn.config())
            } else {
                CreateConfig::read(a.config.as_deref().expect("clap requires --config"))?
            };
            let t = Table::create(&a.table, schema, cfg)?;
            writeln!(
                stderr,
                "created table `{}` at {} (m = {}, n = {}, slots = {})",
                t.schema().name(),
                a.table.display(),
                cfg.m,
                cfg.n,
                cfg.slots
            )
            .map_err(out_err)
        }
        Command::Gen(a) => {
            let mut f = create_file(&a.out)?;
            write_synthetic_csv(&mut f, a.count, &mut rng(a.seed))?;
            f.flush().map_err(|e| Error::storage(&a.out, e))?;
            writeln!(stderr, "wrote {} records to {}", a.count, a.out.display()).map_err(out_err)
        }
        Command::Load(a) => {
            let delimiter = match a.delimiter.as_bytes() {
                [d] => *d,
                b"\\t" => b'\t',
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "delimiter must be one byte, got {:?}",
                        a.delimiter
                    )))
                }
            };
            let mut table = open_table(&a.table)?;
            let file = File::open(&a.input).map_err(|e| {
                Error::InvalidArgument(format!("cannot open {}: {e}", a.input.display()))
            })?;
            let records = read_delimited(table.schema(), BufReader::new(file), delimiter)?;
            let stats = table.load_batch(records, &mut rng(a.seed))?;
            writeln!(
                stderr,
                "loaded {} records (placement {:.3}s, write {:.3}s); table holds {}",
                stats.count,
                stats.placement_time.as_secs_f64(),
                stats.write_time.as_secs_f64(),
                table.manifest().total_records()
            )
            .map_err(out_err)
        }
        Command::Query(a) => {
            let spec = parse_query(&a.text)?;
            let table = open_table(&a.table)?;
            let p = plan(&spec, &table, &mut rng(a.seed))?;
            if a.explain {
                return write!(stdout, "{p}").map_err(out_err);
            }
            let res = execute(&p, &table)?;
            stdout.write_all(res.to_tsv().as_bytes()).map_err(out_err)?;
            writeln!(stderr, "rows={} {}", res.rows.len(), res.meta).map_err(out_err)
        }
        Command::ValidatePc(a) => {
            let table = open_table(&a.table)?;
            let index = TableIndex::build(&table)?;
            let report = validate_pc(&table, &index, &a.confidences, a.trials, &mut rng(a.seed))?;
            let flagged = report.non_monotone();
            if !flagged.is_empty() {
                writeln!(
                    stderr,
                    "note: observed completeness dips at confidence {flagged:?}"
                )
                .map_err(out_err)?;
            }
            with_output(a.out.as_deref(), stdout, |w| write_pc_report(w, &report))
        }
        Command::MeasureQe(a) => {
            let table = open_table(&a.table)?;
            let index = TableIndex::build(&table)?;
            let report = measure_qe(&table, &index, &a.confidences, a.trials, &mut rng(a.seed))?;
            with_output(a.out.as_deref(), stdout, |w| write_qe_report(w, &report))
        }
        Command::BenchDpa(a) => {
            let mut r = rng(a.seed);
            let mut rows = Vec::with_capacity(a.blocks.len());
            for &n in &a.blocks {
                let syn = Synthetic {
                    records: 0,
                    segments: a.segments,
                    n,
                    lambda: a.lambda,
                    ..Synthetic::default()
                };
                let schema = syn.schema("bench", &mut r)?;
                let row = bench_dpa(&schema, &syn.config(), a.count, &mut r)?;
                writeln!(stderr, "n={n}: {:.0} placements/s", row.per_second).map_err(out_err)?;
                rows.push(row);
            }
            with_output(a.out.as_deref(), stdout, |w| write_dpa_bench(w, &rows))
        }
        Command::Stats(a) => {
            let table = open_table(&a.table)?;
            let cfg = table.config();
            let b = table.balance_stats();
            let cells_with_data = (0..cfg.m)
                .filter(|&c| (0..cfg.slots).any(|s| table.manifest().omega(s, c) > 0))
                .count();
            writeln!(
                stdout,
                "table\t{}\nrecords\t{}\ncells\t{}\ncells_with_data\t{}\nblocks_per_slot\t{}\nslots\t{}\nblock_mean\t{:.3}\nblock_stddev\t{:.3}\nblock_cv\t{:.5}",
                table.schema().name(),
                b.total,
                cfg.m,
                cells_with_data,
                cfg.n,
                cfg.slots,
                b.mean,
                b.stddev,
                b.coefficient_of_variation()
            )
            .map_err(out_err)?;
            if let Some(p) = &a.balance_out {
                with_output(Some(p), stdout, |w| write_balance(w, &b))?;
            }
            Ok(())
        }
        Command::Verify(a) => {
            let table = open_table(&a.table)?;
            let report = table.verify()?;
            writeln!(stdout, "trunks\t{}\nlines\t{}", report.trunks, report.lines)
                .map_err(out_err)?;
            if report.is_clean() {
                return writeln!(stdout, "ok").map_err(out_err);
            }
            for p in &report.problems {
                writeln!(stdout, "problem\t{p}").map_err(out_err)?;
            }
            Err(Error::corruption(
                &a.table,
                format!("{} problem(s) found", report.problems.len()),
            ))
        }
    }
}

/// Runs one command line (including the program name) and returns the exit
/// code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}
