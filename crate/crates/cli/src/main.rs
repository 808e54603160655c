use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use comac_core::combinatorics::{enumerate_subfunction_sets, expected_subcarrier_share};
use comac_core::experiments::{
    run_selftest_seeded, run_sweep_with, Figure, Outcome, ResultRow, SweepSpec,
};
use comac_core::io::{parse_config, write_csv, write_csv_to, CsvRecord, LevelRow, NodeRow};
use comac_core::numerics::{ChannelTensor, SimParams, DEFAULT_SEED, DEFAULT_TRIALS};
use comac_core::power::{build_assignment, sponge_squeeze, DEFAULT_TOLERANCE};
use comac_core::rates::{RateEngine, RateFamily};
use comac_core::Error;

/// Rates, power allocation and sweeps for computation over OFDM
/// multiple-access channels.
///
/// Exit codes: 0 success, 1 self-test or computation failure, 2 usage
/// error, 3 IO error.
#[derive(Parser, Debug)]
#[command(name = "comac", version)]
struct Cli {
    /// File of `key = value` lines; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate one computation rate.
    Rates(RatesArgs),
    /// Optimal power allocation for random channel symbols.
    Power(PowerArgs),
    /// Counts of sub-function sets and combinations.
    Partition(PartitionArgs),
    /// Run a named sweep and write CSV.
    Experiment(ExperimentArgs),
    /// Run the built-in checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct RatesArgs {
    /// conventional, opportunistic, direct-ofdm, sfa-avg or sfa-opa.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Nodes per sub-function (defaults to K for families without a partition).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Per-node power in dB (default 10).
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the CSV row here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    /// OFDM symbols to solve (default 1).
    #[arg(long)]
    symbols: Option<usize>,
    /// Channel realization index (default 0).
    #[arg(long)]
    trial: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-sub-carrier levels and residuals; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-node multipliers and loads.
    #[arg(long)]
    duals: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Sub-carrier slots for the expected-share lines (default 1).
    #[arg(long)]
    n: Option<u64>,
    /// Also print every sub-function set.
    #[arg(long)]
    list: bool,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// fig4, fig5, fig6, fig7 or custom.
    figure: String,
    /// Comma-separated grid values; each replaces the figure default.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Result CSV; for fig5 this holds the optimal counts. Standard output
    /// if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// fig5 only: every evaluated point.
    #[arg(long)]
    rows_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long)]
    seed: Option<u64>,
}

const CONFIG_KEYS: &[&str] = &[
    "family", "families", "k", "m", "n", "snr-db", "trials", "seed", "symbols", "trial", "out",
    "duals", "rows-out",
];

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Io(_) => 3,
            Error::InvalidParameter(_)
            | Error::NotDivisible { .. }
            | Error::Domain(_)
            | Error::Parse { .. }
            | Error::TooLarge { .. } => 2,
            Error::Shape(_) | Error::Degenerate(_) | Error::NoConvergence { .. } => 1,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

/// Values from the config file, looked up when a flag is absent.
struct FileValues(BTreeMap<String, String>);

impl FileValues {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(FileValues(BTreeMap::new()));
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure {
            code: 3,
            message: format!("{}: {e}", path.display()),
        })?;
        let map = parse_config(&text, CONFIG_KEYS)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Ok(FileValues(map))
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("config value for '{key}' is not valid: '{v}'"))),
        }
    }

    fn list<T: FromStr>(&self, flag: Option<Vec<T>>, key: &str) -> CliResult<Option<Vec<T>>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| {
                    usage(format!(
                        "config value for '{key}' is not a valid list: '{v}'"
                    ))
                }),
        }
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.0.get(key).map(PathBuf::from))
    }
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| usage(format!("missing required value --{flag}")))
}

fn family(name: &str) -> CliResult<RateFamily> {
    name.parse().map_err(|e: Error| usage(e.to_string()))
}

fn write_rows<T: CsvRecord>(rows: &[T], path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => write_csv(rows, p)?,
        None => write_csv_to(rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn rates(args: RatesArgs, file: &FileValues) -> CliResult<()> {
    let family = family(&required(file.get(args.family, "family")?, "family")?)?;
    let k = required(file.get(args.k, "k")?, "k")?;
    let m = match file.get(args.m, "m")? {
        Some(m) => m,
        None if family.needs_partition() => {
            return Err(usage(format!("--m is required for {family}")))
        }
        None => k,
    };
    let n = file.get(args.n, "n")?.unwrap_or(1);
    let snr_db = file.get(args.snr_db, "snr-db")?.unwrap_or(10.0);
    let params = SimParams::with_snr_db(k, m, n, snr_db)
        .trials(file.get(args.trials, "trials")?.unwrap_or(DEFAULT_TRIALS))
        .seed(file.get(args.seed, "seed")?.unwrap_or(DEFAULT_SEED));
    params.validate()?;
    if family.needs_partition() {
        params.subfunctions()?;
    }
    let est = RateEngine::new().estimate(family, &params)?;
    let row = ResultRow {
        family,
        k,
        m,
        n,
        p_db: snr_db,
        outcome: Outcome::Rate {
            mean: comac_core::io::quantize(est.mean),
            stderr: comac_core::io::quantize(est.stderr),
        },
        trials: params.trials,
        seed: params.seed,
    };
    write_rows(&[row], file.path(args.out, "out").as_deref())
}

fn power(args: PowerArgs, file: &FileValues) -> CliResult<()> {
    let k = required(file.get(args.k, "k")?, "k")?;
    let m = required(file.get(args.m, "m")?, "m")?;
    let n = required(file.get(args.n, "n")?, "n")?;
    let snr_db = file.get(args.snr_db, "snr-db")?.unwrap_or(10.0);
    let symbols = file.get(args.symbols, "symbols")?.unwrap_or(1);
    let trial = file.get(args.trial, "trial")?.unwrap_or(0);
    let seed = file.get(args.seed, "seed")?.unwrap_or(DEFAULT_SEED);
    let params = SimParams::with_snr_db(k, m, n, snr_db).seed(seed);
    params.validate()?;
    if symbols == 0 {
        return Err(usage("--symbols must be positive"));
    }
    let channel = ChannelTensor::draw(k, n, symbols, seed, trial);
    let (mut levels, mut nodes) = (Vec::new(), Vec::new());
    for symbol in 0..symbols {
        let gains = channel.gains(symbol);
        let assignment = build_assignment(&gains, m)?;
        let s = sponge_squeeze(&gains, &assignment, &params, DEFAULT_TOLERANCE)?;
        let r = s.residuals;
        for (subcarrier, &eta) in s.eta.iter().enumerate() {
            levels.push(LevelRow {
                symbol,
                subcarrier,
                eta,
                objective: s.objective,
                feasibility: r.feasibility,
                slackness: r.slackness,
                stationarity: r.stationarity,
                max_power_gap: r.max_power_gap,
            });
        }
        for (node, &mu) in s.mu.iter().enumerate() {
            nodes.push(NodeRow {
                symbol,
                node,
                mu,
                load: s.power.node_total(node),
            });
        }
    }
    write_rows(&levels, file.path(args.out, "out").as_deref())?;
    if let Some(path) = file.path(args.duals, "duals") {
        write_csv(&nodes, &path)?;
    }
    Ok(())
}

fn partition(args: PartitionArgs, file: &FileValues) -> CliResult<()> {
    let k = required(file.get(args.k, "k")?, "k")?;
    let m = required(file.get(args.m, "m")?, "m")?;
    let n = file.get(args.n, "n")?.unwrap_or(1);
    let share = expected_subcarrier_share(n, k, m)?;
    let mut out = std::io::stdout().lock();
    let lines = [
        format!("K = {k}, M = {m}, B = {}", share.blocks),
        format!("sub-function sets |S| = {}", share.set_count),
        format!("combinations |Q| = {}", share.combination_count),
        format!(
            "slots per sub-function set over {n} = {}",
            share.per_subfunction
        ),
        format!(
            "slots per (combination, set) over {n} = {}",
            share.per_combination
        ),
    ];
    let mut write = |s: &str| {
        writeln!(out, "{s}").map_err(|e| Failure {
            code: 3,
            message: e.to_string(),
        })
    };
    for line in &lines {
        write(line)?;
    }
    if args.list {
        for set in enumerate_subfunction_sets(k, m)? {
            let members: Vec<String> = set.members().iter().map(usize::to_string).collect();
            write(&members.join(" "))?;
        }
    }
    Ok(())
}

fn experiment(args: ExperimentArgs, file: &FileValues) -> CliResult<()> {
    let figure: Figure = args
        .figure
        .parse()
        .map_err(|e: Error| usage(e.to_string()))?;
    let mut spec = SweepSpec::new(figure);
    if let Some(ks) = file.list(args.k, "k")? {
        spec.ks = ks;
    }
    if let Some(ms) = file.list(args.m, "m")? {
        spec.ms = ms;
    }
    if let Some(ns) = file.list(args.n, "n")? {
        spec.ns = ns;
    }
    if let Some(snrs) = file.list(args.snr_db, "snr-db")? {
        spec.snrs_db = snrs;
    }
    if let Some(names) = file.list::<String>(args.families, "families")? {
        spec.families = names.iter().map(|s| family(s)).collect::<CliResult<_>>()?;
    }
    if let Some(trials) = file.get(args.trials, "trials")? {
        spec.trials = trials;
    }
    if let Some(seed) = file.get(args.seed, "seed")? {
        spec.seed = seed;
    }
    spec.output = file.path(args.out, "out");
    let rows_out = file.path(args.rows_out, "rows-out");
    if rows_out.is_some() && figure != Figure::Fig5 {
        return Err(usage("--rows-out only applies to fig5"));
    }
    spec.validate()?;

    let start = Instant::now();
    let mut progress = |row: &ResultRow, elapsed: std::time::Duration| {
        let value = match &row.outcome {
            Outcome::Rate { mean, stderr } => format!("{mean:.6} ± {stderr:.6}"),
            Outcome::Failed(msg) => format!("error: {msg}"),
        };
        eprintln!(
            "{} K={} M={} N={} P={} dB: {value} ({:.2}s)",
            row.family,
            row.k,
            row.m,
            row.n,
            row.p_db,
            elapsed.as_secs_f64()
        );
    };
    let out = run_sweep_with(&spec, &RateEngine::new(), &mut progress)?;
    eprintln!(
        "{} points in {:.1}s",
        out.rows.len(),
        start.elapsed().as_secs_f64()
    );

    if figure == Figure::Fig5 {
        write_rows(&out.optimal, spec.output.as_deref())?;
        if let Some(path) = rows_out {
            write_csv(&out.rows, &path)?;
        }
    } else {
        write_rows(&out.rows, spec.output.as_deref())?;
    }
    Ok(())
}

fn selftest(args: SelftestArgs, file: &FileValues) -> CliResult<()> {
    let seed = file.get(args.seed, "seed")?.unwrap_or(DEFAULT_SEED);
    let report = run_selftest_seeded(seed);
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: "self-test failed".into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = FileValues::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Rates(a) => rates(a, &file),
        Command::Power(a) => power(a, &file),
        Command::Partition(a) => partition(a, &file),
        Command::Experiment(a) => experiment(a, &file),
        Command::Selftest(a) => selftest(a, &file),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("comac: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
