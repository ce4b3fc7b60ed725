use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybridnet::harness::{
    parse_config_text, read_fit_samples, run_experiment, scaling_fit, write_artifacts, write_metrics_csv, Correctness,
    ExperimentConfig, HarnessError, RunRecord, XAxis,
};

#[derive(Parser)]
#[command(name = "hybridnet", about = "Shortest-path algorithms in the hybrid network model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an algorithm over sizes and seeds and write a metrics CSV.
    Run(RunArgs),
    /// Fit the log-log slope of rounds against n, k or spd from a metrics CSV.
    Fit(FitArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key=value file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    family: Option<String>,
    /// Graph file ("n m W" header, then "u v w" lines); replaces --family and --n.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Comma list, items may be ranges like 1..20.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    /// "unit" or the largest weight.
    #[arg(long)]
    weights: Option<String>,
    /// Local capacity: a number, "inf" or "table".
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Marking parameter override.
    #[arg(long)]
    x: Option<String>,
    /// Tokens (td), sources (hk_ssp) or spanner k (spanner_only).
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    hops: Option<String>,
    /// 1-based source node.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    strict: bool,
    /// Also write ledger, matrix, trace and spanner files next to --out.
    #[arg(long)]
    artifacts: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "x-axis", default_value = "n")]
    x_axis: String,
}

fn config_from(args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut pairs = match &args.config {
        Some(path) => parse_config_text(&std::fs::read_to_string(path)?)?,
        None => Vec::new(),
    };
    let flags = [
        ("algo", &args.algo),
        ("family", &args.family),
        ("n", &args.n),
        ("seeds", &args.seeds),
        ("weights", &args.weights),
        ("lambda", &args.lambda),
        ("gamma", &args.gamma),
        ("eps", &args.eps),
        ("alpha", &args.alpha),
        ("x", &args.x),
        ("k", &args.k),
        ("hops", &args.hops),
        ("source", &args.source),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            pairs.push((key.to_string(), v.clone()));
        }
    }
    if let Some(g) = &args.graph {
        pairs.push(("graph".into(), g.display().to_string()));
    }
    if let Some(o) = &args.out {
        pairs.push(("out".into(), o.display().to_string()));
    }
    if args.strict {
        pairs.push(("strict".into(), "true".into()));
    }
    if args.artifacts {
        pairs.push(("artifacts".into(), "true".into()));
    }
    ExperimentConfig::from_pairs(&pairs)
}

fn summary(r: &RunRecord) -> String {
    let check = match r.correctness {
        Correctness::ExactMatch(m) => format!("exact={m}"),
        Correctness::MaxRatio { ratio, sound } => format!("ratio={ratio:.4} sound={sound}"),
    };
    format!(
        "{} n={} seed={} rounds={} {} valid={} ({} ms)",
        r.algo, r.n, r.seed, r.rounds_total, check, r.valid, r.wall_ms
    )
}

fn run(args: RunArgs) -> Result<bool, HarnessError> {
    let cfg = config_from(&args)?;
    let outcomes = run_experiment(&cfg)?;
    for o in &outcomes {
        eprintln!("{}", summary(&o.record));
    }
    let records: Vec<RunRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    match &cfg.out {
        Some(path) => {
            write_metrics_csv(&records, BufWriter::new(File::create(path)?))?;
            if cfg.artifacts {
                for o in &outcomes {
                    write_artifacts(path, o)?;
                }
            }
        }
        None => write_metrics_csv(&records, std::io::stdout().lock())?,
    }
    let passed = records.iter().filter(|r| r.valid).count();
    eprintln!("{passed}/{} runs passed validation", records.len());
    Ok(passed == records.len())
}

fn fit(args: FitArgs) -> Result<bool, HarnessError> {
    let axis = XAxis::parse(&args.x_axis)
        .ok_or_else(|| HarnessError::Config(format!("x-axis must be n, k or spd, got {:?}", args.x_axis)))?;
    let samples = read_fit_samples(File::open(&args.input)?, axis)?;
    let f = scaling_fit(&samples)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "slope={:.4} ci95=[{:.4},{:.4}] intercept={:.4}", f.slope, f.ci.0, f.ci.1, f.intercept)?;
    for (x, m) in &f.points {
        writeln!(out, "{} {x} median_rounds={m}", args.x_axis)?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Fit(a) => fit(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
