use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zmix::harness::{self, ConfigError, MetricsReport, ScenarioConfig};
use zmix::network;

#[derive(Parser)]
#[command(name = "zmix", about = "Shielded-pool linkability simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit its metrics report.
    Run(RunArgs),
    /// Diff two metric reports produced from the same seeded workload.
    Compare(CompareArgs),
    /// Re-run a mixnet scenario across a range of cover-traffic rates.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json, views.jsonl, trace.jsonl. Created if
    /// missing; the report is always printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline report.json.
    #[arg(long)]
    baseline: PathBuf,
    /// Treatment report.json.
    #[arg(long)]
    treatment: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario config (JSON); must include a mixnet section.
    #[arg(long)]
    config: PathBuf,
    /// Swept parameter as name=start:stop:step, e.g. lambda=0:0.05:0.005.
    #[arg(long)]
    vary: String,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_vary(spec: &str) -> Result<Vec<f64>, String> {
    let (name, range) = spec
        .split_once('=')
        .ok_or_else(|| format!("--vary: expected name=start:stop:step, got `{spec}`"))?;
    if name != "lambda" {
        return Err(format!("--vary: unsupported parameter `{name}` (only lambda)"));
    }
    let parts: Vec<&str> = range.split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        return Err(format!("--vary: expected start:stop:step, got `{range}`"));
    };
    let parse = |s: &str| s.parse::<f64>().map_err(|e| format!("--vary: bad number `{s}`: {e}"));
    let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
    if step <= 0.0 || stop < start {
        return Err("--vary: need step > 0 and stop >= start".to_string());
    }
    let mut rates = Vec::new();
    let mut i = 0u32;
    loop {
        let v = start + step * i as f64;
        if v > stop + step * 1e-9 {
            break;
        }
        rates.push(v);
        i += 1;
    }
    Ok(rates)
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let mut config = ScenarioConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = harness::run_scenario(&config)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        out.report.write_json(&dir.join("report.json"))?;
        let views = std::fs::File::create(dir.join("views.jsonl"))?;
        out.ledger.write_views_jsonl(views)?;
        let trace = std::fs::File::create(dir.join("trace.jsonl"))?;
        network::write_trace_jsonl(&out.trace, trace)?;
    }
    print!("{}", out.report.to_json());
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let load = |p: &PathBuf| -> Result<MetricsReport, CliError> {
        let text = std::fs::read_to_string(p)?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
    };
    let baseline = load(&args.baseline)?;
    let treatment = load(&args.treatment)?;
    let delta = harness::compare(&baseline, &treatment)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&delta).expect("delta serializes"));
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let config = ScenarioConfig::from_path(&args.config)?;
    let rates = parse_vary(&args.vary).map_err(CliError::Usage)?;
    let report = harness::sweep_cover_rate(&config, &rates)?;
    let write_err = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            harness::report::write_sweep_csv(&report, file).map_err(write_err)?;
        }
        None => {
            harness::report::write_sweep_csv(&report, std::io::stdout()).map_err(write_err)?;
        }
    }
    eprintln!(
        "attacker advantage nonincreasing across sweep: {}",
        report.advantage_nonincreasing
    );
    Ok(())
}

enum CliError {
    Config(ConfigError),
    Usage(String),
    Io(std::io::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
