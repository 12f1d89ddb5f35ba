use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use macgame::scenario::{LogBaseName, Task};
use macgame::{parse_scenario, run, run_batch, CliError, Overrides};

#[derive(Parser)]
#[command(name = "macgame", version, about = "Equilibria and dynamics of constrained multiple-access-channel games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Capacity tables, equilibrium set and efficiency metrics.
    Analyze(Single),
    /// Integrate the scenario's dynamics and write a trajectory CSV.
    Simulate(Single),
    /// Check a profile or correlated device and report witnesses.
    Verify(Single),
    /// Run several scenario files in parallel, each with its own task.
    Batch(Batch),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_base)]
    log_base: Option<LogBaseName>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Single {
    file: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Batch {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn parse_base(s: &str) -> Result<LogBaseName, String> {
    LogBaseName::parse(s).ok_or_else(|| format!("expected 2 or e, got {s}"))
}

fn overrides(c: &Common) -> Overrides {
    Overrides { seed: c.seed, log_base: c.log_base, tol: c.tol }
}

fn run_single(task: Task, args: &Single) -> Result<i32, CliError> {
    let mut sf = parse_scenario(&args.file)?;
    if sf.task != task {
        return Err(CliError::Usage(format!(
            "{} declares task {:?}, not {:?}",
            args.file.display(),
            sf.task,
            task
        )));
    }
    overrides(&args.common).apply(&mut sf)?;
    let report = run(&sf, args.common.out.as_deref())?;
    println!("{}", report.to_json());
    Ok(report.exit_code())
}

fn threads() -> usize {
    std::env::var("MACGAME_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_many(args: &Batch) -> Result<i32, CliError> {
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let items = run_batch(&args.files, &out, overrides(&args.common), threads())?;
    let mut code = 0;
    let mut summary = Vec::new();
    for item in &items {
        let c = item.exit_code();
        code = code.max(c);
        let entry = match &item.outcome {
            Ok(r) => serde_json::json!({ "file": item.path.display().to_string(), "exit_code": c, "verdict": r.verdict }),
            Err(e) => serde_json::json!({ "file": item.path.display().to_string(), "exit_code": c, "error": e.to_string() }),
        };
        summary.push(entry);
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = match &cli.command {
        Command::Analyze(a) => run_single(Task::Analyze, a),
        Command::Simulate(a) => run_single(Task::Simulate, a),
        Command::Verify(a) => run_single(Task::Verify, a),
        Command::Batch(b) => run_many(b),
    };
    eprintln!("wall-clock: {:.3} s", start.elapsed().as_secs_f64());
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
