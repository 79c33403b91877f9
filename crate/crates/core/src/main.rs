use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use petc_traffic::config::RunConfig;
use petc_traffic::pipeline::{run_pipeline, summary_json, verify_dir, Format, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "petc-traffic", version, about = "Traffic abstractions of periodic event-triggered control loops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the state-space partition.
    Partition(RunArgs),
    /// Compute regional inter-event-time bounds.
    Bounds(RunArgs),
    /// Compute flow pipes.
    Reach(RunArgs),
    /// Assemble and export the abstraction.
    Abstract(RunArgs),
    /// Simulate the closed loop.
    Simulate(RunArgs),
    /// Check stored traces against a stored abstraction and flow pipes.
    Verify(VerifyArgs),
    /// Run every stage.
    Pipeline(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Dot,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra export formats (JSON is always written); repeatable.
    #[arg(long, value_enum)]
    format: Vec<FormatArg>,
    /// Overrides `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "PETC_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Reuse bounds from the output directory when the configuration hash matches.
    #[arg(long)]
    stage_cache: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// When given, artifacts must carry this configuration's hash.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig, ExitCode> {
    let mut cfg = RunConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })?;
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    Ok(cfg)
}

fn run(stage: Stage, args: RunArgs) -> ExitCode {
    let cfg = match load(&args.config, args.seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut formats: BTreeSet<Format> = args
        .format
        .iter()
        .map(|f| match f {
            FormatArg::Json => Format::Json,
            FormatArg::Dot => Format::Dot,
            FormatArg::Csv => Format::Csv,
        })
        .collect();
    formats.insert(Format::Json);
    let opts = RunOptions {
        out: Some(args.out),
        formats,
        jobs: args.jobs.max(1),
        stage_cache: args.stage_cache,
    };
    let stages: Vec<Stage> = if stage == Stage::Verify {
        Stage::ALL.to_vec()
    } else {
        vec![stage]
    };
    match run_pipeline(&cfg, &stages, &opts) {
        Ok(art) => {
            print!("{}", summary_json(&art.summary));
            match &art.report {
                Some(r) if !r.passed => {
                    eprintln!("verification failed: {} of {} events violate the abstraction", r.failures.len(), r.events);
                    ExitCode::from(1)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Partition(a) => run(Stage::Partition, a),
        Command::Bounds(a) => run(Stage::Bounds, a),
        Command::Reach(a) => run(Stage::Reach, a),
        Command::Abstract(a) => run(Stage::Abstract, a),
        Command::Simulate(a) => run(Stage::Simulate, a),
        Command::Pipeline(a) => run(Stage::Verify, a),
        Command::Verify(a) => {
            let hash = match &a.config {
                Some(p) => match load(p, a.seed) {
                    Ok(c) => Some(c.hash()),
                    Err(code) => return code,
                },
                None => None,
            };
            match verify_dir(&a.out, hash.as_deref()) {
                Ok(report) => {
                    print!("{}", petc_traffic::io::to_stable_json(&report).expect("report serializes"));
                    if report.passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
