use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use renv::config::{Action, ExperimentConfig};
use renv::fixtures::{find, FIXTURES};
use renv::RunError;

const RUN_HELP: &str = "\
Outputs, written into --out (default: the config's `output`, else renv-out/<name>-<action>):
  report.jsonl      one JSON object per line, `type` = check | normalizer | note
  summary.csv       model,test,statistic,value,threshold,pass
Data files by action:
  stationary        stationary.csv: state columns, pi, kappa_normalized (jump models)
  simulate          occupation.csv: state or bin columns, occupation, kappa_normalized
                    trajectory.csv: t followed by the state (diffusion models)
  verify            wie_quadrature.csv: phi, integral, tolerance (ouenv models)
Exit status: 0 when every check passes, 1 on a failed check or runtime error,
2 on an invalid config.";

#[derive(Parser)]
#[command(name = "renv", version, about = "Markov processes in random environments: invariant-measure verification and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    #[command(after_help = RUN_HELP)]
    Run(RunArgs),
    /// List the built-in fixtures.
    Fixtures,
    /// Print a built-in fixture's config.
    Show { id: String },
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct Source {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in fixture id (see `renv fixtures`).
    #[arg(long, value_name = "ID")]
    fixture: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Overrides the config seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config action.
    #[arg(long, value_enum)]
    action: Option<Action>,
}

fn load(src: &Source) -> Result<ExperimentConfig, RunError> {
    if let Some(p) = &src.config {
        return Ok(ExperimentConfig::load(p)?);
    }
    let id = src.fixture.as_deref().unwrap_or_default();
    let f = find(id).ok_or_else(|| RunError::Config(renv::config::ConfigError::field("fixture", format!("unknown fixture `{id}`"))))?;
    Ok(f.config()?)
}

fn run(args: RunArgs) -> Result<i32, RunError> {
    let mut cfg = load(&args.source)?;
    if let Some(a) = args.action {
        cfg.action = a;
    }
    let seed = args.seed.unwrap_or_else(|| cfg.seed());
    let out = args.out.clone().unwrap_or_else(|| renv::default_out_dir(&cfg));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.threads.unwrap_or(0)).build().map_err(|e| RunError::Runtime(e.into()))?;
    let start = Instant::now();
    let rep = pool.install(|| renv::run(&cfg, seed, &out))?;
    for e in &rep.outcome.entries {
        println!("{}", serde_json::to_string(e).map_err(|e| RunError::Runtime(e.into()))?);
    }
    eprintln!("{} in {:.2?}, outputs in {}", if rep.outcome.all_pass() { "passed" } else { "FAILED" }, start.elapsed(), out.display());
    Ok(rep.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Fixtures => {
            for f in FIXTURES {
                println!("{:<28} {}", f.id, f.about);
            }
            0
        }
        Command::Show { id } => match find(&id) {
            Some(f) => {
                print!("{}", f.toml);
                0
            }
            None => {
                eprintln!("error: unknown fixture `{id}`");
                2
            }
        },
        Command::Run(args) => match run(args) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
