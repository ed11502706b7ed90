use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use csikit_cli::{commands, results_path, summary_table, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "csikit", version, about = "Massive-MIMO CSI feedback experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). The built-in desk-scale profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's paths.out_dir.
    #[arg(long, env = "CSIKIT_OUT_DIR")]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, env = "CSIKIT_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the train/val/test channel datasets.
    Generate(Common),
    /// Train the models of AI operating points.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train only this point (repeatable).
        #[arg(long = "point")]
        points: Vec<String>,
    },
    /// Evaluate every operating point on the test split.
    Sweep(Common),
    /// Summarize overhead and complexity from a results file.
    Report {
        #[command(flatten)]
        common: Common,
        /// Results CSV; defaults to <out>/results.csv.
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

fn setup(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_profile(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("invalid config field `threads`: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.paths.out_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let start = Instant::now();
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = setup(&common)?;
            for path in commands::generate(&cfg, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Train { common, points } => {
            let (cfg, out) = setup(&common)?;
            let done = commands::train(&cfg, &out, &points)?;
            if done.is_empty() {
                println!("no AI operating points to train");
            }
            for s in done {
                println!(
                    "{}: {} samples, {} epochs, train loss {:.3e}, val loss {}",
                    s.id,
                    s.samples,
                    s.epochs,
                    s.final_train_loss,
                    s.final_val_loss.map_or("-".into(), |v| format!("{v:.3e}"))
                );
            }
        }
        Command::Sweep(common) => {
            let (cfg, out) = setup(&common)?;
            let result = commands::sweep(&cfg, &out)?;
            print!("{}", summary_table(&result.outcomes));
            println!("wrote {}", results_path(&out).display());
        }
        Command::Report { common, results } => {
            let (cfg, out) = setup(&common)?;
            let results = results.unwrap_or_else(|| results_path(&out));
            let (_, text) = commands::report(&cfg, &results, &out)?;
            print!("{text}");
        }
    }
    eprintln!("done in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
