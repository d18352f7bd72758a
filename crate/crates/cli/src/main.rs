mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hyposearch", version, about = "Discover interpretable image factors with an LLM-in-the-loop regression search")]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the dataset and loop seeds from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Refuse any backend that reaches the network.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the discovery loop and write the checkpoint, event log and report.
    Run {
        /// Print the iteration-0 prompts and exit without calling endpoints.
        #[arg(long)]
        dry_run: bool,
    },
    /// Regenerate the report bundle from a finished run directory.
    Report {
        /// Defaults to `output.run_dir` of the config.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Also write k-fold cross-validated predictions.
        #[arg(long)]
        cv_folds: Option<usize>,
    },
    /// Answer a fixed hypothesis file for every image, without the loop.
    Embed {
        /// JSON array of {"question": ..., "options": [...]} objects.
        #[arg(long)]
        hypotheses: PathBuf,
    },
    /// Check the configuration and exit.
    ValidateConfig,
}

fn need_config(cli: &Cli) -> Result<config::RunConfigFile, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    commands::load_config(path, cli.seed)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::ValidateConfig => {
            need_config(cli)?;
            println!("configuration is valid");
        }
        Command::Run { dry_run: true } => {
            println!("{}", commands::dry_run(&need_config(cli)?)?);
        }
        Command::Run { dry_run: false } => {
            let cfg = need_config(cli)?;
            let summary = commands::cmd_run(&cfg, cli.offline)?;
            let state = &summary.state;
            let stop = state.stop.as_ref().expect("completed runs record a stop");
            let inc = state.incumbent().expect("completed runs have an incumbent");
            println!("run {} stopped at t={}: {:?}", state.run_id, stop.iteration, stop.reason);
            println!(
                "validation rmse {:.6}, mae {:.6}, r2 {:.6}",
                inc.val_metrics.rmse, inc.val_metrics.mae, inc.val_metrics.r2
            );
            for (h, p) in inc.set.members.iter().zip(&inc.assessment.p_values) {
                println!("  p={p:.3e}  {}", h.question);
            }
            println!("run directory: {}", summary.run_dir.display());
            for f in &summary.report_files {
                println!("  wrote {}", f.display());
            }
        }
        Command::Report { run_dir, cv_folds } => {
            let (dir, folds) = match run_dir {
                Some(d) => (d.clone(), *cv_folds),
                None => {
                    let cfg = need_config(cli)?;
                    (cfg.run_dir(), cv_folds.or(cfg.output.cv_folds))
                }
            };
            for f in commands::cmd_report(&dir, folds)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Embed { hypotheses } => {
            let cfg = need_config(cli)?;
            let s = commands::cmd_embed(&cfg, hypotheses, cli.offline)?;
            println!("wrote {} ({} x {})", s.path.display(), s.rows, s.cols);
            println!("endpoint_calls={}", s.endpoint_calls);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
