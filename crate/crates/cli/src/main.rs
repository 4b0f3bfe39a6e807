use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pftvp_cli::commands::{cmd_generate, cmd_replicate, cmd_run, cmd_summarize};
use pftvp_cli::config::ExperimentConfig;
use pftvp_cli::presets::{names, preset};
use pftvp_cli::CliError;

#[derive(Parser)]
#[command(name = "pftvp", version, about = "Particle filters for time-varying ODE parameters")]
struct Cli {
    /// Directory that default output paths are resolved against.
    #[arg(long, global = true, env = "PFTVP_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Built-in experiment (see `pftvp presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Experiment TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        match (&self.preset, &self.config) {
            (Some(name), _) => preset(name),
            (_, Some(path)) => ExperimentConfig::load(path),
            _ => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (CSV plus JSON sidecar).
    Generate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter a dataset and write per-step records and a run summary.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the filter seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run over consecutive filter seeds.
    Replicate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seeds: usize,
        /// Existing dataset; generated into the output directory otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Draw fresh observation noise for every replicate.
        #[arg(long)]
        vary_data: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare records files in one table.
    Summarize {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// CSV output path; defaults to summary.csv under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in experiments.
    Presets,
}

fn out_dir(out: Option<PathBuf>, cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    out.unwrap_or_else(|| cfg.run_dir(root))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let root = cli.output_root;
    match cli.command {
        Command::Generate { source, out } => {
            let cfg = source.load()?;
            let path = cmd_generate(&cfg, &out_dir(out, &cfg, &root))?;
            println!("{}", path.display());
        }
        Command::Run {
            source,
            data,
            seed,
            out,
        } => {
            let cfg = source.load()?;
            let dir = out_dir(out, &cfg, &root);
            let run = cmd_run(&cfg, &data, seed, &dir)?;
            println!(
                "{}: {} records, theta rmse {:?}, {:.2}s -> {}",
                cfg.name,
                run.summary.n_records,
                run.summary.theta_rmse,
                run.summary.wall_time_s,
                dir.display()
            );
        }
        Command::Replicate {
            source,
            seeds,
            data,
            vary_data,
            out,
        } => {
            let cfg = source.load()?;
            let dir = out_dir(out, &cfg, &root);
            let (report, _) = cmd_replicate(&cfg, seeds, data.as_deref(), vary_data, &dir)?;
            for (k, s) in &report.aggregate {
                println!("{k:<18} mean {:<12.6} std {:<12.6} [{:.6}, {:.6}]", s.mean, s.std, s.min, s.max);
            }
        }
        Command::Summarize { files, out } => {
            let table = cmd_summarize(&files)?;
            let path = out.unwrap_or_else(|| root.join("summary.csv"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
            }
            table.write_csv(&path)?;
            print!("{}", table.to_text());
        }
        Command::Presets => {
            for name in names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
