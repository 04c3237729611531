//! Command-line front end: run experiments and suites, evaluate the exact
//! oracle, diagnose and report on stored runs, and validate configurations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use laiclab::harness::{
    diagnose_store, emit_report, oracle_summary_json, run_experiment, run_suite, ExperimentConfig,
    RecordStore,
};
use laiclab::{Error, Result};

#[derive(Parser)]
#[command(name = "laiclab", version, about = "Twin-experiment laboratory for \
time-correlated model-error diagnostics in cycling data assimilation")]
struct Cli {
    /// Size of the worker thread pool (does not change results).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Override the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory (default: runs/<experiment name>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scheme and store the cycle records.
    Run(RunArgs),
    /// Run every suite scheme against the same simulated worlds.
    Suite(RunArgs),
    /// Evaluate the exact moment oracle for a linear configuration.
    Oracle {
        config: PathBuf,
        /// Write oracle.json here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a stored run: autocorrelations, whiteness, profiles.
    Diagnose {
        store: PathBuf,
        /// Largest lag (default: what the run was configured with).
        #[arg(long)]
        lags: Option<usize>,
        /// Stratify mean increments by cycle index modulo this period.
        #[arg(long)]
        phase: Option<usize>,
    },
    /// Emit figure tables (CSV) and summary.json for a stored run.
    Report {
        store: PathBuf,
        /// Comma-separated figure names (fig1,fig3,fig9,fig11,fig12).
        #[arg(long, value_delimiter = ',', required = true)]
        figs: Vec<String>,
        #[arg(long)]
        phase: Option<usize>,
        /// Output directory (default: the store directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a configuration, reporting every problem.
    Validate { config: PathBuf },
}

fn load_config(path: &PathBuf, args: Option<&RunArgs>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(args) = args {
        if let Some(seed) = args.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(replicates) = args.replicates {
            cfg.experiment.replicates = replicates;
        }
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.experiment.name))
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args.config, Some(&args))?;
            let store = run_experiment(&cfg)?;
            let dir = out_dir(&args, &cfg);
            store.save(&dir)?;
            println!(
                "stored {} replicate(s) of '{}' in {}",
                cfg.experiment.replicates,
                store.manifest.runs.join(", "),
                dir.display()
            );
            Ok(())
        }
        Command::Suite(args) => {
            let cfg = load_config(&args.config, Some(&args))?;
            let store = run_suite(&cfg)?;
            let dir = out_dir(&args, &cfg);
            store.save(&dir)?;
            println!(
                "stored paired runs [{}] in {}",
                store.manifest.runs.join(", "),
                dir.display()
            );
            Ok(())
        }
        Command::Oracle { config, out } => {
            let cfg = load_config(&config, None)?;
            let summary = oracle_summary_json(&cfg)?;
            let text = serde_json::to_string_pretty(&summary)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)
                        .map_err(|e| Error::io(dir.display().to_string(), e))?;
                    let path = dir.join("oracle.json");
                    std::fs::write(&path, text)
                        .map_err(|e| Error::io(path.display().to_string(), e))?;
                    println!("wrote {}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Diagnose { store, lags, phase } => {
            let store = RecordStore::load(&store)?;
            let lags = lags.unwrap_or(store.manifest.lags);
            let diagnoses = diagnose_store(&store, lags, phase)?;
            println!("{}", serde_json::to_string_pretty(&diagnoses)?);
            Ok(())
        }
        Command::Report {
            store: store_path,
            figs,
            phase,
            out,
        } => {
            let store = RecordStore::load(&store_path)?;
            let dir = out.unwrap_or(store_path);
            let written = emit_report(&store, &figs, phase, &dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!(
                "ok: '{}' (dim {}, {} cycles, {} replicate(s), scheme {})",
                cfg.experiment.name,
                cfg.experiment.dim,
                cfg.experiment.cycles,
                cfg.experiment.replicates,
                cfg.scheme.label()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
