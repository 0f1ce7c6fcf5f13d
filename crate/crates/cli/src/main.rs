//! `earlir`: synthetic data, experiment runs and score-file evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use earlir_core::dataset::{synth_dataset, SynthParams, MANIFEST_FILE};
use earlir_core::evaluation::report;
use earlir_core::io::read_scores;
use earlir_core::pipeline::{format_summary_table, run_experiment};
use earlir_core::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "earlir", version, about = "2-D ear recognition experiments")]
struct Cli {
    /// Worker threads; 0 or unset means one per core.
    #[arg(long, global = true, env = "EARLIR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic ear dataset and its manifest.
    Synth {
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 15)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        width: usize,
        #[arg(long, default_value_t = 80)]
        height: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        shift: u32,
    },
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Print the resolved plan without computing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a score CSV (needs its `.labels.csv` sidecar).
    Eval {
        #[arg(long)]
        scores: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth {
            subjects,
            samples,
            seed,
            out,
            width,
            height,
            noise,
            shift,
        } => {
            let params = SynthParams {
                n_subjects: subjects,
                n_samples: samples,
                width,
                height,
                noise_sigma: noise,
                shift_max: shift,
                seed,
            };
            let manifest = synth_dataset(&out, &params)?;
            eprintln!("wrote {} images", manifest.len());
            println!("{}", out.join(MANIFEST_FILE).display());
        }
        Command::Run { config, dry_run } => {
            let cfg = ExperimentConfig::load(&config)?;
            if dry_run {
                println!("{}", cfg.plan()?);
                return Ok(());
            }
            let outcome = run_experiment(&cfg)?;
            print!("{}", format_summary_table(&outcome.reports));
        }
        Command::Eval { scores } => {
            let matrix = read_scores(&scores)?;
            let r = report(&matrix, Default::default())?;
            println!("method: {}", r.method);
            for (k, v) in r.rank_rates_pct.iter().enumerate() {
                println!("rank-{}: {v:.4}", k + 1);
            }
            println!("perfect rank: {}", r.perfect_rank);
            println!("eer: {:.4}", r.eer_pct);
        }
    }
    Ok(())
}
