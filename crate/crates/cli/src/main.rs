use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use expcli::analysis::{self, AccuracyRow, EvalTable, FractionRow};
use expcli::{report, ExperimentConfig, Pipeline, Profile, Result};

#[derive(Parser)]
#[command(
    name = "flowlab",
    version,
    about = "2D chaos/turbulence classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; defaults to the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value = "flowlab-out")]
    out: PathBuf,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run every simulation family and label regimes.
    Simulate,
    /// Build the simulation-derived datasets and evaluation sets.
    Render,
    /// Build the noise datasets and Fourier proxies.
    Noise,
    /// Simulation and image spectra.
    Spectra,
    /// Train every task over every seed.
    Train,
    /// Effective-dimension tables, trained and at initialization.
    Effdim,
    /// Class fractions on adversarial inputs.
    Adversarial,
    /// Accuracy on out-of-distribution data.
    Ood,
    /// Everything, then the report.
    Pipeline,
    /// Collect finished artifacts into the report bundle.
    Report,
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.profile) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, p) => ExperimentConfig::for_profile(p.unwrap_or(Profile::Desk)),
    };
    if let (Some(_), Some(p)) = (&cli.config, cli.profile) {
        if p != cfg.profile {
            log::warn!(
                "--profile {p:?} ignored, the config file sets {:?}",
                cfg.profile
            );
        }
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_fractions(t: &EvalTable<FractionRow>) {
    println!(
        "{:<28} {:>7} {:>8} {:>11}",
        "dataset", "images", "chaos", "turbulence"
    );
    for r in &t.rows {
        println!(
            "{:<28} {:>7} {:>8.4} {:>11.4}",
            r.dataset, r.images, r.chaos, r.turbulence
        );
    }
    for s in &t.skipped {
        println!("skipped {s}");
    }
}

fn print_accuracy(t: &EvalTable<AccuracyRow>) {
    println!(
        "{:<28} {:>7} {:>9} {:>8}",
        "dataset", "images", "accuracy", "std"
    );
    for r in &t.rows {
        println!(
            "{:<28} {:>7} {:>9.4} {:>8.4}",
            r.dataset, r.images, r.accuracy, r.std
        );
    }
    for s in &t.skipped {
        println!("skipped {s}");
    }
}

fn run(cli: &Cli) -> Result<()> {
    let p = Pipeline::new(config(cli)?, &cli.out)?;
    match cli.command {
        Command::Simulate => p.simulate(),
        Command::Render => p.render(),
        Command::Noise => p.noise(),
        Command::Spectra => analysis::spectra(&p),
        Command::Train => p.train(),
        Command::Effdim => {
            for t in &p.cfg.tasks {
                let (trained, random) = analysis::effdim_task(&p, t)?;
                for r in [trained, random] {
                    r.write_csv(std::io::stdout())?;
                }
            }
            Ok(())
        }
        Command::Adversarial => {
            print_fractions(&analysis::adversarial_table(&p)?);
            Ok(())
        }
        Command::Ood => {
            print_accuracy(&analysis::ood_table(&p)?);
            Ok(())
        }
        Command::Pipeline => {
            p.run_all()?;
            println!("{}", p.out.join(report::REPORT_DIR).display());
            Ok(())
        }
        Command::Report => {
            let dir = report::write_report(&p)?;
            println!("{}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
