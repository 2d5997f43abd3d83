use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowmob::harness::experiments::{run_preset, Preset};
use flowmob::harness::output::{create_dir, write_metrics};
use flowmob::harness::{load_scenario, HarnessError};
use flowmob::netsim;

#[derive(Debug, Parser)]
#[command(name = "flowmob", version, about = "PMIPv6 flow mobility simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its trace and metrics.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario horizon, in ms.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Run a preset experiment (A to E).
    Experiment {
        preset: Preset,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Dotted override such as `knobs.d_detect_ms=40`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse and validate a scenario.
    Validate { scenario: PathBuf },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            horizon,
        } => {
            let mut sc = load_scenario(&scenario)?;
            if let Some(h) = horizon {
                sc.horizon_ms = h;
            }
            let seed = seed.unwrap_or(sc.seed);
            let result = netsim::run(&sc, seed)?;
            create_dir(&out)?;
            let path = out.join("trace.txt");
            result
                .trace
                .write_to(&path)
                .map_err(|source| HarnessError::Io { path, source })?;
            write_metrics(&result.metrics, &out)?;
            let m = &result.metrics;
            println!(
                "emitted {} delivered {} dropped {} signaling {} trace {}",
                m.emitted(),
                m.delivered(),
                m.dropped(),
                m.signaling_total(),
                result.trace.digest()
            );
        }
        Command::Experiment { preset, out, overrides } => {
            let result = run_preset(preset, &overrides)?;
            result.write(&out)?;
            println!("preset {preset}: {} runs, csv in {}", result.runs.len(), out.display());
        }
        Command::Validate { scenario } => {
            let sc = load_scenario(&scenario)?;
            println!(
                "ok: {} MAGs, {} mobile nodes, {} flows, {} events",
                sc.mags.len(),
                sc.mns.len(),
                sc.flows.len(),
                sc.events.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ HarnessError::Invalid(_)) => {
            eprintln!("invalid scenario: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
