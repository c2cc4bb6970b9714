use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use fogsim::experiments::{compare_policies, complexity_bench, sweep, write_sweep_csv, SweepGrid};
use fogsim::scheduler::PolicyKind;
use fogsim::telemetry::{export_telemetry, export_to_dir, TelemetryFormat};
use fogsim::{run_simulation, validate_scenario, ScenarioConfig, SimError};

#[derive(Parser)]
#[command(name = "fogsim", version, about = "Federated learning over serverless edge/fog, simulated")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and export per-round telemetry.
    Run {
        scenario: PathBuf,
        /// Directory for `rounds.csv` / `rounds.json`; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: TelemetryFormat,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scheduler: Option<PolicyKind>,
    },
    /// Run one scenario under several scheduling policies.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "fedfog,naive_faas,random")]
        policies: Vec<PolicyKind>,
    },
    /// Threshold sensitivity sweep.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Scheduling operation counts per policy.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
        clients: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a scenario file and list every problem found.
    Validate { scenario: PathBuf },
}

fn load(path: &Path) -> anyhow::Result<ScenarioConfig> {
    let cfg = ScenarioConfig::load(path)?;
    let violations = validate_scenario(&cfg);
    if !violations.is_empty() {
        return Err(SimError::InvalidScenario(violations).into());
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    match cli.command {
        Command::Run { scenario, out, format, seed, scheduler } => {
            let mut cfg = load(&scenario)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = scheduler {
                cfg.policy.kind = p;
            }
            let records = run_simulation(&cfg)?;
            match out {
                Some(dir) => {
                    let path = export_to_dir(&records, format, &dir)
                        .with_context(|| format!("writing telemetry to {}", dir.display()))?;
                    eprintln!("wrote {} rounds to {}", records.len(), path.display());
                }
                None => export_telemetry(&records, format, stdout.lock())?,
            }
        }
        Command::Compare { scenario, policies } => {
            let cfg = load(&scenario)?;
            let mut w = csv::Writer::from_writer(stdout.lock());
            w.write_record([
                "policy",
                "final_accuracy",
                "mean_latency_ms",
                "total_energy_j",
                "total_cold_starts",
                "mean_participation",
                "mean_objective",
            ])?;
            for s in compare_policies(&cfg, &policies)? {
                w.write_record([
                    s.policy.as_str().to_string(),
                    s.final_accuracy.to_string(),
                    s.mean_latency_ms.to_string(),
                    s.total_energy_j.to_string(),
                    s.total_cold_starts.to_string(),
                    s.mean_participation.to_string(),
                    s.mean_objective.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Command::Sweep { scenario, grid, repeats } => {
            let cfg = load(&scenario)?;
            let grid = SweepGrid::load(&grid).with_context(|| format!("reading grid {}", grid.display()))?;
            write_sweep_csv(&sweep(&cfg, &grid, repeats)?, stdout.lock())?;
        }
        Command::Bench { clients, seed } => {
            let mut out = stdout.lock();
            writeln!(out, "n,fedfog,naive_faas,random")?;
            for r in complexity_bench(&clients, seed)? {
                writeln!(out, "{},{},{},{}", r.n, r.fedfog, r.naive_faas, r.random)?;
            }
        }
        Command::Validate { scenario } => {
            load(&scenario)?;
            println!("{}: ok", scenario.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<SimError>() {
                Some(SimError::InvalidScenario(violations)) => {
                    eprintln!("error: invalid scenario");
                    for v in violations {
                        eprintln!("  {v}");
                    }
                }
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
