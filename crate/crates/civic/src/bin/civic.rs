//! Command-line front end: simulate runs, calibrate the validator, replay
//! traces, score labeled traces, or run a whole experiment.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use civic::calibrate::calibrate;
use civic::harness::{
    replay_run, run_experiment, score, simulate_test_set, simulate_training_set, ExperimentPlan,
    ReplayMode, TraceRun,
};
use civic::validator::ValidatorSpec;
use civic::wire::TraceRecord;

#[derive(Parser)]
#[command(
    name = "civic",
    about = "Coupled-tank plant simulator and in-network process validator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    /// Call the validator directly.
    InProcess,
    /// Replay over a loopback UDP socket without pacing.
    Socket,
    /// Replay over a loopback UDP socket at the recorded 100 ms intervals.
    SocketPaced,
}

impl From<ModeArg> for ReplayMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::InProcess => ReplayMode::InProcess,
            ModeArg::Socket => ReplayMode::Socket { paced: false },
            ModeArg::SocketPaced => ReplayMode::Socket { paced: true },
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    /// Experiment plan file (TOML).
    #[arg(long, conflicts_with = "builtin")]
    plan: Option<PathBuf>,
    /// Built-in plan: clogged-pipe-baseline, clogged-pipe-shifted, or
    /// failing-pump.
    #[arg(long)]
    builtin: Option<String>,
    /// Override the plan's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the plan's replay mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

impl PlanArgs {
    fn load(&self) -> Result<ExperimentPlan> {
        let mut plan = match (&self.plan, &self.builtin) {
            (Some(path), None) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading plan {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            (None, Some(name)) => ExperimentPlan::builtin(name).with_context(|| {
                format!(
                    "unknown builtin plan {name}; available: {}",
                    ExperimentPlan::BUILTIN_NAMES.join(", ")
                )
            })?,
            _ => bail!("pass exactly one of --plan FILE or --builtin NAME"),
        };
        if let Some(seed) = self.seed {
            plan.base_seed = seed;
        }
        if let Some(mode) = self.mode {
            plan.mode = mode.into();
        }
        Ok(plan)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plan's training and test runs and write the traces.
    Simulate {
        #[command(flatten)]
        plan: PlanArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn baseline slopes from training traces and write the validator
    /// spec and calibration report.
    Calibrate {
        #[command(flatten)]
        plan: PlanArgs,
        /// Directory of training traces (e.g. <out>/traces/train).
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a recorded trace through a validator spec and write the
    /// labeled trace.
    Replay {
        /// One .trace file or a directory of them.
        #[arg(long)]
        trace: PathBuf,
        /// Validator spec file (TOML), e.g. from `calibrate`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "in-process")]
        mode: ModeArg,
    },
    /// Score labeled traces and write the report tables.
    Score {
        /// Directory of labeled traces.
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a whole experiment: simulate, calibrate, replay, score.
    Experiment {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_runs(path: &Path) -> Result<Vec<TraceRun>> {
    let runs = if path.is_dir() {
        TraceRun::read_dir(path)?
    } else {
        vec![TraceRun::read(path)?]
    };
    if runs.is_empty() {
        bail!("no .trace files under {}", path.display());
    }
    Ok(runs)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { plan, out } => {
            let plan = plan.load()?;
            plan.validate()?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("plan.toml"), toml::to_string_pretty(&plan)?)?;
            let training = simulate_training_set(&plan)?;
            let test = simulate_test_set(&plan)?;
            for run in &training {
                run.write(&out.join("traces").join("train"))?;
            }
            for run in &test {
                run.write(&out.join("traces").join("test"))?;
            }
            println!(
                "wrote {} training and {} test traces under {}",
                training.len(),
                test.len(),
                out.display()
            );
        }
        Command::Calibrate { plan, traces, out } => {
            let plan = plan.load()?;
            let runs = load_runs(&traces)?;
            let data: Vec<(String, Vec<TraceRecord>)> =
                runs.into_iter().map(|r| (r.id, r.records)).collect();
            let outcome = calibrate(&data, &plan.validator_template())?;
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("validator_spec.toml"),
                toml::to_string_pretty(&outcome.spec)?,
            )?;
            fs::write(out.join("calibration_report.txt"), outcome.to_string())?;
            print!("{outcome}");
            println!("wrote validator_spec.toml under {}", out.display());
        }
        Command::Replay {
            trace,
            spec,
            out,
            mode,
        } => {
            let text = fs::read_to_string(&spec)
                .with_context(|| format!("reading spec {}", spec.display()))?;
            let spec: ValidatorSpec = toml::from_str(&text)?;
            let runs = load_runs(&trace)?;
            fs::create_dir_all(&out)?;
            for run in &runs {
                let labeled = replay_run(run, &spec, mode.into())?;
                labeled.write(&out)?;
                let decisions = labeled
                    .records
                    .iter()
                    .filter(|r| r.label.is_some_and(|l| l.severity.is_decision()))
                    .count();
                println!(
                    "{}: {} packets, {} decisions",
                    labeled.id,
                    labeled.records.len(),
                    decisions
                );
            }
        }
        Command::Score { traces, out } => {
            let runs = load_runs(&traces)?;
            let report = score(&runs);
            fs::create_dir_all(&out)?;
            fs::write(out.join("report.txt"), report.to_string())?;
            fs::write(
                out.join("report.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            print!("{report}");
        }
        Command::Experiment { plan, out } => {
            let plan = plan.load()?;
            let report = run_experiment(&plan, Some(&out))?;
            print!("{report}");
            println!("full outputs under {}", out.display());
        }
    }
    Ok(())
}
