//! Experiment orchestration: simulate closed-loop runs, record traces,
//! replay them through the validator, score the classifications, and emit
//! report tables.
//!
//! An [`ExperimentPlan`] describes one scenario end to end: plant and
//! controller configuration, fault severity rotation, training/test run
//! counts, seeds, and the replay mode. [`run_experiment`] executes the
//! whole protocol: train, calibrate, test, replay, score.

mod replay;

pub use replay::{replay_run, ReplayMode};

use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{calibrate, CalibrationError, CalibrationOutcome};
use crate::control::{
    discretize, equilibrium_inputs, linearize, ControlError, DiscretizeMethod, MpcConfig,
    MpcController, OperatingPoint, PiGains, PiState,
};
use crate::plant::{ControlInputs, FaultKind, FaultScenario, PlantConfig, PlantError};
use crate::validator::{ValidatorError, ValidatorSpec, WindowMode};
use crate::wire::{self, fnv1a64, CodecError, Severity, TraceError, TraceHeader, TraceRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("plan error: {0}")]
    Plan(String),
    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: PlantError,
    },
    #[error("{0}")]
    Control(#[from] ControlError),
    #[error("{0}")]
    Validator(#[from] ValidatorError),
    #[error("{0}")]
    Calibration(#[from] CalibrationError),
    #[error("{0}")]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Codec(#[from] CodecError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay scenario mismatch: validator monitors {validator:?}, trace was recorded as scenario {trace}")]
    ScenarioMismatch { validator: FaultKind, trace: u8 },
    #[error("packet loss in socket replay: sent {sent}, captured {captured}")]
    PacketLoss { sent: usize, captured: usize },
    #[error("packet {index} was dropped by the validator during replay")]
    DroppedInReplay { index: usize },
    #[error("socket replay worker failed: {0}")]
    Worker(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

/// Controller driving the simulated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerConfig {
    Mpc {
        /// Linearization levels, strictly positive.
        operating_levels_l: [f64; 3],
        /// Linearization inputs; computed from the steady-state balance
        /// when omitted.
        operating_inputs: Option<[f64; 3]>,
        discretize: DiscretizeMethod,
        #[serde(default)]
        mpc: MpcConfig,
    },
    Pi {
        gains: PiGains,
    },
}

impl ControllerConfig {
    pub fn sample_period_s(&self) -> f64 {
        match self {
            ControllerConfig::Mpc { mpc, .. } => mpc.sample_period_s,
            ControllerConfig::Pi { gains } => gains.sample_period_s,
        }
    }
}

enum Controller {
    Mpc(Box<MpcController>),
    Pi { gains: PiGains, state: PiState },
}

impl Controller {
    fn build(cfg: &ControllerConfig, plant: &PlantConfig) -> Result<Self, HarnessError> {
        match cfg {
            ControllerConfig::Mpc {
                operating_levels_l,
                operating_inputs,
                discretize: method,
                mpc,
            } => {
                let inputs = operating_inputs
                    .unwrap_or_else(|| equilibrium_inputs(plant, *operating_levels_l));
                let point = OperatingPoint {
                    levels_l: *operating_levels_l,
                    inputs,
                };
                let model = discretize(&linearize(plant, &point)?, mpc.sample_period_s, *method)?;
                Ok(Controller::Mpc(Box::new(MpcController::new(
                    model,
                    mpc.clone(),
                )?)))
            }
            ControllerConfig::Pi { gains } => Ok(Controller::Pi {
                gains: *gains,
                state: PiState::default(),
            }),
        }
    }

    fn step(&mut self, measured: [f64; 3], setpoints: [f64; 3]) -> ControlInputs {
        match self {
            Controller::Mpc(c) => c.step(measured, setpoints),
            Controller::Pi { gains, state } => {
                crate::control::pi_step(measured, setpoints, gains, state)
            }
        }
    }
}

/// One experiment end to end, serializable as the plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub scenario: FaultKind,
    /// Severity rotation across runs (run i gets severities[i % len]).
    pub severities: Vec<Severity>,
    pub training_runs: usize,
    pub test_runs: usize,
    pub base_seed: u64,
    pub mode: ReplayMode,
    pub window_mode: WindowMode,
    pub run_duration_s: f64,
    /// Initial tank volumes for training runs (and test runs unless
    /// overridden).
    pub initial_volumes_l: [f64; 4],
    /// Shifted start condition for the test set, when present.
    pub test_initial_volumes_l: Option<[f64; 4]>,
    pub setpoints_l: [f64; 3],
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.training_runs < 1 || self.test_runs < 1 {
            return Err(HarnessError::Plan("need at least one run per set".into()));
        }
        if self.severities.is_empty() {
            return Err(HarnessError::Plan("severity rotation is empty".into()));
        }
        for s in &self.severities {
            if !s.is_decision() {
                return Err(HarnessError::Plan(format!(
                    "{s} is not a simulatable severity"
                )));
            }
        }
        for class in Severity::CLASSES {
            if !self.training_severities().iter().any(|&(_, s)| s == class) {
                return Err(HarnessError::Plan(format!(
                    "training set never covers class {class}; calibration would fail"
                )));
            }
        }
        if !self.run_duration_s.is_finite() || self.run_duration_s < 0.0 {
            return Err(HarnessError::Plan("run_duration_s must be >= 0".into()));
        }
        let period = self.controller.sample_period_s();
        if self.plant.dt_sim_s > period {
            return Err(HarnessError::Plan(format!(
                "plant dt_sim_s {} exceeds the control period {period}",
                self.plant.dt_sim_s
            )));
        }
        self.plant
            .validate()
            .map_err(|e| HarnessError::Plan(e.to_string()))?;
        Ok(())
    }

    fn rotation(&self, runs: usize) -> Vec<Severity> {
        (0..runs)
            .map(|i| self.severities[i % self.severities.len()])
            .collect()
    }

    /// (seed, severity) of every training run, in order.
    pub fn training_severities(&self) -> Vec<(u64, Severity)> {
        self.rotation(self.training_runs)
            .into_iter()
            .enumerate()
            .map(|(i, s)| (self.base_seed.wrapping_add(i as u64), s))
            .collect()
    }

    /// (seed, severity) of every test run, in order. Seeds are disjoint
    /// from the training seeds.
    pub fn test_severities(&self) -> Vec<(u64, Severity)> {
        self.rotation(self.test_runs)
            .into_iter()
            .enumerate()
            .map(|(i, s)| (self.base_seed.wrapping_add(0x1000 + i as u64), s))
            .collect()
    }

    /// Fingerprint of the full plan, recorded in trace headers and the
    /// report.
    pub fn config_hash(&self) -> u64 {
        let text = toml::to_string(self).unwrap_or_default();
        fnv1a64(text.as_bytes())
    }

    /// Validator spec template for this plan (uncalibrated ranges).
    pub fn validator_template(&self) -> ValidatorSpec {
        let ranges = ValidatorSpec::uncalibrated_ranges();
        match self.scenario {
            FaultKind::CloggedPipe => ValidatorSpec::clogged_pipe(ranges, self.window_mode),
            FaultKind::FailingPump => ValidatorSpec::failing_pump(ranges, self.window_mode),
        }
    }

    /// The clogged-pipe reproduction: discharge T3 from 7.5 l through V2
    /// with severity-dependent closures of VM1; calibrate on five runs,
    /// test on ten.
    pub fn clogged_pipe_baseline() -> Self {
        ExperimentPlan {
            name: "clogged-pipe-baseline".into(),
            scenario: FaultKind::CloggedPipe,
            severities: vec![Severity::Normal, Severity::Warning, Severity::Error],
            training_runs: 5,
            test_runs: 10,
            base_seed: 0xC1C1_0001,
            mode: ReplayMode::InProcess,
            window_mode: WindowMode::Tumbling,
            run_duration_s: 10.0,
            initial_volumes_l: [0.0, 0.0, 7.5, 0.0],
            test_initial_volumes_l: None,
            setpoints_l: [0.0, 0.0, 0.0],
            plant: PlantConfig::default(),
            controller: ControllerConfig::Mpc {
                operating_levels_l: [0.5, 0.5, 5.0],
                operating_inputs: None,
                discretize: DiscretizeMethod::ForwardEuler,
                mpc: MpcConfig::default(),
            },
        }
    }

    /// The shifted start condition: same calibration runs, test runs start
    /// with 6.5 l in T3.
    pub fn clogged_pipe_shifted() -> Self {
        ExperimentPlan {
            name: "clogged-pipe-shifted".into(),
            test_initial_volumes_l: Some([0.0, 0.0, 6.5, 0.0]),
            ..Self::clogged_pipe_baseline()
        }
    }

    /// The failing-pump reproduction: fill an almost empty T1 at full pump
    /// speed with severity-dependent closures of VM2, window of 90.
    pub fn failing_pump() -> Self {
        ExperimentPlan {
            name: "failing-pump".into(),
            scenario: FaultKind::FailingPump,
            severities: vec![Severity::Normal, Severity::Warning, Severity::Error],
            training_runs: 5,
            test_runs: 10,
            base_seed: 0xF1F1_0002,
            mode: ReplayMode::InProcess,
            window_mode: WindowMode::Tumbling,
            run_duration_s: 95.0,
            initial_volumes_l: [0.3, 0.0, 0.0, 15.0],
            test_initial_volumes_l: None,
            setpoints_l: [9.5, 0.0, 0.0],
            plant: PlantConfig::default(),
            controller: ControllerConfig::Mpc {
                operating_levels_l: [6.5, 0.5, 0.5],
                operating_inputs: None,
                discretize: DiscretizeMethod::ForwardEuler,
                mpc: MpcConfig::default(),
            },
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "clogged-pipe-baseline" => Some(Self::clogged_pipe_baseline()),
            "clogged-pipe-shifted" => Some(Self::clogged_pipe_shifted()),
            "failing-pump" => Some(Self::failing_pump()),
            _ => None,
        }
    }

    pub const BUILTIN_NAMES: [&'static str; 3] = [
        "clogged-pipe-baseline",
        "clogged-pipe-shifted",
        "failing-pump",
    ];
}

/// One recorded run: identifier, header metadata, and its records.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRun {
    pub id: String,
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl TraceRun {
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.trace", self.id));
        wire::write_trace(&path, &self.header, &self.records)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".into());
        let (header, records) = wire::read_trace(path)?;
        Ok(TraceRun {
            id,
            header,
            records,
        })
    }

    /// All `.trace` files in a directory, sorted by filename.
    pub fn read_dir(dir: &Path) -> Result<Vec<Self>, HarnessError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "trace"))
            .collect();
        paths.sort();
        paths.iter().map(|p| Self::read(p)).collect()
    }
}

/// Simulate one closed-loop run at the control period: one control message
/// per period, ground truth attached.
pub fn simulate_run(
    plan: &ExperimentPlan,
    run_id: &str,
    severity: Severity,
    seed: u64,
    initial_volumes_l: [f64; 4],
) -> Result<TraceRun, HarnessError> {
    plan.validate()?;
    let scenario =
        FaultScenario::new(plan.scenario, severity).map_err(|source| HarnessError::Run {
            run: run_id.to_string(),
            source,
        })?;
    let mut state = plan
        .plant
        .init_state(initial_volumes_l)
        .and_then(|s| s.apply_fault(scenario))
        .map_err(|source| HarnessError::Run {
            run: run_id.to_string(),
            source,
        })?;
    let mut controller = Controller::build(&plan.controller, &plan.plant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let period = plan.controller.sample_period_s();
    let periods = (plan.run_duration_s / period).round() as u64;
    let substeps = (period / plan.plant.dt_sim_s).round().max(1.0) as u32;
    let dt = period / f64::from(substeps);

    let mut records = Vec::with_capacity(periods as usize);
    for k in 0..periods {
        let frame = state.read_sensors(&plan.plant, &mut rng);
        let msg = frame.to_message(k as u32, k * (period * 1e6).round() as u64)?;
        records.push(TraceRecord {
            msg,
            ground_truth: severity,
            label: None,
        });
        let measured = [frame.levels_l[0], frame.levels_l[1], frame.levels_l[2]];
        let inputs = controller.step(measured, plan.setpoints_l);
        for _ in 0..substeps {
            state = state
                .step(&plan.plant, inputs, dt)
                .map_err(|source| HarnessError::Run {
                    run: run_id.to_string(),
                    source,
                })?;
        }
    }
    Ok(TraceRun {
        id: run_id.to_string(),
        header: TraceHeader {
            scenario: plan.scenario.scenario_id(),
            severity,
            config_hash: plan.config_hash(),
            seed,
        },
        records,
    })
}

/// Simulate the full training set of a plan.
pub fn simulate_training_set(plan: &ExperimentPlan) -> Result<Vec<TraceRun>, HarnessError> {
    plan.training_severities()
        .iter()
        .enumerate()
        .map(|(i, &(seed, severity))| {
            let id = format!("train-{i:02}-{severity}");
            simulate_run(plan, &id, severity, seed, plan.initial_volumes_l)
        })
        .collect()
}

/// Simulate the full test set of a plan (honoring a shifted start
/// condition when configured).
pub fn simulate_test_set(plan: &ExperimentPlan) -> Result<Vec<TraceRun>, HarnessError> {
    let init = plan
        .test_initial_volumes_l
        .unwrap_or(plan.initial_volumes_l);
    plan.test_severities()
        .iter()
        .enumerate()
        .map(|(i, &(seed, severity))| {
            let id = format!("test-{i:02}-{severity}");
            simulate_run(plan, &id, severity, seed, init)
        })
        .collect()
}

/// Per-class one-vs-rest scores over the decision points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Severity,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Decision points whose ground truth is this class.
    pub support: u64,
}

/// Majority-vote verdict of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunVerdict {
    pub id: String,
    pub truth: Severity,
    pub decision_windows: u64,
    pub majority: Option<Severity>,
    pub correct: bool,
}

/// Confusion counts and per-class metrics over replayed runs.
///
/// Decision points are records labeled with a real severity; no-decision
/// labels are tallied in their own column but excluded from the metrics.
/// Zero denominators score as zero (noted in the rendered report).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    /// `counts[truth][predicted]`; predicted index 3 is the no-decision
    /// column.
    pub counts: [[u64; 4]; 3],
    pub decision_points: u64,
    pub per_class: Vec<ClassMetrics>,
    pub runs: Vec<RunVerdict>,
}

impl ConfusionReport {
    pub fn is_empty(&self) -> bool {
        self.decision_points == 0
    }

    pub fn class(&self, severity: Severity) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == severity)
    }

    /// True when every per-class precision/recall/F1/accuracy equals 1.
    pub fn is_perfect(&self) -> bool {
        !self.is_empty()
            && self
                .per_class
                .iter()
                .all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0 && m.accuracy == 1.0)
    }
}

impl fmt::Display for ConfusionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return writeln!(f, "  (no decision points)");
        }
        writeln!(
            f,
            "  {:<10} {:>10} {:>10} {:>10} {:>10}",
            "class", "precision", "recall", "f1", "accuracy"
        )?;
        for m in &self.per_class {
            writeln!(
                f,
                "  {:<10} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                m.class.to_string(),
                m.precision,
                m.recall,
                m.f1,
                m.accuracy
            )?;
        }
        writeln!(
            f,
            "  confusion counts over {} decision points (rows truth, cols predicted):",
            self.decision_points
        )?;
        writeln!(
            f,
            "  {:<10} {:>8} {:>8} {:>8} {:>12}",
            "", "normal", "warning", "error", "no-decision"
        )?;
        for (t, row) in self.counts.iter().enumerate() {
            writeln!(
                f,
                "  {:<10} {:>8} {:>8} {:>8} {:>12}",
                Severity::CLASSES[t].to_string(),
                row[0],
                row[1],
                row[2],
                row[3]
            )?;
        }
        writeln!(f, "  per-run majority votes:")?;
        for run in &self.runs {
            writeln!(
                f,
                "    {:<24} truth {:<8} windows {:>3} majority {:<12} {}",
                run.id,
                run.truth.to_string(),
                run.decision_windows,
                run.majority.map_or("-".into(), |m| m.to_string()),
                if run.correct { "ok" } else { "MISS" }
            )?;
        }
        Ok(())
    }
}

/// Tally labeled runs into a confusion report. Metrics are one-vs-rest per
/// class over decision points, matching the per-class table layout; the
/// per-run majority vote (ties toward higher severity) is reported
/// alongside.
pub fn score(runs: &[TraceRun]) -> ConfusionReport {
    let mut counts = [[0u64; 4]; 3];
    let mut verdicts = Vec::with_capacity(runs.len());
    for run in runs {
        let truth_idx = run
            .header
            .severity
            .class_index()
            .expect("trace ground truth is a real class");
        let mut class_votes = [0u64; 3];
        for rec in &run.records {
            let predicted = rec.label.map_or(Severity::NoDecision, |l| l.severity);
            match predicted.class_index() {
                Some(p) => {
                    counts[truth_idx][p] += 1;
                    class_votes[p] += 1;
                }
                None => counts[truth_idx][3] += 1,
            }
        }
        let windows: u64 = class_votes.iter().sum();
        let majority = if windows == 0 {
            None
        } else {
            // Highest count, ties toward higher severity.
            let best = class_votes
                .iter()
                .enumerate()
                .max_by_key(|&(i, &c)| (c, i))
                .map(|(i, _)| Severity::CLASSES[i]);
            best
        };
        verdicts.push(RunVerdict {
            id: run.id.clone(),
            truth: run.header.severity,
            decision_windows: windows,
            majority,
            correct: majority == Some(run.header.severity),
        });
    }

    let decisions: u64 = counts.iter().map(|row| row[..3].iter().sum::<u64>()).sum();
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let per_class = Severity::CLASSES
        .iter()
        .map(|&class| {
            let c = class.class_index().unwrap();
            let tp = counts[c][c];
            let fn_: u64 = (0..3).filter(|&p| p != c).map(|p| counts[c][p]).sum();
            let fp: u64 = (0..3).filter(|&t| t != c).map(|t| counts[t][c]).sum();
            let tn = decisions - tp - fn_ - fp;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class,
                precision,
                recall,
                f1,
                accuracy: ratio(tp + tn, decisions),
                support: tp + fn_,
            }
        })
        .collect();

    ConfusionReport {
        counts,
        decision_points: decisions,
        per_class,
        runs: verdicts,
    }
}

/// Everything an experiment produced, serializable as the machine-readable
/// report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub plan_name: String,
    pub scenario: FaultKind,
    pub window_mode: WindowMode,
    pub mode: ReplayMode,
    pub config_hash: String,
    pub calibration: CalibrationOutcome,
    pub training: ConfusionReport,
    pub test: ConfusionReport,
    /// Runs excluded from scoring, with the reason.
    pub notices: Vec<String>,
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "experiment {} (scenario {:?}, {:?} windows, replay {:?})",
            self.plan_name, self.scenario, self.window_mode, self.mode
        )?;
        writeln!(f, "config hash: {}", self.config_hash)?;
        writeln!(f, "{}", self.calibration)?;
        writeln!(f, "training set classification (per decision window):")?;
        write!(f, "{}", self.training)?;
        writeln!(f, "test set classification (per decision window):")?;
        write!(f, "{}", self.test)?;
        if !self.notices.is_empty() {
            writeln!(f, "notices:")?;
            for n in &self.notices {
                writeln!(f, "  - {n}")?;
            }
        }
        writeln!(f, "(zero denominators score as 0 by convention)")
    }
}

/// Replay a set of runs through fresh validators built from `spec`.
pub fn replay_set(
    runs: &[TraceRun],
    spec: &ValidatorSpec,
    mode: ReplayMode,
) -> Result<Vec<TraceRun>, HarnessError> {
    runs.iter().map(|run| replay_run(run, spec, mode)).collect()
}

/// Execute a full experiment plan: simulate training runs, calibrate,
/// simulate test runs, replay both sets, and score them. When `out_dir` is
/// given, traces, the calibrated validator spec, the calibration report,
/// and both report forms are written beneath it.
pub fn run_experiment(
    plan: &ExperimentPlan,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport, HarnessError> {
    plan.validate()?;
    let mut notices = Vec::new();

    let training_runs = simulate_training_set(plan)?;
    let template = plan.validator_template();
    let training_data: Vec<(String, Vec<TraceRecord>)> = training_runs
        .iter()
        .map(|r| (r.id.clone(), r.records.clone()))
        .collect();
    let calibration = calibrate(&training_data, &template)?;

    let mut test_runs = Vec::new();
    let init = plan
        .test_initial_volumes_l
        .unwrap_or(plan.initial_volumes_l);
    for (i, &(seed, severity)) in plan.test_severities().iter().enumerate() {
        let id = format!("test-{i:02}-{severity}");
        match simulate_run(plan, &id, severity, seed, init) {
            Ok(run) => test_runs.push(run),
            Err(HarnessError::Run { run, source }) => {
                notices.push(format!("run {run} excluded: {source}"));
            }
            Err(other) => return Err(other),
        }
    }

    let labeled_training = replay_set(&training_runs, &calibration.spec, plan.mode)?;
    let labeled_test = replay_set(&test_runs, &calibration.spec, plan.mode)?;
    let training_report = score(&labeled_training);
    let test_report = score(&labeled_test);

    let report = ExperimentReport {
        plan_name: plan.name.clone(),
        scenario: plan.scenario,
        window_mode: plan.window_mode,
        mode: plan.mode,
        config_hash: format!("{:016x}", plan.config_hash()),
        calibration,
        training: training_report,
        test: test_report,
        notices,
    };

    if let Some(dir) = out_dir {
        write_experiment_outputs(
            plan,
            &report,
            &training_runs,
            &test_runs,
            &labeled_training,
            &labeled_test,
            dir,
        )?;
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn write_experiment_outputs(
    plan: &ExperimentPlan,
    report: &ExperimentReport,
    training_runs: &[TraceRun],
    test_runs: &[TraceRun],
    labeled_training: &[TraceRun],
    labeled_test: &[TraceRun],
    dir: &Path,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let plan_text =
        toml::to_string_pretty(plan).map_err(|e| HarnessError::Serialize(e.to_string()))?;
    fs::write(dir.join("plan.toml"), plan_text)?;
    let spec_text = toml::to_string_pretty(&report.calibration.spec)
        .map_err(|e| HarnessError::Serialize(e.to_string()))?;
    fs::write(dir.join("validator_spec.toml"), spec_text)?;
    fs::write(
        dir.join("calibration_report.txt"),
        report.calibration.to_string(),
    )?;
    for run in training_runs {
        run.write(&dir.join("traces").join("train"))?;
    }
    for run in test_runs {
        run.write(&dir.join("traces").join("test"))?;
    }
    for run in labeled_training {
        run.write(&dir.join("labeled").join("train"))?;
    }
    for run in labeled_test {
        run.write(&dir.join("labeled").join("test"))?;
    }
    fs::write(dir.join("report.txt"), report.to_string())?;
    let json =
        serde_json::to_string_pretty(report).map_err(|e| HarnessError::Serialize(e.to_string()))?;
    fs::write(dir.join("report.json"), json)?;
    Ok(())
}
