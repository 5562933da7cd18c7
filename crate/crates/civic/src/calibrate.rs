//! Learn per-class baseline slopes from labeled training runs and
//! synthesize the severity range table.
//!
//! Training traces are replayed through the same gate/window logic the
//! data plane uses; qualifying window slopes are pooled per ground-truth
//! class, the per-class arithmetic mean becomes the baseline, and range
//! boundaries sit at the midpoints between adjacent biased baselines
//! (computed with add and shift-right only, matching the constrained
//! arithmetic). Boundaries land in the spec file, where they may be
//! manually overridden.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::validator::{
    message_field_u32, SeverityRanges, ValidatorError, ValidatorSpec, WindowMode, SLOPE_BIAS,
};
use crate::wire::{Severity, TraceRecord};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("run {run}: no qualifying decision windows (gate never active over a filled window)")]
    NoQualifyingWindows { run: String },
    #[error("no training windows for class {0}")]
    EmptyClass(Severity),
    #[error(
        "class mean slopes are not strictly ordered (normal {normal:.1}, warning {warning:.1}, error {error:.1}); retune the plant or gains"
    )]
    Unordered {
        normal: f64,
        warning: f64,
        error: f64,
    },
    #[error("baselines {0} and {1} collide after rounding; classes are not separable")]
    CollidingBaselines(i64, i64),
    #[error("{0}")]
    Validator(#[from] ValidatorError),
}

/// Calibrated statistics of one severity class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBaseline {
    pub class: Severity,
    /// Rounded mean window slope, wire units (milliliters per window).
    pub slope: i64,
    /// `slope + 2^31`, the key the range table is built over.
    pub biased_key: u32,
    pub samples: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: i64,
    pub max: i64,
}

/// Baselines of the three classes, in class order Normal/Warning/Error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSlopes {
    pub classes: [ClassBaseline; 3],
}

impl BaselineSlopes {
    pub fn class(&self, severity: Severity) -> Option<&ClassBaseline> {
        self.classes.iter().find(|c| c.class == severity)
    }
}

/// Replay a recorded run through the validator's decision conditions and
/// collect the signed endpoint-difference slope of every qualifying
/// window. Same arithmetic as the data plane, independent implementation.
pub fn extract_decision_windows(
    records: &[TraceRecord],
    spec: &ValidatorSpec,
    run_id: &str,
) -> Result<Vec<i64>, CalibrationError> {
    spec.validate()?;
    let mut window: VecDeque<u32> = VecDeque::with_capacity(spec.window);
    let mut pushes: u64 = 0;
    let mut slopes = Vec::new();
    for rec in records {
        let level = message_field_u32(&rec.msg, &spec.monitored_field)
            .ok_or_else(|| ValidatorError::UnknownField(spec.monitored_field.clone()))?;
        window.push_back(level);
        if window.len() > spec.window {
            window.pop_front();
        }
        pushes += 1;

        let gate_ok = spec
            .gate
            .eval(&rec.msg)
            .ok_or_else(|| ValidatorError::UnknownField("gate field".into()))?;
        let filled = pushes >= spec.window as u64;
        let window_ok = match spec.window_mode {
            WindowMode::Sliding => filled,
            WindowMode::Tumbling => filled && pushes.is_multiple_of(spec.window as u64),
        };
        if gate_ok && window_ok {
            let oldest = i64::from(*window.front().unwrap());
            let newest = i64::from(*window.back().unwrap());
            slopes.push(newest - oldest);
        }
    }
    if slopes.is_empty() {
        return Err(CalibrationError::NoQualifyingWindows {
            run: run_id.to_string(),
        });
    }
    Ok(slopes)
}

fn stats(class: Severity, slopes: &[i64]) -> Result<ClassBaseline, CalibrationError> {
    if slopes.is_empty() {
        return Err(CalibrationError::EmptyClass(class));
    }
    let n = slopes.len() as f64;
    let mean = slopes.iter().map(|&s| s as f64).sum::<f64>() / n;
    let var = slopes
        .iter()
        .map(|&s| {
            let d = s as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let slope = mean.round() as i64;
    Ok(ClassBaseline {
        class,
        slope,
        biased_key: (slope + i64::from(SLOPE_BIAS)) as u32,
        samples: slopes.len(),
        mean,
        std_dev: var.sqrt(),
        min: *slopes.iter().min().unwrap(),
        max: *slopes.iter().max().unwrap(),
    })
}

/// Per-class arithmetic mean of the pooled training slopes. Fails when a
/// class is empty or the class means are not strictly ordered.
pub fn fit_baselines(
    normal: &[i64],
    warning: &[i64],
    error: &[i64],
) -> Result<BaselineSlopes, CalibrationError> {
    let n = stats(Severity::Normal, normal)?;
    let w = stats(Severity::Warning, warning)?;
    let e = stats(Severity::Error, error)?;
    let ascending = n.mean < w.mean && w.mean < e.mean;
    let descending = n.mean > w.mean && w.mean > e.mean;
    if !(ascending || descending) {
        return Err(CalibrationError::Unordered {
            normal: n.mean,
            warning: w.mean,
            error: e.mean,
        });
    }
    Ok(BaselineSlopes { classes: [n, w, e] })
}

/// Midpoint of two biased keys, the constraint-friendly way: 33-bit add,
/// shift right by one. Rounds the half case up so a key exactly between
/// two baselines belongs to the upper range.
fn midpoint(a: u32, b: u32) -> u32 {
    ((u64::from(a) + u64::from(b) + 1) >> 1) as u32
}

/// Range boundaries at the midpoints between adjacent biased baselines;
/// the outer ranges extend to the key-space edges. The resulting table
/// classifies every key as its nearest baseline, ties toward the upper
/// range.
pub fn build_ranges(baselines: &BaselineSlopes) -> Result<SeverityRanges, CalibrationError> {
    let mut by_key: Vec<(u32, Severity)> = baselines
        .classes
        .iter()
        .map(|c| (c.biased_key, c.class))
        .collect();
    by_key.sort_by_key(|(key, _)| *key);
    for pair in by_key.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(CalibrationError::CollidingBaselines(
                i64::from(pair[0].0) - i64::from(SLOPE_BIAS),
                i64::from(pair[1].0) - i64::from(SLOPE_BIAS),
            ));
        }
    }
    let boundaries = vec![
        midpoint(by_key[0].0, by_key[1].0),
        midpoint(by_key[1].0, by_key[2].0),
    ];
    Ok(SeverityRanges {
        boundaries,
        classes: by_key.into_iter().map(|(_, class)| class).collect(),
    })
}

/// A finished calibration: the spec with its learned table, plus the
/// statistics behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub spec: ValidatorSpec,
    pub baselines: BaselineSlopes,
    /// Window counts per training run, for the report.
    pub run_windows: Vec<(String, Severity, usize)>,
}

impl fmt::Display for CalibrationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "calibration report")?;
        writeln!(
            f,
            "  scenario: {:?}, monitored field: {}, window: {} ({:?})",
            self.spec.scenario, self.spec.monitored_field, self.spec.window, self.spec.window_mode
        )?;
        writeln!(f, "  training runs:")?;
        for (run, severity, windows) in &self.run_windows {
            writeln!(f, "    {run} ({severity}): {windows} windows")?;
        }
        writeln!(f, "  baseline slopes (mL per window):")?;
        for c in &self.baselines.classes {
            writeln!(
                f,
                "    {:<8} slope {:>6}  mean {:>9.2}  std {:>7.2}  range [{}, {}]  samples {}",
                c.class.to_string(),
                c.slope,
                c.mean,
                c.std_dev,
                c.min,
                c.max,
                c.samples
            )?;
        }
        writeln!(f, "  range boundaries (biased keys):")?;
        for (b, pair) in self
            .spec
            .table
            .boundaries
            .iter()
            .zip(self.spec.table.classes.windows(2))
        {
            writeln!(
                f,
                "    {} | {}  at {} (slope {})",
                pair[0],
                pair[1],
                b,
                i64::from(*b) - i64::from(SLOPE_BIAS)
            )?;
        }
        Ok(())
    }
}

/// Calibrate a validator spec template on labeled training runs: extract
/// qualifying windows per run, pool them per ground-truth class, fit
/// baselines, and synthesize the range table.
pub fn calibrate(
    training: &[(String, Vec<TraceRecord>)],
    template: &ValidatorSpec,
) -> Result<CalibrationOutcome, CalibrationError> {
    let mut pooled: [Vec<i64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut run_windows = Vec::new();
    for (run_id, records) in training {
        let slopes = extract_decision_windows(records, template, run_id)?;
        let class = records
            .first()
            .map(|r| r.ground_truth)
            .unwrap_or(Severity::NoDecision);
        let Some(idx) = class.class_index() else {
            return Err(CalibrationError::NoQualifyingWindows {
                run: run_id.clone(),
            });
        };
        run_windows.push((run_id.clone(), class, slopes.len()));
        pooled[idx].extend(slopes);
    }
    let baselines = fit_baselines(&pooled[0], &pooled[1], &pooled[2])?;
    let table = build_ranges(&baselines)?;
    let mut spec = template.clone();
    spec.table = table;
    spec.validate()?;
    Ok(CalibrationOutcome {
        spec,
        baselines,
        run_windows,
    })
}
