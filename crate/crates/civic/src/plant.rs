//! Deterministic continuous-time simulator of the four-tank water plant.
//!
//! Tanks T1..T3 sit at the same height and exchange water through a passive
//! coupling proportional to their level difference; T4 is the reservoir.
//! Controlled paths: pump P1 moves water T4->T1 (scaled by manual valve
//! VM2), valve V1 drains T1 into T2, valve V2 drains T3 into T4 (scaled by
//! manual valve VM1). Gravity outflows follow a Torricelli law
//! `q = c * valve * sqrt(level)`. The manual valves emulate faults: a
//! partially closed VM1 is a clogged drain pipe, a partially closed VM2 is
//! a failing pump.
//!
//! Integration is explicit Euler at `dt_sim_s`. Transfers are limited so no
//! tank is ever drawn below empty, which keeps total volume conserved;
//! water is only lost when a tank overflows its capacity clamp.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{CodecError, ControlMessage, Severity};

/// Plant simulation failures.
#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("initial volume for tank {tank} out of range: {volume} L (capacity {capacity} L)")]
    VolumeOutOfRange {
        tank: usize,
        volume: f64,
        capacity: f64,
    },
    #[error("{name} fraction {value} outside [0, 1]")]
    FractionOutOfRange { name: &'static str, value: f64 },
    #[error("fault severity may not be {0}")]
    InvalidFaultSeverity(Severity),
    #[error("non-finite plant state after step at t = {time_s} s")]
    NumericalDivergence { time_s: f64 },
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), PlantError> {
    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
        return Err(PlantError::FractionOutOfRange { name, value });
    }
    Ok(())
}

/// Physical constants of the rig. All volumes in liters, flows in liters
/// per second, levels in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// Cross section of each tank in square meters, T1..T4.
    pub tank_cross_section_m2: [f64; 4],
    /// Torricelli coefficient of the V1 path (T1 -> T2), L/s per sqrt(m).
    pub outflow_coefficient_v1: f64,
    /// Torricelli coefficient of the V2 path (T3 -> T4), L/s per sqrt(m).
    pub outflow_coefficient_v2: f64,
    /// Pump throughput at full speed with VM2 open, L/s.
    pub pump_gain_l_per_s_at_full: f64,
    /// Passive exchange between adjacent upper tanks, L/s per meter of
    /// level difference.
    pub coupling_coefficient: f64,
    /// Gaussian sensor noise on the volume readings, milliliters.
    pub sensor_noise_sigma_ml: f64,
    /// Default seed for the sensor-noise stream.
    pub rng_seed: u64,
    /// Euler step of the simulator, seconds.
    pub dt_sim_s: f64,
    /// Capacity of every tank, liters.
    pub tank_capacity_l: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            tank_cross_section_m2: [0.0177, 0.0177, 0.0177, 0.0707],
            outflow_coefficient_v1: 0.30,
            outflow_coefficient_v2: 0.38,
            pump_gain_l_per_s_at_full: 0.16,
            coupling_coefficient: 0.02,
            sensor_noise_sigma_ml: 2.0,
            rng_seed: 0x11CC,
            dt_sim_s: 0.01,
            tank_capacity_l: 20.0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positives = [
            ("outflow_coefficient_v1", self.outflow_coefficient_v1),
            ("outflow_coefficient_v2", self.outflow_coefficient_v2),
            ("pump_gain_l_per_s_at_full", self.pump_gain_l_per_s_at_full),
            ("coupling_coefficient", self.coupling_coefficient),
            ("dt_sim_s", self.dt_sim_s),
            ("tank_capacity_l", self.tank_capacity_l),
        ];
        for (name, value) in positives {
            if !value.is_finite() || value <= 0.0 {
                return Err(PlantError::Config(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        for (i, &area) in self.tank_cross_section_m2.iter().enumerate() {
            if !area.is_finite() || area <= 0.0 {
                return Err(PlantError::Config(format!(
                    "tank_cross_section_m2[{i}] must be strictly positive, got {area}"
                )));
            }
        }
        if !self.sensor_noise_sigma_ml.is_finite() || self.sensor_noise_sigma_ml < 0.0 {
            return Err(PlantError::Config(format!(
                "sensor_noise_sigma_ml must be >= 0, got {}",
                self.sensor_noise_sigma_ml
            )));
        }
        Ok(())
    }

    /// Water level of `volume_l` liters in tank `tank`, meters.
    pub fn level_m(&self, tank: usize, volume_l: f64) -> f64 {
        volume_l / (1000.0 * self.tank_cross_section_m2[tank])
    }

    /// Build an initial state: given volumes, actuators at zero, manual
    /// valves fully open, simulation clock at zero.
    pub fn init_state(&self, initial_volumes_l: [f64; 4]) -> Result<PlantState, PlantError> {
        self.validate()?;
        for (tank, &volume) in initial_volumes_l.iter().enumerate() {
            if !(0.0..=self.tank_capacity_l).contains(&volume) || !volume.is_finite() {
                return Err(PlantError::VolumeOutOfRange {
                    tank: tank + 1,
                    volume,
                    capacity: self.tank_capacity_l,
                });
            }
        }
        Ok(PlantState {
            volumes_l: initial_volumes_l,
            pump_frac: 0.0,
            valve1_frac: 0.0,
            valve2_frac: 0.0,
            manual1_frac: 1.0,
            manual2_frac: 1.0,
            sim_time_s: 0.0,
        })
    }
}

/// Pump and automatic valve commands for one step, all fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInputs {
    pub pump: f64,
    pub valve1: f64,
    pub valve2: f64,
}

impl ControlInputs {
    pub const ZERO: ControlInputs = ControlInputs {
        pump: 0.0,
        valve1: 0.0,
        valve2: 0.0,
    };

    pub fn validate(&self) -> Result<(), PlantError> {
        check_fraction("pump", self.pump)?;
        check_fraction("valve1", self.valve1)?;
        check_fraction("valve2", self.valve2)
    }
}

/// Ground-truth simulator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// True tank volumes in liters, T1..T4.
    pub volumes_l: [f64; 4],
    /// Current pump speed fraction (P1).
    pub pump_frac: f64,
    /// Current automatic valve openings (V1, V2).
    pub valve1_frac: f64,
    pub valve2_frac: f64,
    /// Manual fault valves (VM1 in the T3->T4 pipe, VM2 in the pump path),
    /// 1.0 = fully open.
    pub manual1_frac: f64,
    pub manual2_frac: f64,
    pub sim_time_s: f64,
}

impl PlantState {
    pub fn total_volume_l(&self) -> f64 {
        self.volumes_l.iter().sum()
    }

    /// Apply a fault scenario by setting the scenario's manual valve;
    /// nothing else changes.
    pub fn apply_fault(mut self, scenario: FaultScenario) -> Result<PlantState, PlantError> {
        let opening = scenario.manual_valve_opening()?;
        match scenario.kind {
            FaultKind::CloggedPipe => self.manual1_frac = opening,
            FaultKind::FailingPump => self.manual2_frac = opening,
        }
        Ok(self)
    }

    /// Advance the plant by one explicit Euler step of `dt_s` seconds under
    /// the given inputs. Transfers are limited so no tank goes negative;
    /// capacity overflow spills (is lost).
    pub fn step(
        &self,
        cfg: &PlantConfig,
        inputs: ControlInputs,
        dt_s: f64,
    ) -> Result<PlantState, PlantError> {
        inputs.validate()?;
        if !dt_s.is_finite() || dt_s <= 0.0 {
            return Err(PlantError::Config(format!(
                "step dt_s must be strictly positive, got {dt_s}"
            )));
        }

        let level = |i: usize| cfg.level_m(i, self.volumes_l[i]);

        // Directed transfers (source, destination, rate in L/s).
        let mut flows: [(usize, usize, f64); 5] = [
            // Pump T4 -> T1, inhibited by manual valve VM2.
            (
                3,
                0,
                cfg.pump_gain_l_per_s_at_full * inputs.pump * self.manual2_frac,
            ),
            // V1 path T1 -> T2.
            (
                0,
                1,
                cfg.outflow_coefficient_v1 * inputs.valve1 * level(0).sqrt(),
            ),
            // V2 path T3 -> T4, inhibited by manual valve VM1.
            (
                2,
                3,
                cfg.outflow_coefficient_v2 * inputs.valve2 * self.manual1_frac * level(2).sqrt(),
            ),
            (0, 1, 0.0),
            (1, 2, 0.0),
        ];
        // Passive coupling between adjacent upper tanks, higher level
        // pushes toward lower.
        for (slot, (a, b)) in [(3, (0usize, 1usize)), (4, (1usize, 2usize))] {
            let q = cfg.coupling_coefficient * (level(a) - level(b));
            flows[slot] = if q >= 0.0 { (a, b, q) } else { (b, a, -q) };
        }

        // Scale each tank's outgoing transfers so it cannot be drawn below
        // empty within this step.
        let mut outflow = [0.0f64; 4];
        for &(src, _, q) in &flows {
            outflow[src] += q;
        }
        let mut scale = [1.0f64; 4];
        for i in 0..4 {
            if outflow[i] * dt_s > self.volumes_l[i] {
                scale[i] = self.volumes_l[i] / (outflow[i] * dt_s);
            }
        }

        let mut volumes = self.volumes_l;
        for &(src, dst, q) in &flows {
            let dv = q * scale[src] * dt_s;
            volumes[src] -= dv;
            volumes[dst] += dv;
        }
        for v in &mut volumes {
            *v = v.clamp(0.0, cfg.tank_capacity_l);
        }

        let next = PlantState {
            volumes_l: volumes,
            pump_frac: inputs.pump,
            valve1_frac: inputs.valve1,
            valve2_frac: inputs.valve2,
            manual1_frac: self.manual1_frac,
            manual2_frac: self.manual2_frac,
            sim_time_s: self.sim_time_s + dt_s,
        };
        if next.volumes_l.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::NumericalDivergence {
                time_s: next.sim_time_s,
            });
        }
        Ok(next)
    }

    /// Sample the sensors: true volumes plus Gaussian noise (clamped at
    /// zero), and echoes of the current actuator settings. Deterministic
    /// given the rng state.
    pub fn read_sensors<R: Rng>(&self, cfg: &PlantConfig, rng: &mut R) -> SensorFrame {
        let mut levels_l = self.volumes_l;
        if cfg.sensor_noise_sigma_ml > 0.0 {
            let noise = Normal::new(0.0, cfg.sensor_noise_sigma_ml / 1000.0).unwrap();
            for l in &mut levels_l {
                *l = (*l + noise.sample(rng)).max(0.0);
            }
        }
        SensorFrame {
            levels_l,
            pump_frac: self.pump_frac,
            valve1_frac: self.valve1_frac,
            valve2_frac: self.valve2_frac,
        }
    }
}

/// One noisy sensor snapshot in engineering units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub levels_l: [f64; 4],
    pub pump_frac: f64,
    pub valve1_frac: f64,
    pub valve2_frac: f64,
}

impl SensorFrame {
    /// Convert to the wire representation (milliliters / permille).
    pub fn to_message(&self, seq: u32, timestamp_us: u64) -> Result<ControlMessage, CodecError> {
        let ml = |l: f64| (l * 1000.0).round().clamp(0.0, u32::MAX as f64) as u32;
        let permille = |f: f64| (f * 1000.0).round().clamp(0.0, 1000.0) as u16;
        Ok(ControlMessage {
            seq,
            timestamp_us,
            levels_ml: [
                ml(self.levels_l[0]),
                ml(self.levels_l[1]),
                ml(self.levels_l[2]),
                ml(self.levels_l[3]),
            ],
            p1_permille: permille(self.pump_frac),
            v1_permille: permille(self.valve1_frac),
            v2_permille: permille(self.valve2_frac),
        })
    }
}

/// Which component misbehaves in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Deposits inhibit the pipe draining T3; emulated by closing VM1.
    CloggedPipe,
    /// The pump moves less volume than normal; emulated by closing VM2.
    FailingPump,
}

impl FaultKind {
    /// Scenario id carried in label trailers and trace headers.
    pub fn scenario_id(self) -> u8 {
        match self {
            FaultKind::CloggedPipe => 1,
            FaultKind::FailingPump => 2,
        }
    }
}

/// A fault scenario: what fails, and how badly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultScenario {
    pub kind: FaultKind,
    pub severity: Severity,
}

impl FaultScenario {
    pub fn new(kind: FaultKind, severity: Severity) -> Result<Self, PlantError> {
        if !severity.is_decision() {
            return Err(PlantError::InvalidFaultSeverity(severity));
        }
        Ok(FaultScenario { kind, severity })
    }

    /// Opening fraction of the scenario's manual valve.
    ///
    /// Clogged pipe closes VM1 by 0 / 30 / 55 percent; failing pump closes
    /// VM2 by 0 / 20 / 40 percent.
    pub fn manual_valve_opening(&self) -> Result<f64, PlantError> {
        let closure = match (self.kind, self.severity) {
            (_, Severity::Normal) => 0.0,
            (FaultKind::CloggedPipe, Severity::Warning) => 0.30,
            (FaultKind::CloggedPipe, Severity::Error) => 0.55,
            (FaultKind::FailingPump, Severity::Warning) => 0.20,
            (FaultKind::FailingPump, Severity::Error) => 0.40,
            (_, other) => return Err(PlantError::InvalidFaultSeverity(other)),
        };
        Ok(1.0 - closure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    #[test]
    fn init_state_places_volumes() {
        let state = cfg().init_state([0.0, 0.0, 7.5, 0.0]).unwrap();
        assert_eq!(state.volumes_l, [0.0, 0.0, 7.5, 0.0]);
        assert_eq!(state.pump_frac, 0.0);
        assert_eq!(state.manual1_frac, 1.0);
        assert_eq!(state.manual2_frac, 1.0);
        assert_eq!(state.sim_time_s, 0.0);

        let empty = cfg().init_state([0.0; 4]).unwrap();
        assert_eq!(empty.volumes_l, [0.0; 4]);

        let shifted = cfg().init_state([0.0, 0.0, 6.5, 0.0]).unwrap();
        assert_eq!(shifted.volumes_l[2], 6.5);
    }

    #[test]
    fn init_state_rejects_out_of_range_volume() {
        assert!(matches!(
            cfg().init_state([0.0, 0.0, 99.0, 0.0]).unwrap_err(),
            PlantError::VolumeOutOfRange { tank: 3, .. }
        ));
        assert!(matches!(
            cfg().init_state([-0.1, 0.0, 0.0, 0.0]).unwrap_err(),
            PlantError::VolumeOutOfRange { tank: 1, .. }
        ));
    }

    #[test]
    fn apply_fault_sets_only_the_scenario_valve() {
        let state = cfg().init_state([0.0, 0.0, 7.5, 0.0]).unwrap();

        let clogged = state
            .apply_fault(FaultScenario::new(FaultKind::CloggedPipe, Severity::Error).unwrap())
            .unwrap();
        assert!((clogged.manual1_frac - 0.45).abs() < 1e-12);
        assert_eq!(clogged.manual2_frac, 1.0);
        assert_eq!(clogged.volumes_l, state.volumes_l);

        let warn = state
            .apply_fault(FaultScenario::new(FaultKind::CloggedPipe, Severity::Warning).unwrap())
            .unwrap();
        assert!((warn.manual1_frac - 0.70).abs() < 1e-12);

        let pump_ok = state
            .apply_fault(FaultScenario::new(FaultKind::FailingPump, Severity::Normal).unwrap())
            .unwrap();
        assert_eq!(pump_ok.manual2_frac, 1.0);
        assert_eq!(pump_ok.manual1_frac, 1.0);
    }

    #[test]
    fn no_decision_is_not_a_fault_severity() {
        assert!(matches!(
            FaultScenario::new(FaultKind::CloggedPipe, Severity::NoDecision).unwrap_err(),
            PlantError::InvalidFaultSeverity(Severity::NoDecision)
        ));
    }

    #[test]
    fn zero_inputs_and_equal_levels_leave_volumes_unchanged() {
        // With pump and valves shut, only the passive coupling could move
        // water; equal upper levels keep it idle too.
        let state = cfg().init_state([2.0, 2.0, 2.0, 5.0]).unwrap();
        let next = state.step(&cfg(), ControlInputs::ZERO, 0.01).unwrap();
        assert_eq!(next.volumes_l, state.volumes_l);
    }

    #[test]
    fn single_open_path_conserves_volume() {
        // Equal upper levels keep the passive couplings idle for this one
        // step, so V2 is the only active path.
        let cfg = cfg();
        let state = cfg.init_state([7.5, 7.5, 7.5, 0.0]).unwrap();
        let inputs = ControlInputs {
            pump: 0.0,
            valve1: 0.0,
            valve2: 1.0,
        };
        let next = state.step(&cfg, inputs, 0.01).unwrap();
        let drained = state.volumes_l[2] - next.volumes_l[2];
        assert!(drained > 0.0, "T3 must discharge");
        assert!(
            (next.volumes_l[3] - drained).abs() < 1e-12,
            "T4 gains the same amount"
        );
        assert_eq!(next.volumes_l[0], 7.5);
        assert_eq!(next.volumes_l[1], 7.5);
    }

    /// Independent fine-grained integration used as the discharge oracle.
    fn discharge_t3(cfg: &PlantConfig, manual1: f64, horizon_s: f64, dt: f64) -> f64 {
        let mut state = cfg.init_state([0.0, 0.0, 7.5, 0.0]).unwrap();
        state.manual1_frac = manual1;
        let inputs = ControlInputs {
            pump: 0.0,
            valve1: 0.0,
            valve2: 1.0,
        };
        let steps = (horizon_s / dt).round() as usize;
        for _ in 0..steps {
            state = state.step(cfg, inputs, dt).unwrap();
        }
        state.volumes_l[2]
    }

    #[test]
    fn clogged_valve_discharges_slower_than_open() {
        // Oracle: direct integration at dt = 1 ms over a 2 s horizon.
        let cfg = cfg();
        let open = discharge_t3(&cfg, 1.0, 2.0, 0.001);
        let clogged = discharge_t3(&cfg, 0.45, 2.0, 0.001);
        assert!(
            clogged > open,
            "VM1 at 45 % open must retain more water: {clogged} vs {open}"
        );
    }

    #[test]
    fn nan_volume_is_reported_as_divergence() {
        let cfg = cfg();
        let mut state = cfg.init_state([1.0; 4]).unwrap();
        state.volumes_l[0] = f64::NAN;
        assert!(matches!(
            state.step(&cfg, ControlInputs::ZERO, 0.01).unwrap_err(),
            PlantError::NumericalDivergence { .. }
        ));
    }

    #[test]
    fn mass_is_conserved_mid_range() {
        let cfg = cfg();
        let mut state = cfg.init_state([6.0, 4.0, 5.0, 8.0]).unwrap();
        let total = state.total_volume_l();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..5_000 {
            let inputs = ControlInputs {
                pump: rng.gen_range(0.0..=1.0),
                valve1: rng.gen_range(0.0..=1.0),
                valve2: rng.gen_range(0.0..=1.0),
            };
            state = state.step(&cfg, inputs, cfg.dt_sim_s).unwrap();
            assert!(
                (state.total_volume_l() - total).abs() < 1e-9 * (k + 1) as f64,
                "volume drift at step {k}"
            );
            for v in state.volumes_l {
                assert!((0.0..=cfg.tank_capacity_l).contains(&v));
            }
        }
    }

    #[test]
    fn wider_manual_valve_never_reduces_t3_outflow() {
        let cfg = cfg();
        let mut prev_flow = -1.0;
        for manual1 in [0.0, 0.2, 0.45, 0.7, 1.0] {
            let mut state = cfg.init_state([0.0, 0.0, 7.5, 0.0]).unwrap();
            state.manual1_frac = manual1;
            let next = state
                .step(
                    &cfg,
                    ControlInputs {
                        pump: 0.0,
                        valve1: 0.0,
                        valve2: 1.0,
                    },
                    0.01,
                )
                .unwrap();
            let flow = state.volumes_l[2] - next.volumes_l[2];
            assert!(flow >= prev_flow, "flow must be monotone in VM1");
            prev_flow = flow;
        }
    }

    #[test]
    fn trajectories_are_bit_identical_for_identical_seeds() {
        let cfg = cfg();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            let mut state = cfg.init_state([0.0, 0.0, 7.5, 0.0]).unwrap();
            let mut trace = Vec::new();
            for _ in 0..500 {
                let frame = state.read_sensors(&cfg, &mut rng);
                trace.push((state, frame));
                state = state
                    .step(
                        &cfg,
                        ControlInputs {
                            pump: 0.3,
                            valve1: 0.1,
                            valve2: 0.9,
                        },
                        cfg.dt_sim_s,
                    )
                    .unwrap();
            }
            trace
        };
        let (a, b) = (run(), run());
        for ((sa, fa), (sb, fb)) in a.iter().zip(&b) {
            assert_eq!(sa.volumes_l, sb.volumes_l);
            assert_eq!(fa.levels_l, fb.levels_l);
        }
    }

    #[test]
    fn noiseless_sensors_return_true_volumes() {
        let mut cfg = cfg();
        cfg.sensor_noise_sigma_ml = 0.0;
        let state = cfg.init_state([1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = state.read_sensors(&cfg, &mut rng);
        assert_eq!(frame.levels_l, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sensor_reads_are_deterministic_for_a_reset_rng() {
        let cfg = cfg();
        let state = cfg.init_state([5.0, 0.0, 7.5, 2.0]).unwrap();
        let frame1 = state.read_sensors(&cfg, &mut ChaCha8Rng::seed_from_u64(99));
        let frame2 = state.read_sensors(&cfg, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(frame1, frame2);
    }

    #[test]
    fn sensor_noise_matches_configured_sigma() {
        let mut cfg = cfg();
        cfg.sensor_noise_sigma_ml = 10.0;
        let state = cfg.init_state([5.0, 5.0, 5.0, 5.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
        let n = 10_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += state.read_sensors(&cfg, &mut rng).levels_l[0];
        }
        let mean = sum / n as f64;
        let bound = 3.0 * (cfg.sensor_noise_sigma_ml / 1000.0) / (n as f64).sqrt();
        assert!(
            (mean - 5.0).abs() < bound,
            "sample mean {mean} deviates more than {bound}"
        );
    }

    #[test]
    fn fault_severities_separate_discharge_slopes() {
        // Post-tuning check: the three clogged-pipe severities must give
        // strictly ordered mean window slopes (20 samples at 10 Hz).
        let cfg = cfg();
        let mut means = Vec::new();
        for severity in Severity::CLASSES {
            let scenario = FaultScenario::new(FaultKind::CloggedPipe, severity).unwrap();
            let mut state = cfg
                .init_state([0.0, 0.0, 7.5, 0.0])
                .unwrap()
                .apply_fault(scenario)
                .unwrap();
            let inputs = ControlInputs {
                pump: 0.0,
                valve1: 0.0,
                valve2: 1.0,
            };
            let mut samples_ml = Vec::new();
            for _ in 0..100 {
                samples_ml.push(state.volumes_l[2] * 1000.0);
                for _ in 0..10 {
                    state = state.step(&cfg, inputs, cfg.dt_sim_s).unwrap();
                }
            }
            let slopes: Vec<f64> = samples_ml.windows(20).map(|w| w[19] - w[0]).collect();
            means.push(slopes.iter().sum::<f64>() / slopes.len() as f64);
        }
        assert!(
            means[0] < means[1] && means[1] < means[2],
            "class mean slopes must be strictly ordered: {means:?}"
        );
    }

    #[test]
    fn config_validation_rejects_nonpositive_coefficients() {
        let mut bad = cfg();
        bad.pump_gain_l_per_s_at_full = 0.0;
        assert!(matches!(bad.validate(), Err(PlantError::Config(_))));
        let mut bad = cfg();
        bad.sensor_noise_sigma_ml = -1.0;
        assert!(matches!(bad.validate(), Err(PlantError::Config(_))));
    }
}
