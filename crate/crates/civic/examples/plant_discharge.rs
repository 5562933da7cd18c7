//! Discharge T3 through V2 under the three clogged-pipe severities and
//! watch the window slopes separate.
//!
//! Run: `cargo run --example plant_discharge`

use civic::plant::{ControlInputs, FaultKind, FaultScenario, PlantConfig};
use civic::wire::Severity;

fn main() {
    let cfg = PlantConfig::default();
    let inputs = ControlInputs {
        pump: 0.0,
        valve1: 0.0,
        valve2: 1.0,
    };

    println!("T3 discharge from 7.5 l, V2 fully open, 10 Hz sampling");
    println!(
        "{:<10} {:>10} {:>14} {:>16}",
        "severity", "vm1 open", "t3 after 10 s", "mean 20-sample"
    );

    for severity in Severity::CLASSES {
        let scenario = FaultScenario::new(FaultKind::CloggedPipe, severity).unwrap();
        let mut state = cfg
            .init_state([0.0, 0.0, 7.5, 0.0])
            .unwrap()
            .apply_fault(scenario)
            .unwrap();

        // Sample L3 once per control period for 10 seconds.
        let mut samples_ml = Vec::new();
        for _ in 0..100 {
            samples_ml.push(state.volumes_l[2] * 1000.0);
            for _ in 0..10 {
                state = state.step(&cfg, inputs, cfg.dt_sim_s).unwrap();
            }
        }

        let slopes: Vec<f64> = samples_ml.windows(20).map(|w| w[19] - w[0]).collect();
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        println!(
            "{:<10} {:>9.0}% {:>12.2} l {:>13.0} mL",
            severity.to_string(),
            scenario.manual_valve_opening().unwrap() * 100.0,
            state.volumes_l[2],
            mean
        );
    }

    println!("\nA clogged pipe (higher severity) retains more water and flattens the slope.");
}
