//! Run all three built-in experiments end to end: simulate, calibrate,
//! replay, score. Prints the full report tables.
//!
//! Run: `cargo run --release --example full_experiment`

use civic::harness::{run_experiment, ExperimentPlan};

fn main() {
    for name in ExperimentPlan::BUILTIN_NAMES {
        let plan = ExperimentPlan::builtin(name).unwrap();
        let started = std::time::Instant::now();
        let report = run_experiment(&plan, None).unwrap();
        println!("{report}");
        println!("elapsed: {:.2?}\n", started.elapsed());
    }
}
