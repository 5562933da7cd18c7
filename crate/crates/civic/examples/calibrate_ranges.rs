//! Walk through calibration: simulate the training runs, learn the
//! baseline slopes, and print the synthesized range table as it would
//! land in the validator spec file.
//!
//! Run: `cargo run --example calibrate_ranges`

use civic::calibrate::calibrate;
use civic::harness::{simulate_training_set, ExperimentPlan};
use civic::validator::SLOPE_BIAS;
use civic::wire::TraceRecord;

fn main() {
    for plan in [
        ExperimentPlan::clogged_pipe_baseline(),
        ExperimentPlan::failing_pump(),
    ] {
        println!("=== {} ===", plan.name);
        let training = simulate_training_set(&plan).unwrap();
        let data: Vec<(String, Vec<TraceRecord>)> = training
            .iter()
            .map(|r| (r.id.clone(), r.records.clone()))
            .collect();
        let outcome = calibrate(&data, &plan.validator_template()).unwrap();
        print!("{outcome}");

        println!("  biased keys on the u32 axis:");
        for c in &outcome.baselines.classes {
            println!(
                "    {:<8} key {:>10}  (bias {} {} {})",
                c.class.to_string(),
                c.biased_key,
                SLOPE_BIAS,
                if c.slope < 0 { "-" } else { "+" },
                c.slope.abs()
            );
        }

        println!("\n  validator spec file:");
        for line in toml::to_string_pretty(&outcome.spec).unwrap().lines() {
            println!("  | {line}");
        }
        println!();
    }
}
