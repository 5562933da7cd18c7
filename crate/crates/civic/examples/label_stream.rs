//! Feed a live clogged-pipe error run through the validator packet by
//! packet and print every label transition.
//!
//! Run: `cargo run --example label_stream`

use civic::calibrate::calibrate;
use civic::harness::{simulate_training_set, ExperimentPlan};
use civic::validator::{signed_slope, CivicValidator};
use civic::wire::{strip_label, Severity, TraceRecord};

fn main() {
    // Calibrate on the plan's training set, then stream one fresh error
    // run through the pipeline validator.
    let plan = ExperimentPlan::clogged_pipe_baseline();
    let training = simulate_training_set(&plan).unwrap();
    let data: Vec<(String, Vec<TraceRecord>)> = training
        .iter()
        .map(|r| (r.id.clone(), r.records.clone()))
        .collect();
    let outcome = calibrate(&data, &plan.validator_template()).unwrap();
    let mut validator = CivicValidator::new(outcome.spec).unwrap();

    let run = civic::harness::simulate_run(
        &plan,
        "stream",
        Severity::Error,
        0xFEED,
        plan.initial_volumes_l,
    )
    .unwrap();

    println!(
        "streaming {} packets of an error-severity run:",
        run.records.len()
    );
    let mut last = None;
    for rec in &run.records {
        let labeled = validator.on_packet(&rec.msg.encode().unwrap()).unwrap();
        let (msg, label) = strip_label(&labeled).unwrap();
        if last != Some(label.severity) || label.severity.is_decision() {
            let slope = if label.severity.is_decision() {
                format!("{:>6} mL/window", signed_slope(label.window_slope_biased))
            } else {
                "-".into()
            };
            println!(
                "  seq {:>3}  L3 {:>5} mL  V2 {:>4} permille  -> {:<12} {}",
                msg.seq,
                msg.levels_ml[2],
                msg.v2_permille,
                label.severity.to_string(),
                slope
            );
        }
        last = Some(label.severity);
    }
    println!("\nground truth was 'error'; every decision window above should agree.");
}
