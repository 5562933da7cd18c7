//! Replay a recorded run over a loopback UDP socket (sender -> switch ->
//! capture) and verify the labels match the in-process path exactly.
//!
//! Run: `cargo run --example socket_replay`

use civic::calibrate::calibrate;
use civic::harness::{
    replay_run, simulate_test_set, simulate_training_set, ExperimentPlan, ReplayMode,
};
use civic::wire::{Severity, TraceRecord};

fn main() {
    let plan = ExperimentPlan::clogged_pipe_baseline();
    let training = simulate_training_set(&plan).unwrap();
    let data: Vec<(String, Vec<TraceRecord>)> = training
        .iter()
        .map(|r| (r.id.clone(), r.records.clone()))
        .collect();
    let spec = calibrate(&data, &plan.validator_template()).unwrap().spec;

    let run = simulate_test_set(&plan)
        .unwrap()
        .into_iter()
        .next()
        .unwrap();
    println!(
        "replaying {} ({} packets, ground truth {})",
        run.id,
        run.records.len(),
        run.header.severity
    );

    let over_socket = replay_run(&run, &spec, ReplayMode::Socket { paced: false }).unwrap();
    let in_process = replay_run(&run, &spec, ReplayMode::InProcess).unwrap();
    assert_eq!(
        over_socket.records, in_process.records,
        "socket and in-process labels must be identical"
    );

    let decisions = over_socket
        .records
        .iter()
        .filter_map(|r| r.label)
        .filter(|l| l.severity.is_decision())
        .count();
    let correct = over_socket
        .records
        .iter()
        .filter_map(|r| r.label)
        .filter(|l| l.severity == Severity::Normal)
        .count();
    println!("socket replay captured every packet; labels identical to in-process");
    println!("decision windows: {decisions}, labeled normal: {correct}");
    println!("(100 ms pacing is available via ReplayMode::Socket {{ paced: true }})");
}
