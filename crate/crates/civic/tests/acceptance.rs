//! Acceptance suite: one test per criterion, each printing a pass line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).
//!
//! The experiment criteria run the built-in plans in fast in-process mode
//! with their pinned seeds; property criteria run randomized equivalence
//! suites against independent oracles.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use civic::calibrate::calibrate;
use civic::dataplane::{audit, AluKind, Instr, Operand, RangeEntry, RangeTable, RegisterPair};
use civic::harness::{
    replay_set, run_experiment, score, simulate_test_set, simulate_training_set, ConfusionReport,
    ExperimentPlan, ReplayMode, TraceRun,
};
use civic::validator::{
    build_program, reference::ReferenceValidator, signed_slope, slope, CivicValidator,
    ValidatorSpec, WindowMode,
};
use civic::wire::{strip_label, Severity, TraceRecord};

fn recall(report: &ConfusionReport, class: Severity) -> f64 {
    report.class(class).unwrap().recall
}

/// Simulate, calibrate, and replay one builtin plan in-process; returns
/// the calibrated spec plus labeled training and test runs.
fn prepared_plan(name: &str) -> (ExperimentPlan, ValidatorSpec, Vec<TraceRun>, Vec<TraceRun>) {
    let plan = ExperimentPlan::builtin(name).unwrap();
    let training = simulate_training_set(&plan).unwrap();
    let data: Vec<(String, Vec<TraceRecord>)> = training
        .iter()
        .map(|r| (r.id.clone(), r.records.clone()))
        .collect();
    let outcome = calibrate(&data, &plan.validator_template()).unwrap();
    let test = simulate_test_set(&plan).unwrap();
    let labeled_training = replay_set(&training, &outcome.spec, ReplayMode::InProcess).unwrap();
    let labeled_test = replay_set(&test, &outcome.spec, ReplayMode::InProcess).unwrap();
    (plan, outcome.spec, labeled_training, labeled_test)
}

#[test]
fn criterion_1_baseline_clogged_pipe_reproduction() {
    let start = Instant::now();
    let plan = ExperimentPlan::clogged_pipe_baseline();
    let report = run_experiment(&plan, None).unwrap();
    let elapsed = start.elapsed();

    assert!(
        report.training.is_perfect(),
        "training set must classify perfectly:\n{}",
        report.training
    );
    assert!(
        report.test.is_perfect(),
        "all per-class precision/recall/F1/accuracy must be 1.0:\n{}",
        report.test
    );
    for m in &report.test.per_class {
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "fast-mode runtime {elapsed:?} exceeds two minutes"
    );
    println!(
        "criterion 1: PASS - baseline clogged-pipe scores all 1.0 over {} windows ({:.2?})",
        report.test.decision_points, elapsed
    );
}

#[test]
fn criterion_2_shifted_start_is_overcautious_only() {
    let plan = ExperimentPlan::clogged_pipe_shifted();
    let report = run_experiment(&plan, None).unwrap();

    assert_eq!(
        recall(&report.test, Severity::Error),
        1.0,
        "error recall must stay 1.0 under the shifted start:\n{}",
        report.test
    );
    let mut misclassified = 0;
    for truth in 0..3 {
        for predicted in 0..3 {
            let count = report.test.counts[truth][predicted];
            if predicted < truth {
                assert_eq!(
                    count, 0,
                    "downward misclassification {truth}->{predicted}:\n{}",
                    report.test
                );
            }
            if predicted != truth {
                misclassified += count;
            }
        }
    }
    println!(
        "criterion 2: PASS - shifted start keeps error recall 1.0; {misclassified} windows moved, all to higher severity"
    );
}

#[test]
fn criterion_3_failing_pump_confusion_confined() {
    let plan = ExperimentPlan::failing_pump();
    let report = run_experiment(&plan, None).unwrap();

    assert_eq!(
        recall(&report.test, Severity::Error),
        1.0,
        "error recall must be 1.0:\n{}",
        report.test
    );
    for truth in 0..3 {
        for predicted in 0..3 {
            if truth != predicted && !(truth == 1 && predicted == 2) {
                assert_eq!(
                    report.test.counts[truth][predicted], 0,
                    "only warning->error confusion is allowed:\n{}",
                    report.test
                );
            }
        }
    }
    println!(
        "criterion 3: PASS - failing-pump error recall 1.0, confusion confined to warning->error ({} windows)",
        report.test.decision_points
    );
}

#[test]
fn criterion_4_constraint_audit() {
    let mut audited = 0;
    for spec in [
        ValidatorSpec::clogged_pipe(ValidatorSpec::uncalibrated_ranges(), WindowMode::Tumbling),
        ValidatorSpec::failing_pump(ValidatorSpec::uncalibrated_ranges(), WindowMode::Tumbling),
    ] {
        let program = build_program(&spec).unwrap();
        let report = audit(&program);
        assert!(
            report.passed(),
            "shipped validator program must pass the audit:\n{report}"
        );
        assert_eq!(report.violations().count(), 0);
        audited += report.entries.len();

        // Seeded mutant: one general multiply smuggled into the slope
        // stage must fail the audit, naming the stage.
        let mut mutant = program.clone();
        let stage = mutant
            .stages
            .iter_mut()
            .find(|s| s.name == "slope")
            .unwrap();
        stage.instrs.push(Instr::Alu {
            dst: "scaled".into(),
            kind: AluKind::Mul,
            a: Operand::Var("diff".into()),
            b: Operand::Const(3),
        });
        let mutant_report = audit(&mutant);
        assert!(!mutant_report.passed(), "mutant must fail the audit");
        let violation = mutant_report.violations().next().unwrap();
        assert_eq!(violation.stage, "slope");
        assert!(violation.violation.as_deref().unwrap().contains("multiply"));
    }
    println!(
        "criterion 4: PASS - both programs audit clean ({audited} ops); seeded multiply mutant fails naming its stage"
    );
}

#[test]
fn criterion_5_pipeline_matches_reference_on_every_test_trace() {
    let mut packets = 0usize;
    for name in ExperimentPlan::BUILTIN_NAMES {
        let (_, spec, _, labeled_test) = prepared_plan(name);
        for run in &labeled_test {
            let mut pipeline = CivicValidator::new(spec.clone()).unwrap();
            let mut reference = ReferenceValidator::new(spec.clone()).unwrap();
            for rec in &run.records {
                let bytes = rec.msg.encode().unwrap();
                let a = pipeline.on_packet(&bytes).unwrap();
                let b = reference.on_packet(&bytes).unwrap();
                assert_eq!(a, b, "plan {name} run {} seq {}", run.id, rec.msg.seq);
                // Replay labels must agree with both engines too.
                let (_, label) = strip_label(&a).unwrap();
                assert_eq!(Some(label), rec.label);
                packets += 1;
            }
        }
    }
    println!(
        "criterion 5: PASS - data-plane and reference labels agree on {packets} packets (100 %)"
    );
}

#[test]
fn criterion_6_ring_and_table_property_suites() {
    // Ring buffers against a sliding-window queue oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_5506);
    let mut ring_cases = 0usize;
    while ring_cases < 10_000 {
        let n = rng.gen_range(1..=128usize);
        let mut ring = RegisterPair::new(n);
        let mut oracle: VecDeque<u32> = VecDeque::new();
        for _ in 0..(10 * n) {
            let value: u32 = rng.gen();
            ring.push(value);
            oracle.push_back(value);
            if oracle.len() > n {
                oracle.pop_front();
            }
            let w = ring.window();
            assert_eq!(w.oldest, *oracle.front().unwrap());
            assert_eq!(w.newest, *oracle.back().unwrap());
            assert_eq!(w.filled, ring.pushes() >= n as u64);
            assert_eq!(ring.snapshot(), oracle.iter().copied().collect::<Vec<_>>());
            ring_cases += 1;
        }
    }

    // Range tables against a linear-scan oracle.
    let mut table_cases = 0usize;
    while table_cases < 10_000 {
        let mut cuts: Vec<u32> = (0..rng.gen_range(1..6)).map(|_| rng.gen()).collect();
        cuts.sort_unstable();
        cuts.dedup();
        cuts.retain(|&c| c != 0);
        let actions: Vec<u32> = (0..=cuts.len() as u32).collect();
        let table = RangeTable::from_boundaries(&cuts, &actions, 999).unwrap();
        let scan = |key: u32| -> u32 {
            table
                .entries()
                .iter()
                .find(|e: &&RangeEntry| u64::from(e.lo) <= u64::from(key) && u64::from(key) < e.hi)
                .map(|e| e.action)
                .unwrap()
        };
        for _ in 0..500 {
            let key: u32 = rng.gen();
            assert_eq!(table.lookup(key), scan(key));
            table_cases += 1;
        }
        for &cut in &cuts {
            for key in [cut.wrapping_sub(1), cut, cut.saturating_add(1)] {
                assert_eq!(table.lookup(key), scan(key));
                table_cases += 1;
            }
        }
    }
    println!(
        "criterion 6: PASS - ring/queue equivalence over {ring_cases} cases, range/linear-scan over {table_cases} cases, zero failures"
    );
}

#[test]
fn criterion_7_endpoint_difference_matches_regression_on_ramps() {
    let mut checked = 0usize;
    for n in [2usize, 5, 20, 90, 128] {
        for per_interval in [-500i64, -37, -1, 0, 1, 3, 250] {
            let base = 5_000_000i64;
            let ramp: Vec<i64> = (0..n as i64).map(|k| base + per_interval * k).collect();

            // The validator's own biased-key arithmetic on the endpoints.
            let key = slope(ramp[0] as u32, ramp[n - 1] as u32);
            let endpoint = signed_slope(key);
            assert_eq!(endpoint, (n as i64 - 1) * per_interval);

            // Exact least-squares slope of the same window, as a rational.
            let sum_t: i128 = (0..n as i128).sum();
            let sum_y: i128 = ramp.iter().map(|&y| i128::from(y)).sum();
            let sum_ty: i128 = ramp
                .iter()
                .enumerate()
                .map(|(t, &y)| t as i128 * i128::from(y))
                .sum();
            let sum_tt: i128 = (0..n as i128).map(|t| t * t).sum();
            let num = n as i128 * sum_ty - sum_t * sum_y;
            let den = n as i128 * sum_tt - sum_t * sum_t;

            // slope_ls = num/den exactly equals the per-interval slope,
            // and the endpoint difference is (n-1) times it.
            assert_eq!(num % den, 0);
            assert_eq!(num / den, i128::from(per_interval));
            assert_eq!(i128::from(endpoint) * den, (n as i128 - 1) * num);
            checked += 1;
        }
    }
    println!(
        "criterion 7: PASS - endpoint difference equals (n-1) x regression slope on {checked} noiseless ramps, exactly"
    );
}

#[test]
fn criterion_8_metrics_match_independent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5C0E);
    let all = [
        Severity::Normal,
        Severity::Warning,
        Severity::Error,
        Severity::NoDecision,
    ];
    let mut vectors = 0usize;
    while vectors < 1000 {
        // A batch of runs with random truths and random label vectors.
        let runs: Vec<TraceRun> = (0..rng.gen_range(1..8))
            .map(|i| {
                let truth = Severity::CLASSES[rng.gen_range(0..3)];
                let labels: Vec<Severity> = (0..rng.gen_range(1..40))
                    .map(|_| all[rng.gen_range(0..4)])
                    .collect();
                vectors += 1;
                synthetic_run(&format!("run-{i}"), truth, &labels)
            })
            .collect();
        let report = score(&runs);

        // Independent tally over flat (truth, predicted) pairs.
        let mut counts = [[0u64; 4]; 3];
        for run in &runs {
            for rec in &run.records {
                let t = run.header.severity.class_index().unwrap();
                match rec.label.unwrap().severity.class_index() {
                    Some(p) => counts[t][p] += 1,
                    None => counts[t][3] += 1,
                }
            }
        }
        assert_eq!(report.counts, counts);
        let decisions: u64 = counts.iter().map(|r| r[..3].iter().sum::<u64>()).sum();
        assert_eq!(report.decision_points, decisions);
        for (c, metrics) in report.per_class.iter().enumerate() {
            let tp = counts[c][c];
            let fn_: u64 = (0..3).filter(|&p| p != c).map(|p| counts[c][p]).sum();
            let fp: u64 = (0..3).filter(|&t| t != c).map(|t| counts[t][c]).sum();
            let tn = decisions - tp - fn_ - fp;
            let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = div(tp, tp + fp);
            let recall = div(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            assert_eq!(metrics.precision, precision);
            assert_eq!(metrics.recall, recall);
            assert_eq!(metrics.f1, f1);
            assert_eq!(metrics.accuracy, div(tp + tn, decisions));
        }
    }
    println!(
        "criterion 8: PASS - score() matches the independent confusion oracle on {vectors} random label vectors, exactly"
    );
}

fn synthetic_run(id: &str, truth: Severity, labels: &[Severity]) -> TraceRun {
    use civic::wire::{CivicLabel, ControlMessage, TraceHeader};
    TraceRun {
        id: id.into(),
        header: TraceHeader {
            scenario: 1,
            severity: truth,
            config_hash: 0,
            seed: 0,
        },
        records: labels
            .iter()
            .enumerate()
            .map(|(i, &severity)| TraceRecord {
                msg: ControlMessage {
                    seq: i as u32,
                    timestamp_us: i as u64,
                    levels_ml: [0; 4],
                    p1_permille: 0,
                    v1_permille: 0,
                    v2_permille: 0,
                },
                ground_truth: truth,
                label: Some(if severity == Severity::NoDecision {
                    CivicLabel::no_decision(1)
                } else {
                    CivicLabel {
                        severity,
                        scenario: 1,
                        window_slope_biased: 0,
                    }
                }),
            })
            .collect(),
    }
}

#[test]
fn criterion_9_full_plan_determinism() {
    let plan = ExperimentPlan::clogged_pipe_baseline();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let report_a = run_experiment(&plan, Some(dir_a.path())).unwrap();
    let report_b = run_experiment(&plan, Some(dir_b.path())).unwrap();
    assert_eq!(report_a, report_b);

    let mut compared = 0usize;
    let mut files: Vec<std::path::PathBuf> = walkdir(dir_a.path());
    files.sort();
    for file in &files {
        let rel = file.strip_prefix(dir_a.path()).unwrap();
        let other = dir_b.path().join(rel);
        let a = std::fs::read(file).unwrap();
        let b = std::fs::read(&other)
            .unwrap_or_else(|_| panic!("missing counterpart for {}", rel.display()));
        assert_eq!(a, b, "byte mismatch in {}", rel.display());
        compared += 1;
    }
    assert!(
        compared >= 30,
        "expected the full output tree, saw {compared} files"
    );
    println!(
        "criterion 9: PASS - two executions produced byte-identical outputs ({compared} files compared)"
    );
}

fn walkdir(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out
}

#[test]
fn criterion_10_gate_semantics_exhaustive_scan() {
    let mut scanned = 0usize;
    for name in ExperimentPlan::BUILTIN_NAMES {
        let (_, spec, labeled_training, labeled_test) = prepared_plan(name);
        for run in labeled_training.iter().chain(&labeled_test) {
            let mut pushes = 0u64;
            for rec in &run.records {
                pushes += 1;
                let gate_ok = spec.gate.eval(&rec.msg).unwrap();
                let filled = pushes >= spec.window as u64;
                let window_ok = match spec.window_mode {
                    WindowMode::Sliding => filled,
                    WindowMode::Tumbling => filled && pushes.is_multiple_of(spec.window as u64),
                };
                let label = rec.label.expect("replayed record must be labeled");
                if !(gate_ok && window_ok) {
                    assert_eq!(
                        label.severity,
                        Severity::NoDecision,
                        "plan {name} run {} seq {}: gate-false/unfilled packet carries {}",
                        run.id,
                        rec.msg.seq,
                        label.severity
                    );
                    assert_eq!(label.window_slope_biased, 0);
                }
                scanned += 1;
            }
        }
    }
    println!(
        "criterion 10: PASS - no gate-false or unfilled-window packet carries a decision ({scanned} packets scanned)"
    );
}
