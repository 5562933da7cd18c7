//! Build both validator programs, audit them against the switch compute
//! constraints, and show the auditor rejecting a multiply.
//!
//! Run: `cargo run --example pipeline_audit`

use civic::dataplane::{audit, AluKind, Instr, Operand};
use civic::validator::{build_program, ValidatorSpec, WindowMode};

fn main() {
    let ranges = ValidatorSpec::uncalibrated_ranges();
    let specs = [
        ValidatorSpec::clogged_pipe(ranges.clone(), WindowMode::Tumbling),
        ValidatorSpec::failing_pump(ranges, WindowMode::Tumbling),
    ];

    for spec in &specs {
        let program = build_program(spec).unwrap();
        println!(
            "=== {:?} program ({} instructions, window {}) ===",
            spec.scenario,
            program.instruction_count(),
            spec.window
        );
        print!("{}", audit(&program));
        println!();
    }

    // The same program with one general multiply smuggled in.
    let mut mutant = build_program(&specs[0]).unwrap();
    mutant
        .stages
        .iter_mut()
        .find(|s| s.name == "slope")
        .unwrap()
        .instrs
        .push(Instr::Alu {
            dst: "scaled".into(),
            kind: AluKind::Mul,
            a: Operand::Var("diff".into()),
            b: Operand::Const(3),
        });
    println!("=== mutant with a general multiply ===");
    print!("{}", audit(&mutant));
}
