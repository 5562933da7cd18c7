//! In-situ validation of a continuously controlled coupled-tank process,
//! emulated end to end on one desk.
//!
//! The crate bundles everything needed to reproduce the two fault-detection
//! experiments (a clogged drain pipe and a failing pump) in software:
//!
//! - [`plant`] — deterministic continuous-time simulator of the four-tank
//!   water plant with pump, automatic valves, manual fault valves, and
//!   sensor noise.
//! - [`control`] — linearization, discretization, and a box-constrained MPC
//!   (plus a PI fallback) driving the plant at 10 Hz.
//! - [`wire`] — the fixed binary layout of periodic control messages, the
//!   label trailer appended by the validator, and trace-file persistence.
//! - [`dataplane`] — a small match-action pipeline interpreter restricted to
//!   the operations a programmable switch offers (add/sub/compare/shift,
//!   ring-buffer registers, range-match tables), with a static constraint
//!   auditor.
//! - [`validator`] — the monitoring program itself: gate evaluation,
//!   window-difference slope, severity classification, packet labeling, and
//!   an unconstrained reference twin used for equivalence checks.
//! - [`calibrate`] — learns per-class baseline slopes from labeled training
//!   runs and synthesizes the severity range table.
//! - [`harness`] — experiment orchestration: simulate runs, record traces,
//!   replay them through the validator (in-process or over a UDP socket),
//!   and score classifications.
//!
//! Start with the runnable examples (`cargo run --example full_experiment`)
//! or the `civic` binary (`civic experiment --plan plan.toml --out out/`).

pub mod calibrate;
pub mod control;
pub mod dataplane;
pub mod harness;
pub mod plant;
pub mod validator;
pub mod wire;
