//! The in-network validator program: collect level histories, evaluate
//! instantaneous gates, compute window-difference slopes, classify severity
//! against a calibrated range table, and label outgoing packets.
//!
//! [`build_program`] lowers a [`ValidatorSpec`] to a constrained
//! [`PipelineProgram`]; [`CivicValidator`] wraps the program together with
//! its register file for per-packet use. [`reference::ReferenceValidator`]
//! is the unconstrained host-side twin used for equivalence checks (both
//! replace the full-window regression by the endpoint difference).

pub mod reference;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::{
    audit, execute, AluKind, CmpOp, ConstraintReport, Egress, FieldSpec, Instr, Operand, ParseSpec,
    PipelineError, PipelineProgram, RangeTable, RegisterFile, RegisterSpec, Stage, TableError,
    Verdict,
};
use crate::plant::FaultKind;
use crate::wire::{self, CodecError, ControlMessage};

pub use crate::wire::Severity;

/// Bias added to the signed window slope so range tables can match it as
/// an unsigned key: `key = slope + 2^31`, computed with add/sub only.
pub const SLOPE_BIAS: u32 = 0x8000_0000;

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("validator spec error: {0}")]
    Spec(String),
    #[error("gate or monitor references unknown message field {0}")]
    UnknownField(String),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Table(#[from] TableError),
    #[error("{0}")]
    Codec(#[from] CodecError),
    #[error("range table action {0} is not a severity code")]
    BadTableAction(u32),
    #[error("packet dropped by the parser")]
    PacketDropped,
}

/// Parse spec for the fixed control-message layout; field names `seq`,
/// `timestamp`, `l1`..`l4`, `p1`, `v1`, `v2`.
pub fn control_message_parse_spec() -> ParseSpec {
    let f = |name: &str, offset: usize, width: usize| FieldSpec {
        name: name.to_string(),
        offset,
        width,
    };
    ParseSpec {
        fields: vec![
            f("seq", wire::offsets::SEQ, 4),
            f("timestamp", wire::offsets::TIMESTAMP, 8),
            f("l1", wire::offsets::L1, 4),
            f("l2", wire::offsets::L2, 4),
            f("l3", wire::offsets::L3, 4),
            f("l4", wire::offsets::L4, 4),
            f("p1", wire::offsets::P1, 2),
            f("v1", wire::offsets::V1, 2),
            f("v2", wire::offsets::V2, 2),
        ],
    }
}

/// Message field by parse-spec name, truncated to the 32-bit register
/// width like the data plane does.
pub fn message_field_u32(msg: &ControlMessage, name: &str) -> Option<u32> {
    match name {
        "seq" => Some(msg.seq),
        "timestamp" => Some(msg.timestamp_us as u32),
        "l1" => Some(msg.levels_ml[0]),
        "l2" => Some(msg.levels_ml[1]),
        "l3" => Some(msg.levels_ml[2]),
        "l4" => Some(msg.levels_ml[3]),
        "p1" => Some(u32::from(msg.p1_permille)),
        "v1" => Some(u32::from(msg.v1_permille)),
        "v2" => Some(u32::from(msg.v2_permille)),
        _ => None,
    }
}

/// Threshold comparators available to gate predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateCmp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl GateCmp {
    fn to_cmp_op(self) -> CmpOp {
        match self {
            GateCmp::Lt => CmpOp::Lt,
            GateCmp::Le => CmpOp::Le,
            GateCmp::Gt => CmpOp::Gt,
            GateCmp::Ge => CmpOp::Ge,
        }
    }

    pub fn eval(self, a: u32, b: u32) -> bool {
        match self {
            GateCmp::Lt => a < b,
            GateCmp::Le => a <= b,
            GateCmp::Gt => a > b,
            GateCmp::Ge => a >= b,
        }
    }
}

/// One instantaneous threshold predicate over a wire field, in wire units
/// (milliliters / permille).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatePredicate {
    pub field: String,
    pub cmp: GateCmp,
    pub value: u32,
}

/// Conjunction of threshold predicates; the slope decision only fires when
/// every predicate holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GateSpec {
    pub predicates: Vec<GatePredicate>,
}

impl GateSpec {
    pub fn eval(&self, msg: &ControlMessage) -> Option<bool> {
        let mut ok = true;
        for p in &self.predicates {
            let v = message_field_u32(msg, &p.field)?;
            ok &= p.cmp.eval(v, p.value);
        }
        Some(ok)
    }
}

/// Whether decisions fire on every packet once the window is filled, or
/// once per full window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Decide on every packet once `n` values were collected.
    #[default]
    Sliding,
    /// Decide every `n`-th packet, when the ring index wraps.
    Tumbling,
}

/// Severity range table in the compact file form: ascending interior
/// boundaries over biased slope keys, one class per range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityRanges {
    pub boundaries: Vec<u32>,
    pub classes: Vec<Severity>,
}

impl SeverityRanges {
    pub fn validate(&self) -> Result<(), ValidatorError> {
        if self.classes.len() != 3 {
            return Err(ValidatorError::Spec(format!(
                "exactly three severity ranges required, got {}",
                self.classes.len()
            )));
        }
        let mut seen = [false; 3];
        for class in &self.classes {
            match class.class_index() {
                Some(i) if !seen[i] => seen[i] = true,
                Some(_) => {
                    return Err(ValidatorError::Spec(format!(
                        "severity class {class} appears twice in the range table"
                    )))
                }
                None => {
                    return Err(ValidatorError::Spec(
                        "no-decision is not a range class; it is the fallback label".into(),
                    ))
                }
            }
        }
        if self.boundaries.len() != self.classes.len() - 1 {
            return Err(ValidatorError::Spec(format!(
                "{} classes need {} boundaries, got {}",
                self.classes.len(),
                self.classes.len() - 1,
                self.boundaries.len()
            )));
        }
        Ok(())
    }

    /// Lower to a full-coverage range table with severity codes as
    /// actions; the default action is the no-decision sentinel.
    pub fn to_range_table(&self) -> Result<RangeTable, ValidatorError> {
        self.validate()?;
        let actions: Vec<u32> = self.classes.iter().map(|c| u32::from(c.code())).collect();
        Ok(RangeTable::from_boundaries(
            &self.boundaries,
            &actions,
            u32::from(Severity::NoDecision.code()),
        )?)
    }
}

/// Everything needed to instantiate one scenario's validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorSpec {
    /// Scenario this program monitors; sets the label's scenario byte.
    pub scenario: FaultKind,
    /// Wire field whose history feeds the slope, e.g. `l3`.
    pub monitored_field: String,
    /// Operating window length in control messages, at least 2.
    pub window: usize,
    #[serde(default)]
    pub window_mode: WindowMode,
    pub gate: GateSpec,
    pub table: SeverityRanges,
}

impl ValidatorSpec {
    pub fn validate(&self) -> Result<(), ValidatorError> {
        if self.window < 2 {
            return Err(ValidatorError::Spec(format!(
                "window must be at least 2 messages, got {}",
                self.window
            )));
        }
        if self.gate.predicates.is_empty() {
            return Err(ValidatorError::Spec(
                "gate needs at least one predicate".into(),
            ));
        }
        let parse_spec = control_message_parse_spec();
        let known: Vec<&str> = parse_spec.fields.iter().map(|f| f.name.as_str()).collect();
        if !known.contains(&self.monitored_field.as_str()) {
            return Err(ValidatorError::UnknownField(self.monitored_field.clone()));
        }
        for p in &self.gate.predicates {
            if !known.contains(&p.field.as_str()) {
                return Err(ValidatorError::UnknownField(p.field.clone()));
            }
        }
        self.table.validate()
    }

    /// The clogged-pipe program: watch the T3 discharge slope over 20
    /// messages while T3 holds more than 3 l and V2 is at least 80 % open.
    pub fn clogged_pipe(table: SeverityRanges, window_mode: WindowMode) -> Self {
        ValidatorSpec {
            scenario: FaultKind::CloggedPipe,
            monitored_field: "l3".into(),
            window: 20,
            window_mode,
            gate: GateSpec {
                predicates: vec![
                    GatePredicate {
                        field: "l3".into(),
                        cmp: GateCmp::Gt,
                        value: 3000,
                    },
                    GatePredicate {
                        field: "v2".into(),
                        cmp: GateCmp::Ge,
                        value: 800,
                    },
                ],
            },
            table,
        }
    }

    /// The failing-pump program: watch the T1 fill slope over 90 messages
    /// while the pump runs above 99 % and L1 crosses the 5..8 l corridor.
    pub fn failing_pump(table: SeverityRanges, window_mode: WindowMode) -> Self {
        ValidatorSpec {
            scenario: FaultKind::FailingPump,
            monitored_field: "l1".into(),
            window: 90,
            window_mode,
            gate: GateSpec {
                predicates: vec![
                    GatePredicate {
                        field: "p1".into(),
                        cmp: GateCmp::Gt,
                        value: 990,
                    },
                    GatePredicate {
                        field: "l1".into(),
                        cmp: GateCmp::Gt,
                        value: 5000,
                    },
                    GatePredicate {
                        field: "l1".into(),
                        cmp: GateCmp::Lt,
                        value: 8000,
                    },
                ],
            },
            table,
        }
    }

    /// Placeholder ranges for specs built before calibration: boundaries
    /// at the key-space thirds, classes in ascending key order.
    pub fn uncalibrated_ranges() -> SeverityRanges {
        SeverityRanges {
            boundaries: vec![0x5555_5555, 0xAAAA_AAAA],
            classes: vec![Severity::Normal, Severity::Warning, Severity::Error],
        }
    }
}

/// Biased slope key from the window endpoints: `(newest - oldest) + 2^31`
/// in wrapping 32-bit arithmetic (subtract and add only).
pub fn slope(oldest: u32, newest: u32) -> u32 {
    newest.wrapping_sub(oldest).wrapping_add(SLOPE_BIAS)
}

/// Signed window slope recovered from a biased key.
pub fn signed_slope(key: u32) -> i64 {
    i64::from(key) - i64::from(SLOPE_BIAS)
}

/// Severity of the range containing `key`.
pub fn classify(key: u32, table: &RangeTable) -> Result<Severity, ValidatorError> {
    let action = table.lookup(key);
    u8::try_from(action)
        .ok()
        .and_then(|code| Severity::from_code(code).ok())
        .ok_or(ValidatorError::BadTableAction(action))
}

/// Lower a validator spec to a constrained pipeline program.
///
/// The program parses the message, pushes the monitored level into its
/// ring, evaluates the gate on instantaneous fields, computes the
/// endpoint-difference slope once the window qualifies, classifies it via
/// the range table, and appends the label (no-decision whenever the gate
/// is false or the window does not qualify). Passes the constraint audit
/// by construction.
pub fn build_program(spec: &ValidatorSpec) -> Result<PipelineProgram, ValidatorError> {
    spec.validate()?;
    let table = spec.table.to_range_table()?;
    let no_decision = u32::from(Severity::NoDecision.code());

    let mut stages = Vec::new();
    // History collection: push regardless of the gate so the window always
    // reflects true history; expose the post-push index for tumbling mode.
    stages.push(Stage {
        name: "collect".into(),
        instrs: vec![Instr::RingPush {
            register: "history".into(),
            value: Operand::Field(spec.monitored_field.clone()),
            index_dst: Some("wr_index".into()),
        }],
    });

    let mut gate_instrs = Vec::new();
    for (i, p) in spec.gate.predicates.iter().enumerate() {
        gate_instrs.push(Instr::Cmp {
            dst: format!("g{i}"),
            op: p.cmp.to_cmp_op(),
            a: Operand::Field(p.field.clone()),
            b: Operand::Const(p.value),
        });
    }
    gate_instrs.push(Instr::Set {
        dst: "gate_ok".into(),
        src: Operand::Var("g0".into()),
    });
    for i in 1..spec.gate.predicates.len() {
        gate_instrs.push(Instr::Alu {
            dst: "gate_ok".into(),
            kind: AluKind::And,
            a: Operand::Var("gate_ok".into()),
            b: Operand::Var(format!("g{i}")),
        });
    }
    stages.push(Stage {
        name: "gate".into(),
        instrs: gate_instrs,
    });

    let mut window_instrs = vec![Instr::RingWindow {
        register: "history".into(),
        oldest: "oldest".into(),
        newest: "newest".into(),
        filled: "filled".into(),
    }];
    match spec.window_mode {
        WindowMode::Sliding => window_instrs.push(Instr::Set {
            dst: "window_ok".into(),
            src: Operand::Var("filled".into()),
        }),
        WindowMode::Tumbling => {
            // The ring index just wrapped to zero exactly every n-th push.
            window_instrs.push(Instr::Cmp {
                dst: "wrapped".into(),
                op: CmpOp::Eq,
                a: Operand::Var("wr_index".into()),
                b: Operand::Const(0),
            });
            window_instrs.push(Instr::Alu {
                dst: "window_ok".into(),
                kind: AluKind::And,
                a: Operand::Var("filled".into()),
                b: Operand::Var("wrapped".into()),
            });
        }
    }
    stages.push(Stage {
        name: "window".into(),
        instrs: window_instrs,
    });

    stages.push(Stage {
        name: "slope".into(),
        instrs: vec![
            Instr::Alu {
                dst: "diff".into(),
                kind: AluKind::Sub,
                a: Operand::Var("newest".into()),
                b: Operand::Var("oldest".into()),
            },
            Instr::Alu {
                dst: "key".into(),
                kind: AluKind::Add,
                a: Operand::Var("diff".into()),
                b: Operand::Const(SLOPE_BIAS),
            },
        ],
    });

    stages.push(Stage {
        name: "classify".into(),
        instrs: vec![Instr::RangeLookup {
            table: "severity".into(),
            key: Operand::Var("key".into()),
            dst: "class".into(),
        }],
    });

    stages.push(Stage {
        name: "decide".into(),
        instrs: vec![
            Instr::Alu {
                dst: "decide_ok".into(),
                kind: AluKind::And,
                a: Operand::Var("gate_ok".into()),
                b: Operand::Var("window_ok".into()),
            },
            Instr::Set {
                dst: "sev".into(),
                src: Operand::Const(no_decision),
            },
            Instr::Set {
                dst: "key_out".into(),
                src: Operand::Const(0),
            },
            Instr::CondSet {
                cond: Operand::Var("decide_ok".into()),
                dst: "sev".into(),
                src: Operand::Var("class".into()),
            },
            Instr::CondSet {
                cond: Operand::Var("decide_ok".into()),
                dst: "key_out".into(),
                src: Operand::Var("key".into()),
            },
        ],
    });

    let program = PipelineProgram {
        parse: control_message_parse_spec(),
        registers: vec![RegisterSpec {
            name: "history".into(),
            capacity: spec.window,
        }],
        tables: vec![("severity".into(), table)],
        stages,
        egress: Egress::AppendLabel {
            severity: Operand::Var("sev".into()),
            scenario: Operand::Const(u32::from(spec.scenario.scenario_id())),
            slope_key: Operand::Var("key_out".into()),
        },
    };
    program.validate()?;
    Ok(program)
}

/// One scenario's validator instance: the built program plus its private
/// register file. Packet processing is strictly sequential per instance.
#[derive(Debug, Clone)]
pub struct CivicValidator {
    spec: ValidatorSpec,
    program: PipelineProgram,
    registers: RegisterFile,
    dropped_packets: u64,
}

impl CivicValidator {
    pub fn new(spec: ValidatorSpec) -> Result<Self, ValidatorError> {
        let program = build_program(&spec)?;
        let report = audit(&program);
        if !report.passed() {
            return Err(ValidatorError::Pipeline(PipelineError::ProgramRejected(
                report,
            )));
        }
        let registers = program.new_register_file();
        Ok(CivicValidator {
            spec,
            program,
            registers,
            dropped_packets: 0,
        })
    }

    pub fn spec(&self) -> &ValidatorSpec {
        &self.spec
    }

    pub fn program(&self) -> &PipelineProgram {
        &self.program
    }

    pub fn audit(&self) -> ConstraintReport {
        audit(&self.program)
    }

    pub fn dropped_packets(&self) -> u64 {
        self.dropped_packets
    }

    /// Process one packet: returns the forwarded bytes with exactly one
    /// label appended, or counts and reports a drop.
    pub fn on_packet(&mut self, bytes: &[u8]) -> Result<Vec<u8>, ValidatorError> {
        let outcome = execute(&self.program, bytes, &mut self.registers)?;
        match outcome.verdict {
            Verdict::Drop => {
                self.dropped_packets += 1;
                Err(ValidatorError::PacketDropped)
            }
            Verdict::Forward | Verdict::ForwardLabeled => Ok(outcome.output),
        }
    }
}
