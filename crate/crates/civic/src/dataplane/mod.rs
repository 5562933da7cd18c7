//! A small interpreter for match-action pipeline programs under
//! programmable-switch constraints.
//!
//! Programs are a single pass over fixed stages: fixed-offset header
//! parsing, stateful ring-buffer registers, range-match tables, and an ALU
//! restricted to add/subtract/compare/bitwise/shift-by-constant on 32-bit
//! words. General multiplication, division, modulo, loops, and floating
//! point are representable in the instruction set so the static auditor
//! has something to reject; [`execute`] refuses any program whose audit
//! fails.

mod ring;
mod table;

pub use ring::{EvictedSlot, RegisterPair, WindowView};
pub use table::{RangeEntry, RangeTable, TableError, KEY_SPACE_END};

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{self, CivicLabel, Severity};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("field {0} not declared in the parse spec")]
    UndeclaredField(String),
    #[error("register {0} not declared")]
    UndeclaredRegister(String),
    #[error("table {0} not declared")]
    UndeclaredTable(String),
    #[error("variable {0} read before any write")]
    UseBeforeDef(String),
    #[error("duplicate declaration of {0}")]
    DuplicateName(String),
    #[error("field {name} has unsupported width {width} (1, 2, 4, or 8 bytes)")]
    BadFieldWidth { name: String, width: usize },
    #[error("program rejected by constraint audit:\n{0}")]
    ProgramRejected(ConstraintReport),
    #[error("register file is missing register {0}")]
    MissingRegister(String),
    #[error("register {name} index {index} out of bounds (capacity {capacity})")]
    RegisterIndexFault {
        name: String,
        index: u32,
        capacity: usize,
    },
    #[error("forbidden operation reached the execution stage: {0}")]
    ForbiddenOpExecuted(String),
    #[error("label encoding failed: {0}")]
    Label(#[from] wire::CodecError),
}

/// One header field at a fixed offset, little-endian.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

/// Fixed-offset parse specification.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseSpec {
    pub fields: Vec<FieldSpec>,
}

impl ParseSpec {
    /// Minimum packet length that covers every declared field.
    pub fn min_len(&self) -> usize {
        self.fields
            .iter()
            .map(|f| f.offset + f.width)
            .max()
            .unwrap_or(0)
    }
}

/// Extract all declared fields as unsigned integers at their declared
/// widths. `None` when the buffer does not cover every field (the packet
/// is dropped).
pub fn parse(bytes: &[u8], spec: &ParseSpec) -> Option<HashMap<String, u64>> {
    if bytes.len() < spec.min_len() {
        return None;
    }
    let mut fields = HashMap::with_capacity(spec.fields.len());
    for f in &spec.fields {
        let raw = &bytes[f.offset..f.offset + f.width];
        let value = match f.width {
            1 => u64::from(raw[0]),
            2 => u64::from(u16::from_le_bytes(raw.try_into().unwrap())),
            4 => u64::from(u32::from_le_bytes(raw.try_into().unwrap())),
            8 => u64::from_le_bytes(raw.try_into().unwrap()),
            _ => return None,
        };
        fields.insert(f.name.clone(), value);
    }
    Some(fields)
}

/// Value source for an instruction operand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Const(u32),
    /// Metadata variable written earlier in the pass.
    Var(String),
    /// Parsed header field (truncated to 32 bits when used in the ALU).
    Field(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Const(c) => write!(f, "{c}"),
            Operand::Var(v) => write!(f, "${v}"),
            Operand::Field(name) => write!(f, "hdr.{name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn eval(self, a: u32, b: u32) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

/// ALU operation kinds. Wrapping 32-bit semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AluKind {
    Add,
    Sub,
    And,
    Or,
    Xor,
    /// Shift left; the shift amount must be a constant.
    Shl,
    /// Shift right; the shift amount must be a constant.
    Shr,
    /// General multiply: not available on the target, audit fails.
    Mul,
    /// Division: not available on the target, audit fails.
    Div,
    /// Modulo: not available on the target, audit fails.
    Mod,
    /// Floating-point add: not available on the target, audit fails.
    FloatAdd,
    /// Floating-point multiply: not available on the target, audit fails.
    FloatMul,
}

impl AluKind {
    fn name(self) -> &'static str {
        match self {
            AluKind::Add => "add",
            AluKind::Sub => "sub",
            AluKind::And => "and",
            AluKind::Or => "or",
            AluKind::Xor => "xor",
            AluKind::Shl => "shl",
            AluKind::Shr => "shr",
            AluKind::Mul => "mul",
            AluKind::Div => "div",
            AluKind::Mod => "mod",
            AluKind::FloatAdd => "fadd",
            AluKind::FloatMul => "fmul",
        }
    }

    fn forbidden(self) -> Option<&'static str> {
        match self {
            AluKind::Mul => Some("general multiply"),
            AluKind::Div => Some("division"),
            AluKind::Mod => Some("modulo"),
            AluKind::FloatAdd | AluKind::FloatMul => Some("floating-point arithmetic"),
            _ => None,
        }
    }
}

/// One pipeline instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instr {
    /// `dst = src`.
    Set { dst: String, src: Operand },
    /// `dst = a <kind> b`.
    Alu {
        dst: String,
        kind: AluKind,
        a: Operand,
        b: Operand,
    },
    /// `dst = (a <op> b) ? 1 : 0`.
    Cmp {
        dst: String,
        op: CmpOp,
        a: Operand,
        b: Operand,
    },
    /// Predicated move: `if cond != 0 { dst = src }`.
    CondSet {
        cond: Operand,
        dst: String,
        src: Operand,
    },
    /// Push a value into a ring register; optionally expose the post-push
    /// write index.
    RingPush {
        register: String,
        value: Operand,
        index_dst: Option<String>,
    },
    /// Read the ring window endpoints and fill flag into variables.
    RingWindow {
        register: String,
        oldest: String,
        newest: String,
        filled: String,
    },
    /// `dst = table[key]`.
    RangeLookup {
        table: String,
        key: Operand,
        dst: String,
    },
    /// Bounded loop: representable so the auditor can reject it; never
    /// executes.
    Loop { count: u32, body: Vec<Instr> },
}

/// A named group of instructions, evaluated in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub instrs: Vec<Instr>,
}

/// What happens to the packet after the stages ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Egress {
    /// Forward the packet unchanged.
    Forward,
    /// Append the 6-byte label trailer built from the given operands.
    AppendLabel {
        severity: Operand,
        scenario: Operand,
        slope_key: Operand,
    },
}

/// Ring register declaration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterSpec {
    pub name: String,
    pub capacity: usize,
}

/// A complete single-pass pipeline program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineProgram {
    pub parse: ParseSpec,
    pub registers: Vec<RegisterSpec>,
    pub tables: Vec<(String, RangeTable)>,
    pub stages: Vec<Stage>,
    pub egress: Egress,
}

impl PipelineProgram {
    /// Flattened instruction count, loop bodies included.
    pub fn instruction_count(&self) -> usize {
        fn count(instrs: &[Instr]) -> usize {
            instrs
                .iter()
                .map(|i| match i {
                    Instr::Loop { body, .. } => 1 + count(body),
                    _ => 1,
                })
                .sum()
        }
        self.stages.iter().map(|s| count(&s.instrs)).sum()
    }

    /// Static checks: no duplicate declarations, every referenced field,
    /// register, table, and variable is declared or written before use.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut fields = HashSet::new();
        for f in &self.parse.fields {
            if !matches!(f.width, 1 | 2 | 4 | 8) {
                return Err(PipelineError::BadFieldWidth {
                    name: f.name.clone(),
                    width: f.width,
                });
            }
            if !fields.insert(f.name.as_str()) {
                return Err(PipelineError::DuplicateName(f.name.clone()));
            }
        }
        let mut registers = HashSet::new();
        for r in &self.registers {
            if !registers.insert(r.name.as_str()) {
                return Err(PipelineError::DuplicateName(r.name.clone()));
            }
        }
        let mut tables = HashSet::new();
        for (name, _) in &self.tables {
            if !tables.insert(name.as_str()) {
                return Err(PipelineError::DuplicateName(name.clone()));
            }
        }

        let mut defined: HashSet<String> = HashSet::new();
        let check_operand = |op: &Operand, defined: &HashSet<String>| match op {
            Operand::Const(_) => Ok(()),
            Operand::Var(v) => {
                if defined.contains(v) {
                    Ok(())
                } else {
                    Err(PipelineError::UseBeforeDef(v.clone()))
                }
            }
            Operand::Field(f) => {
                if fields.contains(f.as_str()) {
                    Ok(())
                } else {
                    Err(PipelineError::UndeclaredField(f.clone()))
                }
            }
        };
        fn walk(
            instrs: &[Instr],
            defined: &mut HashSet<String>,
            registers: &HashSet<&str>,
            tables: &HashSet<&str>,
            check_operand: &impl Fn(&Operand, &HashSet<String>) -> Result<(), PipelineError>,
        ) -> Result<(), PipelineError> {
            for instr in instrs {
                match instr {
                    Instr::Set { dst, src } => {
                        check_operand(src, defined)?;
                        defined.insert(dst.clone());
                    }
                    Instr::Alu { dst, a, b, .. } | Instr::Cmp { dst, a, b, .. } => {
                        check_operand(a, defined)?;
                        check_operand(b, defined)?;
                        defined.insert(dst.clone());
                    }
                    Instr::CondSet { cond, dst, src } => {
                        check_operand(cond, defined)?;
                        check_operand(src, defined)?;
                        // dst must already exist: predication only
                        // overwrites.
                        if !defined.contains(dst) {
                            return Err(PipelineError::UseBeforeDef(dst.clone()));
                        }
                    }
                    Instr::RingPush {
                        register,
                        value,
                        index_dst,
                    } => {
                        if !registers.contains(register.as_str()) {
                            return Err(PipelineError::UndeclaredRegister(register.clone()));
                        }
                        check_operand(value, defined)?;
                        if let Some(dst) = index_dst {
                            defined.insert(dst.clone());
                        }
                    }
                    Instr::RingWindow {
                        register,
                        oldest,
                        newest,
                        filled,
                    } => {
                        if !registers.contains(register.as_str()) {
                            return Err(PipelineError::UndeclaredRegister(register.clone()));
                        }
                        defined.insert(oldest.clone());
                        defined.insert(newest.clone());
                        defined.insert(filled.clone());
                    }
                    Instr::RangeLookup { table, key, dst } => {
                        if !tables.contains(table.as_str()) {
                            return Err(PipelineError::UndeclaredTable(table.clone()));
                        }
                        check_operand(key, defined)?;
                        defined.insert(dst.clone());
                    }
                    Instr::Loop { body, .. } => {
                        walk(body, defined, registers, tables, check_operand)?;
                    }
                }
            }
            Ok(())
        }
        for stage in &self.stages {
            walk(
                &stage.instrs,
                &mut defined,
                &registers,
                &tables,
                &check_operand,
            )?;
        }
        match &self.egress {
            Egress::Forward => Ok(()),
            Egress::AppendLabel {
                severity,
                scenario,
                slope_key,
            } => {
                check_operand(severity, &defined)?;
                check_operand(scenario, &defined)?;
                check_operand(slope_key, &defined)
            }
        }
    }

    /// Freshly allocated zero-initialized registers for this program.
    pub fn new_register_file(&self) -> RegisterFile {
        RegisterFile {
            registers: self
                .registers
                .iter()
                .map(|r| (r.name.clone(), RegisterPair::new(r.capacity)))
                .collect(),
        }
    }
}

/// One finding of the constraint audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub stage: String,
    pub description: String,
    /// Why the operation is not available on the target, if it is not.
    pub violation: Option<String>,
}

/// Result of statically auditing a program against the target's compute
/// constraints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub entries: Vec<AuditEntry>,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.violation.is_none())
    }

    pub fn violations(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| e.violation.is_some())
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(
            f,
            "constraint audit: {verdict} ({} ops, {} violations)",
            self.entries.len(),
            self.violations().count()
        )?;
        for e in &self.entries {
            match &e.violation {
                Some(why) => writeln!(f, "  [{}] {} -- VIOLATION: {why}", e.stage, e.description)?,
                None => writeln!(f, "  [{}] {} -- ok", e.stage, e.description)?,
            }
        }
        Ok(())
    }
}

fn audit_instrs(stage: &str, instrs: &[Instr], entries: &mut Vec<AuditEntry>) {
    for instr in instrs {
        match instr {
            Instr::Set { dst, src } => entries.push(AuditEntry {
                stage: stage.to_string(),
                description: format!("set ${dst} = {src}"),
                violation: None,
            }),
            Instr::Alu { dst, kind, a, b } => {
                let mut violation = kind.forbidden().map(str::to_string);
                if violation.is_none()
                    && matches!(kind, AluKind::Shl | AluKind::Shr)
                    && !matches!(b, Operand::Const(_))
                {
                    violation = Some("shift amount must be a constant".to_string());
                }
                entries.push(AuditEntry {
                    stage: stage.to_string(),
                    description: format!("{} ${dst} = {a}, {b}", kind.name()),
                    violation,
                });
            }
            Instr::Cmp { dst, op, a, b } => entries.push(AuditEntry {
                stage: stage.to_string(),
                description: format!("cmp ${dst} = {a} {} {b}", op.symbol()),
                violation: None,
            }),
            Instr::CondSet { cond, dst, src } => entries.push(AuditEntry {
                stage: stage.to_string(),
                description: format!("condset if {cond}: ${dst} = {src}"),
                violation: None,
            }),
            Instr::RingPush {
                register, value, ..
            } => entries.push(AuditEntry {
                stage: stage.to_string(),
                description: format!("ring_push {register} <- {value}"),
                violation: None,
            }),
            Instr::RingWindow { register, .. } => entries.push(AuditEntry {
                stage: stage.to_string(),
                description: format!("ring_window {register}"),
                violation: None,
            }),
            Instr::RangeLookup { table, key, dst } => entries.push(AuditEntry {
                stage: stage.to_string(),
                description: format!("range_lookup ${dst} = {table}[{key}]"),
                violation: None,
            }),
            Instr::Loop { count, body } => {
                entries.push(AuditEntry {
                    stage: stage.to_string(),
                    description: format!("loop x{count} ({} instrs)", body.len()),
                    violation: Some("loops are not available in a single-pass pipeline".into()),
                });
                audit_instrs(stage, body, entries);
            }
        }
    }
}

/// Statically audit every operation of the program against the target
/// constraints: add/sub/compare/bitwise and shift-by-constant are allowed,
/// multiply/divide/modulo/loops/floating point are not.
pub fn audit(program: &PipelineProgram) -> ConstraintReport {
    let mut entries = Vec::new();
    for stage in &program.stages {
        audit_instrs(&stage.name, &stage.instrs, &mut entries);
    }
    ConstraintReport { entries }
}

/// The stateful registers owned by one pipeline instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterFile {
    registers: HashMap<String, RegisterPair>,
}

impl RegisterFile {
    pub fn get(&self, name: &str) -> Option<&RegisterPair> {
        self.registers.get(name)
    }

    fn get_mut(&mut self, name: &str) -> Result<&mut RegisterPair, PipelineError> {
        self.registers
            .get_mut(name)
            .ok_or_else(|| PipelineError::MissingRegister(name.to_string()))
    }
}

/// Per-packet outcome of a pipeline pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    ForwardLabeled,
    Drop,
}

/// Output of [`execute`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub verdict: Verdict,
    /// Forwarded bytes; empty on drop.
    pub output: Vec<u8>,
    /// Instructions evaluated in this pass, bounded by program length.
    pub executed_ops: usize,
}

/// Run one packet through the program, mutating the register file in stage
/// order. Programs that fail validation or the constraint audit are
/// refused.
pub fn execute(
    program: &PipelineProgram,
    packet: &[u8],
    registers: &mut RegisterFile,
) -> Result<ExecOutcome, PipelineError> {
    program.validate()?;
    let report = audit(program);
    if !report.passed() {
        return Err(PipelineError::ProgramRejected(report));
    }

    let Some(fields) = parse(packet, &program.parse) else {
        return Ok(ExecOutcome {
            verdict: Verdict::Drop,
            output: Vec::new(),
            executed_ops: 0,
        });
    };

    let tables: HashMap<&str, &RangeTable> = program
        .tables
        .iter()
        .map(|(name, table)| (name.as_str(), table))
        .collect();
    let mut vars: HashMap<String, u32> = HashMap::new();
    let mut executed_ops = 0usize;

    let read = |op: &Operand, vars: &HashMap<String, u32>| -> Result<u32, PipelineError> {
        match op {
            Operand::Const(c) => Ok(*c),
            Operand::Var(v) => vars
                .get(v)
                .copied()
                .ok_or_else(|| PipelineError::UseBeforeDef(v.clone())),
            // Fields wider than 32 bits are truncated like any register
            // write on the target.
            Operand::Field(f) => fields
                .get(f)
                .map(|v| *v as u32)
                .ok_or_else(|| PipelineError::UndeclaredField(f.clone())),
        }
    };

    for stage in &program.stages {
        for instr in &stage.instrs {
            executed_ops += 1;
            match instr {
                Instr::Set { dst, src } => {
                    let v = read(src, &vars)?;
                    vars.insert(dst.clone(), v);
                }
                Instr::Alu { dst, kind, a, b } => {
                    let x = read(a, &vars)?;
                    let y = read(b, &vars)?;
                    let value = match kind {
                        AluKind::Add => x.wrapping_add(y),
                        AluKind::Sub => x.wrapping_sub(y),
                        AluKind::And => x & y,
                        AluKind::Or => x | y,
                        AluKind::Xor => x ^ y,
                        AluKind::Shl => x.wrapping_shl(y),
                        AluKind::Shr => x.wrapping_shr(y),
                        forbidden => {
                            return Err(PipelineError::ForbiddenOpExecuted(
                                forbidden.name().to_string(),
                            ))
                        }
                    };
                    vars.insert(dst.clone(), value);
                }
                Instr::Cmp { dst, op, a, b } => {
                    let x = read(a, &vars)?;
                    let y = read(b, &vars)?;
                    vars.insert(dst.clone(), u32::from(op.eval(x, y)));
                }
                Instr::CondSet { cond, dst, src } => {
                    if read(cond, &vars)? != 0 {
                        let v = read(src, &vars)?;
                        vars.insert(dst.clone(), v);
                    }
                }
                Instr::RingPush {
                    register,
                    value,
                    index_dst,
                } => {
                    let v = read(value, &vars)?;
                    let ring = registers.get_mut(register)?;
                    ring.push(v);
                    if let Some(dst) = index_dst {
                        vars.insert(dst.clone(), ring.index());
                    }
                }
                Instr::RingWindow {
                    register,
                    oldest,
                    newest,
                    filled,
                } => {
                    let ring = registers.get_mut(register)?;
                    let w = ring.window();
                    vars.insert(oldest.clone(), w.oldest);
                    vars.insert(newest.clone(), w.newest);
                    vars.insert(filled.clone(), u32::from(w.filled));
                }
                Instr::RangeLookup { table, key, dst } => {
                    let k = read(key, &vars)?;
                    let t = tables
                        .get(table.as_str())
                        .ok_or_else(|| PipelineError::UndeclaredTable(table.clone()))?;
                    vars.insert(dst.clone(), t.lookup(k));
                }
                Instr::Loop { .. } => {
                    return Err(PipelineError::ForbiddenOpExecuted("loop".to_string()))
                }
            }
        }
    }

    match &program.egress {
        Egress::Forward => Ok(ExecOutcome {
            verdict: Verdict::Forward,
            output: packet.to_vec(),
            executed_ops,
        }),
        Egress::AppendLabel {
            severity,
            scenario,
            slope_key,
        } => {
            let severity_code = read(severity, &vars)? as u8;
            let label = CivicLabel {
                severity: Severity::from_code(severity_code)?,
                scenario: read(scenario, &vars)? as u8,
                window_slope_biased: read(slope_key, &vars)?,
            };
            let output = wire::append_label(packet, label)?;
            Ok(ExecOutcome {
                verdict: Verdict::ForwardLabeled,
                output,
                executed_ops,
            })
        }
    }
}
