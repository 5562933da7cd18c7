//! Binary layout of periodic control messages, the severity label trailer,
//! and trace-file persistence.
//!
//! A control message is a fixed 34-byte little-endian record:
//!
//! ```text
//! offset  width  field
//!      0      4  seq            (u32, monotonically increasing per run)
//!      4      8  timestamp_us   (u64)
//!     12      4  l1_ml          (u32, tank 1 volume in milliliters)
//!     16      4  l2_ml
//!     20      4  l3_ml
//!     24      4  l4_ml
//!     28      2  p1_permille    (u16, pump speed, 0..=1000)
//!     30      2  v1_permille    (u16, valve 1 opening, 0..=1000)
//!     32      2  v2_permille    (u16, valve 2 opening, 0..=1000)
//! ```
//!
//! The validator appends a 6-byte trailer (`severity | scenario |
//! window_slope_biased` as `u8 u8 u32le`) and leaves the base offsets
//! untouched, so downstream parsers keep working on labeled packets. A
//! labeled packet with no decision carries severity `0xFF` and a zero slope
//! key.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Encoded length of a base control message.
pub const MESSAGE_LEN: usize = 34;
/// Encoded length of the label trailer.
pub const LABEL_LEN: usize = 6;

/// Byte offsets of the message fields, shared with the data-plane parser.
pub mod offsets {
    pub const SEQ: usize = 0;
    pub const TIMESTAMP: usize = 4;
    pub const L1: usize = 12;
    pub const L2: usize = 16;
    pub const L3: usize = 20;
    pub const L4: usize = 24;
    pub const P1: usize = 28;
    pub const V1: usize = 30;
    pub const V2: usize = 32;
}

/// Codec failures for single messages.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("message too short: got {got} bytes, need {need}")]
    ShortBuffer { got: usize, need: usize },
    #[error("{field} out of range: {value} permille exceeds 1000")]
    PermilleRange { field: &'static str, value: u16 },
    #[error("buffer already carries a label trailer ({len} bytes)")]
    AlreadyLabeled { len: usize },
    #[error("expected a labeled packet of {expected} bytes, got {got}")]
    NotLabeled { expected: usize, got: usize },
    #[error("unknown severity code {0}")]
    UnknownSeverity(u8),
}

/// Four-way validity verdict carried in the label trailer.
///
/// `Normal`, `Warning`, and `Error` are also used as ground-truth fault
/// classes; `NoDecision` only ever appears as a validator output (gate
/// false or window unfilled).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Normal,
    Warning,
    Error,
    NoDecision,
}

impl Severity {
    /// The three decidable classes, in ascending severity.
    pub const CLASSES: [Severity; 3] = [Severity::Normal, Severity::Warning, Severity::Error];

    pub fn code(self) -> u8 {
        match self {
            Severity::Normal => 0,
            Severity::Warning => 1,
            Severity::Error => 2,
            Severity::NoDecision => 255,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, CodecError> {
        match code {
            0 => Ok(Severity::Normal),
            1 => Ok(Severity::Warning),
            2 => Ok(Severity::Error),
            255 => Ok(Severity::NoDecision),
            other => Err(CodecError::UnknownSeverity(other)),
        }
    }

    pub fn is_decision(self) -> bool {
        self != Severity::NoDecision
    }

    /// Index into per-class arrays; `None` for `NoDecision`.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Severity::Normal => Some(0),
            Severity::Warning => Some(1),
            Severity::Error => Some(2),
            Severity::NoDecision => None,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Severity::Normal => "normal",
            Severity::Warning => "warning",
            Severity::Error => "error",
            Severity::NoDecision => "no-decision",
        };
        f.write_str(s)
    }
}

/// One periodic sensor/actuator snapshot as sent from the plant gateway to
/// the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub seq: u32,
    pub timestamp_us: u64,
    /// Tank volumes in milliliters, ordered L1..L4.
    pub levels_ml: [u32; 4],
    pub p1_permille: u16,
    pub v1_permille: u16,
    pub v2_permille: u16,
}

impl ControlMessage {
    fn check_permille(&self) -> Result<(), CodecError> {
        for (field, value) in [
            ("p1", self.p1_permille),
            ("v1", self.v1_permille),
            ("v2", self.v2_permille),
        ] {
            if value > 1000 {
                return Err(CodecError::PermilleRange { field, value });
            }
        }
        Ok(())
    }

    /// Encode into the fixed 34-byte layout.
    pub fn encode(&self) -> Result<[u8; MESSAGE_LEN], CodecError> {
        self.check_permille()?;
        let mut buf = [0u8; MESSAGE_LEN];
        buf[offsets::SEQ..offsets::SEQ + 4].copy_from_slice(&self.seq.to_le_bytes());
        buf[offsets::TIMESTAMP..offsets::TIMESTAMP + 8]
            .copy_from_slice(&self.timestamp_us.to_le_bytes());
        for (i, level) in self.levels_ml.iter().enumerate() {
            let off = offsets::L1 + 4 * i;
            buf[off..off + 4].copy_from_slice(&level.to_le_bytes());
        }
        buf[offsets::P1..offsets::P1 + 2].copy_from_slice(&self.p1_permille.to_le_bytes());
        buf[offsets::V1..offsets::V1 + 2].copy_from_slice(&self.v1_permille.to_le_bytes());
        buf[offsets::V2..offsets::V2 + 2].copy_from_slice(&self.v2_permille.to_le_bytes());
        Ok(buf)
    }

    /// Decode from a buffer of at least 34 bytes; trailing bytes (the label
    /// region) are ignored.
    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < MESSAGE_LEN {
            return Err(CodecError::ShortBuffer {
                got: bytes.len(),
                need: MESSAGE_LEN,
            });
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let u16_at = |off: usize| u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap());
        let msg = ControlMessage {
            seq: u32_at(offsets::SEQ),
            timestamp_us: u64::from_le_bytes(
                bytes[offsets::TIMESTAMP..offsets::TIMESTAMP + 8]
                    .try_into()
                    .unwrap(),
            ),
            levels_ml: [
                u32_at(offsets::L1),
                u32_at(offsets::L2),
                u32_at(offsets::L3),
                u32_at(offsets::L4),
            ],
            p1_permille: u16_at(offsets::P1),
            v1_permille: u16_at(offsets::V1),
            v2_permille: u16_at(offsets::V2),
        };
        msg.check_permille()?;
        Ok(msg)
    }
}

/// Validity label appended by the validator to outgoing packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CivicLabel {
    pub severity: Severity,
    /// Scenario id of the program that produced the label.
    pub scenario: u8,
    /// Biased slope key the decision was made on; 0 when no decision.
    pub window_slope_biased: u32,
}

impl CivicLabel {
    pub fn no_decision(scenario: u8) -> Self {
        CivicLabel {
            severity: Severity::NoDecision,
            scenario,
            window_slope_biased: 0,
        }
    }

    pub fn encode(&self) -> [u8; LABEL_LEN] {
        let mut buf = [0u8; LABEL_LEN];
        buf[0] = self.severity.code();
        buf[1] = self.scenario;
        buf[2..6].copy_from_slice(&self.window_slope_biased.to_le_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < LABEL_LEN {
            return Err(CodecError::ShortBuffer {
                got: bytes.len(),
                need: LABEL_LEN,
            });
        }
        Ok(CivicLabel {
            severity: Severity::from_code(bytes[0])?,
            scenario: bytes[1],
            window_slope_biased: u32::from_le_bytes(bytes[2..6].try_into().unwrap()),
        })
    }
}

/// Append the 6-byte label trailer to an unlabeled base message.
///
/// The original 34 bytes are left unchanged. Appending to a buffer that is
/// not exactly one base message (e.g. already labeled) is an error.
pub fn append_label(bytes: &[u8], label: CivicLabel) -> Result<Vec<u8>, CodecError> {
    if bytes.len() < MESSAGE_LEN {
        return Err(CodecError::ShortBuffer {
            got: bytes.len(),
            need: MESSAGE_LEN,
        });
    }
    if bytes.len() > MESSAGE_LEN {
        return Err(CodecError::AlreadyLabeled { len: bytes.len() });
    }
    let mut out = Vec::with_capacity(MESSAGE_LEN + LABEL_LEN);
    out.extend_from_slice(bytes);
    out.extend_from_slice(&label.encode());
    Ok(out)
}

/// Split a labeled packet back into its base message and label.
pub fn strip_label(bytes: &[u8]) -> Result<(ControlMessage, CivicLabel), CodecError> {
    if bytes.len() != MESSAGE_LEN + LABEL_LEN {
        return Err(CodecError::NotLabeled {
            expected: MESSAGE_LEN + LABEL_LEN,
            got: bytes.len(),
        });
    }
    let msg = ControlMessage::decode(&bytes[..MESSAGE_LEN])?;
    let label = CivicLabel::decode(&bytes[MESSAGE_LEN..])?;
    Ok((msg, label))
}

/// FNV-1a 64-bit hash, used to fingerprint run configurations in trace
/// headers. Stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// One replayed message with its run ground truth and, once replayed, the
/// validator's label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub msg: ControlMessage,
    pub ground_truth: Severity,
    pub label: Option<CivicLabel>,
}

/// Per-run metadata stored in the trace file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: u8,
    /// Ground-truth severity of the whole run.
    pub severity: Severity,
    pub config_hash: u64,
    pub seed: u64,
}

/// Trace file failures.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad trace magic {found:02x?}, expected {expected:02x?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported trace version {0}, expected {TRACE_VERSION}")]
    UnsupportedVersion(u16),
    #[error("truncated trace file: expected {expected} records, read {got}")]
    Truncated { expected: u32, got: u32 },
    #[error("record {index} ground truth {found} differs from header {header}")]
    InconsistentGroundTruth {
        index: usize,
        found: Severity,
        header: Severity,
    },
    #[error("codec error in record {index}: {source}")]
    Codec {
        index: usize,
        #[source]
        source: CodecError,
    },
}

const TRACE_MAGIC: [u8; 4] = *b"CVTR";
/// Trace file format version.
pub const TRACE_VERSION: u16 = 1;
const RECORD_LEN: usize = MESSAGE_LEN + 1 + 1 + LABEL_LEN;

/// Write a trace file: 28-byte header followed by fixed 42-byte records.
///
/// Every record must carry the header's ground-truth severity; mixed-run
/// files are rejected.
pub fn write_trace(
    path: &Path,
    header: &TraceHeader,
    records: &[TraceRecord],
) -> Result<(), TraceError> {
    for (index, rec) in records.iter().enumerate() {
        if rec.ground_truth != header.severity {
            return Err(TraceError::InconsistentGroundTruth {
                index,
                found: rec.ground_truth,
                header: header.severity,
            });
        }
    }
    let mut buf = Vec::with_capacity(28 + records.len() * RECORD_LEN);
    buf.extend_from_slice(&TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.push(header.scenario);
    buf.push(header.severity.code());
    buf.extend_from_slice(&header.config_hash.to_le_bytes());
    buf.extend_from_slice(&header.seed.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (index, rec) in records.iter().enumerate() {
        let encoded = rec
            .msg
            .encode()
            .map_err(|source| TraceError::Codec { index, source })?;
        buf.extend_from_slice(&encoded);
        buf.push(rec.ground_truth.code());
        match rec.label {
            Some(label) => {
                buf.push(1);
                buf.extend_from_slice(&label.encode());
            }
            None => {
                buf.push(0);
                buf.extend_from_slice(&[0u8; LABEL_LEN]);
            }
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a trace file back; exact inverse of [`write_trace`].
pub fn read_trace(path: &Path) -> Result<(TraceHeader, Vec<TraceRecord>), TraceError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 28 {
        return Err(TraceError::Truncated {
            expected: 0,
            got: 0,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != TRACE_MAGIC {
        return Err(TraceError::BadMagic {
            found: magic,
            expected: TRACE_MAGIC,
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != TRACE_VERSION {
        return Err(TraceError::UnsupportedVersion(version));
    }
    let severity =
        Severity::from_code(bytes[7]).map_err(|source| TraceError::Codec { index: 0, source })?;
    let header = TraceHeader {
        scenario: bytes[6],
        severity,
        config_hash: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        seed: u64::from_le_bytes(bytes[16..24].try_into().unwrap()),
    };
    let count = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
    let body = &bytes[28..];
    if body.len() != count as usize * RECORD_LEN {
        return Err(TraceError::Truncated {
            expected: count,
            got: (body.len() / RECORD_LEN) as u32,
        });
    }
    let mut records = Vec::with_capacity(count as usize);
    for index in 0..count as usize {
        let rec = &body[index * RECORD_LEN..(index + 1) * RECORD_LEN];
        let msg = ControlMessage::decode(&rec[..MESSAGE_LEN])
            .map_err(|source| TraceError::Codec { index, source })?;
        let ground_truth = Severity::from_code(rec[MESSAGE_LEN])
            .map_err(|source| TraceError::Codec { index, source })?;
        if ground_truth != header.severity {
            return Err(TraceError::InconsistentGroundTruth {
                index,
                found: ground_truth,
                header: header.severity,
            });
        }
        let label = if rec[MESSAGE_LEN + 1] == 1 {
            Some(
                CivicLabel::decode(&rec[MESSAGE_LEN + 2..])
                    .map_err(|source| TraceError::Codec { index, source })?,
            )
        } else {
            None
        };
        records.push(TraceRecord {
            msg,
            ground_truth,
            label,
        });
    }
    Ok((header, records))
}
