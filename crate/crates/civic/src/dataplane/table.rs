//! Range-match tables: ordered, disjoint, half-open key ranges covering
//! the whole u32 key space, mapping to numeric actions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exclusive upper bound of the key space (2^32).
pub const KEY_SPACE_END: u64 = 1 << 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("range table must have at least one range")]
    Empty,
    #[error("range {index} is empty or inverted: [{lo}, {hi})")]
    EmptyRange { index: usize, lo: u32, hi: u64 },
    #[error("range {index} starts at {found}, expected {expected} (ranges must be sorted, disjoint, and gap-free)")]
    CoverageGap {
        index: usize,
        expected: u64,
        found: u64,
    },
    #[error("table does not cover the key space: first range starts at {0}")]
    MissingLowEnd(u64),
    #[error("table does not cover the key space: last range ends at {0}")]
    MissingHighEnd(u64),
    #[error("{boundaries} boundaries need {expected} actions, got {got}")]
    ActionCount {
        boundaries: usize,
        expected: usize,
        got: usize,
    },
    #[error("boundaries must be strictly ascending at position {0}")]
    UnsortedBoundaries(usize),
}

/// One half-open range `[lo, hi)` mapping to an action id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub lo: u32,
    /// Exclusive; `KEY_SPACE_END` for the topmost range.
    pub hi: u64,
    pub action: u32,
}

/// Ordered, disjoint, fully covering range-match table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeTable {
    entries: Vec<RangeEntry>,
    /// Returned on a miss. Unreachable once the coverage invariant holds,
    /// but every match-action table declares one.
    default_action: u32,
}

impl RangeTable {
    /// Build from explicit ranges, validating order, disjointness, and
    /// full coverage of `[0, 2^32)`.
    pub fn new(entries: Vec<RangeEntry>, default_action: u32) -> Result<Self, TableError> {
        if entries.is_empty() {
            return Err(TableError::Empty);
        }
        if entries[0].lo != 0 {
            return Err(TableError::MissingLowEnd(u64::from(entries[0].lo)));
        }
        let mut expected = 0u64;
        for (index, e) in entries.iter().enumerate() {
            if u64::from(e.lo) != expected {
                return Err(TableError::CoverageGap {
                    index,
                    expected,
                    found: u64::from(e.lo),
                });
            }
            if e.hi <= u64::from(e.lo) || e.hi > KEY_SPACE_END {
                return Err(TableError::EmptyRange {
                    index,
                    lo: e.lo,
                    hi: e.hi,
                });
            }
            expected = e.hi;
        }
        if expected != KEY_SPACE_END {
            return Err(TableError::MissingHighEnd(expected));
        }
        Ok(RangeTable {
            entries,
            default_action,
        })
    }

    /// Build from interior boundaries: `boundaries.len() + 1` actions, the
    /// i-th action owning `[boundary[i-1], boundary[i])` with implicit key
    /// space edges.
    pub fn from_boundaries(
        boundaries: &[u32],
        actions: &[u32],
        default_action: u32,
    ) -> Result<Self, TableError> {
        if actions.len() != boundaries.len() + 1 {
            return Err(TableError::ActionCount {
                boundaries: boundaries.len(),
                expected: boundaries.len() + 1,
                got: actions.len(),
            });
        }
        for (i, pair) in boundaries.windows(2).enumerate() {
            if pair[0] >= pair[1] {
                return Err(TableError::UnsortedBoundaries(i + 1));
            }
        }
        if boundaries.first() == Some(&0) {
            return Err(TableError::UnsortedBoundaries(0));
        }
        let mut entries = Vec::with_capacity(actions.len());
        let mut lo = 0u32;
        for (i, &action) in actions.iter().enumerate() {
            let hi = if i < boundaries.len() {
                u64::from(boundaries[i])
            } else {
                KEY_SPACE_END
            };
            entries.push(RangeEntry { lo, hi, action });
            if i < boundaries.len() {
                lo = boundaries[i];
            }
        }
        RangeTable::new(entries, default_action)
    }

    /// Action of the unique range containing `key`. A key exactly on a
    /// boundary belongs to the upper range.
    pub fn lookup(&self, key: u32) -> u32 {
        let idx = self
            .entries
            .partition_point(|e| u64::from(e.lo) <= u64::from(key));
        if idx == 0 {
            return self.default_action;
        }
        let entry = &self.entries[idx - 1];
        if u64::from(key) < entry.hi {
            entry.action
        } else {
            self.default_action
        }
    }

    pub fn entries(&self) -> &[RangeEntry] {
        &self.entries
    }

    pub fn default_action(&self) -> u32 {
        self.default_action
    }

    /// Interior boundaries (the `lo` of every range after the first).
    pub fn boundaries(&self) -> Vec<u32> {
        self.entries.iter().skip(1).map(|e| e.lo).collect()
    }
}
