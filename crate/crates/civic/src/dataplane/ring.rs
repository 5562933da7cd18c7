//! Ring buffers built from a register pair, the way switch pipelines keep
//! value histories: one register holds the write index, a second register
//! array holds the data.

use serde::{Deserialize, Serialize};

/// Metadata about the slot a push overwrote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvictedSlot {
    pub slot: u32,
    pub previous_value: u32,
}

/// Oldest/newest view over the stored window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowView {
    pub oldest: u32,
    pub newest: u32,
    /// True once at least `capacity` values have been pushed.
    pub filled: bool,
}

/// Index register plus data register array of fixed capacity `n`. After
/// `k >= n` pushes the data array holds exactly the last `n` values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterPair {
    index: u32,
    data: Vec<u32>,
    pushes: u64,
}

impl RegisterPair {
    /// A ring of capacity `n >= 1`, zero-initialized like hardware
    /// registers.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "ring capacity must be at least 1");
        RegisterPair {
            index: 0,
            data: vec![0; capacity],
            pushes: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.data.len()
    }

    /// Total pushes so far (saturating far beyond any run length).
    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    /// Current write index, i.e. the slot the next push lands in.
    pub fn index(&self) -> u32 {
        self.index
    }

    /// Store `value` at the current index and advance modulo capacity.
    pub fn push(&mut self, value: u32) -> EvictedSlot {
        let slot = self.index;
        let previous_value = self.data[slot as usize];
        self.data[slot as usize] = value;
        self.index = (self.index + 1) % self.data.len() as u32;
        self.pushes = self.pushes.saturating_add(1);
        EvictedSlot {
            slot,
            previous_value,
        }
    }

    /// Oldest and newest stored values; correct across wraparound. Before
    /// any push both read as zero and `filled` is false.
    pub fn window(&self) -> WindowView {
        let n = self.data.len() as u64;
        if self.pushes == 0 {
            return WindowView {
                oldest: 0,
                newest: 0,
                filled: false,
            };
        }
        if self.pushes >= n {
            let newest_slot = (self.index + self.data.len() as u32 - 1) % self.data.len() as u32;
            WindowView {
                oldest: self.data[self.index as usize],
                newest: self.data[newest_slot as usize],
                filled: true,
            }
        } else {
            WindowView {
                oldest: self.data[0],
                newest: self.data[self.pushes as usize - 1],
                filled: false,
            }
        }
    }

    /// Stored values in logical order, oldest first.
    pub fn snapshot(&self) -> Vec<u32> {
        if self.pushes >= self.data.len() as u64 {
            let split = self.index as usize;
            let mut out = Vec::with_capacity(self.data.len());
            out.extend_from_slice(&self.data[split..]);
            out.extend_from_slice(&self.data[..split]);
            out
        } else {
            self.data[..self.pushes as usize].to_vec()
        }
    }

    /// Raw data register contents in slot order (for display/debug).
    pub fn raw_data(&self) -> &[u32] {
        &self.data
    }
}
