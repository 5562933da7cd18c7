//! Unconstrained host-side twin of the pipeline validator.
//!
//! Implements the same decision logic with ordinary host code: a deque
//! window, signed integer arithmetic, and a linear scan over the range
//! table. Used as the independent oracle the constrained pipeline is
//! checked against, label for label. Both sides compute the slope as the
//! window endpoint difference.

use std::collections::VecDeque;

use crate::dataplane::RangeTable;
use crate::validator::{ValidatorError, ValidatorSpec, SLOPE_BIAS};
use crate::wire::{self, CivicLabel, ControlMessage, Severity};

use super::{message_field_u32, WindowMode};

/// Reference decision engine for one scenario.
#[derive(Debug, Clone)]
pub struct ReferenceValidator {
    spec: ValidatorSpec,
    table: RangeTable,
    window: VecDeque<u32>,
    pushes: u64,
    dropped_packets: u64,
}

impl ReferenceValidator {
    pub fn new(spec: ValidatorSpec) -> Result<Self, ValidatorError> {
        spec.validate()?;
        let table = spec.table.to_range_table()?;
        let capacity = spec.window;
        Ok(ReferenceValidator {
            spec,
            table,
            window: VecDeque::with_capacity(capacity),
            pushes: 0,
            dropped_packets: 0,
        })
    }

    pub fn dropped_packets(&self) -> u64 {
        self.dropped_packets
    }

    fn scan_table(&self, key: u32) -> Severity {
        for entry in self.table.entries() {
            if u64::from(entry.lo) <= u64::from(key) && u64::from(key) < entry.hi {
                return Severity::from_code(entry.action as u8)
                    .expect("validated table actions are severity codes");
            }
        }
        Severity::NoDecision
    }

    /// Label one decoded message.
    pub fn label_for(&mut self, msg: &ControlMessage) -> Result<CivicLabel, ValidatorError> {
        let level = message_field_u32(msg, &self.spec.monitored_field)
            .ok_or_else(|| ValidatorError::UnknownField(self.spec.monitored_field.clone()))?;
        self.window.push_back(level);
        if self.window.len() > self.spec.window {
            self.window.pop_front();
        }
        self.pushes += 1;

        let gate_ok = self
            .spec
            .gate
            .eval(msg)
            .ok_or_else(|| ValidatorError::UnknownField("gate field".into()))?;
        let filled = self.pushes >= self.spec.window as u64;
        let window_ok = match self.spec.window_mode {
            WindowMode::Sliding => filled,
            WindowMode::Tumbling => filled && self.pushes.is_multiple_of(self.spec.window as u64),
        };

        if !(gate_ok && window_ok) {
            return Ok(CivicLabel::no_decision(self.spec.scenario.scenario_id()));
        }
        let oldest = i64::from(*self.window.front().unwrap());
        let newest = i64::from(*self.window.back().unwrap());
        let key = (newest - oldest + i64::from(SLOPE_BIAS)) as u32;
        Ok(CivicLabel {
            severity: self.scan_table(key),
            scenario: self.spec.scenario.scenario_id(),
            window_slope_biased: key,
        })
    }

    /// Same surface as the pipeline validator: decode, decide, append the
    /// label trailer.
    pub fn on_packet(&mut self, bytes: &[u8]) -> Result<Vec<u8>, ValidatorError> {
        let msg = match ControlMessage::decode(bytes) {
            Ok(msg) => msg,
            Err(_) => {
                self.dropped_packets += 1;
                return Err(ValidatorError::PacketDropped);
            }
        };
        let label = self.label_for(&msg)?;
        Ok(wire::append_label(bytes, label)?)
    }
}
