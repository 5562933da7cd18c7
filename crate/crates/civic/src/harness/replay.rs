//! Trace replay through a validator instance, either in-process or over
//! a local UDP socket pair (sender -> switch -> capture), mirroring the
//! replay-machine/switch/capture-machine topology. Both modes produce
//! identical labels.

use std::net::UdpSocket;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::harness::{HarnessError, TraceRun};
use crate::validator::{CivicValidator, ValidatorError, ValidatorSpec};
use crate::wire::{strip_label, TraceRecord};

/// How replayed packets reach the validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplayMode {
    /// Call the validator directly, packet by packet.
    InProcess,
    /// Send encoded packets over a loopback UDP socket to a switch thread
    /// running the validator and capture the labeled packets it forwards.
    Socket {
        /// Pace packets at the recorded 100 ms intervals; disable for CI.
        paced: bool,
    },
}

/// Replay one run through a fresh validator built from `spec`; every
/// record comes back labeled. Replay is lossless by requirement: any
/// dropped or lost packet is an error.
pub fn replay_run(
    run: &TraceRun,
    spec: &ValidatorSpec,
    mode: ReplayMode,
) -> Result<TraceRun, HarnessError> {
    if spec.scenario.scenario_id() != run.header.scenario {
        return Err(HarnessError::ScenarioMismatch {
            validator: spec.scenario,
            trace: run.header.scenario,
        });
    }
    let records = match mode {
        ReplayMode::InProcess => replay_in_process(&run.records, spec)?,
        ReplayMode::Socket { paced } => replay_over_socket(&run.records, spec, paced)?,
    };
    Ok(TraceRun {
        id: run.id.clone(),
        header: run.header,
        records,
    })
}

fn labeled_record(
    original: &TraceRecord,
    labeled_bytes: &[u8],
    index: usize,
) -> Result<TraceRecord, HarnessError> {
    let (msg, label) = strip_label(labeled_bytes)?;
    debug_assert_eq!(msg, original.msg, "base message mutated at record {index}");
    Ok(TraceRecord {
        msg: original.msg,
        ground_truth: original.ground_truth,
        label: Some(label),
    })
}

fn replay_in_process(
    records: &[TraceRecord],
    spec: &ValidatorSpec,
) -> Result<Vec<TraceRecord>, HarnessError> {
    let mut validator = CivicValidator::new(spec.clone())?;
    let mut out = Vec::with_capacity(records.len());
    for (index, rec) in records.iter().enumerate() {
        let bytes = rec.msg.encode()?;
        let labeled = match validator.on_packet(&bytes) {
            Ok(labeled) => labeled,
            Err(ValidatorError::PacketDropped) => {
                return Err(HarnessError::DroppedInReplay { index })
            }
            Err(e) => return Err(e.into()),
        };
        out.push(labeled_record(rec, &labeled, index)?);
    }
    Ok(out)
}

const RECV_TIMEOUT: Duration = Duration::from_secs(2);
const PACING: Duration = Duration::from_millis(100);

fn replay_over_socket(
    records: &[TraceRecord],
    spec: &ValidatorSpec,
    paced: bool,
) -> Result<Vec<TraceRecord>, HarnessError> {
    let switch_socket = UdpSocket::bind(("127.0.0.1", 0))?;
    let switch_addr = switch_socket.local_addr()?;
    switch_socket.set_read_timeout(Some(Duration::from_secs(10)))?;
    let host_socket = UdpSocket::bind(("127.0.0.1", 0))?;
    host_socket.set_read_timeout(Some(RECV_TIMEOUT))?;

    let mut validator = CivicValidator::new(spec.clone())?;
    let switch = thread::spawn(move || -> Result<usize, String> {
        let mut buf = [0u8; 2048];
        let mut forwarded = 0usize;
        loop {
            let (len, peer) = switch_socket
                .recv_from(&mut buf)
                .map_err(|e| e.to_string())?;
            // Empty datagram from the sender shuts the switch down.
            if len == 0 {
                return Ok(forwarded);
            }
            match validator.on_packet(&buf[..len]) {
                Ok(labeled) => {
                    switch_socket
                        .send_to(&labeled, peer)
                        .map_err(|e| e.to_string())?;
                    forwarded += 1;
                }
                Err(_) => {
                    // Report the drop to the sender as an empty datagram.
                    switch_socket
                        .send_to(&[], peer)
                        .map_err(|e| e.to_string())?;
                }
            }
        }
    });

    // Lockstep send/capture keeps the replay lossless on loopback.
    let mut out = Vec::with_capacity(records.len());
    let mut buf = [0u8; 2048];
    let mut failure: Option<HarnessError> = None;
    for (index, rec) in records.iter().enumerate() {
        if paced && index > 0 {
            thread::sleep(PACING);
        }
        let bytes = match rec.msg.encode() {
            Ok(b) => b,
            Err(e) => {
                failure = Some(e.into());
                break;
            }
        };
        if let Err(e) = host_socket.send_to(&bytes, switch_addr) {
            failure = Some(e.into());
            break;
        }
        match host_socket.recv_from(&mut buf) {
            Ok((0, _)) => {
                failure = Some(HarnessError::DroppedInReplay { index });
                break;
            }
            Ok((len, _)) => match labeled_record(rec, &buf[..len], index) {
                Ok(record) => out.push(record),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            },
            Err(_) => {
                failure = Some(HarnessError::PacketLoss {
                    sent: index + 1,
                    captured: out.len(),
                });
                break;
            }
        }
    }

    // Always shut the switch down before returning.
    let _ = host_socket.send_to(&[], switch_addr);
    let forwarded = switch
        .join()
        .map_err(|_| HarnessError::Worker("switch thread panicked".into()))?
        .map_err(HarnessError::Worker)?;
    if let Some(e) = failure {
        return Err(e);
    }
    if forwarded != records.len() || out.len() != records.len() {
        return Err(HarnessError::PacketLoss {
            sent: records.len(),
            captured: out.len(),
        });
    }
    Ok(out)
}
