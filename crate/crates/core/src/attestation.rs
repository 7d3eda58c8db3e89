//! HMAC-SHA256, proof of execution, and nonce-challenge remote attestation.
//!
//! The attestation tag is
//!
//! ```text
//! HMAC-SHA256(K, nonce[32] || er_min[2, BE] || er_max[2, BE] || exec_flag[1] || region bytes)
//! ```
//!
//! where `exec_flag` is `0x00` or `0x01`. For prover/verifier separation the
//! request and report travel as frames: a 4-byte big-endian length counting
//! every byte after it, a type byte (`0x01` request, `0x02` report), then the
//! fields in the order above.

use std::io::{self, Read, Write};

use serde::Serialize;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::detector::{AccessEvent, ViolationSet};
use crate::mem_model::{DeviceState, RegionKind, KEY_LEN};

const BLOCK_LEN: usize = 64;
const IPAD: u8 = 0x36;
const OPAD: u8 = 0x5c;

/// HMAC-SHA256 (RFC 2104) over `msg`. Keys longer than one block are hashed
/// first.
pub fn hmac_sha256(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut block_key = [0u8; BLOCK_LEN];
    if key.len() > BLOCK_LEN {
        block_key[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        block_key[..key.len()].copy_from_slice(key);
    }

    let mut inner = Sha256::new();
    inner.update(block_key.map(|b| b ^ IPAD));
    inner.update(msg);
    let inner_hash = inner.finalize();

    let mut outer = Sha256::new();
    outer.update(block_key.map(|b| b ^ OPAD));
    outer.update(inner_hash);
    outer.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttestError {
    #[error("bounds {start:#06x}..={end:#06x} are not inside a single valid region")]
    BadBounds { start: u16, end: u16 },
}

/// Proof-of-execution state for one executable region (ER).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ExecMetadata {
    pub er_min: u16,
    pub er_max: u16,
    pub exec_flag: bool,
    pub armed: bool,
    /// Set by the first breach of the current window.
    pub breached: bool,
}

impl ExecMetadata {
    fn in_er(&self, addr: u16) -> bool {
        self.er_min <= addr && addr <= self.er_max
    }
}

/// Arms a new window over `[er_min, er_max]`, which must lie in app RAM.
/// Any earlier proof is discarded.
pub fn pox_begin(state: &mut DeviceState, er_min: u16, er_max: u16) -> Result<(), AttestError> {
    let app = state.layout().region(RegionKind::AppRam);
    if er_min > er_max || !app.contains(er_min) || !app.contains(er_max) {
        return Err(AttestError::BadBounds {
            start: er_min,
            end: er_max,
        });
    }
    state.exec_meta = ExecMetadata {
        er_min,
        er_max,
        exec_flag: false,
        armed: true,
        breached: false,
    };
    Ok(())
}

/// Feeds one cycle to the tracker. Inside an armed window any violation,
/// interrupt, or `pc` outside the ER breaches the window for good. Outside a
/// window, a write into the ER revokes an earlier proof.
pub fn pox_observe(state: &mut DeviceState, event: &AccessEvent, violations: ViolationSet) {
    let meta = &mut state.exec_meta;
    if meta.armed {
        if !violations.is_empty() || event.irq || !meta.in_er(event.pc) {
            meta.breached = true;
            meta.exec_flag = false;
        }
    } else if meta.exec_flag && event.wen && meta.in_er(event.target_addr()) {
        meta.exec_flag = false;
    }
}

/// Closes the window; the flag is set only if it was never breached.
pub fn pox_end(state: &mut DeviceState) {
    let meta = &mut state.exec_meta;
    if meta.armed {
        meta.armed = false;
        meta.exec_flag = !meta.breached;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttestRequest {
    pub nonce: [u8; 32],
    pub region_start: u16,
    pub region_end: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttestReport {
    pub exec_flag: bool,
    pub er_min: u16,
    pub er_max: u16,
    pub tag: [u8; 32],
}

/// The exact byte string the tag is computed over.
pub fn encode_tag_input(
    nonce: &[u8; 32],
    er_min: u16,
    er_max: u16,
    exec_flag: bool,
    region: &[u8],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 2 + 2 + 1 + region.len());
    out.extend_from_slice(nonce);
    out.extend_from_slice(&er_min.to_be_bytes());
    out.extend_from_slice(&er_max.to_be_bytes());
    out.push(exec_flag as u8);
    out.extend_from_slice(region);
    out
}

/// Prover side: tags the requested region together with the current EXEC
/// state.
pub fn attest(state: &DeviceState, req: &AttestRequest) -> Result<AttestReport, AttestError> {
    let region =
        state
            .bytes_in(req.region_start, req.region_end)
            .ok_or(AttestError::BadBounds {
                start: req.region_start,
                end: req.region_end,
            })?;
    let meta = state.exec_meta();
    let input = encode_tag_input(&req.nonce, meta.er_min, meta.er_max, meta.exec_flag, region);
    Ok(AttestReport {
        exec_flag: meta.exec_flag,
        er_min: meta.er_min,
        er_max: meta.er_max,
        tag: hmac_sha256(&state.key(), &input),
    })
}

/// What the verifier demands of the EXEC flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerifierPolicy {
    /// Integrity only.
    #[default]
    AnyExec,
    /// Integrity and a completed proof of execution.
    RequireExec,
}

pub fn verify_report(
    key: &[u8; KEY_LEN],
    req: &AttestRequest,
    report: &AttestReport,
    expected_region: &[u8],
    policy: VerifierPolicy,
) -> bool {
    let input = encode_tag_input(
        &req.nonce,
        report.er_min,
        report.er_max,
        report.exec_flag,
        expected_region,
    );
    let tag_ok: bool = hmac_sha256(key, &input).ct_eq(&report.tag).into();
    tag_ok
        && match policy {
            VerifierPolicy::AnyExec => true,
            VerifierPolicy::RequireExec => report.exec_flag,
        }
}

pub const FRAME_REQUEST: u8 = 0x01;
pub const FRAME_REPORT: u8 = 0x02;
const REQUEST_BODY_LEN: usize = 32 + 2 + 2;
const REPORT_BODY_LEN: usize = 2 + 2 + 1 + 32;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("frame length {len} does not match type {kind:#04x}")]
    BadLength { kind: u8, len: u32 },
    #[error("invalid exec flag byte {0:#04x}")]
    BadFlag(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Request(AttestRequest),
    Report(AttestReport),
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let (kind, body) = match self {
            Frame::Request(r) => {
                let mut b = Vec::with_capacity(REQUEST_BODY_LEN);
                b.extend_from_slice(&r.nonce);
                b.extend_from_slice(&r.region_start.to_be_bytes());
                b.extend_from_slice(&r.region_end.to_be_bytes());
                (FRAME_REQUEST, b)
            }
            Frame::Report(r) => {
                let mut b = Vec::with_capacity(REPORT_BODY_LEN);
                b.extend_from_slice(&r.er_min.to_be_bytes());
                b.extend_from_slice(&r.er_max.to_be_bytes());
                b.push(r.exec_flag as u8);
                b.extend_from_slice(&r.tag);
                (FRAME_REPORT, b)
            }
        };
        let mut out = Vec::with_capacity(4 + 1 + body.len());
        out.extend_from_slice(&(1 + body.len() as u32).to_be_bytes());
        out.push(kind);
        out.extend_from_slice(&body);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame, FrameError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_be_bytes(len);
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = kind[0];
        let expected = match kind {
            FRAME_REQUEST => REQUEST_BODY_LEN,
            FRAME_REPORT => REPORT_BODY_LEN,
            other => return Err(FrameError::UnknownType(other)),
        };
        if len as usize != 1 + expected {
            return Err(FrameError::BadLength { kind, len });
        }
        let mut body = vec![0u8; expected];
        r.read_exact(&mut body)?;

        let be16 = |b: &[u8]| u16::from_be_bytes([b[0], b[1]]);
        Ok(match kind {
            FRAME_REQUEST => {
                let mut nonce = [0u8; 32];
                nonce.copy_from_slice(&body[..32]);
                Frame::Request(AttestRequest {
                    nonce,
                    region_start: be16(&body[32..34]),
                    region_end: be16(&body[34..36]),
                })
            }
            _ => {
                let exec_flag = match body[4] {
                    0 => false,
                    1 => true,
                    b => return Err(FrameError::BadFlag(b)),
                };
                let mut tag = [0u8; 32];
                tag.copy_from_slice(&body[5..]);
                Frame::Report(AttestReport {
                    er_min: be16(&body[0..2]),
                    er_max: be16(&body[2..4]),
                    exec_flag,
                    tag,
                })
            }
        })
    }
}

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Attest(#[from] AttestError),
    #[error("unexpected frame type from peer")]
    UnexpectedFrame,
}

/// Prover endpoint: reads one request frame, answers with one report frame.
pub fn serve_one<R: Read, W: Write>(
    state: &DeviceState,
    input: &mut R,
    output: &mut W,
) -> Result<AttestReport, ExchangeError> {
    let Frame::Request(req) = Frame::read_from(input)? else {
        return Err(ExchangeError::UnexpectedFrame);
    };
    let report = attest(state, &req)?;
    Frame::Report(report)
        .write_to(output)
        .map_err(FrameError::from)?;
    Ok(report)
}

/// Full challenge/response over in-memory byte streams.
pub fn loopback_exchange(
    prover: &DeviceState,
    req: &AttestRequest,
) -> Result<AttestReport, ExchangeError> {
    let request_bytes = Frame::Request(*req).encode();
    let mut reply = Vec::new();
    serve_one(prover, &mut request_bytes.as_slice(), &mut reply)?;
    match Frame::read_from(&mut reply.as_slice())? {
        Frame::Report(r) => Ok(r),
        Frame::Request(_) => Err(ExchangeError::UnexpectedFrame),
    }
}
