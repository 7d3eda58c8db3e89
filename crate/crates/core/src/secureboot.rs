//! First-stage boot: flash integrity check, onboard reflash from the golden
//! image, and re-verification.

use serde::Serialize;
use subtle::ConstantTimeEq;

use crate::attestation::hmac_sha256;
use crate::mem_model::{DeviceState, RegionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BootOutcome {
    VerifiedClean,
    RecoveredThenVerified,
    Unrecoverable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DigestPair {
    pub computed: [u8; 32],
    pub reference: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootReport {
    pub outcome: BootOutcome,
    pub attempts: u32,
    pub digests: Vec<DigestPair>,
}

impl BootReport {
    pub fn allows_normal_operation(&self) -> bool {
        self.outcome != BootOutcome::Unrecoverable
    }
}

/// HMAC-SHA256 of the flash region (lowest address first) under the device
/// key, and whether it matches the golden reference digest.
pub fn verify_flash(state: &DeviceState) -> (bool, [u8; 32]) {
    let digest = hmac_sha256(&state.key(), state.region_bytes(RegionKind::Flash));
    let ok = digest.ct_eq(&state.golden().reference_digest).into();
    (ok, digest)
}

/// Restores flash from the golden image and closes the resilience cycle:
/// detection bits D0..D9, the chip gate and the CPU-off latch are cleared.
pub fn reflash(state: &mut DeviceState) {
    let golden = state.golden().bytes.clone();
    state.flash_mut().copy_from_slice(&golden);
    state.clear_detections();
    state.chip_gate_active = false;
    state.cpu_halted = false;
    state.recovery_pending = false;
}

/// Verify, reflash once on failure, verify again.
pub fn fsbl_boot(state: &mut DeviceState) -> BootReport {
    let reference = state.golden().reference_digest;
    let mut digests = Vec::with_capacity(2);

    let (ok, computed) = verify_flash(state);
    digests.push(DigestPair {
        computed,
        reference,
    });
    if ok {
        return BootReport {
            outcome: BootOutcome::VerifiedClean,
            attempts: 1,
            digests,
        };
    }

    reflash(state);
    let (ok, computed) = verify_flash(state);
    digests.push(DigestPair {
        computed,
        reference,
    });
    BootReport {
        outcome: if ok {
            BootOutcome::RecoveredThenVerified
        } else {
            BootOutcome::Unrecoverable
        },
        attempts: 2,
        digests,
    }
}
