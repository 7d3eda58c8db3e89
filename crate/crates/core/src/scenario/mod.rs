//! Declarative scenarios and the deterministic runner.
//!
//! A scenario describes one device (layout, key, memory contents, golden
//! image), the prevention binding, an optional proof-of-execution window,
//! attestation challenges, and a cycle-stamped bus trace. [`run`] boots the
//! device, replays the trace and returns a [`RunReport`].

mod format;
pub mod oracle;
mod report;
mod runner;

use crate::attestation::AttestRequest;
use crate::detector::AccessEvent;
use crate::mem_model::{DeviceState, GoldenImage, MemError, MemoryLayout, KEY_LEN};
use crate::prevention::PreventionBinding;

pub use format::{parse_scenario, ScenarioError};
pub use oracle::classify_trace_naive;
pub use report::{
    ActionRow, AttestRecord, BootSummary, CycleRow, ExitClass, FinalState, MemoryEffect,
    RecoveryKind, RecoveryRecord, RunReport,
};
pub use runner::{run, Simulation};

/// One trace entry: the bus snapshot plus the byte driven on writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub event: AccessEvent,
    pub data: u8,
}

/// Proof-of-execution window: armed before the first event at or after
/// `begin_cycle`, closed after the last event at or before `end_cycle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoxWindow {
    pub begin_cycle: u64,
    pub end_cycle: u64,
    pub er_min: u16,
    pub er_max: u16,
}

/// Challenge answered once every event up to `cycle` has been processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledAttest {
    pub cycle: u64,
    pub request: AttestRequest,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: Option<String>,
    pub layout: MemoryLayout,
    pub key: [u8; KEY_LEN],
    pub golden: GoldenImage,
    /// Initial contents, `(address, bytes)`, loaded in order. These are also
    /// what the verifier expects to find.
    pub contents: Vec<(u16, Vec<u8>)>,
    /// Tampering applied on top of `contents` before power-on. Not part of
    /// the verifier's expected image.
    pub patches: Vec<(u16, Vec<u8>)>,
    pub binding: PreventionBinding,
    pub pox: Option<PoxWindow>,
    pub attest: Vec<ScheduledAttest>,
    pub trace: Vec<TraceEvent>,
}

impl Scenario {
    /// Default layout, flash equal to `golden_flash`, default binding, and
    /// nothing else.
    pub fn new(key: [u8; KEY_LEN], golden_flash: Vec<u8>) -> Self {
        Scenario {
            name: None,
            layout: MemoryLayout::default(),
            golden: GoldenImage::provision(&key, golden_flash),
            key,
            contents: Vec::new(),
            patches: Vec::new(),
            binding: PreventionBinding::default(),
            pox: None,
            attest: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn events(&self) -> Vec<AccessEvent> {
        self.trace.iter().map(|t| t.event).collect()
    }

    /// The device as the verifier believes it was provisioned.
    pub fn expected_device(&self) -> Result<DeviceState, MemError> {
        let mut dev = DeviceState::new(self.layout.clone(), self.key, self.golden.clone())?;
        for (addr, bytes) in &self.contents {
            dev.provision(*addr, bytes)?;
        }
        Ok(dev)
    }

    /// The device at power-on, tampering included.
    pub fn power_on_device(&self) -> Result<DeviceState, MemError> {
        let mut dev = self.expected_device()?;
        for (addr, bytes) in &self.patches {
            dev.provision(*addr, bytes)?;
        }
        Ok(dev)
    }
}
