use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::attestation::{AttestReport, AttestRequest};
use crate::detector::{CtrlRegister, ViolationSet};
use crate::prevention::ActionRecord;
use crate::secureboot::{BootOutcome, BootReport};

fn hex_word<S: Serializer>(v: &u16, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:#06x}"))
}

fn hex_digest<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(v))
}

fn kind_names<S: Serializer>(v: &ViolationSet, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|k| k.name()))
}

fn ctrl_names(word: u16) -> Vec<String> {
    CtrlRegister::from_word(word).decoded()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DigestRow {
    #[serde(serialize_with = "hex_digest")]
    pub computed: [u8; 32],
    #[serde(serialize_with = "hex_digest")]
    pub reference: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BootSummary {
    pub outcome: BootOutcome,
    pub attempts: u32,
    pub digests: Vec<DigestRow>,
}

impl From<&BootReport> for BootSummary {
    fn from(r: &BootReport) -> Self {
        BootSummary {
            outcome: r.outcome,
            attempts: r.attempts,
            digests: r
                .digests
                .iter()
                .map(|d| DigestRow {
                    computed: d.computed,
                    reference: d.reference,
                })
                .collect(),
        }
    }
}

/// What happened on the bus in a cycle after prevention ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryEffect {
    None,
    Read,
    Applied,
    SuppressedGate,
    SuppressedReadOnly,
    SuppressedReset,
    IgnoredCpuOff,
    Unmapped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionRow {
    pub action: String,
    #[serde(serialize_with = "kind_names")]
    pub triggered_by: ViolationSet,
    pub applied: bool,
}

impl From<&ActionRecord> for ActionRow {
    fn from(r: &ActionRecord) -> Self {
        ActionRow {
            action: r.action.to_string(),
            triggered_by: r.triggered_by,
            applied: r.applied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CycleRow {
    pub cycle: u64,
    pub event: String,
    #[serde(serialize_with = "kind_names")]
    pub violations: ViolationSet,
    /// Control register after detection and prevention.
    #[serde(serialize_with = "hex_word")]
    pub ctrl: u16,
    pub ctrl_bits: Vec<String>,
    pub cen_sel: bool,
    pub actions: Vec<ActionRow>,
    pub memory: MemoryEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    Reflash,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecoveryRecord {
    pub after_cycle: u64,
    pub kind: RecoveryKind,
    #[serde(serialize_with = "hex_word")]
    pub ctrl_before: u16,
    #[serde(serialize_with = "hex_word")]
    pub ctrl_after: u16,
    /// Present for resets, which reboot through the FSBL.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reboot: Option<BootSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttestRecord {
    pub cycle: u64,
    #[serde(serialize_with = "hex_digest")]
    pub nonce: [u8; 32],
    #[serde(serialize_with = "hex_word")]
    pub start: u16,
    #[serde(serialize_with = "hex_word")]
    pub end: u16,
    pub exec_flag: bool,
    #[serde(serialize_with = "hex_word")]
    pub er_min: u16,
    #[serde(serialize_with = "hex_word")]
    pub er_max: u16,
    #[serde(serialize_with = "hex_digest")]
    pub tag: [u8; 32],
    pub verified: bool,
}

impl AttestRecord {
    pub(crate) fn new(cycle: u64, req: &AttestRequest, rep: &AttestReport, verified: bool) -> Self {
        AttestRecord {
            cycle,
            nonce: req.nonce,
            start: req.region_start,
            end: req.region_end,
            exec_flag: rep.exec_flag,
            er_min: rep.er_min,
            er_max: rep.er_max,
            tag: rep.tag,
            verified,
        }
    }

    pub fn request(&self) -> AttestRequest {
        AttestRequest {
            nonce: self.nonce,
            region_start: self.start,
            region_end: self.end,
        }
    }

    pub fn report(&self) -> AttestReport {
        AttestReport {
            exec_flag: self.exec_flag,
            er_min: self.er_min,
            er_max: self.er_max,
            tag: self.tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FinalState {
    #[serde(serialize_with = "hex_word")]
    pub ctrl: u16,
    pub ctrl_bits: Vec<String>,
    #[serde(serialize_with = "hex_word")]
    pub r2: u16,
    pub mode: String,
    pub cpu_halted: bool,
    pub chip_gate_active: bool,
    pub exec_flag: bool,
    pub cycles: u64,
    /// SHA-256 per region. Key ROM is never listed.
    pub region_digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitClass {
    Clean,
    Violations,
    Unrecoverable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub scenario: Option<String>,
    pub boot: BootSummary,
    /// Whether the golden image matches its reference digest under the key.
    pub golden_consistent: bool,
    pub rows: Vec<CycleRow>,
    pub recoveries: Vec<RecoveryRecord>,
    pub attestations: Vec<AttestRecord>,
    /// OR of every detection bit latched during the run, before any reflash
    /// or reset cleared it.
    #[serde(serialize_with = "hex_word")]
    pub ctrl_snapshot_pre_clear: u16,
    pub final_state: FinalState,
    /// Trace events never executed because the device could not boot.
    pub skipped_events: usize,
    pub exit: ExitClass,
}

impl RunReport {
    /// Pretty JSON. The pre-clear snapshot is omitted unless asked for.
    pub fn to_json(&self, include_snapshot: bool) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if !include_snapshot {
            if let Some(obj) = value.as_object_mut() {
                obj.remove("ctrl_snapshot_pre_clear");
            }
        }
        let mut out = serde_json::to_string_pretty(&value).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn render_text(&self, include_snapshot: bool) -> String {
        let mut out = String::new();
        if let Some(name) = &self.scenario {
            let _ = writeln!(out, "scenario: {name}");
        }
        render_boot(&mut out, "boot", &self.boot);
        if !self.golden_consistent {
            let _ = writeln!(
                out,
                "warning: golden image does not match its reference digest"
            );
        }

        if !self.rows.is_empty() {
            let _ = writeln!(
                out,
                "{:>8}  {:<34} {:<26} {:<7} {:<20} actions",
                "cycle", "event", "violations", "ctrl", "memory"
            );
        }
        let mut recoveries = self.recoveries.iter().peekable();
        for row in &self.rows {
            let violations = if row.violations.is_empty() {
                "-".to_owned()
            } else {
                row.violations
                    .iter()
                    .map(|k| k.name())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let actions = if row.actions.is_empty() {
                "-".to_owned()
            } else {
                row.actions
                    .iter()
                    .map(|a| {
                        if a.applied {
                            a.action.clone()
                        } else {
                            format!("({})", a.action)
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let _ = writeln!(
                out,
                "{:>8}  {:<34} {:<26} {:#06x}  {:<20} {}",
                row.cycle,
                row.event,
                violations,
                row.ctrl,
                format!("{:?}", row.memory).to_lowercase(),
                actions
            );
            while let Some(rec) = recoveries.next_if(|r| r.after_cycle == row.cycle) {
                render_recovery(&mut out, rec);
            }
        }
        for rec in recoveries {
            render_recovery(&mut out, rec);
        }

        for a in &self.attestations {
            let _ = writeln!(
                out,
                "attest @{}: region {:#06x}..={:#06x} exec_flag={} er={:#06x}..={:#06x} tag={}",
                a.cycle,
                a.start,
                a.end,
                a.exec_flag,
                a.er_min,
                a.er_max,
                hex::encode(a.tag)
            );
            let _ = writeln!(out, "  verified: {}", a.verified);
        }

        let f = &self.final_state;
        let _ = writeln!(
            out,
            "final: ctrl {:#06x} {:?} r2 {:#06x} ({}) cpu_halted={} gate={} exec_flag={} cycles={}",
            f.ctrl,
            f.ctrl_bits,
            f.r2,
            f.mode,
            f.cpu_halted,
            f.chip_gate_active,
            f.exec_flag,
            f.cycles
        );
        if include_snapshot {
            let _ = writeln!(
                out,
                "ctrl snapshot (pre-clear): {:#06x} {:?}",
                self.ctrl_snapshot_pre_clear,
                ctrl_names(self.ctrl_snapshot_pre_clear)
            );
        }
        if self.skipped_events > 0 {
            let _ = writeln!(out, "skipped events: {}", self.skipped_events);
        }
        let exit = match self.exit {
            ExitClass::Clean => "clean",
            ExitClass::Violations => "violations",
            ExitClass::Unrecoverable => "unrecoverable",
        };
        let _ = writeln!(out, "exit: {exit}");
        out
    }
}

fn render_boot(out: &mut String, label: &str, boot: &BootSummary) {
    let outcome = match boot.outcome {
        BootOutcome::VerifiedClean => "verified clean",
        BootOutcome::RecoveredThenVerified => "recovered then verified",
        BootOutcome::Unrecoverable => "unrecoverable",
    };
    let _ = writeln!(out, "{label}: {outcome} (attempts {})", boot.attempts);
    for (i, d) in boot.digests.iter().enumerate() {
        let _ = writeln!(
            out,
            "  attempt {}: computed {} reference {}",
            i + 1,
            hex::encode(d.computed),
            hex::encode(d.reference)
        );
    }
}

fn render_recovery(out: &mut String, rec: &RecoveryRecord) {
    let kind = match rec.kind {
        RecoveryKind::Reflash => "reflash from golden image",
        RecoveryKind::Reset => "system reset",
    };
    let _ = writeln!(
        out,
        "{:>8}  -- recovery: {kind}, ctrl {:#06x} -> {:#06x}",
        "", rec.ctrl_before, rec.ctrl_after
    );
    if let Some(boot) = &rec.reboot {
        render_boot(out, "  reboot", boot);
    }
}

pub(crate) fn final_state(state: &crate::mem_model::DeviceState) -> FinalState {
    use sha2::{Digest, Sha256};

    let ctrl: CtrlRegister = state.ctrl();
    let region_digests = crate::mem_model::RegionKind::ALL
        .into_iter()
        .filter(|k| *k != crate::mem_model::RegionKind::KeyRom)
        .map(|k| {
            (
                k.name().to_owned(),
                hex::encode(Sha256::digest(state.region_bytes(k))),
            )
        })
        .collect();
    FinalState {
        ctrl: ctrl.value(),
        ctrl_bits: ctrl.decoded(),
        r2: state.r2().value(),
        mode: state.r2().mode().to_string(),
        cpu_halted: state.cpu_halted(),
        chip_gate_active: state.chip_gate_active(),
        exec_flag: state.exec_meta().exec_flag,
        cycles: state.cycle(),
        region_digests,
    }
}
