//! JSON scenario files (`*.rares.json`).
//!
//! ```json
//! {
//!   "name": "key-read",
//!   "key": "<64 hex chars>",
//!   "flash": "<hex, zero-padded to the Flash size>",
//!   "reference_digest": "<64 hex chars, optional>",
//!   "memory": { "AppRam": "<hex>", "BootRom": "<hex>" },
//!   "patches": [ { "addr": "0xE010", "bytes": "ff" } ],
//!   "bindings": { "CPU_ROM_RD": "SoftModeSwitch:0x00F0" },
//!   "pox": { "begin_cycle": 1, "end_cycle": 8, "er_min": "0x4000", "er_max": "0x40FF" },
//!   "attest": [ { "cycle": 8, "nonce": "<64 hex>", "start": "0xE000", "end": "0xE0FF" } ],
//!   "trace": [ { "cycle": 1, "pc": "0x4000", "ren": true, "daddr": "0x6A00" } ]
//! }
//! ```
//!
//! Addresses and small integers are JSON numbers or `"0x"`-prefixed hex
//! strings. Omitted trace flags are false and omitted addresses are zero.

use std::fmt;

use serde::Deserialize;
use thiserror::Error;

use super::{PoxWindow, Scenario, ScheduledAttest, TraceEvent};
use crate::attestation::AttestRequest;
use crate::detector::{AccessEvent, ViolationKind};
use crate::mem_model::{build_layout, GoldenImage, MemoryLayout, Region, RegionKind, KEY_LEN};
use crate::prevention::{PreventionAction, PreventionBinding, LPM_SWITCH_MASK};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("semantic error at `{field}`: {message}")]
    Semantic { field: String, message: String },
}

fn semantic(field: impl Into<String>, message: impl fmt::Display) -> ScenarioError {
    ScenarioError::Semantic {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Num {
    Int(u64),
    Text(String),
}

impl Num {
    fn value(&self, field: &str) -> Result<u64, ScenarioError> {
        match self {
            Num::Int(v) => Ok(*v),
            Num::Text(s) => {
                let digits = s
                    .strip_prefix("0x")
                    .or_else(|| s.strip_prefix("0X"))
                    .ok_or_else(|| semantic(field, format!("`{s}` is not 0x-prefixed hex")))?;
                u64::from_str_radix(digits, 16)
                    .map_err(|_| semantic(field, format!("bad hex number `{s}`")))
            }
        }
    }

    fn addr(&self, field: &str) -> Result<u16, ScenarioError> {
        let v = self.value(field)?;
        u16::try_from(v).map_err(|_| semantic(field, format!("{v:#x} is not a 16-bit address")))
    }

    fn byte(&self, field: &str) -> Result<u8, ScenarioError> {
        let v = self.value(field)?;
        u8::try_from(v).map_err(|_| semantic(field, format!("{v:#x} does not fit in a byte")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    layout: Option<Vec<RawRegion>>,
    key: String,
    flash: Option<String>,
    reference_digest: Option<String>,
    #[serde(default)]
    memory: std::collections::BTreeMap<RegionKind, String>,
    #[serde(default)]
    patches: Vec<RawPatch>,
    #[serde(default)]
    bindings: std::collections::BTreeMap<String, String>,
    pox: Option<RawPox>,
    #[serde(default)]
    attest: Vec<RawAttest>,
    #[serde(default)]
    trace: Vec<RawEvent>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    kind: RegionKind,
    start: Num,
    end: Num,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPatch {
    addr: Num,
    bytes: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPox {
    begin_cycle: u64,
    end_cycle: u64,
    er_min: Num,
    er_max: Num,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttest {
    cycle: u64,
    nonce: String,
    start: Num,
    end: Num,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    cycle: u64,
    pc: Num,
    #[serde(default)]
    irq: bool,
    #[serde(default)]
    ren: bool,
    #[serde(default)]
    wen: bool,
    daddr: Option<Num>,
    #[serde(default)]
    dma_en: bool,
    dma_addr: Option<Num>,
    data: Option<Num>,
}

fn hex_bytes(field: &str, s: &str) -> Result<Vec<u8>, ScenarioError> {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    hex::decode(&compact).map_err(|e| semantic(field, format!("bad hex: {e}")))
}

fn hex32(field: &str, what: &str, s: &str) -> Result<[u8; 32], ScenarioError> {
    let bytes = hex_bytes(field, s)?;
    let len = bytes.len();
    bytes.try_into().map_err(|_| {
        semantic(
            field,
            format!("{what} length: expected 32 bytes, got {len}"),
        )
    })
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate(raw)
}

fn validate(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let layout = match &raw.layout {
        None => MemoryLayout::default(),
        Some(regions) => {
            let mut parsed = Vec::with_capacity(regions.len());
            for (i, r) in regions.iter().enumerate() {
                let field = format!("layout[{i}]");
                parsed.push(Region::new(
                    r.kind,
                    r.start.addr(&format!("{field}.start"))?,
                    r.end.addr(&format!("{field}.end"))?,
                ));
            }
            build_layout(&parsed).map_err(|e| semantic("layout", e))?
        }
    };

    let key: [u8; KEY_LEN] = hex32("key", "key", &raw.key)?;

    let flash_len = layout.region(RegionKind::Flash).len();
    let mut flash = match &raw.flash {
        Some(s) => hex_bytes("flash", s)?,
        None => Vec::new(),
    };
    if flash.len() > flash_len {
        return Err(semantic(
            "flash",
            format!(
                "{} bytes exceed the {flash_len}-byte Flash region",
                flash.len()
            ),
        ));
    }
    flash.resize(flash_len, 0);
    let golden = match &raw.reference_digest {
        Some(s) => GoldenImage::new(flash, hex32("reference_digest", "digest", s)?),
        None => GoldenImage::provision(&key, flash),
    };
    let rom = layout.region(RegionKind::RecoveryRom).len();
    if rom < flash_len {
        return Err(semantic(
            "layout",
            format!("RecoveryRom ({rom} bytes) cannot hold the {flash_len}-byte golden image"),
        ));
    }

    let mut contents = Vec::new();
    for (kind, s) in &raw.memory {
        let field = format!("memory.{kind}");
        if matches!(
            kind,
            RegionKind::Flash | RegionKind::KeyRom | RegionKind::RecoveryRom | RegionKind::Metadata
        ) {
            return Err(semantic(
                field,
                format!("{kind} contents are derived from `key`/`flash`, not set directly"),
            ));
        }
        let bytes = hex_bytes(&field, s)?;
        let region = layout.region(*kind);
        if bytes.len() > region.len() {
            return Err(semantic(
                field,
                format!(
                    "{} bytes exceed the {}-byte region",
                    bytes.len(),
                    region.len()
                ),
            ));
        }
        contents.push((region.start, bytes));
    }

    let mut patches = Vec::new();
    for (i, p) in raw.patches.iter().enumerate() {
        let field = format!("patches[{i}]");
        let addr = p.addr.addr(&format!("{field}.addr"))?;
        let bytes = hex_bytes(&format!("{field}.bytes"), &p.bytes)?;
        if bytes.is_empty() {
            return Err(semantic(field, "empty patch"));
        }
        let end = u16::try_from(usize::from(addr) + bytes.len() - 1)
            .map_err(|_| semantic(&field, "patch runs past 0xFFFF"))?;
        if !fits_one_region(&layout, addr, end) {
            return Err(semantic(field, "patch must lie inside one mapped region"));
        }
        patches.push((addr, bytes));
    }

    let mut binding = PreventionBinding::default();
    for (name, action) in &raw.bindings {
        let field = format!("bindings.{name}");
        let kind = ViolationKind::from_name(name)
            .ok_or_else(|| semantic(&field, format!("unknown violation kind `{name}`")))?;
        binding.set(kind, parse_action(&field, action)?);
    }

    let mut trace = Vec::with_capacity(raw.trace.len());
    let mut last_cycle: Option<u64> = None;
    for (i, e) in raw.trace.iter().enumerate() {
        let field = format!("trace[{i}]");
        if let Some(prev) = last_cycle {
            if e.cycle <= prev {
                return Err(semantic(
                    format!("{field}.cycle"),
                    format!("non-monotone cycle: {} after {prev}", e.cycle),
                ));
            }
        }
        last_cycle = Some(e.cycle);
        if e.ren && e.wen {
            return Err(semantic(field, "ren and wen both set"));
        }
        let opt_addr = |n: &Option<Num>, f: &str| -> Result<u16, ScenarioError> {
            n.as_ref()
                .map_or(Ok(0), |n| n.addr(&format!("{field}.{f}")))
        };
        let event = AccessEvent {
            pc: e.pc.addr(&format!("{field}.pc"))?,
            irq: e.irq,
            ren: e.ren,
            wen: e.wen,
            daddr: opt_addr(&e.daddr, "daddr")?,
            dma_en: e.dma_en,
            dma_addr: opt_addr(&e.dma_addr, "dma_addr")?,
        };
        let data = match &e.data {
            Some(n) => n.byte(&format!("{field}.data"))?,
            None => 0,
        };
        trace.push(TraceEvent {
            cycle: e.cycle,
            event,
            data,
        });
    }

    let pox = match &raw.pox {
        None => None,
        Some(p) => {
            let window = PoxWindow {
                begin_cycle: p.begin_cycle,
                end_cycle: p.end_cycle,
                er_min: p.er_min.addr("pox.er_min")?,
                er_max: p.er_max.addr("pox.er_max")?,
            };
            if window.begin_cycle > window.end_cycle {
                return Err(semantic("pox", "begin_cycle after end_cycle"));
            }
            let app = layout.region(RegionKind::AppRam);
            if window.er_min > window.er_max
                || !app.contains(window.er_min)
                || !app.contains(window.er_max)
            {
                return Err(semantic("pox", "ER bounds must lie inside AppRam"));
            }
            if !trace
                .iter()
                .any(|t| (window.begin_cycle..=window.end_cycle).contains(&t.cycle))
            {
                return Err(semantic("pox", "window contains no trace event"));
            }
            Some(window)
        }
    };

    let mut attest = Vec::with_capacity(raw.attest.len());
    for (i, a) in raw.attest.iter().enumerate() {
        let field = format!("attest[{i}]");
        let request = AttestRequest {
            nonce: hex32(&format!("{field}.nonce"), "nonce", &a.nonce)?,
            region_start: a.start.addr(&format!("{field}.start"))?,
            region_end: a.end.addr(&format!("{field}.end"))?,
        };
        if !fits_one_region(&layout, request.region_start, request.region_end) {
            return Err(semantic(
                field,
                "attested range must lie inside one mapped region",
            ));
        }
        attest.push(ScheduledAttest {
            cycle: a.cycle,
            request,
        });
    }
    attest.sort_by_key(|a| a.cycle);

    Ok(Scenario {
        name: raw.name,
        layout,
        key,
        golden,
        contents,
        patches,
        binding,
        pox,
        attest,
        trace,
    })
}

fn fits_one_region(layout: &MemoryLayout, start: u16, end: u16) -> bool {
    start <= end
        && layout
            .regions()
            .iter()
            .any(|r| r.contains(start) && r.contains(end))
}

/// `PassThrough`, `HardCpuOff`, `ChipGateAndRecover`, `SystemReset`,
/// `SoftModeSwitch` (mask 0x00F0) or `SoftModeSwitch:<mask>`.
fn parse_action(field: &str, s: &str) -> Result<PreventionAction, ScenarioError> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let action = match (name, arg) {
        ("PassThrough", None) => PreventionAction::PassThrough,
        ("HardCpuOff", None) => PreventionAction::HardCpuOff,
        ("ChipGateAndRecover", None) => PreventionAction::ChipGateAndRecover,
        ("SystemReset", None) => PreventionAction::SystemReset,
        ("SoftModeSwitch", None) => PreventionAction::SoftModeSwitch {
            mask: LPM_SWITCH_MASK,
        },
        ("SoftModeSwitch", Some(mask)) => {
            let v = Num::Text(mask.trim().to_owned()).value(field)?;
            let mask = u16::try_from(v).map_err(|_| semantic(field, "mask exceeds 16 bits"))?;
            PreventionAction::SoftModeSwitch { mask }
        }
        _ => return Err(semantic(field, format!("unknown action `{s}`"))),
    };
    Ok(action)
}
