//! Hardware monitor: per-cycle access classification and the sticky control
//! register.
//!
//! Every cycle the monitor sees the seven tapped bus signals (`pc`, `irq`,
//! `ren`, `wen`, `daddr`, `dma_en`, `dma_addr`). [`classify`] maps one such
//! snapshot to the set of violated access rules and [`step`] ORs the matching
//! bits into the control register in that same cycle.
//!
//! Control register bit map:
//!
//! | bit | kind           | meaning                                  |
//! |-----|----------------|------------------------------------------|
//! | D0  | `IRQ_RAM`      | interrupt while executing from app RAM   |
//! | D1  | `IRQ_STACK`    | interrupt while executing SW-Att         |
//! | D2  | `DMA_RAM_WR`   | DMA write to app RAM during SW-Att       |
//! | D3  | `DMA_RAM_RD`   | DMA read of app RAM during SW-Att        |
//! | D4  | `DMA_STACK_RD` | DMA read of the reserved stack           |
//! | D5  | `DMA_ROM_RD`   | DMA read of key / boot ROM               |
//! | D6  | `CPU_RAM_WR`   | CPU write to app RAM during SW-Att       |
//! | D7  | `CPU_RAM_RD`   | CPU read of app RAM during SW-Att        |
//! | D8  | `CPU_STACK_RD` | CPU read of the reserved stack           |
//! | D9  | `CPU_ROM_RD`   | CPU read of key / boot ROM               |
//! | D10 | reset          | set only by the reset prevention action  |
//!
//! D11..D15 are reserved and always read as zero.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::pox_observe;
use crate::mem_model::{classify_addr, DeviceState, MemoryLayout, RegionKind};

/// One machine cycle's snapshot of the tapped bus control signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct AccessEvent {
    pub pc: u16,
    pub irq: bool,
    pub ren: bool,
    pub wen: bool,
    pub daddr: u16,
    pub dma_en: bool,
    pub dma_addr: u16,
}

impl AccessEvent {
    /// An idle cycle at `pc`: no interrupt, no memory access.
    pub fn idle(pc: u16) -> Self {
        AccessEvent {
            pc,
            ..Default::default()
        }
    }

    pub fn cpu_read(pc: u16, addr: u16) -> Self {
        AccessEvent {
            pc,
            ren: true,
            daddr: addr,
            ..Default::default()
        }
    }

    pub fn cpu_write(pc: u16, addr: u16) -> Self {
        AccessEvent {
            pc,
            wen: true,
            daddr: addr,
            ..Default::default()
        }
    }

    pub fn dma_read(pc: u16, addr: u16) -> Self {
        AccessEvent {
            pc,
            ren: true,
            dma_en: true,
            dma_addr: addr,
            ..Default::default()
        }
    }

    pub fn dma_write(pc: u16, addr: u16) -> Self {
        AccessEvent {
            pc,
            wen: true,
            dma_en: true,
            dma_addr: addr,
            ..Default::default()
        }
    }

    pub fn with_irq(mut self) -> Self {
        self.irq = true;
        self
    }

    /// `ren` and `wen` are mutually exclusive on the bus.
    pub fn is_well_formed(&self) -> bool {
        !(self.ren && self.wen)
    }

    /// Address the winning bus requester targets this cycle.
    pub fn target_addr(&self) -> u16 {
        if self.dma_en {
            self.dma_addr
        } else {
            self.daddr
        }
    }
}

/// Where the CPU is executing, as seen by the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecContext {
    /// Application code running from app RAM.
    InApp,
    /// SW-Att running from boot ROM on the reserved stack.
    InSwAtt,
    Other,
}

pub fn exec_context(layout: &MemoryLayout, pc: u16) -> ExecContext {
    match classify_addr(layout, pc) {
        Some(RegionKind::AppRam) => ExecContext::InApp,
        Some(RegionKind::BootRom) => ExecContext::InSwAtt,
        _ => ExecContext::Other,
    }
}

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    IRQ_RAM,
    IRQ_STACK,
    DMA_RAM_WR,
    DMA_RAM_RD,
    DMA_STACK_RD,
    DMA_ROM_RD,
    CPU_RAM_WR,
    CPU_RAM_RD,
    CPU_STACK_RD,
    CPU_ROM_RD,
}

impl ViolationKind {
    /// In bit order, D0 first.
    pub const ALL: [ViolationKind; 10] = [
        ViolationKind::IRQ_RAM,
        ViolationKind::IRQ_STACK,
        ViolationKind::DMA_RAM_WR,
        ViolationKind::DMA_RAM_RD,
        ViolationKind::DMA_STACK_RD,
        ViolationKind::DMA_ROM_RD,
        ViolationKind::CPU_RAM_WR,
        ViolationKind::CPU_RAM_RD,
        ViolationKind::CPU_STACK_RD,
        ViolationKind::CPU_ROM_RD,
    ];

    /// Register bit position, 0..=9.
    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn mask(self) -> u16 {
        1 << self.bit()
    }

    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::IRQ_RAM => "IRQ_RAM",
            ViolationKind::IRQ_STACK => "IRQ_STACK",
            ViolationKind::DMA_RAM_WR => "DMA_RAM_WR",
            ViolationKind::DMA_RAM_RD => "DMA_RAM_RD",
            ViolationKind::DMA_STACK_RD => "DMA_STACK_RD",
            ViolationKind::DMA_ROM_RD => "DMA_ROM_RD",
            ViolationKind::CPU_RAM_WR => "CPU_RAM_WR",
            ViolationKind::CPU_RAM_RD => "CPU_RAM_RD",
            ViolationKind::CPU_STACK_RD => "CPU_STACK_RD",
            ViolationKind::CPU_ROM_RD => "CPU_ROM_RD",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of violation kinds, stored as their register bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ViolationSet(u16);

impl ViolationSet {
    pub const EMPTY: ViolationSet = ViolationSet(0);

    /// Keeps only D0..D9.
    pub fn from_bits(bits: u16) -> Self {
        ViolationSet(bits & DETECTION_MASK)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn insert(&mut self, kind: ViolationKind) {
        self.0 |= kind.mask();
    }

    pub fn contains(self, kind: ViolationKind) -> bool {
        self.0 & kind.mask() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: ViolationSet) -> ViolationSet {
        ViolationSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = ViolationKind> {
        ViolationKind::ALL
            .into_iter()
            .filter(move |k| self.contains(*k))
    }
}

impl FromIterator<ViolationKind> for ViolationSet {
    fn from_iter<I: IntoIterator<Item = ViolationKind>>(iter: I) -> Self {
        let mut set = ViolationSet::EMPTY;
        for k in iter {
            set.insert(k);
        }
        set
    }
}

/// D0..D9.
pub const DETECTION_MASK: u16 = 0x03FF;
/// D10.
pub const RESET_BIT: u16 = 1 << 10;
/// D11..D15.
pub const RESERVED_MASK: u16 = 0xF800;

/// The 16-bit sticky detection register. Only the monitor and the reset /
/// recovery paths inside this crate can change it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct CtrlRegister(u16);

impl CtrlRegister {
    /// Reserved bits are dropped.
    pub(crate) fn from_word(word: u16) -> Self {
        CtrlRegister(word & !RESERVED_MASK)
    }

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn detections(self) -> ViolationSet {
        ViolationSet::from_bits(self.0)
    }

    pub fn reset_requested(self) -> bool {
        self.0 & RESET_BIT != 0
    }

    pub(crate) fn latch(&mut self, bits: ViolationSet) {
        self.0 |= bits.bits();
    }

    pub(crate) fn set_reset(&mut self) {
        self.0 |= RESET_BIT;
    }

    pub(crate) fn clear_detections(&mut self) {
        self.0 &= !DETECTION_MASK;
    }

    /// Set bit names in bit order, e.g. `["D2:DMA_RAM_WR", "D10:RESET"]`.
    pub fn decoded(self) -> Vec<String> {
        let mut names: Vec<String> = self
            .detections()
            .iter()
            .map(|k| format!("D{}:{}", k.bit(), k.name()))
            .collect();
        if self.reset_requested() {
            names.push("D10:RESET".to_owned());
        }
        names
    }
}

impl fmt::Display for CtrlRegister {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

/// Which bus master issued the access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Requester {
    Cpu,
    Dma,
}

/// Returns the violations one event triggers. Pure; benign events give the
/// empty set.
pub fn classify(layout: &MemoryLayout, event: &AccessEvent) -> ViolationSet {
    use ExecContext::*;
    use ViolationKind::*;

    let ctx = exec_context(layout, event.pc);
    let mut found = ViolationSet::EMPTY;

    if event.irq {
        match ctx {
            InApp => found.insert(IRQ_RAM),
            InSwAtt => found.insert(IRQ_STACK),
            Other => {}
        }
    }

    let requester = if event.dma_en {
        Requester::Dma
    } else {
        Requester::Cpu
    };
    let target = classify_addr(layout, event.target_addr());

    let (rom_rd, stack_rd, ram_rd, ram_wr) = match requester {
        Requester::Cpu => (CPU_ROM_RD, CPU_STACK_RD, CPU_RAM_RD, CPU_RAM_WR),
        Requester::Dma => (DMA_ROM_RD, DMA_STACK_RD, DMA_RAM_RD, DMA_RAM_WR),
    };

    if event.ren {
        match (target, ctx) {
            // The key is reachable only while SW-Att runs.
            (Some(RegionKind::KeyRom), InApp | Other) => found.insert(rom_rd),
            // SW-Att code and the reserved stack are readable from app
            // context, never from anywhere else.
            (Some(RegionKind::BootRom), Other) => found.insert(rom_rd),
            (Some(RegionKind::ReservedStack), Other) => found.insert(stack_rd),
            (Some(RegionKind::AppRam), InSwAtt) => found.insert(ram_rd),
            _ => {}
        }
    }
    if event.wen && target == Some(RegionKind::AppRam) && ctx == InSwAtt {
        found.insert(ram_wr);
    }

    found
}

/// Advances the monitor by one cycle: latches the violations of `event`,
/// bumps the cycle counter, and feeds the proof-of-execution tracker.
pub fn step(state: &mut DeviceState, event: &AccessEvent) -> ViolationSet {
    let violations = classify(state.layout(), event);
    state.latch(violations);
    state.cycle += 1;
    pox_observe(state, event, violations);
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CtrlError {
    #[error("control register has no software write access")]
    WriteAccessDenied,
}

pub fn software_read_ctrl(state: &DeviceState) -> u16 {
    state.ctrl().value()
}

/// Software write to the control register. Always refused.
pub fn software_write_ctrl(_state: &mut DeviceState, _word: u16) -> Result<(), CtrlError> {
    Err(CtrlError::WriteAccessDenied)
}
