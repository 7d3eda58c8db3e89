//! Memory geography and mutable device state.
//!
//! The address space is a flat 16-bit map carved into seven regions. Region
//! bounds are configuration: [`MemoryLayout::default`] is one valid map, and
//! scenarios may supply their own as long as it passes [`build_layout`].

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attestation::{hmac_sha256, ExecMetadata};
use crate::detector::{CtrlRegister, ViolationSet};
use crate::prevention::ModeRegister;

/// Size of the device key held in key ROM.
pub const KEY_LEN: usize = 32;

/// Bytes of the metadata region occupied by the control register image.
pub const CTRL_IMAGE_LEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionKind {
    BootRom,
    KeyRom,
    RecoveryRom,
    Flash,
    AppRam,
    ReservedStack,
    Metadata,
}

impl RegionKind {
    pub const ALL: [RegionKind; 7] = [
        RegionKind::BootRom,
        RegionKind::KeyRom,
        RegionKind::RecoveryRom,
        RegionKind::Flash,
        RegionKind::AppRam,
        RegionKind::ReservedStack,
        RegionKind::Metadata,
    ];

    pub(crate) fn index(self) -> usize {
        self as usize
    }

    /// ROM kinds are immutable to every simulated bus access.
    pub fn is_rom(self) -> bool {
        matches!(
            self,
            RegionKind::BootRom | RegionKind::KeyRom | RegionKind::RecoveryRom
        )
    }

    /// Regions that no bus write may modify. Metadata is owned by the monitor
    /// hardware, so it is read-only from the bus as well.
    pub fn is_bus_read_only(self) -> bool {
        self.is_rom() || self == RegionKind::Metadata
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionKind::BootRom => "BootRom",
            RegionKind::KeyRom => "KeyRom",
            RegionKind::RecoveryRom => "RecoveryRom",
            RegionKind::Flash => "Flash",
            RegionKind::AppRam => "AppRam",
            RegionKind::ReservedStack => "ReservedStack",
            RegionKind::Metadata => "Metadata",
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One contiguous region, `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub kind: RegionKind,
    pub start: u16,
    pub end: u16,
}

impl Region {
    pub const fn new(kind: RegionKind, start: u16, end: u16) -> Self {
        Region { kind, start, end }
    }

    pub fn len(&self) -> usize {
        usize::from(self.end) - usize::from(self.start) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, addr: u16) -> bool {
        self.start <= addr && addr <= self.end
    }

    fn overlaps(&self, other: &Region) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("regions {first} and {second} overlap")]
    Overlap {
        first: RegionKind,
        second: RegionKind,
    },
    #[error("missing region {0}")]
    MissingRegion(RegionKind),
    #[error("region {0} listed more than once")]
    DuplicateRegion(RegionKind),
    #[error("region {kind} has start {start:#06x} after end {end:#06x}")]
    InvertedRegion {
        kind: RegionKind,
        start: u16,
        end: u16,
    },
    #[error("KeyRom must be exactly {KEY_LEN} bytes, got {0}")]
    KeyRomSize(usize),
    #[error("Metadata must be at least {CTRL_IMAGE_LEN} bytes, got {0}")]
    MetadataTooSmall(usize),
}

/// A validated region map: one region per [`RegionKind`], pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryLayout {
    // indexed by RegionKind::index
    by_kind: [Region; 7],
    // sorted by start address, for lookup
    by_start: [Region; 7],
}

impl MemoryLayout {
    pub fn region(&self, kind: RegionKind) -> Region {
        self.by_kind[kind.index()]
    }

    /// Regions in [`RegionKind::ALL`] order.
    pub fn regions(&self) -> &[Region] {
        &self.by_kind
    }

    pub fn contains(&self, kind: RegionKind, addr: u16) -> bool {
        self.region(kind).contains(addr)
    }
}

impl Default for MemoryLayout {
    fn default() -> Self {
        build_layout(&[
            Region::new(RegionKind::BootRom, 0x6000, 0x69FF),
            Region::new(RegionKind::KeyRom, 0x6A00, 0x6A1F),
            Region::new(RegionKind::RecoveryRom, 0x7000, 0x77FF),
            Region::new(RegionKind::ReservedStack, 0x0200, 0x0AFF),
            Region::new(RegionKind::Metadata, 0x0B00, 0x0B0F),
            Region::new(RegionKind::AppRam, 0x4000, 0x5FFF),
            Region::new(RegionKind::Flash, 0xE000, 0xE7FF),
        ])
        .expect("default layout is valid")
    }
}

pub fn build_layout(regions: &[Region]) -> Result<MemoryLayout, LayoutError> {
    let mut slots: [Option<Region>; 7] = [None; 7];
    for r in regions {
        if r.start > r.end {
            return Err(LayoutError::InvertedRegion {
                kind: r.kind,
                start: r.start,
                end: r.end,
            });
        }
        let slot = &mut slots[r.kind.index()];
        if slot.is_some() {
            return Err(LayoutError::DuplicateRegion(r.kind));
        }
        *slot = Some(*r);
    }

    let mut by_kind = [Region::new(RegionKind::BootRom, 0, 0); 7];
    for kind in RegionKind::ALL {
        by_kind[kind.index()] = slots[kind.index()].ok_or(LayoutError::MissingRegion(kind))?;
    }

    for (i, a) in by_kind.iter().enumerate() {
        for b in &by_kind[i + 1..] {
            if a.overlaps(b) {
                return Err(LayoutError::Overlap {
                    first: a.kind,
                    second: b.kind,
                });
            }
        }
    }

    let key_len = by_kind[RegionKind::KeyRom.index()].len();
    if key_len != KEY_LEN {
        return Err(LayoutError::KeyRomSize(key_len));
    }
    let meta_len = by_kind[RegionKind::Metadata.index()].len();
    if meta_len < CTRL_IMAGE_LEN {
        return Err(LayoutError::MetadataTooSmall(meta_len));
    }

    let mut by_start = by_kind;
    by_start.sort_by_key(|r| r.start);
    Ok(MemoryLayout { by_kind, by_start })
}

/// The unique region containing `addr`, or `None` for a gap.
pub fn classify_addr(layout: &MemoryLayout, addr: u16) -> Option<RegionKind> {
    let idx = layout.by_start.partition_point(|r| r.start <= addr);
    if idx == 0 {
        return None;
    }
    let candidate = layout.by_start[idx - 1];
    candidate.contains(addr).then_some(candidate.kind)
}

/// Untampered copy of the application flash, stored in recovery ROM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenImage {
    pub bytes: Vec<u8>,
    pub reference_digest: [u8; 32],
}

impl GoldenImage {
    pub fn new(bytes: Vec<u8>, reference_digest: [u8; 32]) -> Self {
        GoldenImage {
            bytes,
            reference_digest,
        }
    }

    /// Builds an image whose reference digest is computed under `key`.
    pub fn provision(key: &[u8; KEY_LEN], bytes: Vec<u8>) -> Self {
        let reference_digest = hmac_sha256(key, &bytes);
        GoldenImage {
            bytes,
            reference_digest,
        }
    }

    pub fn is_consistent(&self, key: &[u8; KEY_LEN]) -> bool {
        hmac_sha256(key, &self.bytes) == self.reference_digest
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("address {0:#06x} is not mapped")]
    UnmappedAddress(u16),
    #[error("golden image is {image} bytes but Flash is {flash} bytes")]
    GoldenSize { image: usize, flash: usize },
    #[error("RecoveryRom ({rom} bytes) cannot hold a {image}-byte golden image")]
    RecoveryRomTooSmall { rom: usize, image: usize },
    #[error("{len} bytes at {addr:#06x} do not fit inside one region")]
    ProvisionOutOfRange { addr: u16, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressReason {
    ChipGate,
    ReadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteOutcome {
    Applied,
    Suppressed(SuppressReason),
}

/// Complete mutable state of one simulated device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceState {
    layout: MemoryLayout,
    mem: Vec<Vec<u8>>,
    golden: GoldenImage,
    ctrl: CtrlRegister,
    pub(crate) r2: ModeRegister,
    pub(crate) cpu_halted: bool,
    pub(crate) chip_gate_active: bool,
    pub(crate) reset_pending: bool,
    pub(crate) recovery_pending: bool,
    pub(crate) exec_meta: ExecMetadata,
    pub(crate) cycle: u64,
}

impl DeviceState {
    /// Powers up a device: key ROM holds `key`, recovery ROM and flash hold
    /// the golden image, everything else is zero.
    pub fn new(
        layout: MemoryLayout,
        key: [u8; KEY_LEN],
        golden: GoldenImage,
    ) -> Result<Self, MemError> {
        let flash = layout.region(RegionKind::Flash).len();
        if golden.bytes.len() != flash {
            return Err(MemError::GoldenSize {
                image: golden.bytes.len(),
                flash,
            });
        }
        let rom = layout.region(RegionKind::RecoveryRom).len();
        if rom < flash {
            return Err(MemError::RecoveryRomTooSmall { rom, image: flash });
        }

        let mut mem: Vec<Vec<u8>> = layout
            .regions()
            .iter()
            .map(|r| vec![0u8; r.len()])
            .collect();
        mem[RegionKind::KeyRom.index()].copy_from_slice(&key);
        mem[RegionKind::RecoveryRom.index()][..flash].copy_from_slice(&golden.bytes);
        mem[RegionKind::Flash.index()].copy_from_slice(&golden.bytes);

        Ok(DeviceState {
            layout,
            mem,
            golden,
            ctrl: CtrlRegister::default(),
            r2: ModeRegister::default(),
            cpu_halted: false,
            chip_gate_active: false,
            reset_pending: false,
            recovery_pending: false,
            exec_meta: ExecMetadata::default(),
            cycle: 0,
        })
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn golden(&self) -> &GoldenImage {
        &self.golden
    }

    pub fn ctrl(&self) -> CtrlRegister {
        self.ctrl
    }

    pub fn r2(&self) -> ModeRegister {
        self.r2
    }

    pub fn cpu_halted(&self) -> bool {
        self.cpu_halted
    }

    /// True when the CPU executes nothing: hard CPU-off latch or CPUOFF in r2.
    pub fn cpu_stopped(&self) -> bool {
        self.cpu_halted || self.r2.cpu_off()
    }

    pub fn chip_gate_active(&self) -> bool {
        self.chip_gate_active
    }

    pub fn reset_pending(&self) -> bool {
        self.reset_pending
    }

    pub fn recovery_pending(&self) -> bool {
        self.recovery_pending
    }

    pub fn exec_meta(&self) -> &ExecMetadata {
        &self.exec_meta
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn region_bytes(&self, kind: RegionKind) -> &[u8] {
        &self.mem[kind.index()]
    }

    /// Bytes in `[start, end]` when the range lies inside a single region.
    pub fn bytes_in(&self, start: u16, end: u16) -> Option<&[u8]> {
        if start > end {
            return None;
        }
        let kind = classify_addr(&self.layout, start)?;
        let region = self.layout.region(kind);
        if !region.contains(end) {
            return None;
        }
        let lo = usize::from(start - region.start);
        let hi = usize::from(end - region.start);
        Some(&self.mem[kind.index()][lo..=hi])
    }

    /// Bus read. Unmapped addresses read as zero.
    pub fn read(&self, addr: u16) -> u8 {
        match classify_addr(&self.layout, addr) {
            Some(kind) => {
                let off = usize::from(addr - self.layout.region(kind).start);
                self.mem[kind.index()][off]
            }
            None => 0,
        }
    }

    /// Bus write. Suppressed while the chip-enable gate is raised or when the
    /// target is read-only; memory is untouched in both cases.
    pub fn apply_write(&mut self, addr: u16, byte: u8) -> Result<WriteOutcome, MemError> {
        let kind = classify_addr(&self.layout, addr).ok_or(MemError::UnmappedAddress(addr))?;
        if self.chip_gate_active {
            return Ok(WriteOutcome::Suppressed(SuppressReason::ChipGate));
        }
        if kind.is_bus_read_only() {
            return Ok(WriteOutcome::Suppressed(SuppressReason::ReadOnly));
        }
        let off = usize::from(addr - self.layout.region(kind).start);
        self.mem[kind.index()][off] = byte;
        Ok(WriteOutcome::Applied)
    }

    /// Out-of-band load of initial contents (scenario provisioning, fault
    /// injection). Bypasses ROM protection; the range must fit one region.
    pub fn provision(&mut self, addr: u16, bytes: &[u8]) -> Result<(), MemError> {
        let kind = classify_addr(&self.layout, addr).ok_or(MemError::UnmappedAddress(addr))?;
        let region = self.layout.region(kind);
        let off = usize::from(addr - region.start);
        if off + bytes.len() > region.len() {
            return Err(MemError::ProvisionOutOfRange {
                addr,
                len: bytes.len(),
            });
        }
        self.mem[kind.index()][off..off + bytes.len()].copy_from_slice(bytes);
        if kind == RegionKind::Metadata {
            self.sync_ctrl_image();
        }
        Ok(())
    }

    pub(crate) fn key(&self) -> [u8; KEY_LEN] {
        let mut key = [0u8; KEY_LEN];
        key.copy_from_slice(&self.mem[RegionKind::KeyRom.index()]);
        key
    }

    pub(crate) fn flash_mut(&mut self) -> &mut [u8] {
        &mut self.mem[RegionKind::Flash.index()]
    }

    pub(crate) fn latch(&mut self, bits: ViolationSet) {
        self.ctrl.latch(bits);
        self.sync_ctrl_image();
    }

    pub(crate) fn raise_reset_bit(&mut self) {
        self.ctrl.set_reset();
        self.sync_ctrl_image();
    }

    pub(crate) fn clear_detections(&mut self) {
        self.ctrl.clear_detections();
        self.sync_ctrl_image();
    }

    /// System reset: control register, mode register and every latch return
    /// to power-on values. Memory is left as is.
    pub(crate) fn reset(&mut self) {
        self.ctrl = CtrlRegister::default();
        self.r2 = ModeRegister::default();
        self.cpu_halted = false;
        self.chip_gate_active = false;
        self.reset_pending = false;
        self.recovery_pending = false;
        self.exec_meta = ExecMetadata::default();
        self.sync_ctrl_image();
    }

    // The first two metadata bytes mirror the control register, little-endian.
    fn sync_ctrl_image(&mut self) {
        let image = self.ctrl.value().to_le_bytes();
        self.mem[RegionKind::Metadata.index()][..CTRL_IMAGE_LEN].copy_from_slice(&image);
    }

    /// SHA-256 over every memory byte and every latch.
    pub fn state_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for region in &self.mem {
            h.update((region.len() as u32).to_be_bytes());
            h.update(region);
        }
        h.update(self.ctrl.value().to_be_bytes());
        h.update(self.r2.value().to_be_bytes());
        h.update([
            self.cpu_halted as u8,
            self.chip_gate_active as u8,
            self.reset_pending as u8,
            self.recovery_pending as u8,
        ]);
        let m = &self.exec_meta;
        h.update(m.er_min.to_be_bytes());
        h.update(m.er_max.to_be_bytes());
        h.update([m.exec_flag as u8, m.armed as u8, m.breached as u8]);
        h.update(self.cycle.to_be_bytes());
        h.finalize().into()
    }
}
