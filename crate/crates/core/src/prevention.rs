//! Use-case-specific prevention: turning latched violations into actions on
//! the device.
//!
//! Four actions exist. A software low-power mode switch (`bis #mask, r2`), a
//! hardware CPU-off latch that leaves DMA and peripherals running, chip-enable
//! gating that stalls the offending access and queues an onboard reflash, and
//! a system reset that raises D10.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::detector::{CtrlRegister, ViolationKind, ViolationSet};
use crate::mem_model::DeviceState;

pub const GIE: u16 = 1 << 3;
pub const CPUOFF: u16 = 1 << 4;
pub const OSCOFF: u16 = 1 << 5;
pub const SCG0: u16 = 1 << 6;
pub const SCG1: u16 = 1 << 7;

/// Operand of the software prevention routine, `bis #240, r2`.
pub const LPM_SWITCH_MASK: u16 = 240;

/// The status register r2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ModeRegister(u16);

impl ModeRegister {
    pub fn new(value: u16) -> Self {
        ModeRegister(value)
    }

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn cpu_off(self) -> bool {
        self.0 & CPUOFF != 0
    }

    /// Operating mode decoded from bits 4..7.
    pub fn mode(self) -> PowerMode {
        if !self.cpu_off() {
            return PowerMode::Active;
        }
        if self.0 & OSCOFF != 0 {
            return PowerMode::Lpm4;
        }
        match (self.0 & SCG1 != 0, self.0 & SCG0 != 0) {
            (false, false) => PowerMode::Lpm0,
            (false, true) => PowerMode::Lpm1,
            (true, false) => PowerMode::Lpm2,
            (true, true) => PowerMode::Lpm3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PowerMode {
    Active,
    Lpm0,
    Lpm1,
    Lpm2,
    Lpm3,
    Lpm4,
}

impl fmt::Display for PowerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PowerMode::Active => "Active",
            PowerMode::Lpm0 => "LPM0",
            PowerMode::Lpm1 => "LPM1",
            PowerMode::Lpm2 => "LPM2",
            PowerMode::Lpm3 => "LPM3",
            PowerMode::Lpm4 => "LPM4",
        };
        f.write_str(s)
    }
}

/// BIS semantics: `r2 | mask`.
pub fn mode_switch(r2: ModeRegister, mask: u16) -> ModeRegister {
    ModeRegister(r2.0 | mask)
}

/// Chip-enable select: OR of the memory-access violation bits D2..D9.
/// Atomicity bits D0/D1 are excluded; they drive the reset path.
pub fn ctrl_cen_sel(ctrl: CtrlRegister) -> bool {
    ctrl.value() & CEN_SEL_MASK != 0
}

const CEN_SEL_MASK: u16 = 0x03FC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PreventionAction {
    /// Explicit "do nothing"; the violation is only recorded.
    PassThrough,
    SoftModeSwitch {
        mask: u16,
    },
    HardCpuOff,
    ChipGateAndRecover,
    SystemReset,
}

impl PreventionAction {
    /// Higher wins when several actions fire in one cycle.
    pub fn precedence(self) -> u8 {
        match self {
            PreventionAction::PassThrough => 0,
            PreventionAction::SoftModeSwitch { .. } => 1,
            PreventionAction::HardCpuOff => 2,
            PreventionAction::ChipGateAndRecover => 3,
            PreventionAction::SystemReset => 4,
        }
    }
}

impl fmt::Display for PreventionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreventionAction::PassThrough => f.write_str("PassThrough"),
            PreventionAction::SoftModeSwitch { mask } => write!(f, "SoftModeSwitch({mask:#06x})"),
            PreventionAction::HardCpuOff => f.write_str("HardCpuOff"),
            PreventionAction::ChipGateAndRecover => f.write_str("ChipGateAndRecover"),
            PreventionAction::SystemReset => f.write_str("SystemReset"),
        }
    }
}

/// Total map from violation kind to prevention action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreventionBinding {
    actions: [PreventionAction; 10],
}

impl PreventionBinding {
    /// Every kind bound to the same action.
    pub fn uniform(action: PreventionAction) -> Self {
        PreventionBinding {
            actions: [action; 10],
        }
    }

    pub fn get(&self, kind: ViolationKind) -> PreventionAction {
        self.actions[kind.bit() as usize]
    }

    pub fn set(&mut self, kind: ViolationKind, action: PreventionAction) {
        self.actions[kind.bit() as usize] = action;
    }

    pub fn with(mut self, kind: ViolationKind, action: PreventionAction) -> Self {
        self.set(kind, action);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (ViolationKind, PreventionAction)> + '_ {
        ViolationKind::ALL.into_iter().map(|k| (k, self.get(k)))
    }
}

impl Default for PreventionBinding {
    fn default() -> Self {
        default_binding()
    }
}

/// CPU key-ROM read idles the CPU, atomicity violations reset, and every
/// other memory-access violation gates the chip and reflashes.
pub fn default_binding() -> PreventionBinding {
    use ViolationKind::*;
    PreventionBinding::uniform(PreventionAction::ChipGateAndRecover)
        .with(CPU_ROM_RD, PreventionAction::HardCpuOff)
        .with(IRQ_RAM, PreventionAction::SystemReset)
        .with(IRQ_STACK, PreventionAction::SystemReset)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionRecord {
    pub action: PreventionAction,
    pub triggered_by: ViolationSet,
    /// False when a stronger action fired in the same cycle.
    pub applied: bool,
}

/// Applies the actions bound to `violations`, each distinct action at most
/// once. Only the highest-precedence actions take effect; the rest are
/// logged as subsumed. Records come back strongest first.
pub fn apply_prevention(
    state: &mut DeviceState,
    violations: ViolationSet,
    binding: &PreventionBinding,
) -> Vec<ActionRecord> {
    let mut grouped: BTreeMap<PreventionAction, ViolationSet> = BTreeMap::new();
    for kind in violations.iter() {
        grouped.entry(binding.get(kind)).or_default().insert(kind);
    }
    let Some(top) = grouped.keys().map(|a| a.precedence()).max() else {
        return Vec::new();
    };

    let mut records: Vec<ActionRecord> = grouped
        .into_iter()
        .map(|(action, triggered_by)| ActionRecord {
            action,
            triggered_by,
            applied: action.precedence() == top,
        })
        .collect();
    records.sort_by(|a, b| {
        b.action
            .precedence()
            .cmp(&a.action.precedence())
            .then(a.action.cmp(&b.action))
    });

    for rec in records.iter().filter(|r| r.applied) {
        match rec.action {
            PreventionAction::PassThrough => {}
            PreventionAction::SoftModeSwitch { mask } => state.r2 = mode_switch(state.r2, mask),
            PreventionAction::HardCpuOff => state.cpu_halted = true,
            PreventionAction::ChipGateAndRecover => {
                state.chip_gate_active = true;
                state.recovery_pending = true;
            }
            PreventionAction::SystemReset => {
                state.reset_pending = true;
                state.raise_reset_bit();
            }
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{step, AccessEvent};
    use crate::mem_model::{GoldenImage, MemoryLayout, RegionKind, KEY_LEN};
    use ViolationKind::*;

    fn device() -> DeviceState {
        let layout = MemoryLayout::default();
        let key = [3; KEY_LEN];
        let n = layout.region(RegionKind::Flash).len();
        DeviceState::new(layout, key, GoldenImage::provision(&key, vec![0; n])).unwrap()
    }

    #[test]
    fn default_lookups() {
        let b = default_binding();
        assert_eq!(b.get(CPU_ROM_RD), PreventionAction::HardCpuOff);
        assert_eq!(b.get(IRQ_RAM), PreventionAction::SystemReset);
        assert_eq!(b.get(IRQ_STACK), PreventionAction::SystemReset);
        assert_eq!(b.get(DMA_RAM_WR), PreventionAction::ChipGateAndRecover);
        assert_eq!(b.get(CPU_RAM_WR), PreventionAction::ChipGateAndRecover);
        assert_eq!(b.get(DMA_STACK_RD), PreventionAction::ChipGateAndRecover);
    }

    #[test]
    fn mode_switch_examples() {
        assert_eq!(mode_switch(ModeRegister(0), 0x00F0).value(), 0x00F0);
        assert_eq!(mode_switch(ModeRegister(0x00F0), 0x00F0).value(), 0x00F0);
        assert_eq!(mode_switch(ModeRegister(GIE), CPUOFF).value(), 0x0018);
        assert_eq!(LPM_SWITCH_MASK, 0x00F0);
    }

    #[test]
    fn modes_from_bits() {
        assert_eq!(ModeRegister(0).mode(), PowerMode::Active);
        assert_eq!(ModeRegister(GIE | SCG1).mode(), PowerMode::Active);
        assert_eq!(ModeRegister(CPUOFF).mode(), PowerMode::Lpm0);
        assert_eq!(ModeRegister(CPUOFF | SCG0).mode(), PowerMode::Lpm1);
        assert_eq!(ModeRegister(CPUOFF | SCG1).mode(), PowerMode::Lpm2);
        assert_eq!(ModeRegister(CPUOFF | SCG0 | SCG1).mode(), PowerMode::Lpm3);
        // #240 sets every low-power bit
        assert_eq!(ModeRegister(LPM_SWITCH_MASK).mode(), PowerMode::Lpm4);
    }

    #[test]
    fn cen_sel() {
        let mut c = CtrlRegister::default();
        assert!(!ctrl_cen_sel(c));
        c.latch(ViolationSet::from_bits(0x0001));
        assert!(!ctrl_cen_sel(c));
        c.latch(ViolationSet::from_bits(0x0004));
        assert!(ctrl_cen_sel(c));
    }

    #[test]
    fn key_read_idles_cpu_only() {
        let mut dev = device();
        let v = step(&mut dev, &AccessEvent::cpu_read(0x4000, 0x6A00));
        let recs = apply_prevention(&mut dev, v, &default_binding());
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].action, PreventionAction::HardCpuOff);
        assert!(dev.cpu_halted());
        assert!(!dev.chip_gate_active());
        assert!(!dev.reset_pending());
    }

    #[test]
    fn ram_write_gates_and_queues_recovery() {
        let mut dev = device();
        let v = step(&mut dev, &AccessEvent::dma_write(0x6100, 0x4000));
        apply_prevention(&mut dev, v, &default_binding());
        assert!(dev.chip_gate_active());
        assert!(dev.recovery_pending());
    }

    #[test]
    fn atomicity_resets_with_d10() {
        let mut dev = device();
        let v = step(&mut dev, &AccessEvent::idle(0x6100).with_irq());
        apply_prevention(&mut dev, v, &default_binding());
        assert!(dev.reset_pending());
        assert_eq!(dev.ctrl().value(), 0x0400 | 0x0002);
    }

    #[test]
    fn precedence_subsumes_but_logs() {
        let mut dev = device();
        let v: ViolationSet = [IRQ_RAM, CPU_ROM_RD, DMA_RAM_WR].into_iter().collect();
        let recs = apply_prevention(&mut dev, v, &default_binding());
        let actions: Vec<_> = recs.iter().map(|r| (r.action, r.applied)).collect();
        assert_eq!(
            actions,
            [
                (PreventionAction::SystemReset, true),
                (PreventionAction::ChipGateAndRecover, false),
                (PreventionAction::HardCpuOff, false),
            ]
        );
        assert!(dev.reset_pending());
        assert!(!dev.cpu_halted());
        assert!(!dev.chip_gate_active());
    }

    #[test]
    fn equal_rank_soft_switches_both_apply() {
        let mut dev = device();
        let b = PreventionBinding::uniform(PreventionAction::PassThrough)
            .with(
                DMA_ROM_RD,
                PreventionAction::SoftModeSwitch { mask: CPUOFF },
            )
            .with(CPU_RAM_RD, PreventionAction::SoftModeSwitch { mask: SCG1 });
        let v: ViolationSet = [DMA_ROM_RD, CPU_RAM_RD].into_iter().collect();
        let recs = apply_prevention(&mut dev, v, &b);
        assert!(recs.iter().all(|r| r.applied));
        assert_eq!(dev.r2().value(), CPUOFF | SCG1);
        assert!(dev.cpu_stopped());
    }

    #[test]
    fn no_violations_no_records() {
        let mut dev = device();
        let before = dev.clone();
        assert!(apply_prevention(&mut dev, ViolationSet::EMPTY, &default_binding()).is_empty());
        assert_eq!(dev, before);
    }
}
