//! Whole-trace brute-force classifier, used to cross-check the incremental
//! monitor. It shares no code with [`crate::detector::classify`]: the access
//! rules are restated as a flat table and regions are found by linear scan.

use crate::detector::{AccessEvent, ViolationKind};
use crate::mem_model::{MemoryLayout, RegionKind};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Source {
    Interrupt,
    CpuRead,
    CpuWrite,
    DmaRead,
    DmaWrite,
}

/// Which pc regions a rule fires in. `NotAppNorBoot` covers flash, recovery
/// ROM, stack, metadata, key ROM and unmapped addresses.
#[derive(Clone, Copy, PartialEq, Eq)]
enum PcWhere {
    App,
    Boot,
    NotBoot,
    NotAppNorBoot,
}

struct Rule {
    kind: ViolationKind,
    source: Source,
    target: Option<RegionKind>,
    pc: PcWhere,
}

const fn rule(
    kind: ViolationKind,
    source: Source,
    target: Option<RegionKind>,
    pc: PcWhere,
) -> Rule {
    Rule {
        kind,
        source,
        target,
        pc,
    }
}

use PcWhere::*;
use RegionKind::{AppRam, BootRom, KeyRom, ReservedStack};
use Source::*;
use ViolationKind::*;

const RULES: &[Rule] = &[
    rule(IRQ_RAM, Interrupt, None, App),
    rule(IRQ_STACK, Interrupt, None, Boot),
    rule(CPU_ROM_RD, CpuRead, Some(KeyRom), NotBoot),
    rule(CPU_ROM_RD, CpuRead, Some(BootRom), NotAppNorBoot),
    rule(CPU_STACK_RD, CpuRead, Some(ReservedStack), NotAppNorBoot),
    rule(CPU_RAM_RD, CpuRead, Some(AppRam), Boot),
    rule(CPU_RAM_WR, CpuWrite, Some(AppRam), Boot),
    rule(DMA_ROM_RD, DmaRead, Some(KeyRom), NotBoot),
    rule(DMA_ROM_RD, DmaRead, Some(BootRom), NotAppNorBoot),
    rule(DMA_STACK_RD, DmaRead, Some(ReservedStack), NotAppNorBoot),
    rule(DMA_RAM_RD, DmaRead, Some(AppRam), Boot),
    rule(DMA_RAM_WR, DmaWrite, Some(AppRam), Boot),
];

fn bit_of(kind: ViolationKind) -> u16 {
    match kind {
        IRQ_RAM => 0x0001,
        IRQ_STACK => 0x0002,
        DMA_RAM_WR => 0x0004,
        DMA_RAM_RD => 0x0008,
        DMA_STACK_RD => 0x0010,
        DMA_ROM_RD => 0x0020,
        CPU_RAM_WR => 0x0040,
        CPU_RAM_RD => 0x0080,
        CPU_STACK_RD => 0x0100,
        CPU_ROM_RD => 0x0200,
    }
}

fn region_of(layout: &MemoryLayout, addr: u16) -> Option<RegionKind> {
    layout
        .regions()
        .iter()
        .find(|r| r.start <= addr && addr <= r.end)
        .map(|r| r.kind)
}

fn sources(e: &AccessEvent) -> Vec<(Source, u16)> {
    let mut out = Vec::new();
    if e.irq {
        out.push((Interrupt, e.pc));
    }
    match (e.dma_en, e.ren, e.wen) {
        (false, true, _) => out.push((CpuRead, e.daddr)),
        (true, true, _) => out.push((DmaRead, e.dma_addr)),
        _ => {}
    }
    match (e.dma_en, e.wen) {
        (false, true) => out.push((CpuWrite, e.daddr)),
        (true, true) => out.push((DmaWrite, e.dma_addr)),
        _ => {}
    }
    out
}

fn pc_matches(layout: &MemoryLayout, pc: u16, want: PcWhere) -> bool {
    let r = region_of(layout, pc);
    let in_app = r == Some(AppRam);
    let in_boot = r == Some(BootRom);
    match want {
        App => in_app,
        Boot => in_boot,
        NotBoot => !in_boot,
        NotAppNorBoot => !in_app && !in_boot,
    }
}

/// OR of the register bits of every rule matched by any event of `trace`.
pub fn classify_trace_naive(layout: &MemoryLayout, trace: &[AccessEvent]) -> u16 {
    let mut word = 0u16;
    for e in trace {
        for (source, addr) in sources(e) {
            for r in RULES.iter().filter(|r| r.source == source) {
                let target_ok = match r.target {
                    None => true,
                    Some(t) => region_of(layout, addr) == Some(t),
                };
                if target_ok && pc_matches(layout, e.pc, r.pc) {
                    word |= bit_of(r.kind);
                }
            }
        }
    }
    word
}
