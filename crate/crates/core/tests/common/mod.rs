//! Shared generators for the integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rares_core::scenario::TraceEvent;
use rares_core::{AccessEvent, MemoryLayout, RegionKind, Scenario};

pub const KEY: [u8; 32] = [
    0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, 0x0d, 0x0e, 0x0f,
    0x10, 0x11, 0x12, 0x13, 0x14, 0x15, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x1b, 0x1c, 0x1d, 0x1e, 0x1f,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn golden_flash(rng: &mut impl Rng, layout: &MemoryLayout) -> Vec<u8> {
    let len = layout.region(RegionKind::Flash).len();
    (0..len).map(|_| rng.gen()).collect()
}

/// Random address: mostly inside a random region, sometimes anywhere.
pub fn addr(rng: &mut impl Rng, layout: &MemoryLayout) -> u16 {
    if rng.gen_ratio(1, 8) {
        return rng.gen();
    }
    let regions = layout.regions();
    let r = regions[rng.gen_range(0..regions.len())];
    rng.gen_range(r.start..=r.end)
}

pub fn addr_in(rng: &mut impl Rng, layout: &MemoryLayout, kind: RegionKind) -> u16 {
    let r = layout.region(kind);
    rng.gen_range(r.start..=r.end)
}

/// Any well-formed bus event.
pub fn event(rng: &mut impl Rng, layout: &MemoryLayout) -> AccessEvent {
    let pc = addr(rng, layout);
    let target = addr(rng, layout);
    let ev = match rng.gen_range(0..5) {
        0 => AccessEvent::idle(pc),
        1 => AccessEvent::cpu_read(pc, target),
        2 => AccessEvent::cpu_write(pc, target),
        3 => AccessEvent::dma_read(pc, target),
        _ => AccessEvent::dma_write(pc, target),
    };
    if rng.gen_ratio(1, 6) {
        ev.with_irq()
    } else {
        ev
    }
}

pub fn trace(rng: &mut impl Rng, layout: &MemoryLayout, len: usize) -> Vec<AccessEvent> {
    (0..len).map(|_| event(rng, layout)).collect()
}

/// Cycle-stamps events 1, 2, 3, ... with random write data.
pub fn stamp(rng: &mut impl Rng, events: &[AccessEvent]) -> Vec<TraceEvent> {
    events
        .iter()
        .enumerate()
        .map(|(i, &event)| TraceEvent {
            cycle: i as u64 + 1,
            event,
            data: rng.gen(),
        })
        .collect()
}

pub fn scenario(rng: &mut impl Rng, events: &[AccessEvent]) -> Scenario {
    let layout = MemoryLayout::default();
    let mut sc = Scenario::new(KEY, golden_flash(rng, &layout));
    sc.trace = stamp(rng, events);
    sc
}

pub fn scenario_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn bundled_scenarios() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(scenario_dir())
        .expect("scenario directory exists")
        .map(|e| e.expect("readable entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (
                name,
                std::fs::read_to_string(&p).expect("readable scenario"),
            )
        })
        .collect();
    out.sort();
    out
}
