mod common;

use proptest::prelude::*;
use rand::Rng;

use rares_core::attestation::{pox_begin, pox_end, pox_observe, Frame};
use rares_core::detector::RESET_BIT;
use rares_core::mem_model::SuppressReason;
use rares_core::{
    apply_prevention, attest, classify, classify_addr, default_binding, mode_switch, run, step,
    AccessEvent, AttestReport, AttestRequest, DeviceState, GoldenImage, MemoryLayout, ModeRegister,
    PreventionAction, RegionKind, Scenario, WriteOutcome,
};

use common::{golden_flash, rng, trace, KEY};

fn device(seed: u64) -> (DeviceState, rand_chacha::ChaCha8Rng) {
    let mut r = rng(seed);
    let layout = MemoryLayout::default();
    let golden = GoldenImage::provision(&KEY, golden_flash(&mut r, &layout));
    (DeviceState::new(layout, KEY, golden).unwrap(), r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn classify_addr_matches_linear_scan(addr: u16) {
        let layout = MemoryLayout::default();
        let linear = layout
            .regions()
            .iter()
            .find(|r| r.start <= addr && addr <= r.end)
            .map(|r| r.kind);
        prop_assert_eq!(classify_addr(&layout, addr), linear);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rom_and_metadata_reject_bus_writes(seed: u64, byte: u8) {
        let (mut state, mut r) = device(seed);
        let kinds = [
            RegionKind::BootRom,
            RegionKind::KeyRom,
            RegionKind::RecoveryRom,
            RegionKind::Metadata,
        ];
        let kind = kinds[r.gen_range(0..kinds.len())];
        let addr = common::addr_in(&mut r, state.layout(), kind);
        let before = state.region_bytes(kind).to_vec();
        prop_assert_eq!(
            state.apply_write(addr, byte).unwrap(),
            WriteOutcome::Suppressed(SuppressReason::ReadOnly)
        );
        prop_assert_eq!(state.region_bytes(kind), before.as_slice());
    }

    #[test]
    fn detection_bits_are_sticky(seed: u64) {
        let (mut state, mut r) = device(seed);
        let layout = state.layout().clone();
        let mut seen = 0u16;
        for ev in trace(&mut r, &layout, 64) {
            step(&mut state, &ev);
            let now = state.ctrl().detections().bits();
            prop_assert_eq!(now & seen, seen);
            seen = now;
        }
    }

    #[test]
    fn classify_is_pure(seed: u64) {
        let mut r = rng(seed);
        let layout = MemoryLayout::default();
        let ev = common::event(&mut r, &layout);
        prop_assert_eq!(classify(&layout, &ev), classify(&layout, &ev));
    }

    #[test]
    fn mode_switch_only_sets_bits(r2: u16, mask: u16) {
        let out = mode_switch(ModeRegister::new(r2), mask).value();
        prop_assert_eq!(out & r2, r2);
        prop_assert_eq!(out & mask, mask);
        prop_assert_eq!(out, r2 | mask);
    }

    #[test]
    fn reset_bit_only_from_system_reset(seed: u64) {
        let (mut state, mut r) = device(seed);
        let layout = state.layout().clone();
        let binding = default_binding();
        for ev in trace(&mut r, &layout, 64) {
            let had = state.ctrl().value() & RESET_BIT != 0;
            let v = step(&mut state, &ev);
            let records = apply_prevention(&mut state, v, &binding);
            let has = state.ctrl().value() & RESET_BIT != 0;
            if has && !had {
                prop_assert!(records
                    .iter()
                    .any(|a| a.applied && a.action == PreventionAction::SystemReset));
            }
        }
    }

    #[test]
    fn breached_window_never_proves(seed: u64) {
        let (mut state, mut r) = device(seed);
        let layout = state.layout().clone();
        pox_begin(&mut state, 0x4000, 0x40FF).unwrap();
        pox_observe(&mut state, &AccessEvent::idle(0x4000).with_irq(), Default::default());
        for _ in 0..r.gen_range(0..32) {
            let ev = AccessEvent::idle(r.gen_range(0x4000..=0x40FF));
            let v = classify(&layout, &ev);
            pox_observe(&mut state, &ev, v);
            prop_assert!(!state.exec_meta().exec_flag);
        }
        pox_end(&mut state);
        prop_assert!(!state.exec_meta().exec_flag);
    }

    #[test]
    fn frames_round_trip(nonce: [u8; 32], a: u16, b: u16, flag: bool, tag: [u8; 32]) {
        let req = Frame::Request(AttestRequest { nonce, region_start: a, region_end: b });
        let rep = Frame::Report(AttestReport { exec_flag: flag, er_min: a, er_max: b, tag });
        for f in [req, rep] {
            let bytes = f.encode();
            prop_assert_eq!(Frame::read_from(&mut bytes.as_slice()).unwrap(), f);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn key_never_appears_in_reports(seed: u64) {
        let mut r = rng(seed);
        let layout = MemoryLayout::default();
        let key: [u8; 32] = r.gen();
        let mut sc = Scenario::new(key, golden_flash(&mut r, &layout));
        let events = trace(&mut r, &layout, 48);
        sc.trace = common::stamp(&mut r, &events);
        sc.attest.push(rares_core::scenario::ScheduledAttest {
            cycle: 48,
            request: AttestRequest { nonce: r.gen(), region_start: 0x6A00, region_end: 0x6A1F },
        });

        let report = run(&sc);
        let hex_key = hex::encode(key);
        for text in [report.to_json(true), report.render_text(true)] {
            prop_assert!(!text.contains(&hex_key));
            prop_assert!(!text.to_uppercase().contains(&hex_key.to_uppercase()));
            prop_assert!(!text.as_bytes().windows(32).any(|w| w == key));
        }
    }

    #[test]
    fn attestation_tags_differ_per_nonce(seed: u64) {
        let (state, mut r) = device(seed);
        let base = AttestRequest { nonce: r.gen(), region_start: 0xE000, region_end: 0xE0FF };
        let mut other = base;
        other.nonce[r.gen_range(0..32)] ^= 1;
        prop_assert_ne!(attest(&state, &base).unwrap().tag, attest(&state, &other).unwrap().tag);
    }
}
