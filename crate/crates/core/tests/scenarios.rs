mod common;

use rares_core::scenario::{ExitClass, MemoryEffect, RecoveryKind};
use rares_core::{parse_scenario, run, BootOutcome, RunReport};

fn load(name: &str) -> RunReport {
    let path = common::scenario_dir().join(format!("{name}.rares.json"));
    let text = std::fs::read_to_string(&path).unwrap();
    run(&parse_scenario(&text).unwrap())
}

#[test]
fn every_bundled_scenario_parses_and_runs() {
    for (name, text) in common::bundled_scenarios() {
        let sc = parse_scenario(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let report = run(&sc);
        let attack = !name.starts_with("benign")
            && !name.starts_with("pox_clean")
            && !name.starts_with("tampered")
            && !name.starts_with("unrecoverable")
            && !name.starts_with("attest_tampered");
        if attack {
            assert_ne!(report.ctrl_snapshot_pre_clear, 0, "{name} latched nothing");
        }
    }
}

#[test]
fn benign_is_clean_and_verifies() {
    let r = load("benign");
    assert_eq!(r.exit, ExitClass::Clean);
    assert_eq!(r.ctrl_snapshot_pre_clear, 0);
    assert!(r.attestations.iter().all(|a| a.verified));
}

#[test]
fn key_read_halts_the_cpu_but_not_dma() {
    let r = load("key_read_d9");
    assert_eq!(r.exit, ExitClass::Violations);
    assert_eq!(r.ctrl_snapshot_pre_clear, 0x0200);
    assert!(r.final_state.cpu_halted);
    let effects: Vec<_> = r.rows.iter().map(|row| row.memory).collect();
    assert_eq!(effects[5], MemoryEffect::IgnoredCpuOff);
    assert_eq!(effects[6], MemoryEffect::Applied);
}

#[test]
fn ram_writes_during_swatt_are_gated_and_recovered() {
    for (name, bit) in [("dma_ram_write", 0x0004), ("cpu_ram_write", 0x0040)] {
        let r = load(name);
        let row = r.rows.iter().find(|row| row.ctrl != 0).unwrap();
        assert_eq!(row.ctrl, bit, "{name}");
        assert_eq!(row.memory, MemoryEffect::SuppressedGate, "{name}");
        assert!(row.cen_sel);
        assert_eq!(r.recoveries[0].kind, RecoveryKind::Reflash);
        assert_eq!(r.final_state.ctrl, 0);
    }
}

#[test]
fn irq_in_swatt_resets_and_reboots() {
    let r = load("irq_atomicity");
    let row = &r.rows[1];
    assert_eq!(row.ctrl, 0x0402);
    assert_eq!(r.recoveries.len(), 1);
    assert_eq!(r.recoveries[0].kind, RecoveryKind::Reset);
    assert_eq!(
        r.recoveries[0].reboot.as_ref().unwrap().outcome,
        BootOutcome::VerifiedClean
    );
    assert_eq!(r.final_state.ctrl, 0);
}

#[test]
fn boot_outcomes() {
    let tampered = load("tampered_flash");
    assert_eq!(tampered.boot.outcome, BootOutcome::RecoveredThenVerified);
    assert_eq!(tampered.boot.attempts, 2);
    assert_eq!(tampered.exit, ExitClass::Clean);

    let dead = load("unrecoverable");
    assert_eq!(dead.boot.outcome, BootOutcome::Unrecoverable);
    assert_eq!(dead.exit, ExitClass::Unrecoverable);
    assert!(!dead.golden_consistent);
    assert!(dead.rows.is_empty());
    assert_eq!(dead.skipped_events, 4);
}

#[test]
fn pox_flags() {
    let clean = load("pox_clean");
    assert!(clean.attestations[0].exec_flag);
    assert!(clean.attestations[0].verified);

    let broken = load("pox_interrupted");
    assert!(!broken.attestations[0].exec_flag);
    assert!(broken.attestations[0].verified);
}

#[test]
fn soft_switch_enters_lpm4() {
    let r = load("soft_mode_switch");
    assert_eq!(r.final_state.r2, 0x00F0);
    assert_eq!(r.final_state.mode, "LPM4");
    assert!(!r.final_state.cpu_halted);
}

#[test]
fn tampered_ram_fails_attestation() {
    let r = load("attest_tampered_ram");
    assert!(!r.attestations[0].verified);
}

#[test]
fn foreign_context_reads_cover_six_kinds() {
    let r = load("foreign_context_reads");
    assert_eq!(r.ctrl_snapshot_pre_clear, 0x03B8);
}
