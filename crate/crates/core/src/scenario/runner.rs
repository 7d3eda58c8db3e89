use crate::attestation::{attest, pox_begin, pox_end, verify_report, VerifierPolicy};
use crate::detector::{step, DETECTION_MASK};
use crate::mem_model::{DeviceState, SuppressReason, WriteOutcome};
use crate::prevention::{apply_prevention, ctrl_cen_sel};
use crate::secureboot::{fsbl_boot, reflash, BootReport};

use super::report::{
    final_state, ActionRow, AttestRecord, BootSummary, CycleRow, ExitClass, MemoryEffect,
    RecoveryKind, RecoveryRecord, RunReport,
};
use super::{Scenario, TraceEvent};

/// Step-by-step execution of one scenario.
///
/// Between two trace events the runner crosses a cycle boundary, in this
/// order: close the POX window if it ended, answer due attestation requests,
/// service a queued reset or reflash, open the POX window if it begins before
/// the next event.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    state: DeviceState,
    expected: DeviceState,
    boot: BootReport,
    rows: Vec<CycleRow>,
    recoveries: Vec<RecoveryRecord>,
    attestations: Vec<AttestRecord>,
    pre_clear: u16,
    next_event: usize,
    next_attest: usize,
    pox_opened: bool,
    dead: bool,
}

impl<'a> Simulation<'a> {
    /// Powers the device on and runs the FSBL.
    ///
    /// # Panics
    ///
    /// If the scenario's memory contents do not fit its layout. Parsed
    /// scenarios are always valid.
    pub fn new(scenario: &'a Scenario) -> Self {
        let expected = scenario
            .expected_device()
            .expect("scenario contents fit the layout");
        let mut state = scenario
            .power_on_device()
            .expect("scenario contents fit the layout");
        let boot = fsbl_boot(&mut state);
        let dead = !boot.allows_normal_operation();

        let mut sim = Simulation {
            scenario,
            state,
            expected,
            boot,
            rows: Vec::new(),
            recoveries: Vec::new(),
            attestations: Vec::new(),
            pre_clear: 0,
            next_event: 0,
            next_attest: 0,
            pox_opened: false,
            dead,
        };
        if !sim.dead {
            let first = sim.scenario.trace.first().map(|t| t.cycle);
            sim.boundary(None, first);
        }
        sim
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn boot(&self) -> &BootReport {
        &self.boot
    }

    pub fn rows(&self) -> &[CycleRow] {
        &self.rows
    }

    /// True once a boot (initial or after reset) failed; no further events
    /// run.
    pub fn is_halted(&self) -> bool {
        self.dead
    }

    pub fn is_finished(&self) -> bool {
        self.dead || self.next_event >= self.scenario.trace.len()
    }

    /// Executes the next trace event and the boundary after it.
    pub fn step_next(&mut self) -> Option<&CycleRow> {
        if self.is_finished() {
            return None;
        }
        let trace = &self.scenario.trace;
        let current = trace[self.next_event];
        self.next_event += 1;
        let next_cycle = trace.get(self.next_event).map(|t| t.cycle);

        let row = self.execute(&current);
        self.rows.push(row);
        self.boundary(Some(current.cycle), next_cycle);
        self.rows.last()
    }

    pub fn finish(mut self) -> RunReport {
        while self.step_next().is_some() {}
        let exit = if self.dead {
            ExitClass::Unrecoverable
        } else if self.rows.iter().any(|r| !r.violations.is_empty()) {
            ExitClass::Violations
        } else {
            ExitClass::Clean
        };
        RunReport {
            scenario: self.scenario.name.clone(),
            boot: BootSummary::from(&self.boot),
            golden_consistent: self.scenario.golden.is_consistent(&self.scenario.key),
            skipped_events: self.scenario.trace.len() - self.rows.len(),
            rows: self.rows,
            recoveries: self.recoveries,
            attestations: self.attestations,
            ctrl_snapshot_pre_clear: self.pre_clear,
            final_state: final_state(&self.state),
            exit,
        }
    }

    fn execute(&mut self, t: &TraceEvent) -> CycleRow {
        let ev = t.event;
        let violations = step(&mut self.state, &ev);
        let records = apply_prevention(&mut self.state, violations, &self.scenario.binding);
        self.pre_clear |= self.state.ctrl().value() & DETECTION_MASK;

        let memory = if ev.wen {
            if self.state.reset_pending() {
                MemoryEffect::SuppressedReset
            } else if !ev.dma_en && self.state.cpu_stopped() {
                MemoryEffect::IgnoredCpuOff
            } else {
                match self.state.apply_write(ev.target_addr(), t.data) {
                    Ok(WriteOutcome::Applied) => MemoryEffect::Applied,
                    Ok(WriteOutcome::Suppressed(SuppressReason::ChipGate)) => {
                        MemoryEffect::SuppressedGate
                    }
                    Ok(WriteOutcome::Suppressed(SuppressReason::ReadOnly)) => {
                        MemoryEffect::SuppressedReadOnly
                    }
                    Err(_) => MemoryEffect::Unmapped,
                }
            }
        } else if ev.ren {
            if !ev.dma_en && self.state.cpu_stopped() {
                MemoryEffect::IgnoredCpuOff
            } else {
                MemoryEffect::Read
            }
        } else {
            MemoryEffect::None
        };

        let ctrl = self.state.ctrl();
        CycleRow {
            cycle: t.cycle,
            event: describe(&ev, t.data),
            violations,
            ctrl: ctrl.value(),
            ctrl_bits: ctrl.decoded(),
            cen_sel: ctrl_cen_sel(ctrl),
            actions: records.iter().map(ActionRow::from).collect(),
            memory,
        }
    }

    /// Boundary after the event at `done` (None: power-on) and before the
    /// event at `next` (None: end of trace).
    fn boundary(&mut self, done: Option<u64>, next: Option<u64>) {
        let before_next = |c: u64| next.is_none_or(|n| c < n);

        if let Some(w) = self.scenario.pox {
            if self.state.exec_meta().armed && before_next(w.end_cycle) {
                pox_end(&mut self.state);
            }
        }

        while let Some(a) = self.scenario.attest.get(self.next_attest) {
            if !before_next(a.cycle) {
                break;
            }
            self.next_attest += 1;
            let cycle = a.cycle;
            let req = a.request;
            let report = attest(&self.state, &req).expect("attest bounds validated at parse");
            let expected = self
                .expected
                .bytes_in(req.region_start, req.region_end)
                .expect("attest bounds validated at parse");
            let verified = verify_report(
                &self.scenario.key,
                &req,
                &report,
                expected,
                VerifierPolicy::AnyExec,
            );
            self.attestations
                .push(AttestRecord::new(cycle, &req, &report, verified));
        }

        if let Some(after) = done {
            if self.state.reset_pending() {
                self.service_reset(after);
            } else if self.state.recovery_pending() {
                let before = self.state.ctrl().value();
                reflash(&mut self.state);
                self.recoveries.push(RecoveryRecord {
                    after_cycle: after,
                    kind: RecoveryKind::Reflash,
                    ctrl_before: before,
                    ctrl_after: self.state.ctrl().value(),
                    reboot: None,
                });
            }
        }

        if let (Some(w), Some(n)) = (self.scenario.pox, next) {
            if !self.dead && !self.pox_opened && w.begin_cycle <= n && n <= w.end_cycle {
                self.pox_opened = true;
                pox_begin(&mut self.state, w.er_min, w.er_max)
                    .expect("pox bounds validated at parse");
            }
        }
    }

    fn service_reset(&mut self, after: u64) {
        let before = self.state.ctrl().value();
        self.state.reset();
        let reboot = fsbl_boot(&mut self.state);
        if !reboot.allows_normal_operation() {
            self.dead = true;
        }
        self.recoveries.push(RecoveryRecord {
            after_cycle: after,
            kind: RecoveryKind::Reset,
            ctrl_before: before,
            ctrl_after: self.state.ctrl().value(),
            reboot: Some(BootSummary::from(&reboot)),
        });
    }
}

/// Boots, replays the whole trace, and reports.
pub fn run(scenario: &Scenario) -> RunReport {
    Simulation::new(scenario).finish()
}

fn describe(ev: &crate::detector::AccessEvent, data: u8) -> String {
    let who = if ev.dma_en { "dma" } else { "cpu" };
    let mut s = format!("pc={:#06x}", ev.pc);
    if ev.irq {
        s.push_str(" irq");
    }
    if ev.ren {
        s.push_str(&format!(" {who} rd {:#06x}", ev.target_addr()));
    } else if ev.wen {
        s.push_str(&format!(" {who} wr {:#06x}={data:#04x}", ev.target_addr()));
    }
    s
}
