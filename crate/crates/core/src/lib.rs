//! Trace-driven simulator of a runtime-attack-resilient embedded device.
//!
//! The device is modelled as a 16-bit MSP430-class memory map observed one
//! machine cycle at a time through seven bus control signals. A hardware
//! monitor ([`detector`]) latches access-rule violations into a sticky 16-bit
//! control register, [`prevention`] turns latched violations into
//! use-case-specific countermeasures, [`secureboot`] verifies and restores the
//! flash image from a golden copy held in recovery ROM, and [`attestation`]
//! answers nonce challenges with HMAC-bound proof-of-execution reports.
//!
//! [`scenario`] ties it together: a declarative scenario file is parsed,
//! booted, replayed cycle by cycle, and summarised in a [`scenario::RunReport`].

pub mod attestation;
pub mod detector;
pub mod mem_model;
pub mod prevention;
pub mod scenario;
pub mod secureboot;

pub use attestation::{
    attest, hmac_sha256, verify_report, AttestError, AttestReport, AttestRequest, ExecMetadata,
    VerifierPolicy,
};
pub use detector::{
    classify, exec_context, software_read_ctrl, software_write_ctrl, step, AccessEvent, CtrlError,
    CtrlRegister, ExecContext, ViolationKind, ViolationSet,
};
pub use mem_model::{
    build_layout, classify_addr, DeviceState, GoldenImage, LayoutError, MemError, MemoryLayout,
    Region, RegionKind, WriteOutcome,
};
pub use prevention::{
    apply_prevention, ctrl_cen_sel, default_binding, mode_switch, ActionRecord, ModeRegister,
    PowerMode, PreventionAction, PreventionBinding,
};
pub use scenario::{parse_scenario, run, RunReport, Scenario, ScenarioError, Simulation};
pub use secureboot::{fsbl_boot, reflash, verify_flash, BootOutcome, BootReport};
