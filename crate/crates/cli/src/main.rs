//! `rares` command-line front end.
//!
//! Exit status: 0 clean, 1 usage or parse error, 2 violations detected (or
//! attestation not verified), 3 boot unrecoverable.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rares_core::attestation::loopback_exchange;
use rares_core::scenario::{BootSummary, ExitClass};
use rares_core::{
    fsbl_boot, parse_scenario, verify_report, AttestRequest, BootOutcome, Scenario, Simulation,
    VerifierPolicy,
};

const EXIT_CLEAN: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_VIOLATIONS: u8 = 2;
const EXIT_UNRECOVERABLE: u8 = 3;

/// Reserved; the simulator core is deterministic and never reads it.
const SEED_VAR: &str = "RARES_SIM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "rares",
    version,
    about = "Runtime-attack-resilient device simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Boot the device and replay the scenario trace.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Include the control register snapshot taken before any clear.
        #[arg(long)]
        snapshot_pre_clear: bool,
    },
    /// Run only the first-stage boot loader.
    Boot {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run the scenario, then challenge the device and verify its report.
    Attest {
        scenario: PathBuf,
        /// 32-byte nonce as 64 hex characters.
        #[arg(long)]
        nonce: String,
        /// First attested address (0x-prefixed hex or decimal).
        #[arg(long)]
        start: String,
        /// Last attested address, inclusive.
        #[arg(long)]
        end: String,
        /// Also demand a completed proof of execution.
        #[arg(long)]
        require_exec: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_CLEAN
            });
        }
    };
    let _ = std::env::var_os(SEED_VAR);

    let status = match cli.command {
        Command::Run {
            scenario,
            format,
            snapshot_pre_clear,
        } => cmd_run(&scenario, format, snapshot_pre_clear),
        Command::Boot { scenario, format } => cmd_boot(&scenario, format),
        Command::Attest {
            scenario,
            nonce,
            start,
            end,
            require_exec,
            format,
        } => cmd_attest(&scenario, &nonce, &start, &end, require_exec, format),
    };
    ExitCode::from(status.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        EXIT_USAGE
    }))
}

fn load(path: &Path) -> Result<Scenario, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(path: &Path, format: Format, snapshot: bool) -> Result<u8, String> {
    let scenario = load(path)?;
    let report = rares_core::run(&scenario);
    match format {
        Format::Text => print!("{}", report.render_text(snapshot)),
        Format::Json => print!("{}", report.to_json(snapshot)),
    }
    Ok(match report.exit {
        ExitClass::Clean => EXIT_CLEAN,
        ExitClass::Violations => EXIT_VIOLATIONS,
        ExitClass::Unrecoverable => EXIT_UNRECOVERABLE,
    })
}

fn cmd_boot(path: &Path, format: Format) -> Result<u8, String> {
    let scenario = load(path)?;
    let mut device = scenario.power_on_device().map_err(|e| e.to_string())?;
    let boot = fsbl_boot(&mut device);
    let summary = BootSummary::from(&boot);
    match format {
        Format::Text => {
            let outcome = match boot.outcome {
                BootOutcome::VerifiedClean => "verified clean",
                BootOutcome::RecoveredThenVerified => "recovered then verified",
                BootOutcome::Unrecoverable => "unrecoverable",
            };
            println!("boot: {outcome} (attempts {})", boot.attempts);
            for (i, d) in summary.digests.iter().enumerate() {
                println!(
                    "  attempt {}: computed {} reference {}",
                    i + 1,
                    hex::encode(d.computed),
                    hex::encode(d.reference)
                );
            }
        }
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("boot summary serializes")
        ),
    }
    Ok(if boot.allows_normal_operation() {
        EXIT_CLEAN
    } else {
        EXIT_UNRECOVERABLE
    })
}

fn parse_addr(what: &str, s: &str) -> Result<u16, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u16::from_str_radix(h, 16),
        None => s.parse::<u16>(),
    };
    parsed.map_err(|_| format!("{what}: `{s}` is not a 16-bit address"))
}

fn cmd_attest(
    path: &Path,
    nonce_hex: &str,
    start: &str,
    end: &str,
    require_exec: bool,
    format: Format,
) -> Result<u8, String> {
    let nonce: [u8; 32] = hex::decode(nonce_hex)
        .map_err(|e| format!("nonce: {e}"))?
        .try_into()
        .map_err(|v: Vec<u8>| format!("nonce: expected 32 bytes, got {}", v.len()))?;
    let req = AttestRequest {
        nonce,
        region_start: parse_addr("start", start)?,
        region_end: parse_addr("end", end)?,
    };

    let scenario = load(path)?;
    let expected_device = scenario.expected_device().map_err(|e| e.to_string())?;
    let expected = expected_device
        .bytes_in(req.region_start, req.region_end)
        .ok_or_else(|| {
            format!(
                "bounds {:#06x}..={:#06x} do not lie inside one mapped region",
                req.region_start, req.region_end
            )
        })?;

    let mut sim = Simulation::new(&scenario);
    while sim.step_next().is_some() {}
    if sim.is_halted() {
        eprintln!("device did not reach normal operation");
        return Ok(EXIT_UNRECOVERABLE);
    }

    let report = loopback_exchange(sim.state(), &req).map_err(|e| e.to_string())?;
    let policy = if require_exec {
        VerifierPolicy::RequireExec
    } else {
        VerifierPolicy::AnyExec
    };
    let verified = verify_report(&scenario.key, &req, &report, expected, policy);

    match format {
        Format::Text => {
            println!(
                "region: {:#06x}..={:#06x}",
                req.region_start, req.region_end
            );
            println!("exec_flag: {}", report.exec_flag);
            println!("er: {:#06x}..={:#06x}", report.er_min, report.er_max);
            println!("tag: {}", hex::encode(report.tag));
            println!("verified: {verified}");
        }
        Format::Json => {
            let value = serde_json::json!({
                "nonce": hex::encode(req.nonce),
                "start": format!("{:#06x}", req.region_start),
                "end": format!("{:#06x}", req.region_end),
                "exec_flag": report.exec_flag,
                "er_min": format!("{:#06x}", report.er_min),
                "er_max": format!("{:#06x}", report.er_max),
                "tag": hex::encode(report.tag),
                "verified": verified,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&value).expect("json value serializes")
            );
        }
    }
    Ok(if verified {
        EXIT_CLEAN
    } else {
        EXIT_VIOLATIONS
    })
}
