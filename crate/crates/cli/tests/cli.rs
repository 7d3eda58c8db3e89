use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.rares.json"))
}

fn rares(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rares"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const NONCE: &str = "a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5";

#[test]
fn run_exit_codes_follow_the_corpus() {
    let expected = [
        ("benign", 0),
        ("tampered_flash", 0),
        ("pox_clean", 0),
        ("attest_tampered_ram", 0),
        ("key_read_d9", 2),
        ("dma_ram_write", 2),
        ("cpu_ram_write", 2),
        ("irq_atomicity", 2),
        ("pox_interrupted", 2),
        ("soft_mode_switch", 2),
        ("foreign_context_reads", 2),
        ("unrecoverable", 3),
    ];
    for (name, want) in expected {
        let path = scenario(name);
        let out = rares(&["run", path.to_str().unwrap()]);
        assert_eq!(
            code(&out),
            want,
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn json_output_is_pure_json() {
    let path = scenario("dma_ram_write");
    let out = rares(&["run", path.to_str().unwrap(), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("stdout is JSON");
    assert_eq!(v["exit"], "violations");
    assert!(v.get("ctrl_snapshot_pre_clear").is_none());

    let out = rares(&[
        "run",
        path.to_str().unwrap(),
        "--format",
        "json",
        "--snapshot-pre-clear",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ctrl_snapshot_pre_clear"], "0x0004");
}

#[test]
fn text_run_shows_register_and_snapshot() {
    let path = scenario("key_read_d9");
    let out = rares(&["run", path.to_str().unwrap(), "--snapshot-pre-clear"]);
    let text = stdout(&out);
    assert!(text.contains("D9:CPU_ROM_RD"));
    assert!(text.contains("ctrl snapshot (pre-clear): 0x0200"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&rares(&["run", "/nonexistent/x.json"])), 1);
    assert_eq!(code(&rares(&["frobnicate"])), 1);

    let path = scenario("benign");
    let p = path.to_str().unwrap();
    let odd = &NONCE[1..];
    assert_eq!(
        code(&rares(&[
            "attest", p, "--nonce", odd, "--start", "0xE000", "--end", "0xE0FF"
        ])),
        1
    );
    let short = &NONCE[..62];
    assert_eq!(
        code(&rares(&[
            "attest", p, "--nonce", short, "--start", "0xE000", "--end", "0xE0FF"
        ])),
        1
    );
    // Spans flash and the unmapped gap after it.
    assert_eq!(
        code(&rares(&[
            "attest", p, "--nonce", NONCE, "--start", "0xE000", "--end", "0xF000"
        ])),
        1
    );
}

#[test]
fn malformed_scenario_reports_location() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "{{\n  \"key\": \"00\",\n  \"bogus\": 1\n}}").unwrap();
    let out = rares(&["run", f.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn honest_attestation_verifies() {
    let path = scenario("benign");
    let out = rares(&[
        "attest",
        path.to_str().unwrap(),
        "--nonce",
        NONCE,
        "--start",
        "0xE000",
        "--end",
        "0xE0FF",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("verified: true"));
}

#[test]
fn tampered_ram_fails_attestation() {
    let path = scenario("attest_tampered_ram");
    let out = rares(&[
        "attest",
        path.to_str().unwrap(),
        "--nonce",
        NONCE,
        "--start",
        "0x4000",
        "--end",
        "0x40FF",
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 2);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verified"], false);
}

#[test]
fn require_exec_policy() {
    let args = |name: &str| {
        let p = scenario(name);
        rares(&[
            "attest",
            p.to_str().unwrap(),
            "--nonce",
            NONCE,
            "--start",
            "0x4000",
            "--end",
            "0x40FF",
            "--require-exec",
        ])
    };
    assert_eq!(code(&args("pox_clean")), 0);
    let out = args("pox_interrupted");
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("verified: false"));
}

#[test]
fn boot_command() {
    let tampered = scenario("tampered_flash");
    let out = rares(&["boot", tampered.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("recovered"));

    let dead = scenario("unrecoverable");
    let out = rares(&["boot", dead.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&out), 3);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["attempts"], 2);
}

#[test]
fn seed_variable_does_not_change_output() {
    let path = scenario("foreign_context_reads");
    let p = path.to_str().unwrap();
    let plain = rares(&["run", p, "--format", "json"]);
    let seeded = Command::new(env!("CARGO_BIN_EXE_rares"))
        .args(["run", p, "--format", "json"])
        .env("RARES_SIM_SEED", "12345")
        .output()
        .unwrap();
    assert_eq!(plain.stdout, seeded.stdout);
}
