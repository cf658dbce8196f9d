mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{fixture_path, FIXTURES};
use encpc::cli::{EncryptedReport, MaeSummary, OracleReport, VerifyReport};
use encpc::netsim::METRICS_CSV_HEADER;
use encpc::pc_oracle::MAE_CSV_HEADER;

fn encpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_encpc")).args(args).output().unwrap()
}

fn fx(name: &str) -> String {
    fixture_path(name).to_string_lossy().into_owned()
}

fn report<T: serde::de::DeserializeOwned + serde::Serialize + PartialEq + std::fmt::Debug>(out: &Output) -> T {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let parsed: T = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{e}: {text}"));
    // Lossless: re-serializing gives the same document.
    assert_eq!(serde_json::to_string_pretty(&parsed).unwrap() + "\n", text);
    parsed
}

const PARALLEL: &str = r#"{"units":{"length":"km","time":"s"},"operators":[
 {"position":[7010,0,0],"velocity":[0,7.5,0],"covariance":[[1,0,0],[0,1,0],[0,0,1]],"radius":1,"epoch":0},
 {"position":[7000,0,0],"velocity":[0,7.5,0],"covariance":[[1,0,0],[0,1,0],[0,0,1]],"radius":1,"epoch":0}]}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn oracle_isotropic_within_statistical_bound() {
    let out = encpc(&["oracle", "--scenario", &fx("isotropic"), "--samples", "200000", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let r: OracleReport = report(&out);
    assert!(r.abs_difference <= r.three_sigma, "{r:?}");
    assert!((r.pc_integral - 0.08189230363059402).abs() < 1e-9);
}

#[test]
fn validation_and_degenerate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{ not json");
    let parallel = write(dir.path(), "parallel.json", PARALLEL);
    for cmd in ["oracle", "encrypted", "verify"] {
        assert_eq!(encpc(&[cmd, "--scenario", &bad]).status.code(), Some(2), "{cmd}");
        assert_eq!(encpc(&[cmd, "--scenario", &parallel]).status.code(), Some(3), "{cmd}");
        assert_eq!(encpc(&[cmd, "--scenario", "/nonexistent.json"]).status.code(), Some(2), "{cmd}");
        assert_eq!(encpc(&[cmd, "--scenario", &fx("isotropic"), "--samples", "0"]).status.code(), Some(2), "{cmd}");
    }
    assert_eq!(encpc(&["encrypted", "--scenario", &fx("isotropic"), "--backend", "fhe"]).status.code(), Some(2));
    assert_eq!(encpc(&["mae", "--scenario", &parallel]).status.code(), Some(3));
}

#[test]
fn encrypted_with_audit_passes_on_every_fixture() {
    for name in FIXTURES {
        let out = encpc(&["encrypted", "--scenario", &fx(name), "--samples", "2000", "--audit"]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let r: EncryptedReport = report(&out);
        assert!(r.audit.as_ref().unwrap().passed);
        assert!(r.output.unwrap().max_level <= 6);
    }
}

#[test]
fn audit_violation_exits_4() {
    for fault in ["skip-masking", "reuse-mask", "wrong-key-route", "unmasked-miss-distance", "plaintext-covariance-upload"] {
        let out = encpc(&[
            "encrypted", "--scenario", &fx("leo_crossing"), "--samples", "100", "--audit", "--inject-fault", fault,
        ]);
        assert_eq!(out.status.code(), Some(4), "{fault}");
        let r: EncryptedReport = report(&out);
        assert!(!r.audit.unwrap().passed);
    }
}

#[test]
fn determinism_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let t = dir.path().join(format!("t{tag}.jsonl"));
        let m = dir.path().join(format!("m{tag}.csv"));
        let out = encpc(&[
            "encrypted", "--scenario", &fx("correlated"), "--samples", "3000", "--seed", "99", "--audit",
            "--dump-payloads", "--transcript-out", t.to_str().unwrap(), "--metrics-out", m.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        (out.stdout, std::fs::read(t).unwrap(), std::fs::read(m).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let metrics = String::from_utf8(a.2).unwrap();
    assert_eq!(metrics.lines().next(), Some(METRICS_CSV_HEADER));
    assert!(metrics.lines().last().unwrap().starts_with("total,"));
    // Without payloads the log is still one JSON object per message.
    let t = dir.path().join("plain.jsonl");
    encpc(&["encrypted", "--scenario", &fx("correlated"), "--samples", "10", "--transcript-out", t.to_str().unwrap()]);
    for line in std::fs::read_to_string(t).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("payload").is_none());
    }
}

#[test]
fn quantized_20_bits_within_documented_tolerance() {
    for name in FIXTURES {
        for seed in ["1", "5", "8"] {
            let args = ["--scenario", &fx(name), "--samples", "10000", "--seed", seed];
            let exact: EncryptedReport = report(&encpc(&[&["encrypted"][..], &args].concat()));
            let q = encpc(&[&["encrypted", "--backend", "quantized", "--frac-bits", "20"][..], &args].concat());
            let q: EncryptedReport = report(&q);
            let tol = q.quantization_tolerance.unwrap();
            let diff = (q.output.unwrap().pc - exact.output.unwrap().pc).abs();
            assert!(diff <= tol, "{name} seed {seed}: {diff} > {tol}");
        }
    }
}

#[test]
fn verify_matches_and_detects_the_threshold_erratum() {
    for name in FIXTURES {
        let out = encpc(&["verify", "--scenario", &fx(name), "--samples", "5000"]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        let r: VerifyReport = report(&out);
        assert!(r.matched);
        assert_eq!(r.encrypted_pc, r.plaintext_pc);
    }
    let out = encpc(&["verify", "--scenario", &fx("isotropic"), "--samples", "5000", "--inject-fault", "rhs-unsquared"]);
    assert_eq!(out.status.code(), Some(5));
    let r: VerifyReport = report(&out);
    assert_ne!(r.encrypted_collisions, r.plaintext_collisions);
}

#[test]
fn mae_csv_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mae.csv");
    let out = encpc(&[
        "mae", "--scenario", &fx("isotropic"), "--counts", "100,1000,10000", "--trials", "40", "--csv-out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let s: MaeSummary = report(&out);
    let slope = s.slope.unwrap();
    assert!((-0.7..=-0.3).contains(&slope), "{slope}");
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next(), Some(MAE_CSV_HEADER));
    assert_eq!(text.lines().count(), 4);

    let out = encpc(&["mae", "--scenario", &fx("isotropic"), "--counts", "1000", "--trials", "30"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"slope\": \"NA\""));
    let s: MaeSummary = report(&out);
    assert_eq!(s.slope, None);
    assert_eq!(encpc(&["mae", "--scenario", &fx("isotropic"), "--trials", "5"]).status.code(), Some(2));
}
