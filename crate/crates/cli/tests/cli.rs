use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn jaclab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jaclab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("JACLAB_OUT_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const NO_LAMBDA: &str = r#"{
  "scene": {"outer": {"disk": {"center": [0, 0], "radius": 1}},
            "subdomains": [{"id": 1, "circle": {"center": [0, 0], "radius": 0.5}}]},
  "coefficients": {"regions": [{"id": 1, "A_scalar": 2}, {"id": 2, "A_scalar": 1}]}
}"#;

#[test]
fn missing_lambda_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), NO_LAMBDA).unwrap();
    let o = jaclab(&["recon", "--config", "c.json", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn each_violation_gets_a_line() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{
      "scene": {"outer": {"disk": {"center": [0, 0], "radius": 1}},
                "subdomains": [{"id": 1, "circle": {"center": [0.8, 0], "radius": 0.5}}]},
      "coefficients": {"lambda": 0.5, "regions": [{"id": 1, "A_scalar": 2}]},
      "solver": {"h": 2.0},
      "family": {"traces": ["x", "y +"]}
    }"#;
    fs::write(tmp.path().join("c.json"), text).unwrap();
    let o = jaclab(&["jac", "report", "--config", "c.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("config error:")).collect();
    assert!(lines.len() >= 3, "{err}");
    assert!(
        err.contains("solver.h") && err.contains("family.traces[1]") && err.contains("outer boundary"),
        "{err}"
    );
}

#[test]
fn randomized_commands_need_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jaclab(&["frames", "check", "--dim", "3", "--samples", "10"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn bad_trace_expression_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jaclab(
        &["solve", "--config", "bundled-two-phase.json", "--bc", "x +* 1"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bc"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn reruns_with_the_same_seed_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &str| {
        let o = jaclab(
            &[
                "--seed",
                seed,
                "reduce",
                "--config",
                "bundled-two-phase.json",
                "--h",
                "1/16",
                "--out",
                out,
            ],
            tmp.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        manifest(&tmp.path().join(out))
    };
    let a = run("11", "a");
    let b = run("11", "b");
    let c = run("12", "c");
    assert_eq!(a, b);
    assert_ne!(a["files"], c["files"]);
}

#[test]
fn recon_reports_the_jump_and_lists_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jaclab(
        &["recon", "--config", "bundled-two-phase.json", "--h", "1/32"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // default location: ./out/<prefix>-<command>
    let dir = tmp.path().join("out/two-phase-recon");
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let jump = report["jumps"]["2->1"]["value"].as_f64().unwrap();
    assert!((jump - 2f64.ln()).abs() < 0.1 * 2f64.ln(), "{jump}");
    assert!(report["errors"]["gamma_rel_l2"].as_f64().unwrap() < 0.1);

    let m = manifest(&dir);
    let listed: Vec<&str> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    let mut on_disk: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    for f in m["files"].as_array().unwrap() {
        let data = fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        let hex: String = Sha256::digest(&data).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str().unwrap(), hex);
    }
    for img in ["gamma_true.pgm", "gamma_recovered.pgm"] {
        assert!(fs::read_to_string(dir.join(img)).unwrap().starts_with("P2\n"));
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_jaclab"))
        .args(["--seed", "5", "poincare", "--samples", "4"])
        .current_dir(tmp.path())
        .env("JACLAB_OUT_DIR", tmp.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("runs/poincare/poincare.json")).unwrap()).unwrap();
    assert!((s["scaling_ratio"].as_f64().unwrap() - 4.0).abs() < 1e-6);
    assert_eq!(s["violations"].as_u64(), Some(0));
}

#[test]
fn failed_certification_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jaclab(
        &[
            "--seed",
            "1",
            "construct",
            "--config",
            "bundled-two-phase.json",
            "--h",
            "1/16",
            "--sigma",
            "1000",
            "--out",
            "c",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("certification"));
    // the diagnostic outputs are still written
    assert!(tmp.path().join("c/balls.csv").exists());
}

#[test]
fn frame_check_writes_rows_per_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jaclab(
        &[
            "--seed",
            "2",
            "frames",
            "check",
            "--dim",
            "8",
            "--samples",
            "50",
            "--out",
            "f",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("f/frames.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.starts_with("sample,gram_error,det,rank\n"));
}
