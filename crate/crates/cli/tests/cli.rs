use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpdini"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn dini_prints_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["dini", "--modulus", "power:0.5"], dir.path());
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "3.0");
}

#[test]
fn verify_aperture_default_config_reports_three_apertures() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "aperture"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path());
    let alphas: Vec<f64> =
        s["reports"][0]["abscissae"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(alphas, vec![1.0, 2.0, 4.0]);
    assert_eq!(s["reports"][0]["ratios"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("aperture.csv").exists());
}

#[test]
fn sparse_family_passes_verify_sparse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("sparse.json");
    let cfg = cfg.to_str().unwrap();
    let o = run(&["--config", cfg, "sparse", "--kernel", "ex1:kappa=3", "--alpha", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let family = dir.path().join("family.json");
    let check = dir.path().join("check");
    let o = run(&["--config", cfg, "verify", "sparse", "--family", family.to_str().unwrap()], &check);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&check)["items"][0]["passed"], true);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("marcinkiewicz.json");
    for d in [&a, &b] {
        assert!(run(&["--config", cfg.to_str().unwrap(), "verify", "marcinkiewicz"], d.path()).status.success());
    }
    for f in ["summary.json", "marcinkiewicz.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn oracle_flag_matches_fast_path() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(&["eval", "s", "--function", "hat"], a.path()).status.success());
    assert!(run(&["--oracle", "eval", "s", "--function", "hat"], b.path()).status.success());
    let read = |d: &Path| -> Vec<f64> {
        std::fs::read_to_string(d.join("s.csv"))
            .unwrap()
            .lines()
            .filter_map(|l| l.split(',').next_back()?.trim().parse().ok())
            .collect()
    };
    let (x, y) = (read(a.path()), read(b.path()));
    assert_eq!(x.len(), y.len());
    assert!(!x.is_empty());
    let scale = y.iter().cloned().fold(0.0, f64::max);
    for (p, q) in x.iter().zip(&y) {
        assert!((p - q).abs() <= 1e-8 * scale);
    }
}

#[test]
fn unknown_ids_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "aperture", "--kernel", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("field `kernel`"));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"campain": "dini"}"#).unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "dini"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json"));
}

#[test]
fn failing_campaign_exits_nonzero_and_names_criterion() {
    let dir = tempfile::tempdir().unwrap();
    // a non-Dini modulus is reported as divergent
    let o = run(&["dini", "--modulus", "log:0.5"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dini_constant"));
}
