use std::path::Path;
use std::process::{Command, Output};

fn mhe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhe")).args(args).output().expect("failed to launch mhe")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_is_byte_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = \"toy-certified\"\nt_sim = 40\n");
    let out = |name: &str, seed: &str| {
        let o = dir.path().join(name);
        let res = mhe(&["run", "--config", &cfg, "--seed", seed, "--out", o.to_str().unwrap()]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        (std::fs::read(o.join("run.csv")).unwrap(), std::fs::read(o.join("run.meta.toml")).unwrap())
    };
    let a = out("a", "5");
    let b = out("b", "5");
    let c = out("c", "6");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
    let meta = String::from_utf8(a.1).unwrap();
    assert!(meta.contains("seed = 5"));
    assert!(meta.contains("status = \"complete\""));
    assert_eq!(String::from_utf8(a.0).unwrap().lines().count(), 42);
}

#[test]
fn sidecar_config_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = \"toy-certified\"\nt_sim = 25\nseed = 11\n");
    let a = dir.path().join("a");
    assert!(mhe(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let (_, meta) = mhe_core::harness::read_run(&a.join("run.csv")).unwrap();
    let replay = write_config(dir.path(), &meta.config.to_toml_string().unwrap());
    let b = dir.path().join("b");
    assert!(mhe(&["run", "--config", &replay, "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(a.join("run.csv")).unwrap(), std::fs::read(b.join("run.csv")).unwrap());
}

#[test]
fn audit_and_compare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good");
    assert!(mhe(&["run", "--config", "toy-certified", "--out", good.to_str().unwrap()]).status.success());
    let csv = good.join("run.csv");
    let audit = mhe(&["audit", "--run", csv.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&audit.stdout);
    assert!(audit.status.success(), "{text}");
    assert!(text.contains("theorem") && !text.contains("FAIL"));
    // no baseline columns in the toy preset
    assert!(!mhe(&["compare", "--run", csv.to_str().unwrap()]).status.success());

    let bad = dir.path().join("bad");
    assert!(mhe(&["run", "--config", "toy-falsify", "--out", bad.to_str().unwrap()]).status.success());
    let audit = mhe(&["audit", "--run", bad.join("run.csv").to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&audit.stdout).contains("FAIL"));
}

#[test]
fn compare_on_baseline_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = \"chua-desk\"\nt_sim = 30\n[mhe]\nN = 8\n");
    let o = dir.path().join("r");
    let res = mhe(&["run", "--config", &cfg, "--out", o.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let cmp = mhe(&["compare", "--run", o.join("run.csv").to_str().unwrap(), "--from", "10"]);
    assert!(cmp.status.success());
    let text = String::from_utf8_lossy(&cmp.stdout);
    assert!(text.contains("unobservable_ratio"));
    assert!(text.contains("from_t"));
    for f in ["errors", "params", "alpha"] {
        assert!(o.join("plots").join(format!("{f}.csv")).exists());
        assert!(o.join("plots").join(format!("{f}.py")).exists());
    }
}

#[test]
fn theory_output_forms() {
    let text = mhe(&["theory", "--config", "toy-certified"]);
    assert!(text.status.success());
    let s = String::from_utf8_lossy(&text.stdout);
    assert!(s.contains("mu_contraction") && s.contains("contraction holds"));
    let t = mhe(&["theory", "--config", "toy-certified", "--toml"]);
    let table: toml::Table = toml::from_str(&String::from_utf8_lossy(&t.stdout)).unwrap();
    assert_eq!(table["N_min"].as_integer(), Some(14));
    assert_eq!(table["contraction_ok"].as_bool(), Some(true));
    // no certificates in the Chua presets
    assert!(!mhe(&["theory", "--config", "chua-desk"]).status.success());
}

#[test]
fn bad_config_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = \"chua-desk\"\n[mhe]\nQ = [[1.0]]\n");
    let res = mhe(&["run", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("mhe.Q"));
}
