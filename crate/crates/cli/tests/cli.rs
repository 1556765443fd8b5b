use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ricprobe"));
    c.env_remove("RICPROBE_WORKERS");
    c
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(sub).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(format!("{name}.toml"))
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

const SMALL_SPHERE: &str = r#"
master_seed = 42

[manifold]
kind = "sphere"
dim = 2

[probe]
point = [0.0, 0.0, 1.0]
coordinate = 2

[run]
horizon = 0.1
n_steps = 8
n_paths = 50
dump_paths = 3
"#;

#[test]
fn path_dump_has_one_row_per_step_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SPHERE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        let o = run("simulate", &cfg, dir, &["--format", "csv", "--workers", workers]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = std::fs::read(a.join("paths.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("paths.csv")).unwrap());

    let mut r = csv::Reader::from_reader(csv_a.as_slice());
    let rows = r.records().count();
    assert_eq!(rows, 3 * (8 + 1));
    assert_eq!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);
}

#[test]
fn manifest_records_hash_seed_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SPHERE);
    let o = run("simulate", &cfg, tmp.path(), &["--seed", "7"]);
    assert!(o.status.success());
    let m = manifest(tmp.path());
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["master_seed"], 7);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["reports"][0], "simulate.json");
    assert_eq!(m["exit_code"], 0);
}

#[test]
fn cap_colatitude_past_pi_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL_SPHERE.replace("kind = \"sphere\"\ndim = 2", "kind = \"cap\"\ncolatitude = 4.0");
    let cfg = write_config(tmp.path(), &text);
    let o = run("simulate", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifold.colatitude"));
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL_SPHERE.replace("n_steps = 8", "n_steps = 8\nn_stpes = 9"));
    let o = run("simulate", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_stpes"));
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = bin().arg("simulate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_check_list_writes_an_empty_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SPHERE);
    let o = run("check", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(tmp.path().join("checks.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("name,check,verdict,expected"));
}

#[test]
fn flat_preset_has_zero_curvature() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("curvature", &preset("curvature-flat"), tmp.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("curvature.json")).unwrap()).unwrap();
    assert!(r["estimate"]["value"].as_f64().unwrap().abs() < 1e-3);
    assert!(!tmp.path().join("curvature_points.csv").exists());

    let csv_dir = tmp.path().join("csv");
    let o = run("curvature", &preset("curvature-flat"), &csv_dir, &["--format", "csv"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(csv_dir.join("curvature_points.csv")).unwrap();
    assert!(text.starts_with("t,gradient,gradient_ci,"));
    assert!(!csv_dir.join("curvature.json").exists());
}

#[test]
fn negative_control_that_fails_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("check", &preset("check-negative"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(tmp.path().join("checks.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("repulsive-k0,gradient-1,FAIL,FAIL,"), "{row}");
    assert!(manifest(tmp.path())["exponential_moments"]["repulsive-k0"].is_object());
}

#[test]
fn negative_control_that_passes_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(preset("check-negative")).unwrap().replace("strength = -1.0", "strength = 1.0");
    let cfg = write_config(tmp.path(), &text);
    let o = run("check", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(manifest(tmp.path())["exit_code"], 1);
}

#[test]
fn every_preset_parses() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let text = std::fs::read_to_string(&p).unwrap();
            let v: toml::Value = toml::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert!(v.get("manifold").is_some(), "{}", p.display());
            n += 1;
        }
    }
    assert!(n >= 15);
}
