use std::path::Path;
use std::process::{Command, Output};

fn branchspec(args: &[&str], dir: &Path, config: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_branchspec"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.env_remove("BRANCHSPEC_THREADS").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

fn csv_rows(dir: &Path, name: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(dir.join("out").join(name)).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

const SELF_ADJOINT: &str =
    r#"{"schema_version": 1, "spectrum": {"v": [0, 0, 1], "w": [0, 0, 1], "h": 0.05, "epsilon": 0, "l": 3, "n": 120, "delta": 20}}"#;

#[test]
fn self_adjoint_spectrum_is_real() {
    let dir = tempfile::tempdir().unwrap();
    let o = branchspec(&["spectrum", "--check", "--svg"], dir.path(), Some(SELF_ADJOINT));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(dir.path(), "spectrum.csv");
    assert_eq!(header, ["re", "im", "resolved", "schema_version", "calibration"]);
    let resolved: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r[2] == "true")
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    assert!(resolved.len() >= 20);
    assert!(resolved.iter().all(|(_, im)| im.abs() <= 1e-6));
    // harmonic oscillator: (2k+1)h
    let mut re: Vec<f64> = resolved.iter().map(|p| p.0).collect();
    re.sort_by(f64::total_cmp);
    for (k, e) in re.iter().take(10).enumerate() {
        assert!((e - (2 * k + 1) as f64 * 0.05).abs() < 1e-9, "level {k}: {e}");
    }
    assert!(read(dir.path(), "spectrum.svg").starts_with("<svg"));
    let doc = json(dir.path(), "spectrum.json");
    assert_eq!(doc["schema_version"], 1);
    assert!(doc["backward_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn malformed_configs_exit_2_without_files() {
    let cases = [
        ("spectrum", r#"{"spectrum": {"hh": 1}}"#),
        ("spectrum", r#"{"spectrum": {"h": -1}}"#),
        ("classify", r#"{"schema_version": 2}"#),
        ("classify", "{not json"),
        ("classify", r#"{"classify": {"a": "0", "b": "0", "c": "0"}}"#),
        ("classify", r#"{"classify": {"a": "x"}}"#),
        ("model", r#"{"model": {"rect": {"lo": [0.1, 0], "hi": [0, 0.1]}}}"#),
        ("model", r#"{"model": {"s12": [[0, 1]], "physical": true}}"#),
        ("average", r#"{"average": {"polynomial": []}}"#),
    ];
    for (cmd, cfg) in cases {
        let dir = tempfile::tempdir().unwrap();
        let o = branchspec(&[cmd], dir.path(), Some(cfg));
        assert_eq!(code(&o), 2, "{cmd} {cfg}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!dir.path().join("out").exists(), "{cmd} {cfg} left files");
    }
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_branchspec"))
        .args(["classify", "--out"])
        .arg(dir.path().join("out"))
        .env("BRANCHSPEC_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn outputs_are_deterministic() {
    let scan = r#"{"classify": {"scan": {"n": 41, "d": "5/2"}}}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&branchspec(&["classify"], a.path(), Some(scan))), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_branchspec"))
        .args(["classify", "--out"])
        .arg(b.path().join("out"))
        .arg("--config")
        .arg(a.path().join("config.json"))
        .env("BRANCHSPEC_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(read(a.path(), "classify_scan.csv"), read(b.path(), "classify_scan.csv"));

    let c = tempfile::tempdir().unwrap();
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&branchspec(&["model"], c.path(), None)), 0);
    assert_eq!(code(&branchspec(&["model"], d.path(), None)), 0);
    assert_eq!(read(c.path(), "model_zeros.csv"), read(d.path(), "model_zeros.csv"));
    assert_eq!(read(c.path(), "model.json"), read(d.path(), "model.json"));
}

#[test]
fn region_scan_partitions_the_plane() {
    let dir = tempfile::tempdir().unwrap();
    let o = branchspec(&["classify", "--check", "--svg"], dir.path(), Some(r#"{"classify": {"scan": {}}}"#));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(dir.path(), "classify_scan.csv");
    assert_eq!(&header[..4], ["b", "c", "region", "negated"]);
    assert_eq!(rows.len(), 200 * 200);
    let expected = |r: &str| match r {
        "A" | "D" | "F" => 2,
        "Bplus" | "Bminus" | "Eplus" | "Eminus" => 1,
        "Cplus" | "Cminus" => 0,
        other => panic!("unexpected region {other}"),
    };
    let mut seen = std::collections::BTreeSet::new();
    for r in &rows {
        if r[2] == "boundary" {
            let (b, c): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
            // only the diagonals c = ±b fall on grid points
            assert!((b.abs() - c.abs()).abs() < 1e-12, "({b}, {c})");
            continue;
        }
        assert_eq!(r[4].parse::<usize>().unwrap(), expected(&r[2]));
        seen.insert(r[2].clone());
    }
    assert_eq!(seen.len(), 9);
}

#[test]
fn single_point_classification() {
    let dir = tempfile::tempdir().unwrap();
    let o = branchspec(&["classify", "--check"], dir.path(), Some(r#"{"classify": {"a": "-1", "b": "1", "c": "1/2"}}"#));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(dir.path(), "classify.json");
    assert_eq!(doc["report"]["region"], "A");
    assert_eq!(doc["saddles"], 2);
    assert_eq!(doc["d"], serde_json::json!(["5", "2"]));
    assert_eq!(doc["calibration"]["exceptional_count_c"], 4.0);
}

#[test]
fn golden_mode_reports_the_two_differing_forms() {
    let cfg = r#"{"average": {"golden": true}}"#;
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&branchspec(&["average"], dir.path(), Some(cfg))), 0);
    let doc = json(dir.path(), "golden.json");
    let mismatched: Vec<&str> = doc["entries"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| !e["matches_reference"].as_bool().unwrap())
        .map(|e| e["pair"].as_str().unwrap())
        .collect();
    assert_eq!(mismatched, ["C(x1^4+x2^4, x1^2 x2^2)", "C(x1^2 x2^2, x1^2 x2^2)"]);
    let checked = tempfile::tempdir().unwrap();
    assert_eq!(code(&branchspec(&["average", "--check"], checked.path(), Some(cfg))), 4);
}

#[test]
fn average_of_the_default_quartic() {
    let dir = tempfile::tempdir().unwrap();
    let o = branchspec(&["average", "--check"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(dir.path(), "average.json");
    // ⟨x₁⁴ + x₂⁴⟩ = (3/2)(ρ₁² + ρ₂²)
    let aa = doc["action_angle"].as_array().unwrap();
    assert_eq!(aa.len(), 2);
    for t in aa {
        assert_eq!(t["re"], serde_json::json!(["3", "2"]));
        assert_eq!(t["k"], 0);
    }
}

#[test]
fn decimal_coefficients_are_exact() {
    let cfg = r#"{"average": {"polynomial": [{"x": [2, 0], "coeff": "0.25"}, {"x": [0, 0], "xi": [2, 0], "coeff": "1/4"}]}}"#;
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&branchspec(&["average", "--check"], dir.path(), Some(cfg))), 0);
    let doc = json(dir.path(), "average.json");
    // (x₁² + ξ₁²)/4 = |z₁|²/4 is invariant: G₀ vanishes
    assert_eq!(doc["g0"].as_array().unwrap().len(), 0);
    assert_eq!(doc["average"], doc["laurent"]);
}

#[test]
fn model_pipeline_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = branchspec(&["model", "--check", "--svg"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(dir.path(), "model.json");
    assert_eq!(doc["classes"]["unmatched"], 0);
    assert!(doc["classes"]["matched"].as_u64().unwrap() > 50);
    assert!(doc["box_census"].as_f64().unwrap() <= doc["box_bound"].as_f64().unwrap());
    let (header, rows) = csv_rows(dir.path(), "model_zeros.csv");
    assert_eq!(header[3], "class");
    assert_eq!(rows.len() as u64, doc["zeros"].as_u64().unwrap());
    assert!(read(dir.path(), "model.svg").contains("<polyline"));
}

#[test]
fn count_prints_the_winding_number() {
    let dir = tempfile::tempdir().unwrap();
    let o = branchspec(&["count", "--check"], dir.path(), Some(r#"{"count": {"curve": true}}"#));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let n: i64 = stdout.lines().next().unwrap().parse().unwrap();
    let doc = json(dir.path(), "count.json");
    assert_eq!(doc["count"], n);
    assert_eq!(doc["grid_newton"], n);
    assert_eq!(doc["vertices"].as_array().unwrap().len(), 4);
    assert!(stdout.contains("phase-sum estimate"));
    let direct = doc["curve"]["direct"].as_f64().unwrap();
    assert!((direct - n as f64).abs() < 1e-6);
}

#[test]
fn skeleton_and_bs_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = branchspec(&["skeleton", "--check", "--svg"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(dir.path(), "skeleton.csv");
    assert_eq!(header, ["curve", "x", "y", "regime", "schema_version", "calibration"]);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[4] == "1" && r[5] == "1"));

    let o = branchspec(&["bs", "--check"], dir.path(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(dir.path(), "bs.csv");
    assert_eq!(&header[..5], ["branch", "k", "re", "im", "residual"]);
    for branch in ["ext", "left_int", "right_int"] {
        assert!(rows.iter().any(|r| r[0] == branch), "{branch}");
    }
    assert!(rows.iter().all(|r| r[4].parse::<f64>().unwrap() <= 1e-10));
}
