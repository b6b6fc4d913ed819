use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qlink(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlink"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("QLINK_OUT_DIR")
        .output()
        .expect("qlink runs")
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Data rows of a CSV file, split on commas (the fields here never need quoting).
fn rows(path: impl AsRef<Path>) -> (Vec<String>, Vec<Vec<String>>) {
    let text = read(path);
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    (
        header,
        lines.map(|l| l.split(',').map(str::to_string).collect()).collect(),
    )
}

const IDEAL: &str = r#"
format_version = "1"
preset_name = "20km"
name = "ideal"

[link]
chi = 0.0
probe_raman_rate = 0.0
qfc_noise_rate = 0.0
detector_d1 = { efficiency = 1.0, dark_rate = 0.0 }
detector_d2 = { efficiency = 1.0, dark_rate = 0.0 }

[protocol]
eta_wo = 1.0
eta_ro = 1.0
temporal_mismatch = 0.0
phase_noise = { model = "none" }
"#;

#[test]
fn budget_with_ideal_parameters_reaches_unit_visibility() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("ideal.toml");
    fs::write(&scenario, IDEAL).unwrap();
    let out = dir.path().join("out");
    let o = qlink(&out, &["budget", "--scenario", scenario.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, data) = rows(out.join("budget.csv"));
    let col = header.iter().position(|h| h == "v_theory").unwrap();
    assert_eq!(data.len(), 2);
    for r in &data {
        assert_eq!(r[col].parse::<f64>().unwrap(), 1.0, "{r:?}");
    }
    let (header, data) = rows(out.join("herald_stats.csv"));
    assert_eq!(
        header,
        [
            "scenario",
            "distance_km",
            "loss_db",
            "eta",
            "p_ent",
            "snr_d1",
            "snr_d2",
            "plob_bits"
        ]
    );
    assert_eq!(data.len(), 1);
    let summary: serde_json::Value = serde_json::from_str(&read(out.join("summary.json"))).unwrap();
    assert_eq!(summary["command"], "budget");
    assert_eq!(summary["scenarios"][0]["name"], "ideal");
}

#[test]
fn campaign_emits_six_table_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = qlink(out, &["campaign", "--trials", "400", "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (header, data) = rows(a.join("campaign.csv"));
    for col in [
        "distance_km",
        "fiber_loss_db",
        "c_psi_plus",
        "snr_psi_plus",
        "c_psi_minus",
        "snr_psi_minus",
        "p_ent_analytic",
        "p_ent_mc",
    ] {
        assert!(header.iter().any(|h| h == col), "missing column {col}");
    }
    let names: Vec<_> = data.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["0km", "20km", "120km", "220km", "320km", "420km"]);
    let loss = header.iter().position(|h| h == "fiber_loss_db").unwrap();
    assert_eq!(data[5][loss], "78.7");

    let mut files: Vec<_> = walk(&a);
    files.sort();
    assert!(files.len() > 8);
    let mut other = walk(&b);
    other.sort();
    assert_eq!(files, other);
    for f in &files {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs between runs"
        );
    }
}

fn walk(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out
}

#[test]
fn compare_keeps_every_p_ent_cell_within_a_quarter() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // few fringe trials: the concurrence cells may fail, p_ent comes from its own herald run
    let o = qlink(&out, &["compare", "--trials", "400"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, data) = rows(out.join("comparison.csv"));
    let at = |n: &str| header.iter().position(|h| h == n).unwrap();
    let (table, column, status) = (at("table"), at("column"), at("status"));
    let (reference, observed) = (at("reference"), at("observed"));
    let p_ent: Vec<_> = data
        .iter()
        .filter(|r| r[table] == "table1" && r[column] == "p_ent")
        .collect();
    assert_eq!(p_ent.len(), 6);
    for r in p_ent {
        assert_eq!(r[status], "pass", "{r:?}");
        let (x, y): (f64, f64) = (r[reference].parse().unwrap(), r[observed].parse().unwrap());
        assert!((y / x - 1.0).abs() <= 0.25);
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_qlink"))
        .args(["budget", "--preset", "0km"])
        .env("QLINK_OUT_DIR", &out)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("budget.csv").is_file());
    assert!(out.join("scenarios/0km.toml").is_file());
    assert!(!dir.path().join("qlink-out").exists());
}

#[test]
fn bad_scenarios_exit_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let neg = dir.path().join("neg.toml");
    fs::write(
        &neg,
        "format_version = \"1\"\npreset_name = \"20km\"\n\n[link]\nchi = -0.1\n",
    )
    .unwrap();
    let o = qlink(&out, &["budget", "--scenario", neg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("chi"));

    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let o = qlink(&out, &["budget", "--scenario", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let o = qlink(&out, &["budget", "--preset", "999km"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("420km"));

    let o = qlink(&out, &["compare", "--preset", "0km", "--tolerance-scale", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lock_and_hom_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = qlink(&out, &["lock", "--preset", "20km"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, data) = rows(out.join("lock.csv"));
    let v = header.iter().position(|h| h == "v_p").unwrap();
    let v_p: f64 = data[0][v].parse().unwrap();
    assert!((0.93..=0.98).contains(&v_p), "{v_p}");
    assert!(out.join("lock_20km.csv").is_file());

    let o = qlink(&out, &["hom", "--preset", "0km", "--trials", "2000000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, data) = rows(out.join("hom.csv"));
    assert_eq!(data.len(), 2);
    let (_, g2) = rows(out.join("g2.csv"));
    assert_eq!(g2[0][0], "write-on-read");
}

#[test]
fn simulate_streams_trial_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = qlink(&out, &["simulate", "--preset", "0km", "--trials", "500", "--records"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, data) = rows(out.join("fringe_0km.csv"));
    assert_eq!(
        header,
        ["theta", "detector", "counts_E", "counts_F", "coincidences", "trials"]
    );
    assert_eq!(data.len(), 16);
    let records = read(out.join("records_0km.jsonl"));
    assert_eq!(records.lines().count(), 8 * 500);
    let first: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    assert!(first.is_object());
}
