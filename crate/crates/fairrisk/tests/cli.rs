use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fairrisk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairrisk"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn listed(out: &Output) -> Vec<String> {
    String::from_utf8_lossy(&out.stdout).lines().map(str::to_string).collect()
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"seed": 1, "unknown_key": true}"#).unwrap();
    let out = fairrisk(dir.path(), &["simulate", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    fs::write(dir.path().join("lvl.json"), r#"{"simulate": {"es_level": 1.5}}"#).unwrap();
    assert_eq!(fairrisk(dir.path(), &["simulate", "--config", "lvl.json"]).status.code(), Some(2));
}

#[test]
fn bad_rho_and_missing_input_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fairrisk(dir.path(), &["sensitivity", "--rho", "es:2"]).status.code(), Some(2));
    assert_eq!(fairrisk(dir.path(), &["sensitivity", "--rho", "median"]).status.code(), Some(2));
    assert_eq!(fairrisk(dir.path(), &["audit", "--input", "nope.csv"]).status.code(), Some(2));
    assert_eq!(fairrisk(dir.path(), &["report", "--input", "nope.json"]).status.code(), Some(2));
}

#[test]
fn generate_writes_hashed_files_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairrisk(dir.path(), &["generate", "--n", "200", "--seed", "5", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = listed(&out);
    assert_eq!(files.len(), 3);
    let tag = files[0].rsplit_once("config-").unwrap().1.trim_end_matches(".json").to_string();
    assert_eq!(tag.len(), 12);
    assert!(files.iter().all(|f| f.contains(&tag)));
    let portfolio = fs::read(dir.path().join(&files[1])).unwrap();
    assert_eq!(portfolio.iter().filter(|&&b| b == b'\n').count(), 201);

    let again = fairrisk(dir.path(), &["generate", "--n", "200", "--seed", "5", "--out", "o"]);
    assert_eq!(listed(&again), files);
    assert_eq!(fs::read(dir.path().join(&files[1])).unwrap(), portfolio);

    let other = fairrisk(dir.path(), &["generate", "--n", "200", "--seed", "6", "--out", "o"]);
    assert!(!listed(&other)[0].contains(&tag));
}

#[test]
fn sensitivity_sources_agree() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"sensitivity": {"x": [0.0, 1.0], "rho": ["ev"], "draws": 20000, "batches": 20}}"#,
    )
    .unwrap();
    let out = fairrisk(dir.path(), &["sensitivity", "--config", "c.json", "--variant", "cascade", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join(&listed(&out)[1])).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for chunk in rows.chunks(3) {
        let value = |i: usize| chunk[i][4].parse::<f64>().unwrap();
        assert_eq!((chunk[0][3], chunk[1][3], chunk[2][3]), ("analytic", "plug_in", "oracle"));
        assert_eq!(chunk[0][2], "cascade");
        assert!((value(0) - 4.5).abs() < 1e-9 || chunk[0][0] != "0.0");
        assert!((value(1) - value(0)).abs() < 1e-3, "{chunk:?}");
        assert!((value(2) - value(0)).abs() < 1e-3, "{chunk:?}");
    }
}

#[test]
fn report_rebuilds_audit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairrisk(dir.path(), &["generate", "--n", "3000", "--out", "g"]);
    assert!(out.status.success());
    let portfolio = listed(&out)[1].clone();
    let out = fairrisk(dir.path(), &["audit", "--input", &portfolio, "--out", "a"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = listed(&out);
    let report = files.iter().find(|f| f.contains("audit-")).unwrap();
    let gini = files.iter().find(|f| f.contains("gini-")).unwrap();

    let rebuilt = fairrisk(dir.path(), &["report", "--input", report, "--out", "r"]);
    assert!(rebuilt.status.success(), "{}", String::from_utf8_lossy(&rebuilt.stderr));
    let rebuilt = listed(&rebuilt);
    assert_eq!(rebuilt.len(), 5);
    let name = Path::new(gini).file_name().unwrap();
    assert_eq!(
        fs::read(dir.path().join(gini)).unwrap(),
        fs::read(dir.path().join("r").join(name)).unwrap()
    );
}
