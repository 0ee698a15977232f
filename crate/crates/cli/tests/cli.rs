use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn neocod(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neocod"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn demo() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let out = neocod(tmp.path(), &["generate-demo", "."]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    tmp
}

#[test]
fn demo_run_writes_tables() {
    let tmp = demo();
    let out = neocod(tmp.path(), &["--config", "config.toml", "--bootstrap-n", "40", "--jobs", "2", "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["manifest.json", "results.csv", "global_summary.csv", "nmr_bands.csv", "country_detail.csv", "source_comparison.csv"] {
        assert!(tmp.path().join("out").join(file).is_file(), "missing {file}");
    }
    let table = fs::read_to_string(tmp.path().join("out/global_summary.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("Preterm,")), "{table}");
}

#[test]
fn single_report_shape_can_be_rewritten() {
    let tmp = demo();
    let base = ["--config", "config.toml", "--bootstrap-n", "40"];
    assert!(neocod(tmp.path(), &[&base[..], &["run"]].concat()).status.success());
    fs::remove_file(tmp.path().join("out/global_summary.csv")).unwrap();
    let out = neocod(tmp.path(), &[&base[..], &["report", "--shape", "global_summary"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("out/global_summary.csv").is_file());
}

#[test]
fn bad_inputs_exit_with_one() {
    let tmp = demo();
    let out = neocod(tmp.path(), &["--config", "config.toml", "--early-share", "1.5", "run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let missing = neocod(tmp.path(), &["--config", "nowhere.toml", "ingest"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    let tmp = demo();
    let path = tmp.path().join("covariates.csv");
    let text = fs::read_to_string(&path).unwrap();
    let blown: String = text
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f[0] == "H01" && f[2] != "GNI" {
                format!("{},{},{},1e300\n", f[0], f[1], f[2])
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    fs::write(&path, blown).unwrap();
    let out = neocod(tmp.path(), &["--config", "config.toml", "--bootstrap-n", "10", "--no-cap", "run"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("out").exists());
}
