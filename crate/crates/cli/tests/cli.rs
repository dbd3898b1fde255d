use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cqrnn::io::read_dataset;
use cqrnn::losses::Side;
use cqrnn::metrics::{reports_from_csv, EvalReport};
use cqrnn::seeds::derive_seed;
use serde_json::Value;

fn cqrnn(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqrnn"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = cqrnn(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

#[test]
fn generate_writes_a_manifest_that_reproduces_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(
        &out,
        &["generate", "--synthetic", "heteroskedastic", "--n", "300"],
    );
    let csv = out.join("synthetic_heteroskedastic.csv");
    let manifest_path = out.join("synthetic_heteroskedastic.manifest.json");
    let m = json(&manifest_path);
    assert_eq!(m["master_seed"], 42);
    assert_eq!(m["side"], "left");
    assert_eq!(m["stats"]["rows"], 300);
    assert_eq!(
        m["seed_paths"]["generate/synthetic/rep0/data"]
            .as_u64()
            .unwrap(),
        derive_seed(42, "generate/synthetic/rep0/data")
    );
    assert_eq!(m["synthetic"]["noise"], "heteroskedastic");
    assert_eq!(m["outputs"][0].as_str().unwrap(), csv.display().to_string());

    // the recorded command line rebuilds the same bytes
    let first_csv = fs::read(&csv).unwrap();
    let first_manifest = fs::read(&manifest_path).unwrap();
    fs::remove_dir_all(&out).unwrap();
    let argv: Vec<String> = m["command"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap().to_string())
        .collect();
    let o = Command::new(env!("CARGO_BIN_EXE_cqrnn"))
        .args(&argv)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(&csv).unwrap(), first_csv);
    assert_eq!(fs::read(&manifest_path).unwrap(), first_manifest);

    let other = dir.path().join("other");
    ok(
        &other,
        &[
            "--seed",
            "7",
            "generate",
            "--synthetic",
            "heteroskedastic",
            "--n",
            "300",
        ],
    );
    assert_ne!(
        fs::read(other.join("synthetic_heteroskedastic.csv")).unwrap(),
        first_csv
    );
}

#[test]
fn partial_censoring_at_zero_share_keeps_the_series() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "generate", "--censor", "partial", "--gamma", "0", "--days", "90", "--name", "series",
        ],
    );
    let ds = read_dataset(&dir.path().join("series.csv"), Side::Right).unwrap();
    assert_eq!(ds.len(), 90);
    assert!(ds.censored.iter().all(|&c| !c));
    assert_eq!(&ds.y, ds.y_star.as_ref().unwrap());
    let m = json(&dir.path().join("series.manifest.json"));
    assert_eq!(m["side"], "right");
    assert_eq!(m["stats"]["censored"], 0);
}

#[test]
fn fit_skips_finished_cells_and_evaluate_scores_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(
        out,
        &[
            "generate",
            "--synthetic",
            "standard-gaussian",
            "--n",
            "400",
            "--name",
            "sg",
        ],
    );
    let data = out.join("sg.csv");
    let data = data.to_str().unwrap();
    let first = ok(out, &["fit", "--data", data]);
    assert!(first.contains("fitted 9 cells, skipped 0"), "{first}");
    let fits = files(&out.join("fits"));
    assert_eq!(fits.len(), 9);
    assert!(
        out.join("fits/c-elu_t0.95_s0_lr0.01.json").exists(),
        "{fits:?}"
    );
    let again = ok(out, &["fit", "--data", data]);
    assert!(again.contains("fitted 0 cells, skipped 9"), "{again}");
    let forced = ok(
        out,
        &["--force", "fit", "--data", data, "--models", "tobit"],
    );
    assert!(forced.contains("fitted 1 cells"), "{forced}");

    ok(out, &["evaluate"]);
    let csv = fs::read_to_string(out.join("eval/reports.csv")).unwrap();
    let from_csv = reports_from_csv(&csv).unwrap();
    let from_json: Vec<EvalReport> =
        serde_json::from_str(&fs::read_to_string(out.join("eval/reports.json")).unwrap()).unwrap();
    assert_eq!(from_csv, from_json);
    // 9 quantile fits plus Tobit at three levels, two subsets each, then one
    // interval per model on two subsets
    assert_eq!(from_csv.len(), (9 + 3) * 2 + 4 * 2);
    assert!(from_csv.iter().all(|r| r.n > 0));
    let m = json(&out.join("eval/reports.manifest.json"));
    assert_eq!(m["synthetic"]["noise"], "standard_gaussian");
}

#[test]
fn interval_metrics_without_latent_values_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(
        out,
        &[
            "generate",
            "--synthetic",
            "standard-gaussian",
            "--n",
            "200",
            "--name",
            "sg",
        ],
    );
    ok(
        out,
        &[
            "fit",
            "--data",
            out.join("sg.csv").to_str().unwrap(),
            "--models",
            "c-linear",
        ],
    );
    // drop the trailing y_star column
    let test = fs::read_to_string(out.join("splits/test.csv")).unwrap();
    let stripped: String = test
        .lines()
        .map(|l| format!("{}\n", &l[..l.rfind(',').unwrap()]))
        .collect();
    let bare = out.join("bare.csv");
    fs::write(&bare, stripped).unwrap();
    let o = cqrnn(
        out,
        &[
            "evaluate",
            "--test",
            bare.to_str().unwrap(),
            "--metrics",
            "interval",
            "--noise",
            "sg",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("y_star"));
}

#[test]
fn replicate_reports_failing_verdicts_through_the_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let o = cqrnn(dir.path(), &["replicate", "t1", "--replicates", "2"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let verdicts: Vec<Value> =
        serde_json::from_value(json(&dir.path().join("t1/verdicts.json"))).unwrap();
    let all_passed = verdicts.iter().all(|v| v["passed"] == true);
    assert_eq!(
        o.status.code(),
        Some(if all_passed { 0 } else { 2 }),
        "{stdout}"
    );
    for v in &verdicts {
        let tag = if v["passed"] == true { "PASS" } else { "FAIL" };
        assert!(
            stdout.contains(&format!("{tag} {}:", v["criterion"].as_str().unwrap())),
            "{stdout}"
        );
    }
    for f in ["table.txt", "raw.csv", "manifest.json"] {
        assert!(dir.path().join("t1").join(f).exists(), "{f}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"train": {"learning_rate": 0.01, "learning_rat": 3}}"#,
    )
    .unwrap();
    let o = cqrnn(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "generate",
            "--synthetic",
            "sg",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}
