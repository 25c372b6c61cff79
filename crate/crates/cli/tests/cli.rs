use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn drm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn toy_data(dir: &Path) {
    let o = drm(dir, &["synth", "--users", "50", "--items", "50", "--positives", "12", "--out", "data.tsv"]);
    assert!(o.status.success());
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--out", out, "--data.path", "data.tsv", "--runs", "1", "--epochs", "1", "--dim", "8", "--negatives", "15",
    ];
    args.extend_from_slice(extra);
    drm(dir, &args)
}

#[test]
fn convert_playlists_and_pair_lists() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("p.json"), r#"[{"id": 7, "songs": [1, 2]}, {"id": 9, "songs": [2]}]"#).unwrap();
    let o = drm(dir, &["convert", "--input", "p.json", "--format", "playlist-json", "--output", "pairs.tsv"]);
    assert!(o.status.success());
    let pairs = fs::read_to_string(dir.join("pairs.tsv")).unwrap();
    assert_eq!(pairs.lines().count(), 3);

    let o = drm(dir, &["convert", "--input", "pairs.tsv", "--output", "again.tsv"]);
    assert!(o.status.success());
    assert_eq!(fs::read(dir.join("pairs.tsv")).unwrap(), fs::read(dir.join("again.tsv")).unwrap());
}

#[test]
fn malformed_json_names_the_record() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"[{"id": 1, "songs": [1]}, {"id": 2}]"#).unwrap();
    let o = drm(tmp.path(), &["convert", "--input", "bad.json", "--format", "playlist-json", "--output", "x.tsv"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("record 1"));
}

#[test]
fn toy_training_is_fast_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_data(dir);
    let start = Instant::now();
    let o = train(dir, "a", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(dir.join("a/model_0.bin").exists());
    assert!(dir.join("a/trace_0.tsv").exists());

    assert!(train(dir, "b", &[]).status.success());
    for f in ["report.txt", "report.tsv", "runs.tsv", "trace_0.tsv", "model_0.bin"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_temperature_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    toy_data(tmp.path());
    let o = train(tmp.path(), "out", &["--tau", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unknown_setting_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    toy_data(tmp.path());
    assert_eq!(train(tmp.path(), "out", &["--bogus", "1"]).status.code(), Some(2));
}

#[test]
fn eval_reports_default_metrics_and_matches_training_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_data(dir);
    assert!(train(dir, "run", &[]).status.success());
    let o = drm(dir, &["eval", "--model", "run/model_0.bin", "--split", "run/split"]);
    assert!(o.status.success());
    let table = stdout(&o);
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, ["MAP@10", "NDCG@10", "Recall@50", "NDCG@50"]);

    // the training report evaluated the same f32 model in memory
    let summary = fs::read_to_string(dir.join("run/report.tsv")).unwrap();
    for (eval_line, train_line) in table.lines().skip(1).zip(summary.lines().skip(1)) {
        let e: f64 = eval_line.split('\t').nth(1).unwrap().parse().unwrap();
        let t: f64 = train_line.split('\t').nth(1).unwrap().parse().unwrap();
        assert_eq!(format!("{e:.6}"), format!("{t:.6}"));
    }
}

#[test]
fn eval_extra_cutoffs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_data(dir);
    assert!(train(dir, "run", &[]).status.success());
    let o = drm(dir, &["eval", "--model", "run/model_0.bin", "--split", "run/split", "--cutoffs", "5"]);
    let table = stdout(&o);
    assert!(table.contains("NDCG@5") && table.contains("Recall@5") && table.contains("MAP@5"));
}

#[test]
fn eval_missing_model_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_data(dir);
    assert!(train(dir, "run", &[]).status.success());
    let o = drm(dir, &["eval", "--model", "nope.bin", "--split", "run/split", "--out", "ev"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(o.stdout.is_empty());
    assert!(!dir.join("ev").exists());
}

#[test]
fn eval_rejects_other_versions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_data(dir);
    assert!(train(dir, "run", &[]).status.success());
    let mut bytes = fs::read(dir.join("run/model_0.bin")).unwrap();
    bytes[4] = 9;
    fs::write(dir.join("v9.bin"), bytes).unwrap();
    let o = drm(dir, &["eval", "--model", "v9.bin", "--split", "run/split"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 9"));
}

#[test]
fn correlate_and_group_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_data(dir);
    assert!(train(dir, "run", &["--epochs", "6", "--patience", "100"]).status.success());
    let o = drm(dir, &["correlate", "run/trace_0.tsv", "--metric", "ndcg@10_val"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("trace\tloss\tndcg@10_val\n"));
    assert!(text.contains("cov_loss\tundefined"));

    let o = drm(dir, &["group-report", "--model", "run/model_0.bin", "--split", "run/split", "--boundaries", "0"]);
    assert!(o.status.success());
    let groups = stdout(&o);
    let eval = stdout(&drm(dir, &["eval", "--model", "run/model_0.bin", "--split", "run/split"]));
    let ndcg = |t: &str, name: &str, col: usize| -> String {
        t.lines().find(|l| l.starts_with(name)).unwrap().split('\t').nth(col).unwrap().to_owned()
    };
    assert_eq!(ndcg(&groups, "0+", 2), ndcg(&eval, "NDCG@10", 1));
}

#[test]
fn correlate_needs_enough_epochs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_data(dir);
    assert!(train(dir, "run", &["--epochs", "2"]).status.success());
    let o = drm(dir, &["correlate", "run/trace_0.tsv"]);
    assert_eq!(o.status.code(), Some(3));
}
