use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sentgram_core::checkpoint::Checkpoint;
use sentgram_core::treebank::parse_ptb;

fn sentgram(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentgram"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = sentgram(&["synth", "--out", s(&data), "--train", "120", "--dev", "30", "--test", "30"]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

fn train_small(dir: &Path, data: &Path, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(name);
    let train = format!("train={}", s(&data.join("train.txt")));
    let dev = format!("dev={}", s(&data.join("dev.txt")));
    let out_dir = format!("out_dir={}", s(&out));
    let mut args = vec![
        "train", &train, &dev, &out_dir, "embed_dim=8", "hidden=8", "epochs=3", "batch_size=16",
    ];
    args.extend_from_slice(extra);
    (sentgram(&args), out)
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().skip(2).collect()
}

#[test]
fn train_writes_checkpoint_log_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let (o, out) = train_small(dir.path(), &data, "base", &["kind=baseline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("checkpoint.json").is_file());
    assert!(fs::read_to_string(out.join("train.log")).unwrap().contains("epoch 3"));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# config_sha256="));
    assert_eq!(metrics.lines().nth(1).unwrap(), "epoch,mean_loss,steps,skipped_steps,seconds,dev_root,dev_phrase");
    let losses: Vec<f64> = data_rows(&metrics)
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn lvg_defaults_to_four_subtypes() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let (o, out) = train_small(dir.path(), &data, "lvg", &["kind=lvg", "epochs=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = Checkpoint::load(out.join("checkpoint.json")).unwrap();
    assert_eq!(ck.config.subtypes, 4);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let (a, out_a) = train_small(dir.path(), &data, "a", &["kind=wg", "epochs=2"]);
    let (b, out_b) = train_small(dir.path(), &data, "b", &["kind=wg", "epochs=2", "--threads", "1"]);
    assert!(a.status.success() && b.status.success(), "{}{}", stderr(&a), stderr(&b));
    let ca = Checkpoint::load(out_a.join("checkpoint.json")).unwrap();
    let cb = Checkpoint::load(out_b.join("checkpoint.json")).unwrap();
    assert_eq!(ca.params, cb.params);
}

#[test]
fn missing_train_path_names_the_field() {
    let o = sentgram(&["train", "kind=wg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`train`"), "{}", stderr(&o));
}

#[test]
fn malformed_trees_are_data_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "(2 (2 a) (3 b))\n(2 (2 a) (3 b)\n").unwrap();
    let o = sentgram(&["train", &format!("train={}", s(&bad)), "kind=wg", "epochs=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn unknown_command_is_a_usage_error() {
    assert_eq!(sentgram(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn eval_predict_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let test = data.join("test.txt");

    let (o, wg) = train_small(dir.path(), &data, "wg", &["kind=wg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = wg.join("checkpoint.json");
    let reports = dir.path().join("reports");
    let o = sentgram(&["eval", "--checkpoint", s(&ck), "--trees", s(&test), "--out", s(&reports)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("map decode"));
    assert!(stdout(&o).contains("height   0"));
    for f in ["summary.csv", "heights.csv", "confusion.csv"] {
        let text = fs::read_to_string(reports.join(f)).unwrap();
        assert!(text.starts_with("# config_sha256="), "{f}");
    }
    let confusion = fs::read_to_string(reports.join("confusion.csv")).unwrap();
    for row in data_rows(&confusion) {
        let total: f64 = row.split(',').skip(1).map(|x| x.parse::<f64>().unwrap()).sum();
        assert!(total == 0.0 || (total - 1.0).abs() < 1e-5, "{row}");
    }

    let o = sentgram(&["eval", "--checkpoint", s(&ck), "--trees", s(&test), "--task", "sst2"]);
    assert_eq!(o.status.code(), Some(2));

    let o = sentgram(&["predict", "--checkpoint", s(&ck), "--trees", s(&test)]);
    assert!(o.status.success());
    let gold: Vec<String> = fs::read_to_string(&test).unwrap().lines().map(String::from).collect();
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), gold.len());
    for (p, g) in lines.iter().zip(&gold) {
        assert_eq!(parse_ptb(p).unwrap().tokens(), parse_ptb(g).unwrap().tokens());
    }

    let o = sentgram(&["export-subtypes", "--checkpoint", s(&ck), "--trees", s(&test)]);
    assert_eq!(o.status.code(), Some(1));

    let (o, lveg) = train_small(dir.path(), &data, "lveg", &["kind=lveg", "epochs=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = lveg.join("checkpoint.json");
    let o = sentgram(&[
        "export-subtypes", "--checkpoint", s(&ck), "--trees", s(&test), "--label", "strong-negative",
        "--max-length", "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().nth(1).unwrap(), "phrase,label,mu0_0,mu0_1");
    for row in data_rows(&text) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "0");
        assert!(cols[0].split(' ').count() <= 5);
    }
    let o = sentgram(&[
        "export-subtypes", "--checkpoint", s(&ck), "--trees", s(&test), "--max-length", "0",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn gradcheck_passes_on_small_cases() {
    let o = sentgram(&["gradcheck", "--cases", "2"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn oracle_is_deterministic_and_tolerance_sensitive() {
    let a = sentgram(&["oracle", "--cases", "30", "--gm-cases", "3"]);
    let b = sentgram(&["oracle", "--cases", "30", "--gm-cases", "3"]);
    assert!(a.status.success(), "{}", stdout(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let tight = sentgram(&["oracle", "--cases", "30", "--gm-cases", "3", "--tolerance", "1e-15"]);
    assert_eq!(tight.status.code(), Some(3));
    assert_eq!(sentgram(&["oracle", "--cases", "100000"]).status.code(), Some(1));
}
