use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "depth=8", "width=3", "coverage=6", "hidden1=4", "hidden2=4", "dense_units=4",
    "epochs=1", "batch_size=8", "n_mc=3", "mask_rows=2..8",
];

fn bayescall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayescall"))
        .args(args)
        .output()
        .unwrap()
}

fn with_small(mut args: Vec<&str>) -> Vec<&str> {
    for kv in SMALL {
        args.push("--set");
        args.push(kv);
    }
    args
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, name: &str, n: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    ok(bayescall(&with_small(vec![
        "simulate", "--out", p(&out), "--n", n, "--seed", seed,
    ])));
    out
}

#[test]
fn unknown_key_fails_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.bvcd");
    let r = bayescall(&["simulate", "--out", p(&out), "--set", "no_such_key=1"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("no_such_key"));
    assert!(!out.exists());
}

#[test]
fn config_file_values_are_used() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\ndepth = 5\nwidth = 2\ncoverage = 4\nn_examples = 12\n").unwrap();
    let out = dir.path().join("d.bvcd");
    ok(bayescall(&["simulate", "--config", p(&cfg), "--out", p(&out)]));
    let ds = bayescall::pileup::load_dataset(&out).unwrap();
    assert_eq!((ds.depth, ds.width, ds.len()), (5, 2, 12));
}

#[test]
fn simulate_is_byte_reproducible_and_balances() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.bvcd", "100", "7");
    let b = simulate(dir.path(), "b.bvcd", "100", "7");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.bvcd");
    let stdout = ok(bayescall(&[
        "simulate", "--out", p(&c), "--n", "200", "--seed", "7", "--balance",
        "--set", "positive_fraction=0.25", "--set", "depth=6", "--set", "width=2",
        "--set", "coverage=5",
    ]));
    assert!(stdout.contains("balanced"));
    let (neg, pos) = bayescall::pileup::load_dataset(&c).unwrap().class_counts();
    assert_eq!(neg, pos);
    assert!(neg > 0 && neg < 100);
}

#[test]
fn train_eval_and_mask_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.bvcd", "40", "11");

    let train = |head: &str, name: &str| {
        let out = dir.path().join(name);
        ok(bayescall(&with_small(vec![
            "train", "--data", p(&data), "--head", head, "--out", p(&out),
        ])));
        out
    };
    let std_a = train("standard", "std_a.bvc");
    let std_b = train("standard", "std_b.bvc");
    assert_eq!(std::fs::read(&std_a).unwrap(), std::fs::read(&std_b).unwrap());
    let log = std::fs::read_to_string(std_a.with_extension("log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,nll,kl,total,train_accuracy"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("0")));

    let eval = |model: &Path, name: &str| {
        let out = dir.path().join(name);
        ok(bayescall(&with_small(vec![
            "eval", "--model", p(model), "--data", p(&data), "--out", p(&out),
        ])));
        out
    };
    let e1 = eval(&std_a, "e1");
    let e2 = eval(&std_a, "e2");
    let report = bayescall::metrics::EvalReport::from_json(
        &std::fs::read_to_string(e1.join("report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report.n_mc, 1);
    assert!((0.0..=1.0).contains(&report.accuracy));
    for f in ["report.json", "histogram.csv", "config.txt"] {
        assert_eq!(
            std::fs::read(e1.join(f)).unwrap(),
            std::fs::read(e2.join(f)).unwrap(),
            "{f}"
        );
    }

    let bayes = train("bayes", "bayes.bvc");
    let m = dir.path().join("mask");
    ok(bayescall(&with_small(vec![
        "mask-eval", "--model", p(&bayes), "--data", p(&data), "--out", p(&m),
        "--mask-rows", "3..8",
    ])));
    for f in [
        "in_dist_report.json",
        "in_dist_histogram.csv",
        "masked_report.json",
        "masked_histogram.csv",
        "ood_summary.json",
        "config.txt",
    ] {
        assert!(m.join(f).exists(), "{f}");
    }
    let echoed = std::fs::read_to_string(m.join("config.txt")).unwrap();
    assert!(echoed.contains("mask_rows = 3..8"));
}

#[test]
fn model_and_data_geometry_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.bvcd", "20", "5");
    let model = dir.path().join("m.bvc");
    ok(bayescall(&with_small(vec![
        "train", "--data", p(&data), "--head", "standard", "--out", p(&model),
    ])));
    let other = dir.path().join("other.bvcd");
    ok(bayescall(&[
        "simulate", "--out", p(&other), "--n", "20", "--set", "depth=9", "--set", "width=3",
        "--set", "coverage=6",
    ]));
    let r = bayescall(&with_small(vec![
        "eval", "--model", p(&model), "--data", p(&other), "--out", p(&dir.path().join("e")),
    ]));
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("format error"));
}

#[test]
fn bad_mask_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let r = bayescall(&[
        "mask-eval", "--model", "m", "--data", "d", "--out", p(dir.path()), "--mask-rows", "5..2",
    ]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("mask-rows"));
}
