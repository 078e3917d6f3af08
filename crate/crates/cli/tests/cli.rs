use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sumtransfer"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SUMTRANSFER_DATA")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = cli(args, cwd);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn mean_f(table: &str) -> f64 {
    let last = table.lines().last().unwrap();
    assert!(last.starts_with("mean,"), "{table}");
    last.split(',').nth(3).unwrap().parse().unwrap()
}

#[test]
fn synth_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--seed", "7", "--out", "a"], t.path());
    ok(&["synth", "--seed", "7", "--out", "b"], t.path());
    let a = read_dir_sorted(&t.path().join("a"));
    assert_eq!(a, read_dir_sorted(&t.path().join("b")));
    assert!(a.len() > 10);
}

#[test]
fn eval_of_the_annotations_scores_100() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--seed", "1", "--out", "data", "--videos", "4"], t.path());
    std::fs::create_dir(t.path().join("pred")).unwrap();
    for k in 0..4 {
        std::fs::copy(
            t.path().join(format!("data/summaries/v{k:03}_0.txt")),
            t.path().join(format!("pred/v{k:03}.txt")),
        )
        .unwrap();
    }
    let table = ok(&["eval", "--corpus", "data", "--pred", "pred"], t.path());
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 6);
    for row in &rows[1..] {
        assert_eq!(row.split(',').nth(3), Some("100.000000"), "{row}");
    }
}

#[test]
fn noiseless_pipeline_recovers_every_summary() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    ok(&["synth", "--seed", "3", "--noise", "0", "--out", "data"], p);
    ok(&["train", "--corpus", "data", "--model", "model.json", "--category-mode", "hard"], p);
    ok(&["summarize", "--corpus", "data", "--model", "model.json", "--out", "pred"], p);
    ok(&["eval", "--corpus", "data", "--pred", "pred", "--out", "scores.csv"], p);
    let scores = std::fs::read_to_string(p.join("scores.csv")).unwrap();
    assert_eq!(mean_f(&scores), 100.0);

    // identical flags give identical outputs
    ok(&["train", "--corpus", "data", "--model", "model2.json", "--category-mode", "hard"], p);
    assert_eq!(std::fs::read(p.join("model.json")).unwrap(), std::fs::read(p.join("model2.json")).unwrap());
}

#[test]
fn held_out_videos_are_summarized_from_a_subset_model() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    ok(&["synth", "--seed", "4", "--noise", "0", "--videos", "6", "--out", "data"], p);
    let train = "v000,v001,v002,v003";
    ok(&["train", "--corpus", "data", "--videos", train, "--model", "m.json", "--category-mode", "hard"], p);
    ok(&["summarize", "--corpus", "data", "--videos", "v004,v005", "--model", "m.json", "--out", "pred"], p);
    assert!(!p.join("pred/v000.txt").exists());
    let table = ok(&["eval", "--corpus", "data", "--videos", "v004,v005", "--pred", "pred"], p);
    assert_eq!(mean_f(&table), 100.0);
}

#[test]
fn invalid_flags_fail_before_writing() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    ok(&["synth", "--seed", "2", "--out", "data", "--videos", "4"], p);
    let cases: &[&[&str]] = &[
        &["train", "--corpus", "data", "--model", "m.json", "--learn-metric"],
        &["train", "--corpus", "data", "--model", "m.json", "--sequential", "5", "--granularity", "subshot-mean"],
        &["train", "--corpus", "data", "--model", "m.json", "--sigma", "0"],
        &["train", "--corpus", "data", "--model", "m.json", "--videos", "nope"],
        &["train", "--corpus", "missing", "--model", "m.json"],
        &["synth", "--out", "bad", "--keyframes", "50"],
        &["train", "--corpus", "data", "--model", "m.json", "--unknown-flag"],
    ];
    for args in cases {
        let o = cli(args, p);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!String::from_utf8_lossy(&o.stderr).contains("panicked"));
    }
    assert!(!p.join("m.json").exists());
    assert!(!p.join("bad").exists());
}

#[test]
fn model_from_another_corpus_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    ok(&["synth", "--seed", "5", "--out", "a", "--videos", "4"], p);
    // same exemplar ids, different manifest
    ok(&["synth", "--seed", "5", "--out", "b", "--videos", "5"], p);
    ok(&["train", "--corpus", "a", "--model", "m.json", "--iters", "5"], p);
    let o = cli(&["summarize", "--corpus", "b", "--model", "m.json", "--out", "pred"], p);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trained on corpus"));
    assert!(!p.join("pred").exists());
}

#[test]
fn gradcheck_passes_and_fails_on_tolerance() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    ok(&["synth", "--seed", "8", "--out", "data", "--videos", "3", "--frames", "12", "--dim", "6"], p);
    let table = ok(&["gradcheck", "--corpus", "data", "--sim", "mahalanobis", "--learn-metric"], p);
    assert_eq!(table.lines().next(), Some("point,parameter,index,analytic,numeric,relative_error"));
    assert_eq!(table.lines().count(), 1 + 3 * (3 + 6));
    // a coarse step cannot meet an absurd tolerance
    let o = cli(&["gradcheck", "--corpus", "data", "--h", "0.5", "--tol", "1e-15"], p);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn splits_are_reproducible_and_cover_the_corpus() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    ok(&["synth", "--seed", "9", "--out", "data"], p);
    let a = ok(&["splits", "--corpus", "data", "--rounds", "4", "--seed", "3"], p);
    let b = ok(&["splits", "--corpus", "data", "--rounds", "4", "--seed", "3"], p);
    assert_eq!(a, b);
    let rows: Vec<&str> = a.lines().skip(1).collect();
    assert_eq!(rows.len(), 40);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",train")).count(), 32);

    ok(&["splits", "--corpus", "data", "--rounds", "2", "--results", "res.csv", "--iters", "20"], p);
    let res = std::fs::read_to_string(p.join("res.csv")).unwrap();
    let lines: Vec<&str> = res.lines().collect();
    assert_eq!(lines[0], "round,f_score");
    assert!(lines[3].starts_with("mean,") && lines[4].starts_with("stderr,"));
}
