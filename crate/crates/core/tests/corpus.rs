use std::path::Path;

use serde_json::Value;

use sumtransfer::corpus::{
    gen_synthetic, load_corpus, save_corpus, write_synthetic, SynthConfig, MANIFEST_FILE,
};
use sumtransfer::error::Error;
use sumtransfer::evaluation::MatchConfig;
use sumtransfer::model_file::{load_model, save_model};
use sumtransfer::learning::{fit, FitConfig};
use sumtransfer::protocol::{predict, score_prediction, EvalConfig};

fn small(seed: u64, noise: f64) -> SynthConfig {
    SynthConfig {
        n_videos: 4,
        n_frames: 12,
        dim: 8,
        keyframes_per_video: 3,
        noise_level: noise,
        seed,
        segment_len: 4,
        n_categories: 2,
    }
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut Value)) {
    let path = dir.join(MANIFEST_FILE);
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn video_error(e: Error) -> String {
    match e {
        Error::Video { video, .. } => video,
        other => panic!("expected a video error, got {other}"),
    }
}

#[test]
fn manifest_order_is_preserved() {
    let dir = tempfile::tempdir().unwrap();
    let mut videos = gen_synthetic(&SynthConfig { n_videos: 2, ..small(1, 0.1) }).unwrap();
    videos.swap(0, 1);
    let (manifest, _) = save_corpus(dir.path(), &videos, true).unwrap();
    let corpus = load_corpus(&manifest).unwrap();
    let ids: Vec<&str> = corpus.videos.iter().map(|v| v.id.as_str()).collect();
    assert_eq!(ids, ["v001", "v000"]);
    assert_eq!(corpus.exemplars().unwrap().len(), 2);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, ha) = write_synthetic(a.path(), &small(7, 0.05)).unwrap();
    let (_, hb) = write_synthetic(b.path(), &small(7, 0.05)).unwrap();
    assert_eq!(ha, hb);
    for name in ["features/v000.vstf", "features/v003.vstf", "summaries/v002_0.txt"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
    let c = tempfile::tempdir().unwrap();
    write_synthetic(c.path(), &small(8, 0.05)).unwrap();
    let name = "features/v000.vstf";
    assert_ne!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(c.path().join(name)).unwrap());
}

#[test]
fn noiseless_events_coincide_within_a_category() {
    let videos = gen_synthetic(&small(3, 0.0)).unwrap();
    let (a, b) = (&videos[0], &videos[2]);
    assert_eq!(a.category, b.category);
    let (ya, yb) = (a.summaries[0].indices(), b.summaries[0].indices());
    for k in 0..3 {
        assert_eq!(a.features.frame(ya[k]), b.features.frame(yb[k]));
        let dot: f64 = a.features.frame(ya[k]).iter().zip(b.features.frame(yb[k])).map(|(x, y)| x * y).sum();
        assert!((dot - 1.0).abs() < 1e-6);
    }
}

#[test]
fn out_of_range_summary_index_names_the_video() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_synthetic(dir.path(), &small(2, 0.1)).unwrap();
    std::fs::write(dir.path().join("summaries/v001_0.txt"), "0\n12\n").unwrap();
    assert_eq!(video_error(load_corpus(&manifest).unwrap_err()), "v001");
}

#[test]
fn malformed_fields_are_reported_per_video() {
    type Edit = Box<dyn Fn(&mut Value)>;
    let cases: Vec<(&str, Edit)> = vec![
        ("n_frames", Box::new(|v| v["videos"][1]["n_frames"] = 13.into())),
        ("dim", Box::new(|v| v["videos"][1]["dim"] = 7.into())),
        ("boundaries", Box::new(|v| v["videos"][1]["boundaries"] = serde_json::json!([4, 4, 12]))),
        ("features", Box::new(|v| v["videos"][1]["features"] = "features/missing.vstf".into())),
        ("summaries", Box::new(|v| v["videos"][1]["summaries"] = serde_json::json!([]))),
        ("duplicate id", Box::new(|v| v["videos"][1]["id"] = "v000".into())),
    ];
    for (what, edit) in cases {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = write_synthetic(dir.path(), &small(2, 0.1)).unwrap();
        edit_manifest(dir.path(), |v| edit(v));
        let err = load_corpus(&manifest).unwrap_err();
        let id = video_error(err);
        assert!(id == "v001" || (what == "duplicate id" && id == "v000"), "{what}: {id}");
    }
}

#[test]
fn non_unit_features_are_rejected_or_repaired() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_synthetic(dir.path(), &small(5, 0.1)).unwrap();
    let path = dir.path().join("features/v000.vstf");
    let mut bytes = std::fs::read(&path).unwrap();
    let scale = |bytes: &mut Vec<u8>, factor: f32| {
        for c in bytes[16..].chunks_exact_mut(4) {
            let v = f32::from_le_bytes(c.try_into().unwrap()) * factor;
            c.copy_from_slice(&v.to_le_bytes());
        }
    };
    scale(&mut bytes, 1.0005);
    std::fs::write(&path, &bytes).unwrap();
    let repaired = load_corpus(&manifest).unwrap();
    let norm: f64 = repaired.videos[0].features.frame(0).iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);

    edit_manifest(dir.path(), |v| v["feature_norm"] = false.into());
    assert_eq!(video_error(load_corpus(&manifest).unwrap_err()), "v000");

    scale(&mut bytes, 1.1);
    std::fs::write(&path, &bytes).unwrap();
    edit_manifest(dir.path(), |v| v["feature_norm"] = true.into());
    assert_eq!(video_error(load_corpus(&manifest).unwrap_err()), "v000");
}

#[test]
fn trained_model_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, sha) = write_synthetic(dir.path(), &small(9, 0.05)).unwrap();
    let corpus = load_corpus(&manifest).unwrap();
    let exemplars = corpus.exemplars().unwrap();
    let (model, _) = fit(&exemplars, &FitConfig { iters: 10, ..FitConfig::default() }).unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &model, &sha).unwrap();
    let back = load_model(&path, exemplars.clone(), Some(&sha)).unwrap();
    assert_eq!(back, model);
    assert!(load_model(&path, exemplars, Some("0000")).is_err());

    let eval = EvalConfig {
        matching: MatchConfig::default(),
        ..EvalConfig::default()
    };
    for v in &corpus.videos {
        let a = predict(&model, v, None).unwrap();
        let b = predict(&back, v, None).unwrap();
        assert_eq!(a, b);
        assert!(score_prediction(&a, v, &eval).unwrap().result.score.f_score >= 0.0);
    }
}
