use std::path::Path;
use std::process::{Command, Output};

use modex::cli::PipelineConfig;
use modex::eval::EvalReport;
use modex::geometry::{compute_offset, OffsetProfile};
use modex::inference::{QueryRanking, RankingResult, ScoredId};
use modex::store::{read_embeddings, write_embeddings, Branch};
use modex::synth::brute_force_retrieval;
use modex::{EmbeddingSet, Matrix};

fn modex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modex"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_set(dir: &Path, name: &str, rows: usize, dim: usize, branch: Branch, salt: f64) {
    let data = (0..rows * dim).map(|i| ((i as f64 + salt) * 0.37).sin()).collect();
    let ids = (0..rows).map(|i| format!("r{i:03}")).collect();
    let set = EmbeddingSet::new(ids, Matrix::new(rows, dim, data).unwrap(), branch, "").unwrap();
    write_embeddings(&set, dir.join(name)).unwrap();
}

#[test]
fn compute_offset_matches_library_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_set(d, "t.gbe", 6, 3, Branch::Text, 0.0);
    write_set(d, "m.gbe", 5, 3, Branch::Modal, 9.0);
    write_set(d, "m4.gbe", 5, 4, Branch::Modal, 9.0);

    let out = modex(d, &["compute-offset", "--text", "t.gbe", "--modal", "m.gbe"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let got = OffsetProfile::read(d.join("offset.json")).unwrap();
    let want = compute_offset(&read_embeddings(d.join("t.gbe")).unwrap(), &read_embeddings(d.join("m.gbe")).unwrap()).unwrap();
    assert_eq!(got, want);

    let out = modex(d, &["compute-offset", "--text", "missing.gbe", "--modal", "m.gbe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.gbe"));

    let out = modex(d, &["compute-offset", "--text", "t.gbe", "--modal", "m4.gbe"]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(d.join("junk.gbe"), b"NOPE0000").unwrap();
    let out = modex(d, &["compute-offset", "--text", "junk.gbe", "--modal", "m.gbe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("junk.gbe"));
}

#[test]
fn train_defaults_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = modex(d, &["train", "--print-defaults"]);
    assert_eq!(out.status.code(), Some(0));
    let parsed: PipelineConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed, PipelineConfig::default());

    std::fs::write(d.join("bad.json"), r#"{"train": {"epochs": 2, "learnin_rate": 0.1}}"#).unwrap();
    let out = modex(d, &["--config", "bad.json", "train"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("learnin_rate"));

    std::fs::write(d.join("zero.json"), r#"{"train": {"temperature": 0.0}}"#).unwrap();
    let out = modex(d, &["--config", "zero.json", "train"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("temperature"));

    let out = modex(d, &["train"]);
    assert_eq!(out.status.code(), Some(4));
    let out = modex(d, &["--bogus-flag", "train"]);
    assert_eq!(out.status.code(), Some(4));
    let out = modex(d, &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn synthetic_pipeline_trains_and_loss_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let world = d.join("world");
    std::fs::create_dir(&world).unwrap();
    let out = modex(&world, &["synth", "--n-samples", "800", "--dim", "20", "--anchor-dim", "12"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        modex(&world, &["compute-offset", "--text", "text.gbe", "--modal", "modal.gbe"]).status.code(),
        Some(0)
    );
    // relative paths resolve against the config file, not the working directory
    std::fs::write(
        world.join("pipeline.json"),
        r#"{"modal": "modal.gbe", "train": {"epochs": 8, "batch_size": 100, "learning_rate": 0.003}}"#,
    )
    .unwrap();
    let out = modex(d, &["--config", "world/pipeline.json", "--out-dir", "run", "train"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("epoch"));
    let history = std::fs::read_to_string(d.join("run/history.jsonl")).unwrap();
    let losses: Vec<f64> = history
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["loss"].as_f64().unwrap())
        .collect();
    assert_eq!(losses.len(), 8);
    assert!(losses.last().unwrap() < &losses[0]);
    let evals: Vec<EvalReport> =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/train_eval.json")).unwrap()).unwrap();
    assert_eq!(evals.len(), 6);
    assert!(d.join("run/projector.gbp").exists());
}

#[test]
fn retrieve_output_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_set(d, "q.gbe", 7, 5, Branch::Anchor, 0.0);
    write_set(d, "g.gbe", 30, 5, Branch::Anchor, 100.0);
    let out = modex(d, &["retrieve", "--queries", "q.gbe", "--gallery", "g.gbe", "--k", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let q = read_embeddings(d.join("q.gbe")).unwrap();
    let g = read_embeddings(d.join("g.gbe")).unwrap();
    let expected = RankingResult {
        queries: brute_force_retrieval(q.matrix(), g.matrix(), 4)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(qi, ranked)| QueryRanking {
                query: q.ids()[qi].clone(),
                ranked: ranked
                    .into_iter()
                    .map(|(gi, score)| ScoredId {
                        id: g.ids()[gi].clone(),
                        score,
                    })
                    .collect(),
            })
            .collect(),
    };
    assert_eq!(std::fs::read_to_string(d.join("ranking.jsonl")).unwrap(), expected.to_jsonl());
}

#[test]
fn evaluate_with_precomputed_score_reports_ppr() {
    let dir = tempfile::tempdir().unwrap();
    let out = modex(dir.path(), &["evaluate", "--metric", "recall", "--k", "1", "--score", "28.63", "--reference", "48.29"]);
    assert_eq!(out.status.code(), Some(0));
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!((report.ppr.unwrap() - 59.29).abs() < 0.01);

    let out = modex(dir.path(), &["evaluate", "--metric", "recall"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("--ranking"));
}

#[test]
fn diagnose_noise_free_export_and_zero_epoch_training() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = modex(d, args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", stderr(&out));
    };
    run(&["--seed", "4", "synth", "--n-samples", "300", "--dim", "20", "--anchor-dim", "8", "--deviation-sigma", "0"]);
    run(&["compute-offset", "--text", "text.gbe", "--modal", "modal.gbe"]);
    run(&["diagnose", "--text", "text.gbe", "--modal", "modal.gbe", "--profile", "offset.json", "--pairs", "pairs.jsonl"]);
    let geometry: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("geometry.json")).unwrap()).unwrap();
    // the export is f32, so exactness holds to single precision
    assert!((geometry["gap_consistency"]["mean"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    std::fs::write(d.join("zero.json"), r#"{"train": {"epochs": 0}}"#).unwrap();
    run(&["--seed", "9", "--config", "zero.json", "train"]);
    let trained = std::fs::read(d.join("projector.gbp")).unwrap();
    let init = modex::projector::init_projection(20, 20, 8, 9).unwrap();
    assert_eq!(trained, modex::projector::encode_projection(&init).unwrap());
    assert_eq!(std::fs::read_to_string(d.join("history.jsonl")).unwrap(), "");
}
