use modex::geometry::compute_offset;
use modex::projector::init_projection;
use modex::store::Branch;
use modex::trainer::{train, train_with_observer, TrainConfig};
use modex::{EmbeddingSet, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Text in R^16 and anchors given by a fixed random linear map of centered text.
fn linear_task(n: usize, d: usize, d_out: usize) -> (EmbeddingSet, EmbeddingSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let offset: Vec<f64> = (0..d).map(|_| g()).collect();
    let text: Vec<f64> = (0..n * d).map(|i| offset[i % d] + g()).collect();
    let map: Vec<f64> = (0..d_out * d).map(|_| g() / (d as f64).sqrt()).collect();
    let text = Matrix::new(n, d, text).unwrap();
    let means = text.column_means();
    let mut centered = text.clone();
    for r in 0..n {
        centered.row_mut(r).iter_mut().zip(&means).for_each(|(v, m)| *v -= m);
    }
    let anchors = centered.matmul_transposed(&Matrix::new(d_out, d, map).unwrap()).unwrap();
    let ids: Vec<String> = (0..n).map(|i| format!("t{i:05}")).collect();
    (
        EmbeddingSet::new(ids.clone(), text, Branch::Text, "").unwrap(),
        EmbeddingSet::new(ids, anchors, Branch::Anchor, "").unwrap(),
    )
}

#[test]
fn learnable_linear_task_converges() {
    let (text, anchor) = linear_task(2048, 16, 16);
    let profile = compute_offset(&text, &text).unwrap();
    // 4 steps per epoch at the default batch size is too few for 30 epochs
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 128,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let (_, history) = train(&text, &anchor, &profile, &cfg, init_projection(16, 16, 16, 0).unwrap()).unwrap();
    let first = history.epochs[0].loss;
    let last = history.final_loss().unwrap();
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn training_is_deterministic_and_reports_each_epoch() {
    let (text, anchor) = linear_task(300, 8, 6);
    let profile = compute_offset(&text, &text).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 64,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut seen = Vec::new();
        let out = train_with_observer(&text, &anchor, &profile, &cfg, init_projection(8, 8, 6, 1).unwrap(), |r| {
            seen.push(r.epoch)
        })
        .unwrap();
        (out, seen)
    };
    let ((net_a, hist_a), seen) = run();
    let ((net_b, hist_b), _) = run();
    assert_eq!(net_a, net_b);
    assert_eq!(hist_a.to_jsonl(), hist_b.to_jsonl());
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert_eq!(hist_a.epochs[0].lr, cfg.learning_rate);
    assert!(hist_a.epochs.windows(2).all(|w| w[1].lr < w[0].lr));
}

#[test]
fn anchors_are_aligned_by_id_not_row_order() {
    let (text, anchor) = linear_task(200, 6, 4);
    let profile = compute_offset(&text, &text).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 50,
        ..TrainConfig::default()
    };
    let reversed: Vec<usize> = (0..200).rev().collect();
    let init = init_projection(6, 6, 4, 2).unwrap();
    let a = train(&text, &anchor, &profile, &cfg, init.clone()).unwrap();
    let b = train(&text, &anchor.subset(&reversed), &profile, &cfg, init).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_epochs_returns_the_initial_net() {
    let (text, anchor) = linear_task(10, 4, 3);
    let profile = compute_offset(&text, &text).unwrap();
    let init = init_projection(4, 4, 3, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (net, history) = train(&text, &anchor, &profile, &cfg, init.clone()).unwrap();
    assert_eq!(net, init);
    assert!(history.epochs.is_empty());
}

#[test]
fn dimension_mismatches_are_rejected() {
    let (text, anchor) = linear_task(10, 4, 3);
    let profile = compute_offset(&text, &text).unwrap();
    let err = train(&text, &anchor, &profile, &TrainConfig::default(), init_projection(4, 4, 5, 0).unwrap()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let err = train(&text, &anchor, &profile, &TrainConfig::default(), init_projection(5, 4, 3, 0).unwrap()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

