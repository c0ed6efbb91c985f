//! Finite-difference and naive-loop checks for the projector and the loss.

use modex::projector::{init_projection, ProjectionNet};
use modex::trainer::{infonce_loss, TrainConfig};
use modex::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale.max(1e-8)
    }
}

#[test]
fn projector_parameter_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = init_projection(5, 6, 4, 3).unwrap();
    for v in net.b1.iter_mut().chain(net.b2.iter_mut()) {
        *v = rng.gen_range(-0.5..0.5);
    }
    let x = random_matrix(&mut rng, 8, 5);
    let upstream = random_matrix(&mut rng, 8, 4);
    // scalar objective sum(upstream * forward(x)) has gradient backward(x, upstream)
    let objective = |net: &ProjectionNet| -> f64 {
        let y = net.forward_batch(&x).unwrap();
        y.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum()
    };
    let grads = net.backward(&x, &upstream).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (block, g) in analytic.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let orig = net.slices()[block][k];
            net.slices_mut()[block][k] = orig + h;
            let up = objective(&net);
            net.slices_mut()[block][k] = orig - h;
            let down = objective(&net);
            net.slices_mut()[block][k] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * h)));
        }
    }
    assert!(worst < 1e-6, "max relative error {worst:e}");
}

/// Straightforward re-implementation: explicit loops, explicit mining.
fn naive_infonce(z: &Matrix, a: &Matrix, cfg: &TrainConfig) -> f64 {
    let b = z.rows();
    let cos = |i: usize, j: usize| {
        let mut d = 0.0;
        let mut nz = 0.0;
        let mut na = 0.0;
        for k in 0..z.cols() {
            d += z.get(i, k) * a.get(j, k);
            nz += z.get(i, k) * z.get(i, k);
            na += a.get(j, k) * a.get(j, k);
        }
        d / (nz.sqrt() * na.sqrt())
    };
    let mut total = 0.0;
    for i in 0..b {
        let s_ii = cos(i, i);
        let mut negatives = Vec::new();
        if s_ii > 0.0 {
            for j in 0..b {
                let s = cos(i, j);
                if j != i && s >= cfg.hard_neg_low * s_ii && s <= cfg.hard_neg_high * s_ii {
                    negatives.push(j);
                }
            }
        }
        if negatives.is_empty() {
            negatives = (0..b).filter(|&j| j != i).collect();
        }
        let mut denom = (s_ii / cfg.temperature).exp();
        for &j in &negatives {
            denom += (cos(i, j) / cfg.temperature).exp();
        }
        total += -((s_ii / cfg.temperature).exp() / denom).ln();
    }
    total / b as f64
}

#[test]
fn infonce_matches_naive_loop_and_finite_differences() {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut z = random_matrix(&mut rng, 6, 4);
    let a = random_matrix(&mut rng, 6, 4);
    let (loss, grad) = infonce_loss(&z, &a, &cfg).unwrap();
    assert!((loss - naive_infonce(&z, &a, &cfg)).abs() < 1e-10);

    let h = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..z.as_slice().len() {
        let orig = z.as_slice()[idx];
        z.as_mut_slice()[idx] = orig + h;
        let up = naive_infonce(&z, &a, &cfg);
        z.as_mut_slice()[idx] = orig - h;
        let down = naive_infonce(&z, &a, &cfg);
        z.as_mut_slice()[idx] = orig;
        worst = worst.max(rel_err(grad.as_slice()[idx], (up - down) / (2.0 * h)));
    }
    assert!(worst < 1e-6, "max relative error {worst:e}");
}

#[test]
fn infonce_is_scale_invariant_per_row_and_non_negative() {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let z = random_matrix(&mut rng, 5, 3);
        let a = random_matrix(&mut rng, 5, 3);
        let (loss, _) = infonce_loss(&z, &a, &cfg).unwrap();
        assert!(loss >= 0.0);
        let mut scaled = z.clone();
        let row = rng.gen_range(0..5);
        let c = rng.gen_range(0.1..10.0);
        scaled.row_mut(row).iter_mut().for_each(|v| *v *= c);
        let (loss2, _) = infonce_loss(&scaled, &a, &cfg).unwrap();
        assert!((loss - loss2).abs() < 1e-9);
    }
}

#[test]
fn loss_is_zero_when_nothing_is_mined_and_fallback_is_off() {
    let cfg = TrainConfig {
        negative_fallback: false,
        ..TrainConfig::default()
    };
    // cross similarities are 0, outside [0.1, 0.9] of the positive similarity 1
    let z = Matrix::identity(3);
    let (loss, grad) = infonce_loss(&z, &Matrix::identity(3), &cfg).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    let (with_fallback, _) = infonce_loss(&z, &Matrix::identity(3), &TrainConfig::default()).unwrap();
    assert!(with_fallback > 0.0);
}

#[test]
fn full_negative_set_gradient_matches_finite_differences() {
    let cfg = TrainConfig {
        hard_negative_mining: false,
        temperature: 0.5,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut net = init_projection(7, 7, 5, 2).unwrap();
    let x = random_matrix(&mut rng, 8, 7);
    let a = random_matrix(&mut rng, 8, 5);
    let loss_of = |net: &ProjectionNet| infonce_loss(&net.forward_batch(&x).unwrap(), &a, &cfg).unwrap().0;
    let cache = net.forward_cached(&x).unwrap();
    let (_, dz) = infonce_loss(&cache.output, &a, &cfg).unwrap();
    let grads = net.backward_cached(&x, &cache, &dz).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (block, g) in analytic.iter().enumerate() {
        for (k, &an) in g.iter().enumerate() {
            let orig = net.slices()[block][k];
            net.slices_mut()[block][k] = orig + h;
            let up = loss_of(&net);
            net.slices_mut()[block][k] = orig - h;
            let down = loss_of(&net);
            net.slices_mut()[block][k] = orig;
            worst = worst.max(rel_err(an, (up - down) / (2.0 * h)));
        }
    }
    assert!(worst < 1e-6, "max relative error {worst:e}");
}
