//! Text-to-anchor alignment: contrastive loss with in-batch hard negatives,
//! AdamW with decoupled weight decay, and cosine learning-rate annealing.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{center_set, OffsetProfile};
use crate::linalg::{norm, Matrix};
use crate::projector::{GradientBundle, ProjectionNet};
use crate::seed::{derive_indexed, derive_seed};
use crate::store::EmbeddingSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub temperature: f64,
    pub hard_neg_low: f64,
    pub hard_neg_high: f64,
    /// When false every in-batch item is a negative.
    pub hard_negative_mining: bool,
    /// Use all in-batch negatives when the mined set is empty.
    pub negative_fallback: bool,
    pub eta_min: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            learning_rate: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            temperature: 0.07,
            hard_neg_low: 0.1,
            hard_neg_high: 0.9,
            hard_negative_mining: true,
            negative_fallback: true,
            eta_min: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be positive"));
        }
        if !(self.hard_neg_low >= 0.0 && self.hard_neg_low <= self.hard_neg_high) {
            return Err(Error::config(
                "hard_neg_low",
                "need 0 <= hard_neg_low <= hard_neg_high",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be non-negative"));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.learning_rate) {
            return Err(Error::config("eta_min", "need 0 <= eta_min <= learning_rate"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// In-batch negatives `j != i` whose similarity lies in
/// `[low * s_i, high * s_i]`, where `s_i = sim_row[self_index]`. Falls back
/// to every `j != i` when the range is degenerate (`s_i <= 0`) or empty.
pub fn mine_hard_negatives(sim_row: &[f64], self_index: usize, low: f64, high: f64) -> Vec<usize> {
    mine(sim_row, self_index, low, high, true)
}

fn mine(sim_row: &[f64], i: usize, low: f64, high: f64, fallback: bool) -> Vec<usize> {
    let s_i = sim_row[i];
    let others = || (0..sim_row.len()).filter(move |&j| j != i);
    if s_i <= 0.0 {
        return if fallback { others().collect() } else { Vec::new() };
    }
    let (lo, hi) = (low * s_i, high * s_i);
    let mined: Vec<usize> = others()
        .filter(|&j| sim_row[j] >= lo && sim_row[j] <= hi)
        .collect();
    if mined.is_empty() && fallback {
        others().collect()
    } else {
        mined
    }
}

fn row_norms(m: &Matrix, what: &'static str) -> Result<Vec<f64>> {
    m.row_iter()
        .map(|r| {
            let n = norm(r);
            if n == 0.0 {
                Err(Error::ZeroNorm(what))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Mean contrastive loss of `z_i` against anchors `z'_j` over `{i} ∪ N_i`,
/// and its gradient with respect to `z`. Anchors are constants.
pub fn infonce_loss(z: &Matrix, anchors: &Matrix, cfg: &TrainConfig) -> Result<(f64, Matrix)> {
    if z.rows() != anchors.rows() || z.cols() != anchors.cols() {
        return Err(Error::Shape(format!(
            "projected batch is {}x{} but anchor batch is {}x{}",
            z.rows(),
            z.cols(),
            anchors.rows(),
            anchors.cols()
        )));
    }
    let b = z.rows();
    let mut grad = Matrix::zeros(b, z.cols());
    if b == 0 {
        return Ok((0.0, grad));
    }
    let zn = row_norms(z, "projected batch")?;
    let an = row_norms(anchors, "anchor batch")?;
    let mut sims = z.matmul_transposed(anchors)?;
    for i in 0..b {
        for (j, s) in sims.row_mut(i).iter_mut().enumerate() {
            *s /= zn[i] * an[j];
        }
    }

    let tau = cfg.temperature;
    let scale = 1.0 / (tau * b as f64);
    let mut total = 0.0;
    let mut members = Vec::with_capacity(b);
    let mut weights = Vec::with_capacity(b);
    for i in 0..b {
        let row = sims.row(i);
        members.clear();
        members.push(i);
        if cfg.hard_negative_mining {
            members.extend(mine(row, i, cfg.hard_neg_low, cfg.hard_neg_high, cfg.negative_fallback));
        } else {
            members.extend((0..b).filter(|&j| j != i));
        }
        let max = members.iter().map(|&j| row[j] / tau).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &j in &members {
            denom += (row[j] / tau - max).exp();
        }
        let lse = max + denom.ln();
        total += lse - row[i] / tau;

        // d loss / d s_ij = (p_ij - [j == i]) / (tau * B)
        weights.clear();
        for &j in &members {
            let p = (row[j] / tau - lse).exp();
            let delta = if j == i { 1.0 } else { 0.0 };
            weights.push((p - delta) * scale);
        }
        // d s_ij / d z_i = (a_j / |a_j| - s_ij z_i / |z_i|) / |z_i|
        let zi = z.row(i);
        let inv_zn = 1.0 / zn[i];
        let g = grad.row_mut(i);
        let mut self_coeff = 0.0;
        for (&j, &w) in members.iter().zip(&weights) {
            let coeff = w * inv_zn / an[j];
            for (gk, ak) in g.iter_mut().zip(anchors.row(j)) {
                *gk += coeff * ak;
            }
            self_coeff += w * row[j];
        }
        let c = self_coeff * inv_zn * inv_zn;
        for (gk, zk) in g.iter_mut().zip(zi) {
            *gk -= c * zk;
        }
    }
    Ok((total / b as f64, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl AdamWState {
    pub fn new(shapes: &[usize], epsilon: f64) -> Self {
        Self {
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            epsilon,
        }
    }

    pub fn for_net(net: &ProjectionNet, epsilon: f64) -> Self {
        let shapes: Vec<usize> = net.slices().iter().map(|s| s.len()).collect();
        Self::new(&shapes, epsilon)
    }
}

/// One AdamW update: `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamWState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradient tensors, {} moment tensors",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        check_dim(p.len(), g.len())?;
        check_dim(p.len(), m.len())?;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + state.epsilon) + cfg.weight_decay * p[i]);
        }
    }
    Ok(())
}

pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64, eta_min: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::Validation(format!(
            "schedule step {step} outside 0..={total_steps}"
        )));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(eta_min + 0.5 * (lr0 - eta_min) * (1.0 + (PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.loss)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.epochs {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }
}

/// Shuffled row order for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let stream = derive_indexed(derive_seed(seed, "trainer", "shuffle"), epoch as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn train(
    text_src: &EmbeddingSet,
    anchor: &EmbeddingSet,
    profile: &OffsetProfile,
    cfg: &TrainConfig,
    net: ProjectionNet,
) -> Result<(ProjectionNet, TrainHistory)> {
    train_with_observer(text_src, anchor, profile, cfg, net, |_| {})
}

/// [`train`], calling `observer` after every epoch.
pub fn train_with_observer(
    text_src: &EmbeddingSet,
    anchor: &EmbeddingSet,
    profile: &OffsetProfile,
    cfg: &TrainConfig,
    mut net: ProjectionNet,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(ProjectionNet, TrainHistory)> {
    cfg.validate()?;
    net.validate()?;
    check_dim(net.d_in(), text_src.dim())?;
    check_dim(net.d_out(), anchor.dim())?;
    check_dim(profile.dim(), text_src.dim())?;
    if text_src.len() != anchor.len() {
        return Err(Error::Validation(format!(
            "text set has {} ids but anchor set has {}",
            text_src.len(),
            anchor.len()
        )));
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((net, history));
    }
    if text_src.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let anchor = anchor.select_ids(text_src.ids())?;
    let inputs = center_set(text_src, &profile.mu_text)?;

    let n = inputs.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut state = AdamWState::for_net(&net, cfg.epsilon);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_permutation(n, cfg.seed, epoch);
        let epoch_lr = cosine_lr(step, total_steps, cfg.learning_rate, cfg.eta_min)?;
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.matrix().select_rows(batch);
            let targets = anchor.matrix().select_rows(batch);
            let cache = net.forward_cached(&x)?;
            let (loss, d_out) = infonce_loss(&cache.output, &targets, cfg)?;
            let grads: GradientBundle = net.backward_cached(&x, &cache, &d_out)?;
            let lr = cosine_lr(step, total_steps, cfg.learning_rate, cfg.eta_min)?;
            adamw_step(&mut net.slices_mut(), &grads.slices(), &mut state, lr, cfg)?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            lr: epoch_lr,
        };
        if !record.loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        observer(&record);
        history.epochs.push(record);
    }
    Ok((net, history))
}
