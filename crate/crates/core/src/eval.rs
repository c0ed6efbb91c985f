//! Retrieval and classification metrics, performance preservation, the PCA
//! baseline, and offset ablation harnesses.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compute_offset, OffsetProfile};
use crate::inference::{ClassPrediction, RankingResult};
use crate::linalg::Matrix;
use crate::seed::{derive_indexed, derive_seed};
use crate::store::{EmbeddingSet, LabelSet};

/// Query id -> relevant gallery ids.
pub type GroundTruth = HashMap<String, HashSet<String>>;

/// Each id is relevant only to itself.
pub fn identity_truth<S: AsRef<str>>(ids: &[S]) -> GroundTruth {
    ids.iter()
        .map(|id| {
            let id = id.as_ref().to_string();
            (id.clone(), HashSet::from([id]))
        })
        .collect()
}

/// Ground truth from `(text_id, modal_id)` pairs. With `text_queries` the
/// text ids are queries, otherwise the modal ids are.
pub fn truth_from_pairs(pairs: &[(String, String)], text_queries: bool) -> GroundTruth {
    let mut truth = GroundTruth::new();
    for (t, m) in pairs {
        let (q, g) = if text_queries { (t, m) } else { (m, t) };
        truth.entry(q.clone()).or_default().insert(g.clone());
    }
    truth
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    Ok(())
}

/// 1-based rank of the first relevant id within the top k, if any.
fn first_hit(ranked: &[crate::inference::ScoredId], relevant: &HashSet<String>, k: usize) -> Option<usize> {
    ranked
        .iter()
        .take(k)
        .position(|s| relevant.contains(&s.id))
        .map(|p| p + 1)
}

fn per_query<'a>(
    ranking: &'a RankingResult,
    truth: &'a GroundTruth,
) -> Result<impl Iterator<Item = (&'a crate::inference::QueryRanking, &'a HashSet<String>)>> {
    if ranking.queries.is_empty() {
        return Err(Error::Empty("ranking has no queries"));
    }
    for q in &ranking.queries {
        if !truth.contains_key(&q.query) {
            return Err(Error::Validation(format!(
                "no ground truth for query {:?}",
                q.query
            )));
        }
    }
    Ok(ranking.queries.iter().map(move |q| (q, &truth[&q.query])))
}

/// Fraction of queries with at least one relevant id in the top k.
pub fn recall_at_k(ranking: &RankingResult, truth: &GroundTruth, k: usize) -> Result<f64> {
    check_k(k)?;
    let n = ranking.queries.len() as f64;
    let hits = per_query(ranking, truth)?
        .filter(|(q, rel)| first_hit(&q.ranked, rel, k).is_some())
        .count();
    Ok(hits as f64 / n)
}

pub fn mrr_at_k(ranking: &RankingResult, truth: &GroundTruth, k: usize) -> Result<f64> {
    check_k(k)?;
    let n = ranking.queries.len() as f64;
    let sum: f64 = per_query(ranking, truth)?
        .map(|(q, rel)| first_hit(&q.ranked, rel, k).map_or(0.0, |r| 1.0 / r as f64))
        .sum();
    Ok(sum / n)
}

/// Fraction of samples with any true label among the top k predicted classes.
pub fn top_k_accuracy(predictions: &[ClassPrediction], labels: &LabelSet, k: usize) -> Result<f64> {
    check_k(k)?;
    if predictions.is_empty() {
        return Err(Error::Empty("no predictions"));
    }
    let map = labels.as_map();
    let mut hits = 0usize;
    for p in predictions {
        let truth = map
            .get(p.id.as_str())
            .ok_or_else(|| Error::Validation(format!("sample {:?} has no labels", p.id)))?;
        if p.ranked.iter().take(k).any(|c| truth.contains(&c.class)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// Macro mAP over classes that have at least one positive. `scores` is
/// samples x classes; within a class, tied scores rank by sample index.
pub fn mean_average_precision(scores: &Matrix, labels: &[Vec<usize>]) -> Result<f64> {
    if scores.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} score rows but {} label lists",
            scores.rows(),
            labels.len()
        )));
    }
    let n_classes = scores.cols();
    let mut positive = vec![vec![false; scores.rows()]; n_classes];
    for (s, ls) in labels.iter().enumerate() {
        for &c in ls {
            if c >= n_classes {
                return Err(Error::Validation(format!(
                    "label {c} out of range for {n_classes} classes"
                )));
            }
            positive[c][s] = true;
        }
    }
    let mut ap_sum = 0.0;
    let mut used = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(scores.rows());
    for (c, pos) in positive.iter().enumerate() {
        let n_pos = pos.iter().filter(|&&p| p).count();
        if n_pos == 0 {
            continue;
        }
        order.clear();
        order.extend(0..scores.rows());
        order.sort_by(|&a, &b| scores.get(b, c).total_cmp(&scores.get(a, c)).then(a.cmp(&b)));
        let mut seen = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &s) in order.iter().enumerate() {
            if pos[s] {
                seen += 1;
                precision_sum += seen as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += precision_sum / n_pos as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Empty("no class has a positive sample"));
    }
    Ok(ap_sum / used as f64)
}

/// Samples x classes score matrix from complete class rankings.
pub fn score_matrix(predictions: &[ClassPrediction], n_classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(predictions.len(), n_classes);
    for (i, p) in predictions.iter().enumerate() {
        let mut seen = vec![false; n_classes];
        for c in &p.ranked {
            if c.class >= n_classes {
                return Err(Error::Validation(format!(
                    "prediction for {:?} names class {} of {n_classes}",
                    p.id, c.class
                )));
            }
            seen[c.class] = true;
            m.set(i, c.class, c.score);
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Validation(format!(
                "prediction for {:?} does not score every class; rerun classify with k = {n_classes}",
                p.id
            )));
        }
    }
    Ok(m)
}

/// Performance preservation ratio, in percent.
pub fn ppr(score: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::Validation(format!(
            "reference score must be positive, got {reference}"
        )));
    }
    Ok(score / reference * 100.0)
}

pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::Validation("correlation needs at least 3 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Validation("correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Principal axes of the mean-centered rows, strongest first. Each axis is
/// sign-normalized so its largest-magnitude entry is positive.
pub fn principal_axes(centered: &Matrix) -> (Vec<f64>, Matrix) {
    let d = centered.cols();
    let denom = (centered.rows().max(2) - 1) as f64;
    let mut cov = centered.transposed_matmul(centered).expect("square");
    cov.scale(1.0 / denom);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Matrix::zeros(d, d);
    let mut values = Vec::with_capacity(d);
    for (r, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let pivot = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (c, &x) in col.iter().enumerate() {
            axes.set(r, c, sign * x);
        }
        values.push(eig.eigenvalues[i]);
    }
    (values, axes)
}

/// Naive dimension alignment: mean-center, then project onto the top
/// `target_dim` principal axes when reducing, or zero-pad when expanding.
pub fn pca_align(source: &EmbeddingSet, target_dim: usize) -> Result<EmbeddingSet> {
    if target_dim == 0 {
        return Err(Error::Validation("target_dim must be at least 1".into()));
    }
    if source.is_empty() {
        return Err(Error::Empty("PCA source set"));
    }
    let d = source.dim();
    let means = source.matrix().column_means();
    let mut centered = source.matrix().clone();
    for r in 0..centered.rows() {
        for (x, m) in centered.row_mut(r).iter_mut().zip(&means) {
            *x -= m;
        }
    }
    let out = if d > target_dim {
        if source.len() < target_dim {
            return Err(Error::Validation(format!(
                "{} rows cannot support {target_dim} principal components",
                source.len()
            )));
        }
        let (_, axes) = principal_axes(&centered);
        let top = axes.select_rows(&(0..target_dim).collect::<Vec<_>>());
        centered.matmul_transposed(&top)?
    } else if d < target_dim {
        let mut padded = Matrix::zeros(source.len(), target_dim);
        for r in 0..source.len() {
            padded.row_mut(r)[..d].copy_from_slice(centered.row(r));
        }
        padded
    } else {
        centered
    };
    EmbeddingSet::new(source.ids().to_vec(), out, source.branch(), source.modality())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppr: Option<f64>,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, value: f64, k: Option<usize>) -> Self {
        Self {
            metric: metric.into(),
            value,
            k,
            reference_score: None,
            ppr: None,
        }
    }

    pub fn with_reference(mut self, reference: f64) -> Result<Self> {
        self.ppr = Some(ppr(self.value, reference)?);
        self.reference_score = Some(reference);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseAblationConfig {
    pub sigmas: Vec<f64>,
    pub seed: u64,
    pub trials: usize,
}

impl NoiseAblationConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::config("sigmas", format!("{s} is not a non-negative number")));
        }
        if self.sigmas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("sigmas", "must be sorted ascending"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Evaluates `eval` on profiles whose gap is perturbed by `N(0, sigma^2 I)`.
/// Trial `t` at sigma index `s` draws from a stream keyed by `(seed, s, t)`.
pub fn ablate_offset_noise(
    profile: &OffsetProfile,
    cfg: &NoiseAblationConfig,
    mut eval: impl FnMut(&OffsetProfile) -> Result<f64>,
) -> Result<Vec<NoiseRow>> {
    cfg.validate()?;
    let base = derive_seed(cfg.seed, "ablation", "offset_noise");
    let mut rows = Vec::with_capacity(cfg.sigmas.len());
    for (si, &sigma) in cfg.sigmas.iter().enumerate() {
        let mut values = Vec::with_capacity(cfg.trials);
        for t in 0..cfg.trials {
            let value = if sigma == 0.0 {
                eval(profile)?
            } else {
                let stream = derive_indexed(derive_indexed(base, si as u64), t as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                let normal = Normal::new(0.0, sigma).expect("valid sigma");
                let noise: Vec<f64> = (0..profile.dim()).map(|_| normal.sample(&mut rng)).collect();
                eval(&profile.perturbed(&noise)?)?
            };
            values.push(value);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        rows.push(NoiseRow {
            sigma,
            mean,
            std,
            values,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub size: usize,
    pub metric: f64,
    /// Percent of the full-sample metric.
    pub relative: f64,
}

/// Seeded subsample of `size` row indices out of `n`, in ascending order.
pub fn subsample_indices(n: usize, size: usize, seed: u64, purpose: &str) -> Result<Vec<usize>> {
    if size > n {
        return Err(Error::Validation(format!(
            "sample size {size} exceeds population {n}"
        )));
    }
    let stream = derive_indexed(derive_seed(seed, "ablation", purpose), size as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Re-estimates the offset from independent seeded subsamples of each size
/// and reports `eval` relative to the full-sample offset.
pub fn ablate_offset_samples(
    text_set: &EmbeddingSet,
    modal_set: &EmbeddingSet,
    sample_sizes: &[usize],
    seed: u64,
    mut eval: impl FnMut(&OffsetProfile) -> Result<f64>,
) -> Result<(f64, Vec<SampleRow>)> {
    for &s in sample_sizes {
        if s == 0 || s > text_set.len() || s > modal_set.len() {
            return Err(Error::Validation(format!(
                "sample size {s} outside 1..={} (text) / 1..={} (modal)",
                text_set.len(),
                modal_set.len()
            )));
        }
    }
    let full = compute_offset(text_set, modal_set)?;
    let reference = eval(&full)?;
    if !(reference > 0.0) {
        return Err(Error::Validation(
            "full-sample metric is zero; relative performance undefined".into(),
        ));
    }
    let mut rows = Vec::with_capacity(sample_sizes.len());
    for &size in sample_sizes {
        let ti = subsample_indices(text_set.len(), size, seed, "samples_text")?;
        let mi = subsample_indices(modal_set.len(), size, seed, "samples_modal")?;
        let profile = compute_offset(&text_set.subset(&ti), &modal_set.subset(&mi))?;
        let metric = eval(&profile)?;
        rows.push(SampleRow {
            size,
            metric,
            relative: metric / reference * 100.0,
        });
    }
    Ok((reference, rows))
}

pub fn render_noise_table(metric: &str, rows: &[NoiseRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>10}  {:>12}  {:>10}", "sigma", metric, "std");
    for r in rows {
        let _ = writeln!(s, "{:>10.3}  {:>12.4}  {:>10.4}", r.sigma, r.mean, r.std);
    }
    s
}

pub fn render_sample_table(metric: &str, rows: &[SampleRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>10}  {:>12}  {:>10}", "samples", metric, "rel_perf");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>10}  {:>12.4}  {:>9.1}%",
            r.size, r.metric, r.relative
        );
    }
    s
}
