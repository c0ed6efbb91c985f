//! Modality-gap estimation, centering, and gap-geometry diagnostics.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cosine_similarity, norm, sub};
use crate::seed::rng_for;
use crate::store::{ensure_parent, EmbeddingSet, PairedDataset};

/// Branch centroids and the gap between them, `delta = mu_modal - mu_text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetProfile {
    pub modality: String,
    pub n_text: usize,
    pub n_modal: usize,
    pub mu_text: Vec<f64>,
    pub mu_modal: Vec<f64>,
    pub delta: Vec<f64>,
}

impl OffsetProfile {
    pub fn from_centroids(
        modality: impl Into<String>,
        mu_text: Vec<f64>,
        mu_modal: Vec<f64>,
        n_text: usize,
        n_modal: usize,
    ) -> Result<Self> {
        let delta = sub(&mu_modal, &mu_text)?;
        Ok(Self {
            modality: modality.into(),
            n_text,
            n_modal,
            mu_text,
            mu_modal,
            delta,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu_text.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.mu_text.len(), self.mu_modal.len())?;
        check_dim(self.mu_text.len(), self.delta.len())?;
        let all = self.mu_text.iter().chain(&self.mu_modal).chain(&self.delta);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("offset profile"));
        }
        for ((t, m), d) in self.mu_text.iter().zip(&self.mu_modal).zip(&self.delta) {
            if ((m - t) - d).abs() > 1e-12 * (1.0 + m.abs().max(t.abs())) {
                return Err(Error::Validation(
                    "offset profile delta is not mu_modal - mu_text".into(),
                ));
            }
        }
        Ok(())
    }

    /// Returns a copy whose gap is shifted by `noise`; `mu_modal` moves with
    /// it so that `delta == mu_modal - mu_text` still holds.
    pub fn perturbed(&self, noise: &[f64]) -> Result<Self> {
        check_dim(self.dim(), noise.len())?;
        let delta: Vec<f64> = self.delta.iter().zip(noise).map(|(d, n)| d + n).collect();
        let mu_modal = self.mu_text.iter().zip(&delta).map(|(t, d)| t + d).collect();
        Ok(Self {
            delta,
            mu_modal,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let profile: OffsetProfile = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ensure_parent(path)?;
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn compute_centroid(set: &EmbeddingSet) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::Empty("centroid of an empty set"));
    }
    Ok(set.matrix().column_means())
}

/// Estimates branch centroids from independent (not necessarily paired) samples.
pub fn compute_offset(text_set: &EmbeddingSet, modal_set: &EmbeddingSet) -> Result<OffsetProfile> {
    check_dim(text_set.dim(), modal_set.dim())?;
    let mu_text = compute_centroid(text_set)?;
    let mu_modal = compute_centroid(modal_set)?;
    let modality = if modal_set.modality().is_empty() {
        text_set.modality()
    } else {
        modal_set.modality()
    };
    OffsetProfile::from_centroids(modality, mu_text, mu_modal, text_set.len(), modal_set.len())
}

pub fn center(e: &[f64], centroid: &[f64]) -> Result<Vec<f64>> {
    sub(e, centroid)
}

/// Subtracts `centroid` from every row.
pub fn center_set(set: &EmbeddingSet, centroid: &[f64]) -> Result<EmbeddingSet> {
    check_dim(set.dim(), centroid.len())?;
    let mut data = Vec::with_capacity(set.len() * set.dim());
    for row in set.matrix().row_iter() {
        data.extend(row.iter().zip(centroid).map(|(x, c)| x - c));
    }
    let m = crate::linalg::Matrix::new(set.len(), set.dim(), data)?;
    EmbeddingSet::new(set.ids().to_vec(), m, set.branch(), set.modality())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation. Values are summed in sorted
    /// order, so the result does not depend on input order.
    pub fn from_values(values: &mut [f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Summary of the four gap-geometry properties for one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// cos(e - mu_modal, mu_modal) over modal samples.
    pub independence: MeanStd,
    /// cos(delta_k, delta) over pairs.
    pub gap_consistency: MeanStd,
    /// ||delta_k - delta|| over pairs.
    pub bounded_deviation: MeanStd,
    /// Signed cos(delta, e_p - e_q) over random intra-modal pairs.
    pub orthogonality: MeanStd,
    pub n_pairs_used: usize,
}

impl GeometryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Draws up to `n` distinct unordered index pairs from `0..len` with random orientation.
fn sample_intra_pairs(len: usize, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = rng_for(seed, "geometry", "intra_pairs");
    let total = len * (len - 1) / 2;
    let n = n.min(total);
    if n * 2 >= total {
        let mut all: Vec<(usize, usize)> = (0..len)
            .flat_map(|p| (p + 1..len).map(move |q| (p, q)))
            .collect();
        all.shuffle(&mut rng);
        all.truncate(n);
        return all
            .into_iter()
            .map(|(p, q)| if rng.gen::<bool>() { (q, p) } else { (p, q) })
            .collect();
    }
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = rng.gen_range(0..len);
        let q = rng.gen_range(0..len);
        if p == q || !seen.insert((p.min(q), p.max(q))) {
            continue;
        }
        out.push((p, q));
    }
    out
}

pub fn measure_geometry(
    paired: &PairedDataset,
    profile: &OffsetProfile,
    n_intra_pairs: usize,
    seed: u64,
) -> Result<GeometryReport> {
    let text = &paired.text_set;
    let modal = &paired.modal_set;
    check_dim(profile.dim(), text.dim())?;
    check_dim(profile.dim(), modal.dim())?;
    if paired.index_pairs().is_empty() {
        return Err(Error::Empty("no text-modal pairs for geometry diagnostics"));
    }
    if n_intra_pairs == 0 {
        return Err(Error::Validation("n_intra_pairs must be at least 1".into()));
    }
    if modal.len() < 2 {
        return Err(Error::Validation(
            "intra-modal orthogonality needs at least 2 modal samples".into(),
        ));
    }
    let delta = &profile.delta;
    if norm(delta) == 0.0 {
        return Err(Error::DegenerateGap);
    }
    if norm(&profile.mu_modal) == 0.0 {
        return Err(Error::ZeroNorm("modal centroid"));
    }

    let mut independence = Vec::with_capacity(modal.len());
    for row in modal.matrix().row_iter() {
        let centered = sub(row, &profile.mu_modal)?;
        if norm(&centered) > 0.0 {
            independence.push(cosine_similarity(&centered, &profile.mu_modal)?);
        }
    }

    let mut consistency = Vec::with_capacity(paired.index_pairs().len());
    let mut deviation = Vec::with_capacity(paired.index_pairs().len());
    for &(t, m) in paired.index_pairs() {
        let gap_k = sub(modal.row(m), text.row(t))?;
        let eps = sub(&gap_k, delta)?;
        deviation.push(norm(&eps));
        if norm(&gap_k) > 0.0 {
            consistency.push(cosine_similarity(&gap_k, delta)?);
        }
    }

    let mut orthogonality = Vec::with_capacity(n_intra_pairs);
    for (p, q) in sample_intra_pairs(modal.len(), n_intra_pairs, seed) {
        let r = sub(modal.row(p), modal.row(q))?;
        if norm(&r) > 0.0 {
            orthogonality.push(cosine_similarity(delta, &r)?);
        }
    }

    let summarize = |v: &mut Vec<f64>, what: &'static str| {
        MeanStd::from_values(v).ok_or(Error::Empty(what))
    };
    Ok(GeometryReport {
        independence: summarize(&mut independence, "all modal samples equal the centroid")?,
        gap_consistency: summarize(&mut consistency, "all pair offsets are zero")?,
        bounded_deviation: summarize(&mut deviation, "no pairs")?,
        orthogonality: summarize(&mut orthogonality, "all sampled modal pairs coincide")?,
        n_pairs_used: paired.index_pairs().len(),
    })
}
