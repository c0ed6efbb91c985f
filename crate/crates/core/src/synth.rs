//! Synthetic paired encoders with controllable gap geometry.
//!
//! Construction, in an orthonormal basis split into the gap axis `u`, a
//! semantic subspace `S` (span of the class-mean differences, dimension
//! `n_classes - 1`), and its complement `C`:
//!
//! * text: `mu0 + content`, with `content` drawn from a Gaussian mixture in `S`
//!   scaled so that `E||content||^2 = 1`;
//! * modal: `text + delta + eps`, with `delta = gap_norm * u`;
//! * `eps` has `E||eps||^2 = sigma^2 * dim`. A fraction `ortho_leak` of that
//!   energy is isotropic in `span(u, S)`, the rest is isotropic in `C`;
//! * anchor: a frozen random map applied to `content`.
//!
//! Energy in `C` leaves every `cos(delta, e_p - e_q)` at exactly zero, so the
//! leak fraction alone drives the spread of gap-content orthogonality.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::projector::{init_projection, ProjectionNet};
use crate::seed::rng_for;
use crate::store::{
    write_embeddings, write_labels, write_pairs, Branch, EmbeddingSet, LabelSet, PairedDataset,
};

/// Within-class spread relative to the class-mean spread.
const WITHIN_CLASS_STD: f64 = 0.6;
/// Norm of the shared text-branch centroid.
const TEXT_CENTROID_NORM: f64 = 0.5;
/// Input gain of the frozen MLP anchor map, large enough to bend GeLU.
const MLP_ANCHOR_GAIN: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMap {
    RandomLinear,
    RandomMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim: usize,
    pub anchor_dim: usize,
    pub gap_norm: f64,
    pub deviation_sigma: f64,
    pub ortho_leak: f64,
    pub anchor_map: AnchorMap,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 4096,
            dim: 32,
            anchor_dim: 48,
            gap_norm: 1.0,
            deviation_sigma: 0.05,
            ortho_leak: 0.1,
            anchor_map: AnchorMap::RandomMlp,
            n_classes: 16,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config("dim", "must be at least 2"));
        }
        if self.anchor_dim < 2 {
            return Err(Error::config("anchor_dim", "must be at least 2"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "must be at least 2"));
        }
        if self.n_classes + 1 > self.dim {
            return Err(Error::config(
                "n_classes",
                format!(
                    "n_classes + 1 must not exceed dim ({}), so the gap axis and a complement fit",
                    self.dim
                ),
            ));
        }
        for (name, v) in [
            ("gap_norm", self.gap_norm),
            ("deviation_sigma", self.deviation_sigma),
            ("ortho_leak", self.ortho_leak),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be a non-negative number"));
            }
        }
        if self.ortho_leak > 1.0 {
            return Err(Error::config("ortho_leak", "must not exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub text_set: EmbeddingSet,
    pub modal_set: EmbeddingSet,
    pub anchor_set: EmbeddingSet,
    /// Anchor-space embedding of each class mean, usable as class prompts.
    pub class_anchors: EmbeddingSet,
    pub true_delta: Vec<f64>,
    pub labels: LabelSet,
}

#[derive(Serialize)]
struct WorldManifest<'a> {
    config: &'a SynthConfig,
    true_delta: &'a [f64],
}

impl SynthWorld {
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.text_set
            .ids()
            .iter()
            .map(|id| (id.clone(), id.clone()))
            .collect()
    }

    pub fn paired(&self) -> PairedDataset {
        PairedDataset::new(self.text_set.clone(), self.modal_set.clone(), self.pairs())
            .expect("world ids are aligned")
    }

    /// Writes `text.gbe`, `modal.gbe`, `anchor.gbe`, `class_anchors.gbe`,
    /// `labels.jsonl`, `pairs.jsonl` and `world.json` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_embeddings(&self.text_set, dir.join("text.gbe"))?;
        write_embeddings(&self.modal_set, dir.join("modal.gbe"))?;
        write_embeddings(&self.anchor_set, dir.join("anchor.gbe"))?;
        write_embeddings(&self.class_anchors, dir.join("class_anchors.gbe"))?;
        write_labels(&self.labels, dir.join("labels.jsonl"))?;
        write_pairs(&self.pairs(), dir.join("pairs.jsonl"))?;
        let manifest = WorldManifest {
            config: &self.config,
            true_delta: &self.true_delta,
        };
        let path = dir.join("world.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Orthonormal basis from Gram-Schmidt on Gaussian vectors (re-orthogonalized twice).
fn random_orthonormal_basis<R: Rng>(dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    basis
}

fn combine(basis: &[Vec<f64>], coords: &[f64], out: &mut [f64]) {
    for (b, &c) in basis.iter().zip(coords) {
        if c != 0.0 {
            out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
        }
    }
}

enum FrozenMap {
    Linear(Matrix),
    Mlp(ProjectionNet),
}

impl FrozenMap {
    fn apply(&self, content: &Matrix) -> Result<Matrix> {
        match self {
            FrozenMap::Linear(a) => content.matmul_transposed(a),
            FrozenMap::Mlp(net) => {
                let mut scaled = content.clone();
                scaled.scale(MLP_ANCHOR_GAIN);
                net.forward_batch(&scaled)
            }
        }
    }
}

pub fn generate_world(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let d = cfg.dim;
    let n = cfg.n_samples;
    let n_sem = cfg.n_classes - 1;

    let mut basis_rng = rng_for(cfg.seed, "synth", "basis");
    let basis = random_orthonormal_basis(d, &mut basis_rng);
    let gap_axis = &basis[0];
    let semantic = &basis[1..=n_sem];
    let complement = &basis[n_sem + 1..];
    let mu0: Vec<f64> = {
        let dir: Vec<f64> = (0..d).map(|_| gaussian(&mut basis_rng)).collect();
        let nrm = dot(&dir, &dir).sqrt();
        dir.iter().map(|x| TEXT_CENTROID_NORM * x / nrm).collect()
    };
    let true_delta: Vec<f64> = gap_axis.iter().map(|x| cfg.gap_norm * x).collect();

    let mut class_rng = rng_for(cfg.seed, "synth", "classes");
    let class_coords: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| (0..n_sem).map(|_| gaussian(&mut class_rng)).collect())
        .collect();
    let content_scale = 1.0 / ((n_sem as f64) * (1.0 + WITHIN_CLASS_STD * WITHIN_CLASS_STD)).sqrt();

    let mut text_rng = rng_for(cfg.seed, "synth", "text");
    let mut noise_rng = rng_for(cfg.seed, "synth", "deviation");
    let leak_basis: Vec<Vec<f64>> = std::iter::once(gap_axis.clone())
        .chain(semantic.iter().cloned())
        .collect();
    let energy = cfg.deviation_sigma * cfg.deviation_sigma * d as f64;
    let leak_std = (energy * cfg.ortho_leak / leak_basis.len() as f64).sqrt();
    let ortho_std = (energy * (1.0 - cfg.ortho_leak) / complement.len() as f64).sqrt();

    let mut content = Matrix::zeros(n, d);
    let mut text = Matrix::zeros(n, d);
    let mut modal = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut coords = vec![0.0; n_sem];
    let mut leak = vec![0.0; leak_basis.len()];
    let mut ortho = vec![0.0; complement.len()];
    for i in 0..n {
        let class = text_rng.gen_range(0..cfg.n_classes);
        labels.push(vec![class]);
        for (c, m) in coords.iter_mut().zip(&class_coords[class]) {
            *c = content_scale * (m + WITHIN_CLASS_STD * gaussian(&mut text_rng));
        }
        // noise streams are drawn for every sample so worlds differing only in
        // sigma or leak share the same underlying draws
        leak.iter_mut().for_each(|x| *x = gaussian(&mut noise_rng));
        ortho.iter_mut().for_each(|x| *x = gaussian(&mut noise_rng));

        let c_row = content.row_mut(i);
        combine(semantic, &coords, c_row);
        let c_row = content.row(i).to_vec();

        let t_row = text.row_mut(i);
        t_row.iter_mut().zip(mu0.iter().zip(&c_row)).for_each(|(t, (m, c))| *t = m + c);
        let t_row = text.row(i).to_vec();

        let m_row = modal.row_mut(i);
        m_row
            .iter_mut()
            .zip(t_row.iter().zip(&true_delta))
            .for_each(|(m, (t, dl))| *m = t + dl);
        if energy > 0.0 {
            let scaled: Vec<f64> = leak.iter().map(|x| x * leak_std).collect();
            combine(&leak_basis, &scaled, m_row);
            let scaled: Vec<f64> = ortho.iter().map(|x| x * ortho_std).collect();
            combine(complement, &scaled, m_row);
        }
    }

    let map = match cfg.anchor_map {
        AnchorMap::RandomLinear => {
            let mut rng = rng_for(cfg.seed, "synth", "anchor_linear");
            let s = 1.0 / (d as f64).sqrt();
            let data = (0..cfg.anchor_dim * d).map(|_| s * gaussian(&mut rng)).collect();
            FrozenMap::Linear(Matrix::new(cfg.anchor_dim, d, data)?)
        }
        AnchorMap::RandomMlp => FrozenMap::Mlp(init_projection(
            d,
            cfg.anchor_dim,
            cfg.anchor_dim,
            crate::seed::derive_seed(cfg.seed, "synth", "anchor_mlp"),
        )?),
    };
    let anchors = map.apply(&content)?;

    let mut class_content = Matrix::zeros(cfg.n_classes, d);
    for (k, m) in class_coords.iter().enumerate() {
        let scaled: Vec<f64> = m.iter().map(|x| x * content_scale).collect();
        combine(semantic, &scaled, class_content.row_mut(k));
    }
    let class_anchor_rows = map.apply(&class_content)?;

    let ids: Vec<String> = (0..n).map(|i| format!("s{i:06}")).collect();
    let class_names: Vec<String> = (0..cfg.n_classes).map(|k| format!("class_{k:03}")).collect();
    let modality = "synthetic";
    Ok(SynthWorld {
        config: cfg.clone(),
        text_set: EmbeddingSet::new(ids.clone(), text, Branch::Text, modality)?,
        modal_set: EmbeddingSet::new(ids.clone(), modal, Branch::Modal, modality)?,
        anchor_set: EmbeddingSet::new(ids.clone(), anchors, Branch::Anchor, "anchor")?,
        class_anchors: EmbeddingSet::new(class_names.clone(), class_anchor_rows, Branch::Anchor, "anchor")?,
        true_delta,
        labels: LabelSet::new(ids, labels, class_names)?,
    })
}

/// One world per leak value with every other setting (seed included) fixed,
/// so the worlds share their underlying random draws.
pub fn sweep_geometry(base: &SynthConfig, ortho_leaks: &[f64], deviation_sigma: f64) -> Result<Vec<SynthWorld>> {
    if ortho_leaks.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("ortho_leaks", "must be sorted ascending"));
    }
    ortho_leaks
        .iter()
        .map(|&leak| {
            generate_world(&SynthConfig {
                ortho_leak: leak,
                deviation_sigma,
                ..base.clone()
            })
        })
        .collect()
}

/// Exhaustive oracle for retrieval: full cosine matrix, full per-row sort
/// (score descending, then gallery index ascending), truncated to k.
/// Deliberately shares no code with [`crate::inference::retrieve`].
pub fn brute_force_retrieval(queries: &Matrix, gallery: &Matrix, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if queries.cols() != gallery.cols() {
        return Err(Error::DimensionMismatch {
            expected: gallery.cols(),
            actual: queries.cols(),
        });
    }
    let length = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all = Vec::with_capacity(queries.rows());
    for qi in 0..queries.rows() {
        let q = queries.row(qi);
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(gallery.rows());
        for gi in 0..gallery.rows() {
            let g = gallery.row(gi);
            let mut s = 0.0;
            for t in 0..q.len() {
                s += q[t] * g[t];
            }
            let (nq, ng) = (length(q), length(g));
            if nq == 0.0 || ng == 0.0 {
                return Err(Error::ZeroNorm("brute-force retrieval"));
            }
            scored.push((gi, (s / (nq * ng)).clamp(-1.0, 1.0)));
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        all.push(scored);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(leak: f64, sigma: f64) -> SynthConfig {
        SynthConfig {
            n_samples: 300,
            dim: 12,
            anchor_dim: 8,
            n_classes: 4,
            ortho_leak: leak,
            deviation_sigma: sigma,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn worlds_are_deterministic() {
        let a = generate_world(&small(0.3, 0.1)).unwrap();
        let b = generate_world(&small(0.3, 0.1)).unwrap();
        assert_eq!(a.text_set, b.text_set);
        assert_eq!(a.modal_set, b.modal_set);
        assert_eq!(a.anchor_set, b.anchor_set);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn noise_free_modal_is_shifted_text() {
        let w = generate_world(&small(0.5, 0.0)).unwrap();
        for i in 0..w.text_set.len() {
            for ((m, t), d) in w.modal_set.row(i).iter().zip(w.text_set.row(i)).zip(&w.true_delta) {
                assert!((m - (t + d)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small(0.0, 0.0);
        c.ortho_leak = 1.5;
        assert!(generate_world(&c).is_err());
        let mut c = small(0.0, 0.0);
        c.n_classes = 12;
        assert!(generate_world(&c).is_err());
        let mut c = small(0.0, 0.0);
        c.deviation_sigma = -1.0;
        assert!(generate_world(&c).is_err());
    }

    #[test]
    fn sweep_handles_empty_and_unsorted() {
        assert!(sweep_geometry(&small(0.0, 0.1), &[], 0.1).unwrap().is_empty());
        assert!(sweep_geometry(&small(0.0, 0.1), &[0.5, 0.1], 0.1).is_err());
    }

    #[test]
    fn brute_force_basics() {
        let g = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]], 2).unwrap();
        let r = brute_force_retrieval(&g, &g, 2).unwrap();
        assert_eq!(r[0][0].0, 0);
        assert_eq!(r[1][0].0, 1);
        let single = Matrix::from_rows(&[[0.3, -2.0]], 2).unwrap();
        let r = brute_force_retrieval(&g, &single, 5).unwrap();
        assert!(r.iter().all(|q| q.len() == 1 && q[0].0 == 0));
    }
}
