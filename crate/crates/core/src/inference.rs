//! Offset-corrected projection into the anchor space, retrieval, and
//! zero-shot classification.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{center_set, OffsetProfile};
use crate::linalg::norm;
use crate::projector::ProjectionNet;
use crate::store::{Branch, EmbeddingSet};

/// Projected embeddings live in an anchor-branch [`EmbeddingSet`] whose
/// modality tag names the source modality.
pub type ProjectedSet = EmbeddingSet;

fn project(net: &ProjectionNet, centroid: &[f64], set: &EmbeddingSet) -> Result<ProjectedSet> {
    check_dim(net.d_in(), set.dim())?;
    check_dim(net.d_in(), centroid.len())?;
    let centered = center_set(set, centroid)?;
    let out = net.forward_batch(centered.matrix())?;
    EmbeddingSet::new(set.ids().to_vec(), out, Branch::Anchor, set.modality())
}

/// `P(e - mu_modal)` for every modal row.
pub fn project_modal(
    net: &ProjectionNet,
    profile: &OffsetProfile,
    modal_set: &EmbeddingSet,
) -> Result<ProjectedSet> {
    project(net, &profile.mu_modal, modal_set)
}

/// `P(e - mu_text)` for every text row; the map used during training.
pub fn project_text(
    net: &ProjectionNet,
    profile: &OffsetProfile,
    text_set: &EmbeddingSet,
) -> Result<ProjectedSet> {
    project(net, &profile.mu_text, text_set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query: String,
    pub ranked: Vec<ScoredId>,
}

/// Per-query gallery rankings, best first, truncated at k.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankingResult {
    pub queries: Vec<QueryRanking>,
}

impl RankingResult {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for q in &self.queries {
            s.push_str(&serde_json::to_string(q).expect("ranking serializes"));
            s.push('\n');
        }
        s
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut queries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            queries.push(serde_json::from_str(line).map_err(|e| Error::Jsonl {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { queries })
    }
}

fn norms(set: &EmbeddingSet, what: &'static str) -> Result<Vec<f64>> {
    set.matrix()
        .row_iter()
        .map(|r| match norm(r) {
            n if n > 0.0 => Ok(n),
            _ => Err(Error::ZeroNorm(what)),
        })
        .collect()
}

/// Exhaustive cosine top-k. Ties are broken by ascending gallery id.
pub fn retrieve(queries: &EmbeddingSet, gallery: &EmbeddingSet, k: usize) -> Result<RankingResult> {
    check_dim(queries.dim(), gallery.dim())?;
    if gallery.is_empty() {
        return Err(Error::Empty("retrieval gallery"));
    }
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    let qn = norms(queries, "query set")?;
    let gn = norms(gallery, "gallery set")?;
    let dots = queries.matrix().matmul_transposed(gallery.matrix())?;
    let gids = gallery.ids();
    let mut order: Vec<usize> = Vec::with_capacity(gallery.len());
    let mut out = Vec::with_capacity(queries.len());
    for (qi, qid) in queries.ids().iter().enumerate() {
        let scores: Vec<f64> = dots
            .row(qi)
            .iter()
            .zip(&gn)
            .map(|(d, g)| (d / (qn[qi] * g)).clamp(-1.0, 1.0))
            .collect();
        order.clear();
        order.extend(0..gallery.len());
        let cmp = |a: &usize, b: &usize| {
            scores[*b]
                .total_cmp(&scores[*a])
                .then_with(|| gids[*a].cmp(&gids[*b]))
        };
        let keep = k.min(order.len());
        if keep < order.len() {
            order.select_nth_unstable_by(keep - 1, cmp);
            order.truncate(keep);
        }
        order.sort_by(cmp);
        out.push(QueryRanking {
            query: qid.clone(),
            ranked: order
                .iter()
                .map(|&g| ScoredId {
                    id: gids[g].clone(),
                    score: scores[g],
                })
                .collect(),
        });
    }
    Ok(RankingResult { queries: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredClass {
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub id: String,
    pub ranked: Vec<ScoredClass>,
}

impl ClassPrediction {
    pub fn classes(&self) -> Vec<usize> {
        self.ranked.iter().map(|c| c.class).collect()
    }
}

pub fn predictions_to_jsonl(preds: &[ClassPrediction]) -> String {
    let mut s = String::new();
    for p in preds {
        s.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        s.push('\n');
    }
    s
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<ClassPrediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Jsonl {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Ranks class-prompt anchors for each sample by cosine similarity; ties go
/// to the lower class index.
pub fn classify_zero_shot(
    samples: &EmbeddingSet,
    class_anchors: &EmbeddingSet,
    k: usize,
) -> Result<Vec<ClassPrediction>> {
    check_dim(class_anchors.dim(), samples.dim())?;
    let n_classes = class_anchors.len();
    if k == 0 || k > n_classes {
        return Err(Error::Validation(format!(
            "k = {k} but there are {n_classes} classes"
        )));
    }
    let sn = norms(samples, "sample set")?;
    let cn = norms(class_anchors, "class anchors")?;
    let dots = samples.matrix().matmul_transposed(class_anchors.matrix())?;
    let mut preds = Vec::with_capacity(samples.len());
    for (si, id) in samples.ids().iter().enumerate() {
        let mut scored: Vec<ScoredClass> = dots
            .row(si)
            .iter()
            .zip(&cn)
            .enumerate()
            .map(|(c, (d, n))| ScoredClass {
                class: c,
                score: (d / (sn[si] * n)).clamp(-1.0, 1.0),
            })
            .collect();
        scored.sort_by(|a, b| match b.score.total_cmp(&a.score) {
            Ordering::Equal => a.class.cmp(&b.class),
            o => o,
        });
        scored.truncate(k);
        preds.push(ClassPrediction {
            id: id.clone(),
            ranked: scored,
        });
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn set(rows: &[&[f64]], prefix: &str) -> EmbeddingSet {
        let ids = (0..rows.len()).map(|i| format!("{prefix}{i}")).collect();
        EmbeddingSet::new(ids, Matrix::from_rows(rows, rows[0].len()).unwrap(), Branch::Anchor, "")
            .unwrap()
    }

    #[test]
    fn project_modal_at_centroid_with_zero_net_is_zero() {
        let net = ProjectionNet::zeros(2, 2, 3);
        let profile = OffsetProfile::from_centroids("m", vec![0.0, 0.0], vec![1.0, 2.0], 1, 1).unwrap();
        let modal = set(&[&[1.0, 2.0], &[1.0, 2.0]], "m");
        let out = project_modal(&net, &profile, &modal).unwrap();
        assert_eq!(out.dim(), 3);
        assert!(out.matrix().as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(out.row(0), out.row(1));
        let text = set(&[&[0.0, 0.0]], "t");
        assert!(project_text(&net, &profile, &text)
            .unwrap()
            .matrix()
            .as_slice()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn retrieval_examples() {
        let q = set(&[&[1.0, 0.0]], "q");
        let g = set(&[&[1.0, 0.01], &[0.0, 1.0]], "g");
        let r = retrieve(&q, &g, 1).unwrap();
        assert_eq!(r.queries[0].ranked[0].id, "g0");

        let g = set(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.5]], "g");
        let r = retrieve(&g, &g, 3).unwrap();
        for (i, q) in r.queries.iter().enumerate() {
            assert_eq!(q.ranked[0].id, format!("g{i}"));
        }
        assert!(retrieve(&q, &set(&[&[1.0, 0.0, 0.0]], "x"), 1).is_err());
    }

    #[test]
    fn retrieval_ties_break_by_id() {
        let q = set(&[&[1.0, 0.0]], "q");
        let g = EmbeddingSet::new(
            vec!["b".into(), "a".into(), "c".into()],
            Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0], [2.0, 2.0]], 2).unwrap(),
            Branch::Anchor,
            "",
        )
        .unwrap();
        let r = retrieve(&q, &g, 3).unwrap();
        let ids: Vec<&str> = r.queries[0].ranked.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn classify_examples() {
        let anchors = set(&[&[1.0, 0.0], &[0.0, 1.0]], "c");
        let s = set(&[&[0.0, 3.0], &[1.0, 1.0]], "s");
        let p = classify_zero_shot(&s, &anchors, 2).unwrap();
        assert_eq!(p[0].classes(), vec![1, 0]);
        assert_eq!(p[1].classes(), vec![0, 1]);
        assert!(classify_zero_shot(&s, &anchors, 3).is_err());
    }
}
