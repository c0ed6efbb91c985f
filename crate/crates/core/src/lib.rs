//! Text-only modality expansion over precomputed embedding sets.
//!
//! A contrastive encoder's text and modal branches are separated by a roughly
//! constant offset. Subtracting each branch's centroid puts both into a shared
//! space, so a projection head trained on centered *text* embeddings alone
//! can be applied to centered *modal* embeddings at inference time.
//!
//! Modules follow the pipeline: [`store`] loads embeddings, [`geometry`]
//! estimates offsets and diagnoses gap geometry, [`projector`] and
//! [`trainer`] learn the text-to-anchor map, [`inference`] applies it,
//! [`eval`] scores the result, and [`synth`] builds worlds with known answers.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod linalg;
pub mod projector;
pub mod seed;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{GeometryReport, OffsetProfile};
pub use linalg::Matrix;
pub use projector::ProjectionNet;
pub use store::{Branch, EmbeddingSet, LabelSet, PairedDataset};
pub use trainer::TrainConfig;
