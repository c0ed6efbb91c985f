//! Two-layer GeLU projection head `y = W2 gelu(W1 x + b1) + b2` with
//! hand-derived gradients.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{gelu, gelu_derivative, Matrix};
use crate::seed::rng_for;

pub const GBP_MAGIC: [u8; 4] = *b"GBP1";

/// Output width used when projecting into a 2560-d LLM embedding space.
pub const DEFAULT_ANCHOR_DIM: usize = 2560;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionNet {
    /// `d_hidden x d_in`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `d_out x d_hidden`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// One gradient tensor per parameter tensor, shaped like [`ProjectionNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(net: &ProjectionNet) -> Self {
        Self {
            w1: Matrix::zeros(net.w1.rows(), net.w1.cols()),
            b1: vec![0.0; net.b1.len()],
            w2: Matrix::zeros(net.w2.rows(), net.w2.cols()),
            b2: vec![0.0; net.b2.len()],
        }
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&x| x == 0.0))
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre_activation: Matrix,
    pub hidden: Matrix,
    pub output: Matrix,
}

pub fn init_projection(d_in: usize, d_hidden: usize, d_out: usize, seed: u64) -> Result<ProjectionNet> {
    for (name, d) in [("d_in", d_in), ("d_hidden", d_hidden), ("d_out", d_out)] {
        if d == 0 {
            return Err(Error::config(name, "must be at least 1"));
        }
    }
    let mut rng = rng_for(seed, "projector", "init");
    let mut uniform_fill = |rows: usize, cols: usize| {
        let bound = 1.0 / (cols as f64).sqrt();
        let dist = Uniform::new(-bound, bound);
        let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
        Matrix::new(rows, cols, data).expect("finite init")
    };
    let w1 = uniform_fill(d_hidden, d_in);
    let w2 = uniform_fill(d_out, d_hidden);
    Ok(ProjectionNet {
        w1,
        b1: vec![0.0; d_hidden],
        w2,
        b2: vec![0.0; d_out],
    })
}

impl ProjectionNet {
    pub fn zeros(d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            w1: Matrix::zeros(d_hidden, d_in),
            b1: vec![0.0; d_hidden],
            w2: Matrix::zeros(d_out, d_hidden),
            b2: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w2.rows()
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.d_hidden(), self.b1.len())?;
        check_dim(self.d_hidden(), self.w2.cols())?;
        check_dim(self.d_out(), self.b2.len())?;
        if self.slices().iter().any(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("projection parameters"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d_in(), x.len())?;
        let mut hidden = self.w1.apply(x)?;
        for (h, b) in hidden.iter_mut().zip(&self.b1) {
            *h = gelu(*h + b);
        }
        let mut out = self.w2.apply(&hidden)?;
        for (o, b) in out.iter_mut().zip(&self.b2) {
            *o += b;
        }
        Ok(out)
    }

    pub fn forward_cached(&self, inputs: &Matrix) -> Result<ForwardCache> {
        check_dim(self.d_in(), inputs.cols())?;
        let mut pre = inputs.matmul_transposed(&self.w1)?;
        for r in 0..pre.rows() {
            for (h, b) in pre.row_mut(r).iter_mut().zip(&self.b1) {
                *h += b;
            }
        }
        let mut hidden = pre.clone();
        hidden.as_mut_slice().iter_mut().for_each(|h| *h = gelu(*h));
        let mut output = hidden.matmul_transposed(&self.w2)?;
        for r in 0..output.rows() {
            for (o, b) in output.row_mut(r).iter_mut().zip(&self.b2) {
                *o += b;
            }
        }
        Ok(ForwardCache {
            pre_activation: pre,
            hidden,
            output,
        })
    }

    /// Row-wise forward pass over a batch.
    pub fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(inputs)?.output)
    }

    /// Gradients of `sum_b <upstream_b, forward(x_b)>` with respect to every
    /// parameter, summed over the batch.
    pub fn backward(&self, inputs: &Matrix, upstream: &Matrix) -> Result<GradientBundle> {
        let cache = self.forward_cached(inputs)?;
        self.backward_cached(inputs, &cache, upstream)
    }

    pub fn backward_cached(
        &self,
        inputs: &Matrix,
        cache: &ForwardCache,
        upstream: &Matrix,
    ) -> Result<GradientBundle> {
        if upstream.rows() != inputs.rows() || upstream.cols() != self.d_out() {
            return Err(Error::Shape(format!(
                "upstream gradients are {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                inputs.rows(),
                self.d_out()
            )));
        }
        let w2 = upstream.transposed_matmul(&cache.hidden)?;
        let b2 = column_sums(upstream);
        let mut d_pre = upstream.matmul(&self.w2)?;
        for (d, h) in d_pre
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre_activation.as_slice())
        {
            *d *= gelu_derivative(*h);
        }
        let w1 = d_pre.transposed_matmul(inputs)?;
        let b1 = column_sums(&d_pre);
        Ok(GradientBundle { w1, b1, w2, b2 })
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut acc = vec![0.0; m.cols()];
    for r in m.row_iter() {
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
    }
    acc
}

/// GBP1 layout: magic | d_in u64 | d_hidden u64 | d_out u64 | W1 | b1 | W2 | b2,
/// integers little-endian, parameters f32 LE row-major.
pub fn encode_projection(net: &ProjectionNet) -> Result<Vec<u8>> {
    net.validate()?;
    let mut buf = Vec::with_capacity(28 + net.n_params() * 4);
    buf.extend_from_slice(&GBP_MAGIC);
    for d in [net.d_in(), net.d_hidden(), net.d_out()] {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for s in net.slices() {
        for &x in s {
            let v = x as f32;
            if !v.is_finite() {
                return Err(Error::NonFinite("projection parameters"));
            }
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_projection(bytes: &[u8], path: &Path) -> Result<ProjectionNet> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        actual: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(28));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != GBP_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: GBP_MAGIC,
        });
    }
    if bytes.len() < 28 {
        return Err(truncated(28));
    }
    let dim = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap()) as usize;
    let (d_in, d_hidden, d_out) = (dim(0), dim(1), dim(2));
    let n = d_hidden * d_in + d_hidden + d_out * d_hidden + d_out;
    let expected = 28 + n * 4;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::Validation(format!(
            "{}: {} trailing bytes after parameters",
            path.display(),
            bytes.len() - expected
        )));
    }
    let mut values = bytes[28..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    let mut take = |k: usize| values.by_ref().take(k).collect::<Vec<f64>>();
    let w1 = Matrix::new(d_hidden, d_in, take(d_hidden * d_in))?;
    let b1 = take(d_hidden);
    let w2 = Matrix::new(d_out, d_hidden, take(d_out * d_hidden))?;
    let b2 = take(d_out);
    let net = ProjectionNet { w1, b1, w2, b2 };
    net.validate()?;
    Ok(net)
}

pub fn write_projection(net: &ProjectionNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_projection(net)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_projection(path: impl AsRef<Path>) -> Result<ProjectionNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_projection(&bytes, path)
}
