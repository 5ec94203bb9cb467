//! Unified multi-modal sequence and one pre-LN transformer block.
//!
//! Latent, image-condition and text tokens are concatenated into a single
//! sequence, rotated by a rotary position code, tagged with an additive
//! modality embedding and pushed through self-attention + MLP with residuals.
//! Only shapes and structural properties matter here; weights are random
//! or zero.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const LN_EPS: f64 = 1e-5;
pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Latent,
    Image,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Latent, Modality::Image, Modality::Text];

    fn slot(self) -> usize {
        match self {
            Modality::Latent => 0,
            Modality::Image => 1,
            Modality::Text => 2,
        }
    }
}

/// Token matrix (one row per token) with per-token position and modality.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub tokens: DMatrix<f64>,
    /// Segment lengths `(latent, image, text)`.
    pub lengths: [usize; 3],
    pub positions: Vec<usize>,
    pub modalities: Vec<Modality>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn d_model(&self) -> usize {
        self.tokens.ncols()
    }

    fn check(&self) -> Result<()> {
        let n: usize = self.lengths.iter().sum();
        if n != self.tokens.nrows() || self.positions.len() != n || self.modalities.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.tokens.nrows(),
            });
        }
        for m in Modality::ALL {
            let count = self.modalities.iter().filter(|&&x| x == m).count();
            if count != self.lengths[m.slot()] {
                return Err(Error::InvalidConfig("modality ids disagree with segment lengths".into()));
            }
        }
        Ok(())
    }

    /// Recovers `(latent, image, text)` from a sequence in build order.
    pub fn split(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let [a, b, c] = self.lengths;
        (
            self.tokens.rows(0, a).into_owned(),
            self.tokens.rows(a, b).into_owned(),
            self.tokens.rows(a + b, c).into_owned(),
        )
    }

    /// Reorders tokens so that row `i` of the result is row `perm[i]` here.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidConfig("not a permutation of the tokens".into()));
        }
        let tokens = DMatrix::from_fn(n, self.d_model(), |i, j| self.tokens[(perm[i], j)]);
        Ok(Self {
            tokens,
            lengths: self.lengths,
            positions: perm.iter().map(|&p| self.positions[p]).collect(),
            modalities: perm.iter().map(|&p| self.modalities[p]).collect(),
        })
    }
}

/// Concatenates `[z; img; txt]`; positions count from 0 within each segment.
pub fn build_sequence(
    z_tokens: &DMatrix<f64>,
    img_tokens: &DMatrix<f64>,
    txt_tokens: &DMatrix<f64>,
) -> Result<SequenceBatch> {
    let d = z_tokens.ncols();
    for part in [img_tokens, txt_tokens] {
        if part.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: part.ncols(),
            });
        }
    }
    let lengths = [z_tokens.nrows(), img_tokens.nrows(), txt_tokens.nrows()];
    let n: usize = lengths.iter().sum();
    let mut tokens = DMatrix::zeros(n, d);
    let mut positions = Vec::with_capacity(n);
    let mut modalities = Vec::with_capacity(n);
    let mut row = 0;
    for (part, m) in [z_tokens, img_tokens, txt_tokens].into_iter().zip(Modality::ALL) {
        for i in 0..part.nrows() {
            tokens.row_mut(row).copy_from(&part.row(i));
            positions.push(i);
            modalities.push(m);
            row += 1;
        }
    }
    Ok(SequenceBatch {
        tokens,
        lengths,
        positions,
        modalities,
    })
}

/// Rotates feature pairs `(2i, 2i+1)` by `pos * base^(-2i/d)`.
pub fn rotate(row: &mut [f64], pos: usize, base: f64) {
    let d = row.len();
    for i in 0..d / 2 {
        let theta = pos as f64 * base.powf(-2.0 * i as f64 / d as f64);
        let (s, c) = theta.sin_cos();
        let (a, b) = (row[2 * i], row[2 * i + 1]);
        row[2 * i] = a * c - b * s;
        row[2 * i + 1] = a * s + b * c;
    }
}

/// Additive per-modality vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbedding {
    table: DMatrix<f64>,
}

impl ModalityEmbedding {
    pub fn random(d_model: usize, seed: u64) -> Self {
        let mut r = rng::stream_rng(&[seed, rng::stream::WEIGHTS, 0]);
        let table = DMatrix::from_fn(3, d_model, |_, _| 0.1 * r.sample::<f64, _>(StandardNormal));
        Self { table }
    }

    pub fn zeros(d_model: usize) -> Self {
        Self {
            table: DMatrix::zeros(3, d_model),
        }
    }

    pub fn vector(&self, m: Modality) -> DVector<f64> {
        self.table.row(m.slot()).transpose()
    }
}

/// Rotary position code on every token, then the modality embedding.
pub fn encode_positions(seq: &SequenceBatch, modality: &ModalityEmbedding) -> Result<SequenceBatch> {
    seq.check()?;
    let d = seq.d_model();
    if d % 2 != 0 {
        return Err(Error::InvalidConfig(format!("rotary code needs even d_model, got {d}")));
    }
    if modality.table.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: modality.table.ncols(),
        });
    }
    let mut out = seq.clone();
    let mut buf = vec![0.0; d];
    for i in 0..seq.len() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = seq.tokens[(i, j)];
        }
        rotate(&mut buf, seq.positions[i], ROPE_BASE);
        let m = modality.table.row(seq.modalities[i].slot());
        for j in 0..d {
            out.tokens[(i, j)] = buf[j] + m[j];
        }
    }
    Ok(out)
}

/// Parameters of one block. Matrices act on row vectors: `y = x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub heads: usize,
    pub ln1_gamma: DVector<f64>,
    pub ln1_beta: DVector<f64>,
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
    pub bo: DVector<f64>,
    pub ln2_gamma: DVector<f64>,
    pub ln2_beta: DVector<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl BlockWeights {
    /// Scaled Gaussian initialization from `[seed, WEIGHTS, 1]`.
    pub fn random(d_model: usize, hidden: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {d_model} not divisible into {heads} heads"
            )));
        }
        let mut r = rng::stream_rng(&[seed, rng::stream::WEIGHTS, 1]);
        let mut mat = |rows: usize, cols: usize| {
            let s = 1.0 / (rows as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| s * r.sample::<f64, _>(StandardNormal))
        };
        let (wq, wk, wv, wo) = (
            mat(d_model, d_model),
            mat(d_model, d_model),
            mat(d_model, d_model),
            mat(d_model, d_model),
        );
        let (w1, w2) = (mat(d_model, hidden), mat(hidden, d_model));
        Ok(Self {
            heads,
            ln1_gamma: DVector::from_element(d_model, 1.0),
            ln1_beta: DVector::zeros(d_model),
            wq,
            wk,
            wv,
            wo,
            bo: DVector::from_element(d_model, 0.01),
            ln2_gamma: DVector::from_element(d_model, 1.0),
            ln2_beta: DVector::zeros(d_model),
            w1,
            b1: DVector::from_element(hidden, 0.01),
            w2,
            b2: DVector::from_element(d_model, 0.01),
        })
    }

    /// Same weights with the attention output projection and the MLP output
    /// layer (weights and biases) zeroed.
    pub fn with_zero_outputs(mut self) -> Self {
        self.wo.fill(0.0);
        self.bo.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
        self
    }

    pub fn d_model(&self) -> usize {
        self.wq.nrows()
    }

    fn check(&self, d: usize) -> Result<()> {
        let h = self.w1.ncols();
        let ok = self.wq.shape() == (d, d)
            && self.wk.shape() == (d, d)
            && self.wv.shape() == (d, d)
            && self.wo.shape() == (d, d)
            && self.bo.len() == d
            && self.ln1_gamma.len() == d
            && self.ln1_beta.len() == d
            && self.ln2_gamma.len() == d
            && self.ln2_beta.len() == d
            && self.w1.nrows() == d
            && self.b1.len() == h
            && self.w2.shape() == (h, d)
            && self.b2.len() == d
            && self.heads > 0
            && d % self.heads == 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("block weights do not fit d_model {d}")))
        }
    }
}

fn layer_norm(x: &DMatrix<f64>, gamma: &DVector<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma[j] + beta[j];
        }
    }
    out
}

fn add_row_bias(x: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut row in x.row_iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b[j];
        }
    }
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Per-head attention kernels (`tokens x tokens`, rows sum to one) for the
/// already-normalized input `x`.
pub fn attention_weights(x: &DMatrix<f64>, w: &BlockWeights) -> Result<Vec<DMatrix<f64>>> {
    w.check(x.ncols())?;
    let q = x * &w.wq;
    let k = x * &w.wk;
    let dh = x.ncols() / w.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    Ok((0..w.heads)
        .map(|h| {
            let qh = q.columns(h * dh, dh);
            let kh = k.columns(h * dh, dh);
            let mut s = qh * kh.transpose() * scale;
            softmax_rows(&mut s);
            s
        })
        .collect())
}

/// `A = S + Attn(LN(S))`, `out = A + MLP(LN(A))`.
pub fn block_forward(seq: &SequenceBatch, w: &BlockWeights) -> Result<SequenceBatch> {
    seq.check()?;
    let d = seq.d_model();
    w.check(d)?;
    let s = &seq.tokens;
    let normed = layer_norm(s, &w.ln1_gamma, &w.ln1_beta);
    let kernels = attention_weights(&normed, w)?;
    let v = &normed * &w.wv;
    let dh = d / w.heads;
    let mut mixed = DMatrix::zeros(seq.len(), d);
    for (h, kern) in kernels.iter().enumerate() {
        let out = kern * v.columns(h * dh, dh);
        mixed.columns_mut(h * dh, dh).copy_from(&out);
    }
    let mut attn = mixed * &w.wo;
    add_row_bias(&mut attn, &w.bo);
    let a = s + attn;

    let mut hidden = layer_norm(&a, &w.ln2_gamma, &w.ln2_beta) * &w.w1;
    add_row_bias(&mut hidden, &w.b1);
    hidden.apply(|x| *x = gelu(*x));
    let mut mlp = hidden * &w.w2;
    add_row_bias(&mut mlp, &w.b2);

    let mut out = seq.clone();
    out.tokens = a + mlp;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tokens(rows: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream_rng(&[seed]);
        DMatrix::from_fn(rows, d, |_, _| r.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn build_shapes_and_split() {
        let (z, i, t) = (random_tokens(2, 8, 1), random_tokens(3, 8, 2), random_tokens(4, 8, 3));
        let seq = build_sequence(&z, &i, &t).unwrap();
        assert_eq!(seq.tokens.shape(), (9, 8));
        assert_eq!(seq.lengths, [2, 3, 4]);
        let (z2, i2, t2) = seq.split();
        assert_eq!((z2, i2, t2), (z, i, t));

        let empty = DMatrix::zeros(0, 8);
        let seq = build_sequence(&random_tokens(2, 8, 1), &random_tokens(3, 8, 2), &empty).unwrap();
        assert_eq!(seq.len(), 5);

        assert!(build_sequence(&random_tokens(2, 8, 1), &random_tokens(3, 6, 2), &empty).is_err());
    }

    #[test]
    fn rotary_identity_at_zero_and_norm_preserving() {
        let mut row = vec![0.3, -1.2, 0.5, 2.0];
        let orig = row.clone();
        rotate(&mut row, 0, ROPE_BASE);
        assert_eq!(row, orig);
        rotate(&mut row, 17, ROPE_BASE);
        let n0: f64 = orig.iter().map(|v| v * v).sum();
        let n1: f64 = row.iter().map(|v| v * v).sum();
        assert!((n0 - n1).abs() < 1e-12);
    }

    #[test]
    fn odd_width_rejected() {
        let seq = build_sequence(&random_tokens(1, 5, 1), &random_tokens(1, 5, 2), &random_tokens(1, 5, 3)).unwrap();
        assert!(encode_positions(&seq, &ModalityEmbedding::zeros(5)).is_err());
    }

    #[test]
    fn modality_offsets_are_additive() {
        let row = random_tokens(1, 8, 9);
        let seq = build_sequence(&row, &row, &DMatrix::zeros(0, 8)).unwrap();
        let emb = ModalityEmbedding::random(8, 4);
        let enc = encode_positions(&seq, &emb).unwrap();
        // Same content, same position 0, different modality.
        let diff = (enc.tokens.row(0) - enc.tokens.row(1)).transpose();
        let expect = emb.vector(Modality::Latent) - emb.vector(Modality::Image);
        assert!((diff - expect).norm() < 1e-15);
    }

    #[test]
    fn attention_rows_normalized() {
        let seq = build_sequence(&random_tokens(3, 8, 1), &random_tokens(2, 8, 2), &random_tokens(2, 8, 3)).unwrap();
        let w = BlockWeights::random(8, 16, 2, 5).unwrap();
        let normed = layer_norm(&seq.tokens, &w.ln1_gamma, &w.ln1_beta);
        for k in attention_weights(&normed, &w).unwrap() {
            for row in k.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_shape_mismatch() {
        let seq = build_sequence(&random_tokens(2, 8, 1), &random_tokens(2, 8, 2), &random_tokens(2, 8, 3)).unwrap();
        let w = BlockWeights::random(6, 12, 1, 0).unwrap();
        assert!(block_forward(&seq, &w).is_err());
        assert!(BlockWeights::random(8, 16, 3, 0).is_err());
    }
}
