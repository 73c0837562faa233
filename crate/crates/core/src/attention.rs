//! Multi-head self-attention with weight capture, window partitioning, and a
//! dense reference implementation used by the test suite.
//!
//! The sublayer structure is pre-norm residual attention followed by an
//! optional pre-norm residual feed-forward (2x expansion, GELU). Relative
//! position bias inside windows is a learned per-head table indexed by token
//! offset; windows shorter than the table radius simply read the inner part
//! of the table.

use crate::error::{Error, Result};
use crate::tensor::{MaddClass, Rng, Tape, Tensor};

/// Layer-norm epsilon used by every normalization in the model.
pub const LN_EPS: f64 = 1e-5;

/// Parameters of one attention sublayer pair (attention + feed-forward).
///
/// All projections are square `d x d`; the feed-forward expands to `2d`. The
/// relative position bias table, when present, has `2k - 1` rows (offsets
/// `-(k-1)..=k-1`) and one column per head.
#[derive(Clone, Debug)]
pub struct MhaParams {
    pub d: usize,
    pub heads: usize,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    /// `(2k - 1) x heads` offset table, present iff relative bias is on.
    pub rel_bias: Option<Tensor>,
}

impl MhaParams {
    /// Scaled-Gaussian initialization (std `1/sqrt(fan_in)`, zero biases,
    /// unit layer-norm gains). `bias_window` sets the offset-table radius;
    /// `None` disables relative bias.
    pub fn new(
        d: usize,
        heads: usize,
        bias_window: Option<usize>,
        rng: &mut Rng,
    ) -> Result<MhaParams> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "width {d} is not divisible by head count {heads}"
            )));
        }
        let rel_bias = match bias_window {
            Some(k) => {
                if k == 0 {
                    return Err(Error::Config("bias window must be positive".into()));
                }
                // Small-scale init so positions matter but do not dominate
                // content at the start of training.
                let mut t = Tensor::zeros(&[2 * k - 1, heads]);
                for v in t.data_mut().iter_mut() {
                    *v = rng.next_normal() * 0.02;
                }
                Some(t)
            }
            None => None,
        };
        Ok(MhaParams {
            d,
            heads,
            ln1_gain: Tensor::full(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            wq: Tensor::randn_scaled(&[d, d], d, rng),
            wk: Tensor::randn_scaled(&[d, d], d, rng),
            wv: Tensor::randn_scaled(&[d, d], d, rng),
            wo: Tensor::randn_scaled(&[d, d], d, rng),
            ln2_gain: Tensor::full(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            ff_w1: Tensor::randn_scaled(&[d, 2 * d], d, rng),
            ff_b1: Tensor::zeros(&[2 * d]),
            ff_w2: Tensor::randn_scaled(&[2 * d, d], 2 * d, rng),
            ff_b2: Tensor::zeros(&[d]),
            rel_bias,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Visit every parameter tensor with a stable name, in a fixed order.
    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor)) {
        f(format!("{prefix}.ln1_gain"), &self.ln1_gain);
        f(format!("{prefix}.ln1_bias"), &self.ln1_bias);
        f(format!("{prefix}.wq"), &self.wq);
        f(format!("{prefix}.wk"), &self.wk);
        f(format!("{prefix}.wv"), &self.wv);
        f(format!("{prefix}.wo"), &self.wo);
        f(format!("{prefix}.ln2_gain"), &self.ln2_gain);
        f(format!("{prefix}.ln2_bias"), &self.ln2_bias);
        f(format!("{prefix}.ff_w1"), &self.ff_w1);
        f(format!("{prefix}.ff_b1"), &self.ff_b1);
        f(format!("{prefix}.ff_w2"), &self.ff_w2);
        f(format!("{prefix}.ff_b2"), &self.ff_b2);
        if let Some(rb) = &self.rel_bias {
            f(format!("{prefix}.rel_bias"), rb);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.ln1_gain"), &mut self.ln1_gain);
        f(format!("{prefix}.ln1_bias"), &mut self.ln1_bias);
        f(format!("{prefix}.wq"), &mut self.wq);
        f(format!("{prefix}.wk"), &mut self.wk);
        f(format!("{prefix}.wv"), &mut self.wv);
        f(format!("{prefix}.wo"), &mut self.wo);
        f(format!("{prefix}.ln2_gain"), &mut self.ln2_gain);
        f(format!("{prefix}.ln2_bias"), &mut self.ln2_bias);
        f(format!("{prefix}.ff_w1"), &mut self.ff_w1);
        f(format!("{prefix}.ff_b1"), &mut self.ff_b1);
        f(format!("{prefix}.ff_w2"), &mut self.ff_w2);
        f(format!("{prefix}.ff_b2"), &mut self.ff_b2);
        if let Some(rb) = &mut self.rel_bias {
            f(format!("{prefix}.rel_bias"), rb);
        }
    }
}

/// Captured attention weights for one (layer, slot, window) site: one
/// row-stochastic `len x len` matrix per head, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    /// 1-based block index; the final dense block is not part of the atlas.
    pub layer: usize,
    /// 1 for the unshifted pass, 2 for the shifted pass.
    pub slot: u8,
    pub window: usize,
    pub len: usize,
    /// `heads` matrices, each `len * len` row-major.
    pub weights: Vec<Vec<f64>>,
}

impl AttentionRecord {
    pub fn head_count(&self) -> usize {
        self.weights.len()
    }
}

/// Softmax attention over one window: `softmax(q k^T / sqrt(d_head) + bias) v`.
/// Returns the output and the (tracked) weight matrix for capture.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: Option<&Tensor>,
) -> (Tensor, Tensor) {
    assert!(
        q.shape() == k.shape() && k.shape() == v.shape(),
        "scaled_dot_attention: q/k/v shapes differ: {:?} {:?} {:?}",
        q.shape(),
        k.shape(),
        v.shape()
    );
    let d_head = q.cols();
    let scores = tape.matmul_nt(q, k, MaddClass::Score);
    let scaled = tape.scale(&scores, 1.0 / (d_head as f64).sqrt());
    let logits = match bias {
        Some(b) => tape.add(&scaled, b),
        None => scaled,
    };
    let weights = tape.softmax(&logits, 1);
    let out = tape.matmul(&weights, v, MaddClass::Mix);
    (out, weights)
}

/// One full attention sublayer pair on a window of `len` tokens:
/// `x + Wo . MHA(LN(x))`, then (when `ff` is set) `y + FF(LN(y))`.
///
/// With `capture` on, returns the per-head weight matrices as detached
/// row-major copies.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: &Tensor,
    p: &MhaParams,
    ff: bool,
    capture: bool,
) -> (Tensor, Option<Vec<Vec<f64>>>) {
    let len = x.rows();
    assert_eq!(
        x.cols(),
        p.d,
        "multi_head_attention: input width {} vs parameter width {}",
        x.cols(),
        p.d
    );
    let dh = p.head_dim();

    let normed = tape.layer_norm(x, &p.ln1_gain, &p.ln1_bias, LN_EPS);
    let q = tape.matmul(&normed, &p.wq, MaddClass::Projection);
    let k = tape.matmul(&normed, &p.wk, MaddClass::Projection);
    let v = tape.matmul(&normed, &p.wv, MaddClass::Projection);

    let mut head_outs = Vec::with_capacity(p.heads);
    let mut captured = capture.then(Vec::new);
    for h in 0..p.heads {
        let qh = tape.slice_cols(&q, h * dh, dh);
        let kh = tape.slice_cols(&k, h * dh, dh);
        let vh = tape.slice_cols(&v, h * dh, dh);
        let bias = p.rel_bias.as_ref().map(|t| tape.rel_bias(t, h, len));
        let (oh, wh) = scaled_dot_attention(tape, &qh, &kh, &vh, bias.as_ref());
        if let Some(c) = captured.as_mut() {
            c.push(wh.data().to_vec());
        }
        head_outs.push(oh);
    }
    let merged = tape.concat_cols(&head_outs);
    let projected = tape.matmul(&merged, &p.wo, MaddClass::Projection);
    let after_attn = tape.add(x, &projected);

    let out = if ff {
        let normed2 = tape.layer_norm(&after_attn, &p.ln2_gain, &p.ln2_bias, LN_EPS);
        let hidden = tape.matmul(&normed2, &p.ff_w1, MaddClass::FeedForward);
        let hidden = tape.add_row(&hidden, &p.ff_b1);
        let hidden = tape.gelu(&hidden);
        let ffo = tape.matmul(&hidden, &p.ff_w2, MaddClass::FeedForward);
        let ffo = tape.add_row(&ffo, &p.ff_b2);
        tape.add(&after_attn, &ffo)
    } else {
        after_attn
    };
    (out, captured)
}

/// Partition `n` tokens into ceil(n/k) contiguous windows of length `k`; a
/// nonempty final partial window is kept as-is. Concatenating the windows in
/// order restores the input.
pub fn window_partition(tape: &mut Tape, x: &Tensor, k: usize) -> Vec<Tensor> {
    assert!(k > 0, "window size must be positive");
    let n = x.rows();
    let mut windows = Vec::with_capacity(n.div_ceil(k));
    let mut start = 0;
    while start < n {
        let len = k.min(n - start);
        windows.push(tape.slice_rows(x, start, len));
        start += len;
    }
    windows
}

/// Inverse of [`window_partition`].
pub fn window_merge(tape: &mut Tape, windows: &[Tensor]) -> Tensor {
    tape.concat_rows(windows)
}

/// Number of windows a length-`n` sequence splits into.
pub fn window_count(n: usize, k: usize) -> usize {
    assert!(k > 0, "window size must be positive");
    n.div_ceil(k)
}

/// Reference dense attention: the same sublayer math as
/// [`multi_head_attention`] over a single window of size `n`, written as a
/// direct value-level computation with no tape. Used as an independent
/// oracle by the tests.
pub fn dense_attention_oracle(x: &Tensor, p: &MhaParams, ff: bool) -> Tensor {
    let n = x.rows();
    let d = p.d;
    assert_eq!(x.cols(), d, "dense_attention_oracle: width mismatch");
    let dh = p.head_dim();

    let normed = oracle_layer_norm(x.data(), n, d, p.ln1_gain.data(), p.ln1_bias.data());
    let q = oracle_matmul(&normed, p.wq.data(), n, d, d);
    let k = oracle_matmul(&normed, p.wk.data(), n, d, d);
    let v = oracle_matmul(&normed, p.wv.data(), n, d, d);

    let mut merged = vec![0.0; n * d];
    for h in 0..p.heads {
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for j in 0..n {
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += q[i * d + h * dh + c] * k[j * d + h * dh + c];
                }
                logits[j] = dot / (dh as f64).sqrt();
                if let Some(t) = &p.rel_bias {
                    let radius = (t.rows() - 1) / 2;
                    logits[j] += t.data()[(i + radius - j) * p.heads + h];
                }
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - mx).exp();
                total += *l;
            }
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += logits[j] / total * v[j * d + h * dh + c];
                }
                merged[i * d + h * dh + c] = acc;
            }
        }
    }
    let projected = oracle_matmul(&merged, p.wo.data(), n, d, d);
    let mut after: Vec<f64> = x
        .data()
        .iter()
        .zip(projected.iter())
        .map(|(a, b)| a + b)
        .collect();

    if ff {
        let normed2 = oracle_layer_norm(&after, n, d, p.ln2_gain.data(), p.ln2_bias.data());
        let mut hidden = oracle_matmul(&normed2, p.ff_w1.data(), n, d, 2 * d);
        for (i, hv) in hidden.iter_mut().enumerate() {
            let withb = *hv + p.ff_b1.data()[i % (2 * d)];
            // GELU, tanh form, written out independently of the tape kernel
            let u = (2.0 / std::f64::consts::PI).sqrt() * (withb + 0.044715 * withb.powi(3));
            *hv = 0.5 * withb * (1.0 + u.tanh());
        }
        let ffo = oracle_matmul(&hidden, p.ff_w2.data(), n, 2 * d, d);
        for i in 0..n * d {
            after[i] += ffo[i] + p.ff_b2.data()[i % d];
        }
    }
    Tensor::from_vec(after, &[n, d])
}

fn oracle_layer_norm(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * d];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for c in 0..d {
            out[r * d + c] = (row[c] - mean) * inv * gain[c] + bias[c];
        }
    }
    out
}

fn oracle_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * k + t] * b[t * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}
