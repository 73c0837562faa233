//! The 1-D shifted-window block: a windowed attention pass, a second pass on
//! a cyclically shifted partition, and pairwise token merging that halves the
//! sequence and rescales the width by `2/alpha`.
//!
//! # Operation count
//!
//! The multiply-add count of one windowed pass over `n` tokens of width `d`
//! with window `k` (full windows `f = n div k`, remainder `r = n mod k`) is
//!
//! ```text
//! projections   4 n d^2            (q, k, v and the output projection)
//! scores        d (f k^2 + r^2)
//! weighted sums d (f k^2 + r^2)
//! feed-forward  4 n d^2            (when enabled)
//! ```
//!
//! One block is two such passes (the shifted partition has the same window
//! sizes) plus the merge, `floor(n/2) * 2d * (2d/alpha)`. These formulas are
//! exact: the instrumented tape counter reproduces them to the last
//! multiply-add, which the tests assert.

use crate::attention::{multi_head_attention, window_merge, window_partition, MhaParams};
use crate::error::{Error, Result};
use crate::tensor::{MaddClass, MaddCounts, Rng, Tape, Tensor};
use serde::{Deserialize, Serialize};

/// Width scaling factor `alpha` as a positive rational. A merge maps width
/// `d` to `2d/alpha`, so `alpha = 1` doubles the width and `alpha = 2` keeps
/// it constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alpha {
    num: u32,
    den: u32,
}

impl Alpha {
    pub const ONE: Alpha = Alpha { num: 1, den: 1 };
    pub const TWO: Alpha = Alpha { num: 2, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Alpha> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!(
                "scaling factor must be positive, got {num}/{den}"
            )));
        }
        Ok(Alpha { num, den })
    }

    /// Output width of a merge from input width `d`, if `2d/alpha` is a
    /// positive integer.
    pub fn out_width(&self, d: usize) -> Result<usize> {
        let scaled = 2 * d * self.den as usize;
        if scaled % self.num as usize != 0 || scaled == 0 {
            return Err(Error::Config(format!(
                "2*{d}/({}/{}) is not a positive integer",
                self.num, self.den
            )));
        }
        Ok(scaled / self.num as usize)
    }
}

impl std::fmt::Display for Alpha {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Per-block configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Swin1dConfig {
    /// Window size in tokens.
    pub window: usize,
    /// Cyclic shift of the second pass, `0 <= shift < window`.
    pub shift: usize,
    /// Width scaling factor.
    pub alpha: Alpha,
    pub heads: usize,
    pub ff: bool,
}

impl Swin1dConfig {
    /// Validate against an input width and return the output width.
    pub fn validate(&self, d: usize) -> Result<usize> {
        if self.window == 0 {
            return Err(Error::Config("window size must be positive".into()));
        }
        if self.shift >= self.window {
            return Err(Error::Config(format!(
                "shift {} must be smaller than window {}",
                self.shift, self.window
            )));
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {d} is not divisible by head count {}",
                self.heads
            )));
        }
        self.alpha.out_width(d)
    }
}

/// Half-window shift, the default for the second pass.
pub fn default_shift(window: usize) -> usize {
    window / 2
}

/// Learnable state of one block: two structurally identical attention
/// sublayer pairs (separate weights) and the merge map `2d -> 2d/alpha`.
#[derive(Clone, Debug)]
pub struct Swin1dParams {
    pub mha1: MhaParams,
    pub mha2: MhaParams,
    pub merge_w: Tensor,
    pub merge_b: Tensor,
}

impl Swin1dParams {
    pub fn new(
        d: usize,
        config: &Swin1dConfig,
        rel_bias: bool,
        rng: &mut Rng,
    ) -> Result<Swin1dParams> {
        let out = config.validate(d)?;
        let bias_window = rel_bias.then_some(config.window);
        Ok(Swin1dParams {
            mha1: MhaParams::new(d, config.heads, bias_window, rng)?,
            mha2: MhaParams::new(d, config.heads, bias_window, rng)?,
            merge_w: Tensor::randn_scaled(&[2 * d, out], 2 * d, rng),
            merge_b: Tensor::zeros(&[out]),
        })
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor)) {
        self.mha1.visit(&format!("{prefix}.mha1"), f);
        self.mha2.visit(&format!("{prefix}.mha2"), f);
        f(format!("{prefix}.merge_w"), &self.merge_w);
        f(format!("{prefix}.merge_b"), &self.merge_b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        self.mha1.visit_mut(&format!("{prefix}.mha1"), f);
        self.mha2.visit_mut(&format!("{prefix}.mha2"), f);
        f(format!("{prefix}.merge_w"), &mut self.merge_w);
        f(format!("{prefix}.merge_b"), &mut self.merge_b);
    }
}

/// Attention weights captured from one window during a pass.
#[derive(Clone, Debug)]
pub struct CapturedWindow {
    pub len: usize,
    /// One `len * len` row-major matrix per head.
    pub heads: Vec<Vec<f64>>,
}

/// Captures from both passes of one block. For the shifted pass, window
/// indices refer to the partition of the rolled sequence.
#[derive(Clone, Debug)]
pub struct BlockCapture {
    pub slot1: Vec<CapturedWindow>,
    pub slot2: Vec<CapturedWindow>,
}

/// One windowed attention pass: roll by `t`, partition into windows of `k`,
/// apply the sublayer pair per window, merge in order, and roll back.
/// `t = 0` is a plain windowed pass. Token order is preserved: output token
/// `i` corresponds to input token `i`.
pub fn shifted_pass(
    tape: &mut Tape,
    x: &Tensor,
    p: &MhaParams,
    k: usize,
    t: usize,
    ff: bool,
    capture: bool,
) -> (Tensor, Option<Vec<CapturedWindow>>) {
    assert!(k > 0, "window size must be positive");
    assert!(t < k, "shift {t} must be smaller than window {k}");
    let rolled = if t == 0 {
        x.clone()
    } else {
        tape.roll(x, t as i64)
    };
    let windows = window_partition(tape, &rolled, k);
    let mut outs = Vec::with_capacity(windows.len());
    let mut captures = capture.then(Vec::new);
    for w in &windows {
        let (out, heads) = multi_head_attention(tape, w, p, ff, capture);
        if let (Some(c), Some(h)) = (captures.as_mut(), heads) {
            c.push(CapturedWindow {
                len: w.rows(),
                heads: h,
            });
        }
        outs.push(out);
    }
    let merged = window_merge(tape, &outs);
    let back = if t == 0 {
        merged
    } else {
        tape.roll(&merged, -(t as i64))
    };
    (back, captures)
}

/// Pairwise token merge: concatenate adjacent token pairs and apply the
/// linear map. Requires an even token count; callers drop a trailing odd
/// token first.
pub fn token_merge(tape: &mut Tape, x: &Tensor, merge_w: &Tensor, merge_b: &Tensor) -> Tensor {
    let pairs = tape.concat_pairs(x);
    let mapped = tape.matmul(&pairs, merge_w, MaddClass::Merge);
    tape.add_row(&mapped, merge_b)
}

/// One full block: unshifted windowed pass, shifted windowed pass, then the
/// pairwise merge. An odd trailing token is dropped before merging. Output
/// shape is `floor(n/2) x (2d/alpha)`.
pub fn swin1d_forward(
    tape: &mut Tape,
    x: &Tensor,
    p: &Swin1dParams,
    c: &Swin1dConfig,
    capture: bool,
) -> (Tensor, Option<BlockCapture>) {
    let n = x.rows();
    assert!(n >= 2, "swin1d_forward: need at least 2 tokens, got {n}");
    let (h1, cap1) = shifted_pass(tape, x, &p.mha1, c.window, 0, c.ff, capture);
    let (h2, cap2) = shifted_pass(tape, &h1, &p.mha2, c.window, c.shift, c.ff, capture);
    let even = if n % 2 == 0 {
        h2
    } else {
        tape.slice_rows(&h2, 0, n - 1)
    };
    let merged = token_merge(tape, &even, &p.merge_w, &p.merge_b);
    let capture_out = match (cap1, cap2) {
        (Some(slot1), Some(slot2)) => Some(BlockCapture { slot1, slot2 }),
        _ => None,
    };
    (merged, capture_out)
}

/// Closed-form count for one windowed pass (see the module docs).
pub fn pass_madds(n: usize, d: usize, k: usize, ff: bool) -> MaddCounts {
    let full = (n / k) as u64;
    let rem = (n % k) as u64;
    let (n, d, k) = (n as u64, d as u64, k as u64);
    let mut counts = MaddCounts {
        projection: 4 * n * d * d,
        score: d * (full * k * k + rem * rem),
        mix: d * (full * k * k + rem * rem),
        ..MaddCounts::default()
    };
    if ff {
        counts.feed_forward = 4 * n * d * d;
    }
    counts
}

/// Closed-form count for one full block at input `n x d`.
pub fn block_madds(n: usize, d: usize, c: &Swin1dConfig) -> MaddCounts {
    let per_pass = pass_madds(n, d, c.window, c.ff);
    let out_width = c
        .alpha
        .out_width(d)
        .expect("block_madds: invalid alpha for width") as u64;
    let pairs = (n / 2) as u64;
    let mut counts = per_pass + per_pass;
    counts.merge = pairs * 2 * d as u64 * out_width;
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::dense_attention_oracle;
    use crate::tensor::grad_check;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::from_vec(
            (0..shape.iter().product())
                .map(|_| rng.next_normal())
                .collect(),
            shape,
        )
    }

    fn config(window: usize, shift: usize, alpha: Alpha, heads: usize) -> Swin1dConfig {
        Swin1dConfig {
            window,
            shift,
            alpha,
            heads,
            ff: true,
        }
    }

    #[test]
    fn output_shape_contract() {
        // alpha = 1 doubles the width, alpha = 2 keeps it.
        let mut rng = Rng::new(1);
        let c1 = config(4, 2, Alpha::ONE, 2);
        let p1 = Swin1dParams::new(4, &c1, true, &mut rng).unwrap();
        let x = random(&[16, 4], 2);
        let mut tape = Tape::new();
        let (y, _) = swin1d_forward(&mut tape, &x, &p1, &c1, false);
        assert_eq!(y.shape(), &[8, 8]);

        let c2 = config(4, 2, Alpha::TWO, 2);
        let p2 = Swin1dParams::new(8, &c2, true, &mut rng).unwrap();
        let x8 = random(&[16, 8], 3);
        let (y2, _) = swin1d_forward(&mut tape, &x8, &p2, &c2, false);
        assert_eq!(y2.shape(), &[8, 8]);
    }

    #[test]
    fn odd_token_count_drops_trailing_token() {
        let mut rng = Rng::new(4);
        let c = config(4, 1, Alpha::ONE, 2);
        let p = Swin1dParams::new(4, &c, true, &mut rng).unwrap();
        let x = random(&[9, 4], 5);
        let mut tape = Tape::new();
        let (y, _) = swin1d_forward(&mut tape, &x, &p, &c, false);
        assert_eq!(y.shape(), &[4, 8]);
    }

    #[test]
    fn dense_window_no_shift_equals_stacked_dense_sublayers_plus_merge() {
        // k = n, t = 0 must reduce to two dense sublayer pairs followed by
        // pair-concat and the linear merge, computed here via the value-level
        // oracle.
        for seed in 0..3u64 {
            let n = 6;
            let d = 4;
            let c = config(n, 0, Alpha::ONE, 2);
            let p = Swin1dParams::new(d, &c, false, &mut Rng::new(100 + seed)).unwrap();
            let x = random(&[n, d], 200 + seed);

            let mut tape = Tape::new();
            let (y, _) = swin1d_forward(&mut tape, &x, &p, &c, false);

            let h1 = dense_attention_oracle(&x, &p.mha1, true);
            let h2 = dense_attention_oracle(&h1, &p.mha2, true);
            // pair-concat + linear merge, directly on values
            let out_w = 2 * d;
            let mut expect = vec![0.0; (n / 2) * out_w];
            for j in 0..n / 2 {
                for o in 0..out_w {
                    let mut acc = p.merge_b.data()[o];
                    for c2 in 0..2 * d {
                        acc += h2.data()[j * 2 * d + c2] * p.merge_w.data()[c2 * out_w + o];
                    }
                    expect[j * out_w + o] = acc;
                }
            }
            let expect = Tensor::from_vec(expect, &[n / 2, out_w]);
            assert!(
                y.max_abs_diff(&expect) < 1e-10,
                "seed {seed}: diff {}",
                y.max_abs_diff(&expect)
            );
        }
    }

    #[test]
    fn token_merge_identity_map_is_pure_pair_concat() {
        let d = 3;
        let mut merge_w = Tensor::zeros(&[2 * d, 2 * d]);
        for i in 0..2 * d {
            merge_w.data_mut()[i * 2 * d + i] = 1.0;
        }
        let merge_b = Tensor::zeros(&[2 * d]);
        let x = random(&[4, d], 7);
        let mut tape = Tape::new();
        let y = token_merge(&mut tape, &x, &merge_w, &merge_b);
        assert_eq!(y.shape(), &[2, 2 * d]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn token_merge_two_tokens_gives_single_output() {
        let x = random(&[2, 4], 8);
        let w = random(&[8, 8], 9);
        let b = random(&[8], 10);
        let mut tape = Tape::new();
        let y = token_merge(&mut tape, &x, &w, &b);
        assert_eq!(y.shape(), &[1, 8]);
    }

    #[test]
    fn token_merge_charges_documented_madds() {
        let x = random(&[6, 4], 11);
        let w = random(&[8, 8], 12);
        let b = Tensor::zeros(&[8]);
        let mut tape = Tape::inference();
        token_merge(&mut tape, &x, &w, &b);
        assert_eq!(tape.madds().merge, (3 * 8 * 8) as u64);
    }

    #[test]
    fn token_merge_gradients() {
        let x = random(&[6, 4], 13);
        let w = random(&[8, 8], 14);
        let b = random(&[8], 15);
        let err = grad_check(
            |tape, xs| {
                let y = token_merge(tape, &xs[0], &xs[1], &xs[2]);
                let sq = tape.mul(&y, &y);
                tape.sum(&sq)
            },
            &[x, w, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn unshifted_dense_pass_matches_oracle() {
        let n = 5;
        let p = MhaParams::new(4, 2, None, &mut Rng::new(16)).unwrap();
        let x = random(&[n, 4], 17);
        let mut tape = Tape::new();
        let (y, _) = shifted_pass(&mut tape, &x, &p, n, 0, true, false);
        let oracle = dense_attention_oracle(&x, &p, true);
        assert!(y.max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn shifted_pass_preserves_token_order() {
        // With zeroed output projections each sublayer is the identity, so
        // roll -> attend -> unroll must return the input unchanged, token by
        // token.
        let mut p = MhaParams::new(4, 2, None, &mut Rng::new(18)).unwrap();
        p.wo = Tensor::zeros(&[4, 4]);
        p.ff_w2 = Tensor::zeros(&[8, 4]);
        let x = random(&[8, 4], 19);
        let mut tape = Tape::new();
        let (y, _) = shifted_pass(&mut tape, &x, &p, 4, 2, true, false);
        assert_eq!(y.data(), x.data());
    }

    /// Expected dependence of each output token on each input token for one
    /// block, derived purely from the window/shift/merge bookkeeping.
    fn expected_dependence(n: usize, k: usize, t: usize) -> Vec<Vec<bool>> {
        let window_of = |i: usize, shift: usize| ((i + shift) % n) / k;
        // after pass 1: token i depends on window-mates of i
        let dep1: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| window_of(j, 0) == window_of(i, 0)).collect())
            .collect();
        // after pass 2: union over shifted-window mates
        let dep2: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                let mut row = vec![false; n];
                for (m, _) in (0..n)
                    .map(|m| (m, window_of(m, t) == window_of(i, t)))
                    .filter(|(_, same)| *same)
                {
                    for j in 0..n {
                        row[j] |= dep1[m][j];
                    }
                }
                row
            })
            .collect();
        // merge: output o = tokens 2o and 2o+1
        (0..n / 2)
            .map(|o| {
                (0..n)
                    .map(|j| dep2[2 * o][j] || dep2[2 * o + 1][j])
                    .collect()
            })
            .collect()
    }

    /// Measured dependence by finite perturbation of each input token.
    fn measured_dependence(x: &Tensor, p: &Swin1dParams, c: &Swin1dConfig) -> Vec<Vec<bool>> {
        let n = x.rows();
        let d = x.cols();
        let mut tape = Tape::new();
        let (base, _) = swin1d_forward(&mut tape, x, p, c, false);
        let out_n = base.rows();
        let out_d = base.cols();
        let mut dep = vec![vec![false; n]; out_n];
        for j in 0..n {
            let mut xp = x.clone();
            // Vary per column: a constant row shift would be invisible to
            // the pre-attention layer norm.
            for ccol in 0..d {
                xp.data_mut()[j * d + ccol] += 0.4 + 0.3 * ccol as f64;
            }
            let mut t2 = Tape::new();
            let (pert, _) = swin1d_forward(&mut t2, &xp, p, c, false);
            for o in 0..out_n {
                let changed = (0..out_d).any(|cc| (pert.at(o, cc) - base.at(o, cc)).abs() > 1e-9);
                dep[o][j] = changed;
            }
        }
        dep
    }

    #[test]
    fn shift_enables_cross_window_flow_and_its_absence_blocks_it() {
        let n = 8;
        let d = 4;
        let x = random(&[n, d], 20);

        // shifted: k=4, t=2 — expected pattern from the bookkeeping oracle
        let c_shift = config(4, 2, Alpha::ONE, 2);
        let p = Swin1dParams::new(d, &c_shift, true, &mut Rng::new(21)).unwrap();
        let expected = expected_dependence(n, 4, 2);
        let measured = measured_dependence(&x, &p, &c_shift);
        assert_eq!(measured, expected, "shifted pattern");
        // perturbing token 3 must reach outputs fed by the other window
        assert!(expected[2][3] && expected[3][3]);
        assert!(measured[2][3] && measured[3][3]);

        // unshifted: no cross-window flow after one block
        let c_plain = config(4, 0, Alpha::ONE, 2);
        let p_plain = Swin1dParams::new(d, &c_plain, true, &mut Rng::new(22)).unwrap();
        let expected_plain = expected_dependence(n, 4, 0);
        let measured_plain = measured_dependence(&x, &p_plain, &c_plain);
        assert_eq!(measured_plain, expected_plain, "plain pattern");
        // block-diagonal: outputs 0..1 from inputs 0..3, outputs 2..3 from 4..7
        for (o, row) in measured_plain.iter().enumerate() {
            for (j, reaches) in row.iter().enumerate() {
                assert_eq!(*reaches, o / 2 == j / 4, "o={o} j={j}");
            }
        }
    }

    #[test]
    fn analytic_madds_match_instrumented_counter() {
        for &(n, d, k, heads, ff) in &[
            (16usize, 4usize, 4usize, 2usize, true),
            (16, 4, 4, 2, false),
            (10, 6, 4, 3, true), // partial window
            (9, 4, 3, 2, true),  // odd n and partial arithmetic
            (8, 8, 8, 4, true),  // dense
        ] {
            let c = Swin1dConfig {
                window: k,
                shift: default_shift(k),
                alpha: Alpha::ONE,
                heads,
                ff,
            };
            let p = Swin1dParams::new(d, &c, true, &mut Rng::new(23)).unwrap();
            let x = random(&[n, d], 24);
            let mut tape = Tape::inference();
            swin1d_forward(&mut tape, &x, &p, &c, false);
            let analytic = block_madds(n, d, &c);
            assert_eq!(
                tape.madds(),
                analytic,
                "n={n} d={d} k={k} heads={heads} ff={ff}"
            );
        }
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let c = config(4, 2, Alpha::ONE, 2);
        let p = Swin1dParams::new(4, &c, true, &mut Rng::new(25)).unwrap();
        let x = random(&[8, 4], 26);
        let inputs = vec![x, p.merge_w.clone(), p.mha1.wv.clone(), p.mha2.wq.clone()];
        let err = grad_check(
            |tape, xs| {
                let mut q = p.clone();
                q.merge_w = xs[1].clone();
                q.mha1.wv = xs[2].clone();
                q.mha2.wq = xs[3].clone();
                let (y, _) = swin1d_forward(tape, &xs[0], &q, &c, false);
                let sq = tape.mul(&y, &y);
                tape.mean(&sq)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn capture_covers_both_slots_per_window() {
        let c = config(4, 2, Alpha::ONE, 2);
        let p = Swin1dParams::new(4, &c, true, &mut Rng::new(27)).unwrap();
        let x = random(&[10, 4], 28);
        let mut tape = Tape::new();
        let (_, cap) = swin1d_forward(&mut tape, &x, &p, &c, true);
        let cap = cap.unwrap();
        // 10 tokens, window 4 -> windows of 4, 4, 2 in both passes
        assert_eq!(cap.slot1.len(), 3);
        assert_eq!(cap.slot2.len(), 3);
        assert_eq!(
            cap.slot1.iter().map(|w| w.len).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
        for w in cap.slot1.iter().chain(cap.slot2.iter()) {
            assert_eq!(w.heads.len(), 2);
            for h in &w.heads {
                assert_eq!(h.len(), w.len * w.len);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut rng = Rng::new(29);
        let bad_shift = Swin1dConfig {
            window: 4,
            shift: 4,
            alpha: Alpha::ONE,
            heads: 2,
            ff: true,
        };
        assert!(Swin1dParams::new(4, &bad_shift, true, &mut rng).is_err());

        let bad_alpha = Swin1dConfig {
            window: 4,
            shift: 0,
            alpha: Alpha::new(3, 1).unwrap(),
            heads: 2,
            ff: true,
        };
        assert!(Swin1dParams::new(4, &bad_alpha, true, &mut rng).is_err());
    }
}
