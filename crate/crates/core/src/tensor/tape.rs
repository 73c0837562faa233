//! Reverse-mode tape and the primitive operation set.
//!
//! Every operation computes its value eagerly, optionally records a node for
//! the backward pass, and (for matrix products only) charges an exact
//! multiply-add count to the tape. The multiply-add accounting is the basis
//! of the complexity benchmark: a product of a `p x q` by a `q x r` matrix
//! costs exactly `p*q*r`, and nothing else is counted. Counts are kept per
//! call-site class so the attention-score terms can be separated from
//! projections when fitting growth ratios.
//!
//! A tape is single-writer: one forward/backward at a time. Independent
//! tapes may run on different threads.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{DType, Tensor};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Which part of the model a matrix product belongs to, for the op-count
/// breakdown. `Score` and `Mix` together form the attention-score term whose
/// growth the benchmark fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaddClass {
    Embed,
    Projection,
    Score,
    Mix,
    FeedForward,
    Merge,
    Head,
    Other,
}

/// Exact multiply-add counts, split by class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaddCounts {
    pub embed: u64,
    pub projection: u64,
    pub score: u64,
    pub mix: u64,
    pub feed_forward: u64,
    pub merge: u64,
    pub head: u64,
    pub other: u64,
}

impl MaddCounts {
    pub fn total(&self) -> u64 {
        self.embed
            + self.projection
            + self.score
            + self.mix
            + self.feed_forward
            + self.merge
            + self.head
            + self.other
    }

    /// The quadratic-in-window-length part: attention scores plus the
    /// weighted sums they drive.
    pub fn score_term(&self) -> u64 {
        self.score + self.mix
    }

    pub fn add(&mut self, class: MaddClass, n: u64) {
        match class {
            MaddClass::Embed => self.embed += n,
            MaddClass::Projection => self.projection += n,
            MaddClass::Score => self.score += n,
            MaddClass::Mix => self.mix += n,
            MaddClass::FeedForward => self.feed_forward += n,
            MaddClass::Merge => self.merge += n,
            MaddClass::Head => self.head += n,
            MaddClass::Other => self.other += n,
        }
    }
}

impl std::ops::Add for MaddCounts {
    type Output = MaddCounts;
    fn add(self, rhs: MaddCounts) -> MaddCounts {
        MaddCounts {
            embed: self.embed + rhs.embed,
            projection: self.projection + rhs.projection,
            score: self.score + rhs.score,
            mix: self.mix + rhs.mix,
            feed_forward: self.feed_forward + rhs.feed_forward,
            merge: self.merge + rhs.merge,
            head: self.head + rhs.head,
            other: self.other + rhs.other,
        }
    }
}

impl std::ops::AddAssign for MaddCounts {
    fn add_assign(&mut self, rhs: MaddCounts) {
        *self = *self + rhs;
    }
}

/// A recorded input: node index on this tape (if tracked) plus the saved
/// value needed by the backward rule.
struct Src {
    node: Option<usize>,
    value: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

impl Src {
    fn numel(&self) -> usize {
        self.value.len()
    }
}

enum Op {
    Leaf,
    /// out = a . b, a: m x k, b: k x n
    MatMul {
        a: Src,
        b: Src,
        m: usize,
        k: usize,
        n: usize,
    },
    /// out = a . b^T, a: m x k, b: n x k
    MatMulNT {
        a: Src,
        b: Src,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Src,
        b: Src,
    },
    /// a: r x c plus a length-c row broadcast over rows
    AddRow {
        a: Src,
        row: Src,
    },
    Sub {
        a: Src,
        b: Src,
    },
    Mul {
        a: Src,
        b: Src,
    },
    Scale {
        x: Src,
        c: f64,
    },
    Softmax {
        x: Src,
        axis: usize,
    },
    LayerNorm {
        x: Src,
        gain: Src,
        bias: Src,
        eps: f64,
    },
    Roll {
        x: Src,
        t: usize,
    },
    ConcatPairs {
        x: Src,
    },
    SliceRows {
        x: Src,
        start: usize,
    },
    SliceCols {
        x: Src,
        start: usize,
    },
    ConcatRows {
        parts: Vec<Src>,
    },
    ConcatCols {
        parts: Vec<Src>,
    },
    Gelu {
        x: Src,
    },
    Softplus {
        x: Src,
    },
    Ln {
        x: Src,
    },
    Sum {
        x: Src,
    },
    Mean {
        x: Src,
    },
    /// out[i][j] = table[i - j + radius][head], an L x L gather from a
    /// (2k-1) x H offset table.
    RelBias {
        table: Src,
        head: usize,
        radius: usize,
        heads: usize,
    },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Arc<Vec<f64>>,
}

/// Recording tape. See the module docs for the execution model.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    recording: bool,
    dtype: DType,
    madds: MaddCounts,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    /// Recording tape in double precision.
    pub fn new() -> Tape {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: true,
            dtype: DType::F64,
            madds: MaddCounts::default(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    /// Non-recording tape: computes values and multiply-add counts but keeps
    /// no graph. Gradients are unavailable.
    pub fn inference() -> Tape {
        let mut t = Tape::new();
        t.recording = false;
        t
    }

    pub fn with_dtype(mut self, dtype: DType) -> Tape {
        self.dtype = dtype;
        self
    }

    pub fn madds(&self) -> MaddCounts {
        self.madds
    }

    pub fn madd_total(&self) -> u64 {
        self.madds.total()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn src(&self, t: &Tensor) -> Src {
        let node = match t.node {
            Some((tape_id, idx)) => {
                assert_eq!(
                    tape_id, self.id,
                    "tensor was produced on tape {tape_id}, used on tape {}",
                    self.id
                );
                Some(idx)
            }
            None => None,
        };
        Src {
            node,
            value: t.storage(),
            shape: t.shape().to_vec(),
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, mut data: Vec<f64>) -> Tensor {
        if self.dtype == DType::F32 {
            for v in &mut data {
                *v = *v as f32 as f64;
            }
        }
        let value = Arc::new(data);
        let node = if self.recording {
            let idx = self.nodes.len();
            self.nodes.push(Node {
                op,
                shape: shape.clone(),
                value: Arc::clone(&value),
            });
            Some((self.id, idx))
        } else {
            None
        };
        Tensor {
            shape,
            data: value,
            node,
        }
    }

    /// Register a gradient-enabled leaf. The returned tensor must be the one
    /// used in downstream ops for gradients to reach it.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        let shape = t.shape().to_vec();
        let data = t.data().to_vec();
        self.push(Op::Leaf, shape, data)
    }

    // ── Matrix products ─────────────────────────────────────────────

    /// Standard product `a . b`; charges `p*q*r` multiply-adds to `class`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor, class: MaddClass) -> Tensor {
        assert!(
            a.shape().len() == 2 && b.shape().len() == 2 && a.cols() == b.rows(),
            "matmul: inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        );
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        self.madds.add(class, (m * k * n) as u64);
        let mut out = vec![0.0; m * n];
        mm_nn(a.data(), b.data(), m, k, n, &mut out);
        let op = Op::MatMul {
            a: self.src(a),
            b: self.src(b),
            m,
            k,
            n,
        };
        self.push(op, vec![m, n], out)
    }

    /// Product against a transposed right operand, `a . b^T` with `b: n x k`.
    /// Same `p*q*r` charge as the equivalent plain product.
    pub fn matmul_nt(&mut self, a: &Tensor, b: &Tensor, class: MaddClass) -> Tensor {
        assert!(
            a.shape().len() == 2 && b.shape().len() == 2 && a.cols() == b.cols(),
            "matmul_nt: inner dimensions differ: {:?} x {:?}^T",
            a.shape(),
            b.shape()
        );
        let (m, k, n) = (a.rows(), a.cols(), b.rows());
        self.madds.add(class, (m * k * n) as u64);
        let mut out = vec![0.0; m * n];
        mm_nt(a.data(), b.data(), m, k, n, &mut out);
        let op = Op::MatMulNT {
            a: self.src(a),
            b: self.src(b),
            m,
            k,
            n,
        };
        self.push(op, vec![m, n], out)
    }

    // ── Elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(
            a.shape(),
            b.shape(),
            "add: shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        let out = zip_map(a.data(), b.data(), |x, y| x + y);
        let op = Op::Add {
            a: self.src(a),
            b: self.src(b),
        };
        self.push(op, a.shape().to_vec(), out)
    }

    /// Broadcast-add a length-c vector to every row of an r x c matrix.
    pub fn add_row(&mut self, a: &Tensor, row: &Tensor) -> Tensor {
        assert!(
            a.shape().len() == 2 && row.shape() == [a.cols()],
            "add_row: shape mismatch: {:?} vs {:?}",
            a.shape(),
            row.shape()
        );
        let c = a.cols();
        let mut out = a.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += row.data()[i % c];
        }
        let op = Op::AddRow {
            a: self.src(a),
            row: self.src(row),
        };
        self.push(op, a.shape().to_vec(), out)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(
            a.shape(),
            b.shape(),
            "sub: shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        let out = zip_map(a.data(), b.data(), |x, y| x - y);
        let op = Op::Sub {
            a: self.src(a),
            b: self.src(b),
        };
        self.push(op, a.shape().to_vec(), out)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(
            a.shape(),
            b.shape(),
            "mul: shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        let out = zip_map(a.data(), b.data(), |x, y| x * y);
        let op = Op::Mul {
            a: self.src(a),
            b: self.src(b),
        };
        self.push(op, a.shape().to_vec(), out)
    }

    pub fn scale(&mut self, x: &Tensor, c: f64) -> Tensor {
        let out = x.data().iter().map(|v| v * c).collect();
        let op = Op::Scale { x: self.src(x), c };
        self.push(op, x.shape().to_vec(), out)
    }

    // ── Normalization ───────────────────────────────────────────────

    /// Shift-by-max stable softmax along `axis`. Each slice sums to 1.
    pub fn softmax(&mut self, x: &Tensor, axis: usize) -> Tensor {
        assert!(
            axis < x.shape().len(),
            "softmax: axis {axis} out of range for shape {:?}",
            x.shape()
        );
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for t in 0..len {
                    mx = mx.max(out[base + t * inner]);
                }
                let mut total = 0.0;
                for t in 0..len {
                    let e = (out[base + t * inner] - mx).exp();
                    out[base + t * inner] = e;
                    total += e;
                }
                for t in 0..len {
                    out[base + t * inner] /= total;
                }
            }
        }
        let op = Op::Softmax {
            x: self.src(x),
            axis,
        };
        self.push(op, x.shape().to_vec(), out)
    }

    /// Per-token normalization over the last axis, then affine by
    /// `gain`/`bias` (both length d).
    pub fn layer_norm(&mut self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Tensor {
        let d = *x.shape().last().expect("layer_norm: scalar input");
        assert!(
            gain.shape() == [d] && bias.shape() == [d],
            "layer_norm: gain/bias {:?}/{:?} do not match last axis {d}",
            gain.shape(),
            bias.shape()
        );
        let rows = x.numel() / d;
        let mut out = vec![0.0; x.numel()];
        let g = gain.data();
        let b = bias.data();
        for r in 0..rows {
            let xr = &x.data()[r * d..(r + 1) * d];
            let or = &mut out[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                or[j] = (xr[j] - mean) * inv * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm {
            x: self.src(x),
            gain: self.src(gain),
            bias: self.src(bias),
            eps,
        };
        self.push(op, x.shape().to_vec(), out)
    }

    // ── Structural ──────────────────────────────────────────────────

    /// Cyclic row shift: output row `i` equals input row `(i - t) mod n`,
    /// i.e. the last `t` rows wrap around to the front. Negative `t` is the
    /// inverse shift; any magnitude is reduced modulo the row count.
    pub fn roll(&mut self, x: &Tensor, t: i64) -> Tensor {
        let n = x.rows();
        let d = x.cols();
        let tm = if n == 0 {
            0
        } else {
            t.rem_euclid(n as i64) as usize
        };
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let srcrow = (i + n - tm) % n;
            out[i * d..(i + 1) * d].copy_from_slice(&x.data()[srcrow * d..(srcrow + 1) * d]);
        }
        let op = Op::Roll {
            x: self.src(x),
            t: tm,
        };
        self.push(op, vec![n, d], out)
    }

    /// Row-pair concatenation: `n x d -> (n/2) x 2d`, output row `j` being
    /// rows `2j` and `2j+1` side by side. Requires even `n`.
    pub fn concat_pairs(&mut self, x: &Tensor) -> Tensor {
        let n = x.rows();
        assert!(n % 2 == 0, "concat_pairs: row count must be even, got {n}");
        let d = x.cols();
        let out = x.data().to_vec(); // row-major layout is already pairwise
        let op = Op::ConcatPairs { x: self.src(x) };
        self.push(op, vec![n / 2, 2 * d], out)
    }

    pub fn slice_rows(&mut self, x: &Tensor, start: usize, len: usize) -> Tensor {
        let (n, d) = (x.rows(), x.cols());
        assert!(
            start + len <= n,
            "slice_rows: {start}..{} out of range for {n} rows",
            start + len
        );
        let out = x.data()[start * d..(start + len) * d].to_vec();
        let op = Op::SliceRows {
            x: self.src(x),
            start,
        };
        self.push(op, vec![len, d], out)
    }

    pub fn slice_cols(&mut self, x: &Tensor, start: usize, len: usize) -> Tensor {
        let (n, c) = (x.rows(), x.cols());
        assert!(
            start + len <= c,
            "slice_cols: {start}..{} out of range for {c} cols",
            start + len
        );
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&x.data()[r * c + start..r * c + start + len]);
        }
        let op = Op::SliceCols {
            x: self.src(x),
            start,
        };
        self.push(op, vec![n, len], out)
    }

    pub fn concat_rows(&mut self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let d = parts[0].cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols(), d, "concat_rows: column mismatch");
            rows += p.rows();
            out.extend_from_slice(p.data());
        }
        let op = Op::ConcatRows {
            parts: parts.iter().map(|p| self.src(p)).collect(),
        };
        self.push(op, vec![rows, d], out)
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let n = parts[0].rows();
        let total: usize = parts.iter().map(Tensor::cols).sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for p in parts {
                assert_eq!(p.rows(), n, "concat_cols: row mismatch");
                let c = p.cols();
                out.extend_from_slice(&p.data()[r * c..(r + 1) * c]);
            }
        }
        let op = Op::ConcatCols {
            parts: parts.iter().map(|p| self.src(p)).collect(),
        };
        self.push(op, vec![n, total], out)
    }

    // ── Nonlinearities and reductions ───────────────────────────────

    /// GELU, tanh form.
    pub fn gelu(&mut self, x: &Tensor) -> Tensor {
        let out = x.data().iter().map(|&v| gelu(v)).collect();
        let op = Op::Gelu { x: self.src(x) };
        self.push(op, x.shape().to_vec(), out)
    }

    pub fn softplus(&mut self, x: &Tensor) -> Tensor {
        let out = x.data().iter().map(|&v| softplus(v)).collect();
        let op = Op::Softplus { x: self.src(x) };
        self.push(op, x.shape().to_vec(), out)
    }

    pub fn ln(&mut self, x: &Tensor) -> Tensor {
        let out = x.data().iter().map(|&v| v.ln()).collect();
        let op = Op::Ln { x: self.src(x) };
        self.push(op, x.shape().to_vec(), out)
    }

    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let total = x.data().iter().sum();
        let op = Op::Sum { x: self.src(x) };
        self.push(op, vec![], vec![total])
    }

    pub fn mean(&mut self, x: &Tensor) -> Tensor {
        let total: f64 = x.data().iter().sum();
        let n = x.numel().max(1) as f64;
        let op = Op::Mean { x: self.src(x) };
        self.push(op, vec![], vec![total / n])
    }

    /// Per-head relative position bias: gathers an `len x len` matrix from a
    /// `(2k-1) x H` offset table, entry `(i, j)` reading offset `i - j`.
    pub fn rel_bias(&mut self, table: &Tensor, head: usize, len: usize) -> Tensor {
        let (r, heads) = (table.rows(), table.cols());
        assert!(
            r % 2 == 1,
            "rel_bias: table must have odd row count, got {r}"
        );
        let radius = (r - 1) / 2;
        assert!(
            len <= radius + 1,
            "rel_bias: window length {len} exceeds table radius {radius}"
        );
        assert!(head < heads, "rel_bias: head {head} out of {heads}");
        let mut out = vec![0.0; len * len];
        for i in 0..len {
            for j in 0..len {
                let off = i + radius - j;
                out[i * len + j] = table.data()[off * heads + head];
            }
        }
        let op = Op::RelBias {
            table: self.src(table),
            head,
            radius,
            heads,
        };
        self.push(op, vec![len, len], out)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates gradients for every
    /// tracked node; repeat calls recompute from scratch (idempotent).
    pub fn backward(&mut self, loss: &Tensor) {
        let idx = match loss.node {
            Some((tid, i)) if tid == self.id => i,
            Some(_) => panic!("backward: loss belongs to a different tape"),
            None => panic!("backward: loss is not attached to a tape"),
        };
        assert!(
            loss.is_scalar(),
            "backward: loss must be scalar, got shape {:?}",
            loss.shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[idx] = Some(vec![1.0]);

        for i in (0..=idx).rev() {
            let Some(dout) = grads[i].clone() else {
                continue;
            };
            backward_op(&self.nodes[i], &dout, &mut grads);
        }
        self.grads = grads;
        self.backward_done = true;
    }

    /// Gradient of the last `backward` loss with respect to `t`. Leaves that
    /// receive no flow get zeros of the right shape.
    pub fn grad(&self, t: &Tensor) -> Tensor {
        assert!(self.backward_done, "grad: backward() has not been run");
        let idx = match t.node {
            Some((tid, i)) if tid == self.id => i,
            _ => panic!("grad: tensor is not tracked on this tape"),
        };
        match &self.grads[idx] {
            Some(g) => Tensor::from_vec(g.clone(), t.shape()),
            None => Tensor::zeros(t.shape()),
        }
    }
}

fn backward_op(node: &Node, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            // dA = dOut . B^T ; dB = A^T . dOut
            if a.node.is_some() {
                let mut da = vec![0.0; m * k];
                mm_nt(dout, &b.value, *m, *n, *k, &mut da);
                accumulate(grads, a, da);
            }
            if b.node.is_some() {
                let mut db = vec![0.0; k * n];
                mm_tn(&a.value, dout, *m, *k, *n, &mut db);
                accumulate(grads, b, db);
            }
        }
        Op::MatMulNT { a, b, m, k, n } => {
            // out = A . B^T ; dA = dOut . B ; dB = dOut^T . A
            if a.node.is_some() {
                let mut da = vec![0.0; m * k];
                mm_nn(dout, &b.value, *m, *n, *k, &mut da);
                accumulate(grads, a, da);
            }
            if b.node.is_some() {
                let mut db = vec![0.0; n * k];
                mm_tn(dout, &a.value, *m, *n, *k, &mut db);
                accumulate(grads, b, db);
            }
        }
        Op::Add { a, b } => {
            if a.node.is_some() {
                accumulate(grads, a, dout.to_vec());
            }
            if b.node.is_some() {
                accumulate(grads, b, dout.to_vec());
            }
        }
        Op::AddRow { a, row } => {
            if a.node.is_some() {
                accumulate(grads, a, dout.to_vec());
            }
            if row.node.is_some() {
                let c = row.numel();
                let mut dr = vec![0.0; c];
                for (i, v) in dout.iter().enumerate() {
                    dr[i % c] += v;
                }
                accumulate(grads, row, dr);
            }
        }
        Op::Sub { a, b } => {
            if a.node.is_some() {
                accumulate(grads, a, dout.to_vec());
            }
            if b.node.is_some() {
                accumulate(grads, b, dout.iter().map(|v| -v).collect());
            }
        }
        Op::Mul { a, b } => {
            if a.node.is_some() {
                accumulate(grads, a, zip_map(dout, &b.value, |d, y| d * y));
            }
            if b.node.is_some() {
                accumulate(grads, b, zip_map(dout, &a.value, |d, x| d * x));
            }
        }
        Op::Scale { x, c } => {
            if x.node.is_some() {
                accumulate(grads, x, dout.iter().map(|v| v * c).collect());
            }
        }
        Op::Softmax { x, axis } => {
            if x.node.is_some() {
                let y = &node.value;
                let (outer, len, inner) = axis_split(&node.shape, *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for t in 0..len {
                            let p = base + t * inner;
                            dot += dout[p] * y[p];
                        }
                        for t in 0..len {
                            let p = base + t * inner;
                            dx[p] = y[p] * (dout[p] - dot);
                        }
                    }
                }
                accumulate(grads, x, dx);
            }
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let d = *x.shape.last().unwrap();
            let rows = x.numel() / d;
            let g = &gain.value;
            let mut dx = vec![0.0; x.numel()];
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            for r in 0..rows {
                let xr = &x.value[r * d..(r + 1) * d];
                let dor = &dout[r * d..(r + 1) * d];
                let mean = xr.iter().sum::<f64>() / d as f64;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                let mut sum1 = 0.0;
                let mut sum2 = 0.0;
                for j in 0..d {
                    let xhat = (xr[j] - mean) * inv;
                    let dxhat = dor[j] * g[j];
                    sum1 += dxhat;
                    sum2 += dxhat * xhat;
                    dg[j] += dor[j] * xhat;
                    db[j] += dor[j];
                }
                let dxr = &mut dx[r * d..(r + 1) * d];
                for j in 0..d {
                    let xhat = (xr[j] - mean) * inv;
                    let dxhat = dor[j] * g[j];
                    dxr[j] = inv * (dxhat - (sum1 + xhat * sum2) / d as f64);
                }
            }
            if x.node.is_some() {
                accumulate(grads, x, dx);
            }
            if gain.node.is_some() {
                accumulate(grads, gain, dg);
            }
            if bias.node.is_some() {
                accumulate(grads, bias, db);
            }
        }
        Op::Roll { x, t } => {
            if x.node.is_some() {
                let n = x.shape[0];
                let d = x.shape[1];
                let mut dx = vec![0.0; n * d];
                for j in 0..n {
                    let outrow = (j + t) % n.max(1);
                    dx[j * d..(j + 1) * d].copy_from_slice(&dout[outrow * d..(outrow + 1) * d]);
                }
                accumulate(grads, x, dx);
            }
        }
        Op::ConcatPairs { x } => {
            if x.node.is_some() {
                accumulate(grads, x, dout.to_vec());
            }
        }
        Op::SliceRows { x, start } => {
            if x.node.is_some() {
                let d = x.shape[1];
                let mut dx = vec![0.0; x.numel()];
                dx[start * d..start * d + dout.len()].copy_from_slice(dout);
                accumulate(grads, x, dx);
            }
        }
        Op::SliceCols { x, start } => {
            if x.node.is_some() {
                let (n, c) = (x.shape[0], x.shape[1]);
                let len = node.shape[1];
                let mut dx = vec![0.0; n * c];
                for r in 0..n {
                    dx[r * c + start..r * c + start + len]
                        .copy_from_slice(&dout[r * len..(r + 1) * len]);
                }
                accumulate(grads, x, dx);
            }
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for p in parts {
                let span = p.numel();
                if p.node.is_some() {
                    accumulate(grads, p, dout[offset..offset + span].to_vec());
                }
                offset += span;
            }
        }
        Op::ConcatCols { parts } => {
            let n = node.shape[0];
            let total = node.shape[1];
            let mut offset = 0;
            for p in parts {
                let c = p.shape[1];
                if p.node.is_some() {
                    let mut dp = vec![0.0; n * c];
                    for r in 0..n {
                        dp[r * c..(r + 1) * c]
                            .copy_from_slice(&dout[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, p, dp);
                }
                offset += c;
            }
        }
        Op::Gelu { x } => {
            if x.node.is_some() {
                accumulate(grads, x, zip_map(dout, &x.value, |d, v| d * gelu_deriv(v)));
            }
        }
        Op::Softplus { x } => {
            if x.node.is_some() {
                accumulate(grads, x, zip_map(dout, &x.value, |d, v| d * sigmoid(v)));
            }
        }
        Op::Ln { x } => {
            if x.node.is_some() {
                accumulate(grads, x, zip_map(dout, &x.value, |d, v| d / v));
            }
        }
        Op::Sum { x } => {
            if x.node.is_some() {
                accumulate(grads, x, vec![dout[0]; x.numel()]);
            }
        }
        Op::Mean { x } => {
            if x.node.is_some() {
                let scale = dout[0] / x.numel().max(1) as f64;
                accumulate(grads, x, vec![scale; x.numel()]);
            }
        }
        Op::RelBias {
            table,
            head,
            radius,
            heads,
        } => {
            if table.node.is_some() {
                let len = node.shape[0];
                let mut dt = vec![0.0; table.numel()];
                for i in 0..len {
                    for j in 0..len {
                        let off = i + radius - j;
                        dt[off * heads + head] += dout[i * len + j];
                    }
                }
                accumulate(grads, table, dt);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], src: &Src, contrib: Vec<f64>) {
    let idx = src.node.expect("accumulate on untracked src");
    debug_assert_eq!(contrib.len(), src.numel());
    match &mut grads[idx] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib.iter()) {
                *e += c;
            }
        }
        slot => *slot = Some(contrib),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

// ── Scalar math ─────────────────────────────────────────────────────

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

// ── Matrix kernels (f64 slices, row-major) ──────────────────────────

/// out += is NOT implied: `out` must be zeroed. a: m x k, b: k x n.
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
}

/// a: m x k, b: n x k, out = a . b^T (m x n).
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow.iter()) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// a: l x m, b: l x n, out = a^T . b (m x n).
pub(crate) fn mm_tn(a: &[f64], b: &[f64], l: usize, m: usize, n: usize, out: &mut [f64]) {
    for kk in 0..l {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}
