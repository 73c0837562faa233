//! The full prediction model: a linear embedding stem, a stack of 1-D
//! shifted-window blocks, a centered crop to the output bin count, one or
//! more dense transformer blocks with relative positional embedding, and
//! per-track linear heads with an optional softplus.
//!
//! Also home to the checkpoint container and the closed-form operation count
//! that the benchmark checks against the instrumented tape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, AttentionRecord, MhaParams};
use crate::binio;
use crate::error::{ContainerError, Error, Result};
use crate::swin::{block_madds, pass_madds, swin1d_forward, Alpha, Swin1dConfig, Swin1dParams};
use crate::tensor::{MaddClass, MaddCounts, Rng, Tape, Tensor};

const CHECKPOINT_MAGIC: &[u8; 8] = b"SW1DCKPT";
const CHECKPOINT_VERSION: u64 = 1;

/// Full model configuration. `blocks.len()` is the hierarchy depth K.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input token length (base pairs).
    pub n: usize,
    /// Input channels per token (4 for one-hot DNA).
    pub d_in: usize,
    /// Embedding width.
    pub d0: usize,
    /// Output bin count.
    pub m: usize,
    /// Output track count.
    pub tracks: usize,
    pub blocks: Vec<Swin1dConfig>,
    /// Dense transformer blocks after the crop (at least one).
    pub final_blocks: usize,
    /// Relative position bias inside shifted-window blocks. The final dense
    /// blocks always carry relative positional embedding.
    pub rel_bias: bool,
    /// Softplus on the heads, guaranteeing strictly positive rates.
    pub softplus_head: bool,
    /// Group label per track.
    pub track_groups: Vec<String>,
}

/// Token counts and widths at every depth: `tokens[l]` and `widths[l]` are
/// the block-`l` input; the last entries describe the cropped stage input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub tokens: Vec<usize>,
    pub widths: Vec<usize>,
}

impl LayerPlan {
    pub fn final_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn final_tokens(&self) -> usize {
        *self.tokens.last().unwrap()
    }
}

/// Depth that brings `n` tokens down to the output length: `floor(log2(n/m))`.
pub fn suggest_depth(n: usize, m: usize) -> usize {
    assert!(n >= m && m > 0, "suggest_depth: need n >= m > 0");
    let mut k = 0;
    let mut tokens = n;
    while tokens / 2 >= m {
        tokens /= 2;
        k += 1;
    }
    k
}

/// Width-doubling schedule: `alpha = 1` until the doubled width would exceed
/// `cap`, then `alpha = 2` (constant width).
pub fn alpha_schedule(d0: usize, depth: usize, cap: usize) -> Vec<Alpha> {
    let mut width = d0;
    (0..depth)
        .map(|_| {
            if 2 * width <= cap {
                width *= 2;
                Alpha::ONE
            } else {
                Alpha::TWO
            }
        })
        .collect()
}

impl ModelConfig {
    /// Validate the whole chain and return the per-layer plan.
    pub fn layer_plan(&self) -> Result<LayerPlan> {
        if self.blocks.is_empty() {
            return Err(Error::Config(
                "at least one shifted-window block is required".into(),
            ));
        }
        if self.final_blocks == 0 {
            return Err(Error::Config(
                "at least one final transformer block is required".into(),
            ));
        }
        if self.m == 0 || self.tracks == 0 || self.d_in == 0 || self.d0 == 0 {
            return Err(Error::Config(
                "m, tracks, d_in and d0 must be positive".into(),
            ));
        }
        if self.track_groups.len() != self.tracks {
            return Err(Error::Config(format!(
                "{} track groups for {} tracks",
                self.track_groups.len(),
                self.tracks
            )));
        }
        let mut tokens = vec![self.n];
        let mut widths = vec![self.d0];
        for (i, block) in self.blocks.iter().enumerate() {
            let n_l = *tokens.last().unwrap();
            let d_l = *widths.last().unwrap();
            if n_l < 2 {
                return Err(Error::Config(format!(
                    "block {i}: only {n_l} tokens remain; too many blocks for input length {}",
                    self.n
                )));
            }
            let out = block
                .validate(d_l)
                .map_err(|e| Error::Config(format!("block {i}: {e}")))?;
            tokens.push(n_l / 2);
            widths.push(out);
        }
        let n_k = *tokens.last().unwrap();
        if n_k < self.m {
            return Err(Error::Config(format!(
                "final token count {n_k} is smaller than output bins {} (n={}, K={})",
                self.m,
                self.n,
                self.blocks.len()
            )));
        }
        let d_k = *widths.last().unwrap();
        let final_heads = self.blocks.last().unwrap().heads;
        if d_k % final_heads != 0 {
            return Err(Error::Config(format!(
                "final width {d_k} is not divisible by head count {final_heads}"
            )));
        }
        Ok(LayerPlan { tokens, widths })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
}

/// All learnable state.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub blocks: Vec<Swin1dParams>,
    pub final_blocks: Vec<MhaParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ModelParams {
    pub fn visit(&self, f: &mut impl FnMut(String, &Tensor)) {
        f("embed_w".into(), &self.embed_w);
        f("embed_b".into(), &self.embed_b);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("block{i}"), f);
        }
        for (i, b) in self.final_blocks.iter().enumerate() {
            b.visit(&format!("final{i}"), f);
        }
        f("head_w".into(), &self.head_w);
        f("head_b".into(), &self.head_b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor)) {
        f("embed_w".into(), &mut self.embed_w);
        f("embed_b".into(), &mut self.embed_b);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("block{i}"), f);
        }
        for (i, b) in self.final_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("final{i}"), f);
        }
        f("head_w".into(), &mut self.head_w);
        f("head_b".into(), &mut self.head_b);
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t.clone())));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |_, t| count += t.numel());
        count
    }
}

/// Deterministic initialization: scaled Gaussians (std `1/sqrt(fan_in)`),
/// zero biases, unit layer-norm gains. The same seed always produces
/// bit-identical parameters.
pub fn build(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let plan = config.layer_plan()?;
    let mut rng = Rng::derive(seed, 0x6D6F64656C);

    let embed_w = Tensor::randn_scaled(&[config.d_in, config.d0], config.d_in, &mut rng);
    let embed_b = Tensor::zeros(&[config.d0]);

    let mut blocks = Vec::with_capacity(config.blocks.len());
    for (i, bc) in config.blocks.iter().enumerate() {
        blocks.push(Swin1dParams::new(
            plan.widths[i],
            bc,
            config.rel_bias,
            &mut rng,
        )?);
    }

    let d_k = plan.final_width();
    let final_heads = config.blocks.last().unwrap().heads;
    let mut final_blocks = Vec::with_capacity(config.final_blocks);
    for _ in 0..config.final_blocks {
        // Relative positional embedding over all m positions, always on.
        final_blocks.push(MhaParams::new(d_k, final_heads, Some(config.m), &mut rng)?);
    }

    let head_w = Tensor::randn_scaled(&[d_k, config.tracks], d_k, &mut rng);
    let head_b = Tensor::zeros(&[config.tracks]);

    Ok(ModelParams {
        embed_w,
        embed_b,
        blocks,
        final_blocks,
        head_w,
        head_b,
    })
}

/// Centered crop: removes `floor((L-m)/2)` leading and `ceil((L-m)/2)`
/// trailing tokens.
pub fn crop(tape: &mut Tape, h: &Tensor, m: usize) -> Result<Tensor> {
    let l = h.rows();
    if l < m {
        return Err(Error::Contract(format!(
            "crop: cannot crop {l} tokens to {m}"
        )));
    }
    let lead = (l - m) / 2;
    Ok(tape.slice_rows(h, lead, m))
}

/// One dense transformer block over all positions: pre-norm attention with
/// per-head relative position bias plus the feed-forward sublayer.
pub fn final_transformer_block(tape: &mut Tape, h: &Tensor, p: &MhaParams) -> Tensor {
    multi_head_attention(tape, h, p, true, false).0
}

/// Bookkeeping for one hierarchy level of the attention atlas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtlasLayer {
    /// Tokens entering the block at this level.
    pub tokens: usize,
    /// Input positions covered by one token: `2^(layer-1)`.
    pub span: usize,
    pub window: usize,
    pub windows: usize,
    pub heads: usize,
}

/// Every attention map captured during one forward pass: two slots per
/// window per shifted-window block. The final dense blocks are not part of
/// the atlas.
#[derive(Clone, Debug)]
pub struct AttentionAtlas {
    pub layers: Vec<AtlasLayer>,
    pub records: Vec<AttentionRecord>,
}

impl AttentionAtlas {
    /// `sum over layers of 2 * ceil(n_l / k_l)`.
    pub fn expected_record_count(&self) -> usize {
        self.layers.iter().map(|l| 2 * l.windows).sum()
    }
}

/// Output of [`forward_traced`]: the prediction, the optional atlas, and the
/// (tracked) output of every shifted-window block.
pub struct ForwardTrace {
    pub output: Tensor,
    pub atlas: Option<AttentionAtlas>,
    pub block_outputs: Vec<Tensor>,
}

/// Forward pass that also exposes intermediate block outputs (used by the
/// receptive-field tests).
pub fn forward_traced(
    tape: &mut Tape,
    x: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
    capture: bool,
) -> Result<ForwardTrace> {
    if x.shape() != [config.n, config.d_in] {
        return Err(Error::Dim {
            op: "forward",
            lhs: x.shape().to_vec(),
            rhs: vec![config.n, config.d_in],
        });
    }
    let embedded = tape.matmul(x, &params.embed_w, MaddClass::Embed);
    let mut h = tape.add_row(&embedded, &params.embed_b);

    let mut block_outputs = Vec::with_capacity(config.blocks.len());
    let mut layers = Vec::with_capacity(config.blocks.len());
    let mut records = Vec::new();
    let mut span = 1usize;
    for (i, (bp, bc)) in params.blocks.iter().zip(config.blocks.iter()).enumerate() {
        let tokens = h.rows();
        let (next, cap) = swin1d_forward(tape, &h, bp, bc, capture);
        if capture {
            layers.push(AtlasLayer {
                tokens,
                span,
                window: bc.window,
                windows: tokens.div_ceil(bc.window),
                heads: bc.heads,
            });
            if let Some(cap) = cap {
                for (slot, windows) in [(1u8, cap.slot1), (2u8, cap.slot2)] {
                    for (w_idx, cw) in windows.into_iter().enumerate() {
                        records.push(AttentionRecord {
                            layer: i + 1,
                            slot,
                            window: w_idx,
                            len: cw.len,
                            weights: cw.heads,
                        });
                    }
                }
            }
        }
        span *= 2;
        block_outputs.push(next.clone());
        h = next;
    }

    let mut cropped = crop(tape, &h, config.m)?;
    for fb in &params.final_blocks {
        cropped = final_transformer_block(tape, &cropped, fb);
    }
    let logits = tape.matmul(&cropped, &params.head_w, MaddClass::Head);
    let logits = tape.add_row(&logits, &params.head_b);
    let output = if config.softplus_head {
        tape.softplus(&logits)
    } else {
        logits
    };

    let atlas = capture.then_some(AttentionAtlas { layers, records });
    Ok(ForwardTrace {
        output,
        atlas,
        block_outputs,
    })
}

/// Standard forward pass: `m x tracks` prediction plus the atlas when
/// capture is on.
pub fn forward(
    tape: &mut Tape,
    x: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
    capture: bool,
) -> Result<(Tensor, Option<AttentionAtlas>)> {
    let trace = forward_traced(tape, x, params, config, capture)?;
    Ok((trace.output, trace.atlas))
}

/// Closed-form multiply-add count of one forward pass at input length `n`
/// (the config's own length need not match; everything else is taken from
/// the config). The instrumented tape counter of a real forward pass equals
/// this exactly.
pub fn count_madds(config: &ModelConfig, n: usize) -> MaddCounts {
    let mut counts = MaddCounts {
        embed: (n * config.d_in * config.d0) as u64,
        ..MaddCounts::default()
    };
    let mut tokens = n;
    let mut width = config.d0;
    for bc in &config.blocks {
        counts += block_madds(tokens, width, bc);
        tokens /= 2;
        width = bc
            .alpha
            .out_width(width)
            .expect("count_madds: invalid config");
    }
    // Final dense blocks run on m tokens as a single window.
    for _ in 0..config.final_blocks {
        counts += pass_madds(config.m, width, config.m, true);
    }
    counts.head = (config.m * width * config.tracks) as u64;
    counts
}

// ── Checkpoints ─────────────────────────────────────────────────────
//
// Layout: magic "SW1DCKPT", version u64, config echo (u64 length + JSON of
// ModelConfig), parameter count u64, then per parameter: name (u64 length +
// UTF-8), rank u64, dims (u64 each), raw little-endian f64 data.

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);

    w.write_all(CHECKPOINT_MAGIC)
        .map_err(|e| Error::io(path, e))?;
    binio::write_u64(&mut w, CHECKPOINT_VERSION).map_err(|e| Error::io(path, e))?;
    let echo = serde_json::to_string(config)
        .map_err(|e| Error::Config(format!("config echo serialization: {e}")))?;
    binio::write_str(&mut w, &echo).map_err(|e| Error::io(path, e))?;

    let named = params.named();
    binio::write_u64(&mut w, named.len() as u64).map_err(|e| Error::io(path, e))?;
    for (name, t) in &named {
        binio::write_str(&mut w, name).map_err(|e| Error::io(path, e))?;
        binio::write_u64(&mut w, t.shape().len() as u64).map_err(|e| Error::io(path, e))?;
        for &d in t.shape() {
            binio::write_u64(&mut w, d as u64).map_err(|e| Error::io(path, e))?;
        }
        binio::write_f64s(&mut w, t.data()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| ContainerError::Truncated {
            needed: 8,
            available: 0,
        })?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ContainerError::Magic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        }
        .into());
    }
    let version = binio::read_u64(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ContainerError::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        }
        .into());
    }
    let echo = binio::read_str(&mut r, 1 << 20)?;
    let config: ModelConfig = serde_json::from_str(&echo)
        .map_err(|e| ContainerError::Header(format!("config echo: {e}")))?;

    // Rebuild the structure, then overwrite every tensor from the file.
    let mut params = build(&config, 0)?;
    let count = binio::read_u64(&mut r)?;
    let mut loaded: std::collections::BTreeMap<String, Tensor> = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name = binio::read_str(&mut r, 4096)?;
        let rank = binio::read_u64(&mut r)?;
        if rank > 8 {
            return Err(ContainerError::Consistency(format!(
                "parameter {name}: rank {rank} out of range"
            ))
            .into());
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(binio::read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > (1 << 28) {
            return Err(ContainerError::Consistency(format!(
                "parameter {name}: implausible element count {numel}"
            ))
            .into());
        }
        let data = binio::read_f64s(&mut r, numel)?;
        loaded.insert(name, Tensor::from_vec(data, &shape));
    }

    let mut problems = Vec::new();
    params.visit_mut(&mut |name, t| match loaded.remove(&name) {
        Some(new) if new.shape() == t.shape() => *t = new,
        Some(new) => problems.push(format!(
            "{name}: shape {:?} in file, {:?} expected",
            new.shape(),
            t.shape()
        )),
        None => problems.push(format!("{name}: absent from file")),
    });
    if !problems.is_empty() {
        return Err(ContainerError::Consistency(problems.join("; ")).into());
    }
    if !loaded.is_empty() {
        let extra: Vec<String> = loaded.keys().cloned().collect();
        return Err(ContainerError::Consistency(format!(
            "unexpected parameters in file: {}",
            extra.join(", ")
        ))
        .into());
    }
    Ok((config, params))
}
