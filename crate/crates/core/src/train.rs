//! Poisson-loss optimization (Adam + cosine annealing) and per-track Pearson
//! evaluation with grouped reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{AssayDataset, AssayRecord};
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::tensor::{Rng, Tape, Tensor};

/// Mean Poisson negative log-likelihood over all entries:
/// `mean(pred - target * ln(pred))`. The `log(target!)` constant is omitted
/// (gradient-equivalent). Gradient entry is `(1 - target/pred) / numel`.
pub fn poisson_nll(tape: &mut Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Dim {
            op: "poisson_nll",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if let Some(bad) = pred.data().iter().position(|v| *v <= 0.0) {
        return Err(Error::Numeric(format!(
            "poisson_nll: non-positive prediction {} at entry {bad}",
            pred.data()[bad]
        )));
    }
    let lnp = tape.ln(pred);
    let ylogp = tape.mul(&target.detach(), &lnp);
    let resid = tape.sub(pred, &ylogp);
    Ok(tape.mean(&resid))
}

/// Cosine annealing schedule. The learning rate starts at `base_lr`, reaches
/// `eta_min` at `t_max` steps, and stays there.
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub t_max: u64,
    pub eta_min: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, t_max: u64, eta_min: f64) -> Result<LrSchedule> {
        if t_max == 0 {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if base_lr <= 0.0 || eta_min < 0.0 || eta_min > base_lr {
            return Err(Error::Config(format!(
                "invalid learning rates: base {base_lr}, eta_min {eta_min}"
            )));
        }
        Ok(LrSchedule {
            base_lr,
            t_max,
            eta_min,
        })
    }
}

/// `eta_min + (base - eta_min) * (1 + cos(pi * min(step, t_max)/t_max)) / 2`.
pub fn cosine_lr(step: u64, sched: &LrSchedule) -> f64 {
    let progress = step.min(sched.t_max) as f64 / sched.t_max as f64;
    sched.eta_min
        + (sched.base_lr - sched.eta_min) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
}

/// Adam optimizer state: per-parameter moment tensors plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments1: BTreeMap<String, Vec<f64>>,
    moments2: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new()
    }
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments1: BTreeMap::new(),
            moments2: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update over all parameters. Gradients are looked
/// up by parameter name; parameters without a gradient entry are left
/// untouched. A non-finite gradient aborts the step before any parameter is
/// modified.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "adam_step: non-finite gradient in {name} at entry {bad}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let (beta1, beta2, eps) = (state.beta1, state.beta2, state.eps);

    let moments1 = &mut state.moments1;
    let moments2 = &mut state.moments2;
    params.visit_mut(&mut |name, tensor| {
        let Some(g) = grads.get(&name) else { return };
        debug_assert_eq!(g.shape(), tensor.shape(), "{name}");
        let m = moments1
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.numel()]);
        let v = moments2.entry(name).or_insert_with(|| vec![0.0; g.numel()]);
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    });
    Ok(())
}

/// Sample Pearson correlation, or `None` when either vector is exactly
/// constant (undefined rather than NaN).
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Contract(format!(
            "pearson: need equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().all(|v| *v == a[0]) || b.iter().all(|v| *v == b[0]) {
        return Ok(None);
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    let r = cov / (var_a * var_b).sqrt();
    Ok(Some(r.clamp(-1.0, 1.0)))
}

/// Per-track evaluation result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackMetric {
    pub track: usize,
    pub group: String,
    /// `null` in JSON when the correlation is undefined for this track.
    pub pearson: Option<f64>,
}

/// Evaluation report: per-track Pearson correlations, group means over the
/// defined tracks, the overall mean, and the undefined tracks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Option<f64>,
    pub groups: BTreeMap<String, Option<f64>>,
    pub per_track: Vec<TrackMetric>,
    pub undefined_tracks: Vec<usize>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// One CSV row per track: `track,group,pearson` (empty field when
    /// undefined), for pairwise scatter plots.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("track,group,pearson\n");
        for t in &self.per_track {
            let r = t.pearson.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", t.track, t.group, r));
        }
        out
    }
}

/// Worker count for evaluation: the `SWIN1D_THREADS` environment variable
/// when set, otherwise the available parallelism capped at 8. Results are
/// identical for any worker count (per-record passes are independent and
/// reassembled in order).
pub fn eval_threads() -> usize {
    if let Ok(v) = std::env::var("SWIN1D_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1)
}

/// Run `predict` over every record (in parallel, ordered reassembly) and
/// correlate predictions with targets per track, concatenating over all
/// segments and bins.
pub fn evaluate_with<F>(predict: F, ds: &AssayDataset) -> Result<MetricsReport>
where
    F: Fn(&AssayRecord) -> Result<Tensor> + Sync,
{
    if ds.is_empty() {
        return Err(Error::Contract("evaluate: empty dataset".into()));
    }
    let threads = eval_threads().min(ds.len());
    let predictions: Vec<Result<Tensor>> = if threads <= 1 {
        ds.records.iter().map(&predict).collect()
    } else {
        let mut slots: Vec<Option<Result<Tensor>>> = (0..ds.len()).map(|_| None).collect();
        let chunk = ds.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let mut rest: &mut [Option<Result<Tensor>>] = &mut slots;
            let mut start = 0;
            let mut handles = Vec::new();
            while start < ds.len() {
                let take = chunk.min(ds.len() - start);
                let (head, tail) = rest.split_at_mut(take);
                rest = tail;
                let records = &ds.records[start..start + take];
                let predict = &predict;
                handles.push(scope.spawn(move || {
                    for (slot, rec) in head.iter_mut().zip(records.iter()) {
                        *slot = Some(predict(rec));
                    }
                }));
                start += take;
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("worker filled slot"))
            .collect()
    };

    let mut preds = Vec::with_capacity(ds.len());
    for p in predictions {
        preds.push(p?);
    }

    let mut per_track = Vec::with_capacity(ds.tracks);
    let mut undefined_tracks = Vec::new();
    let mut group_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for g in &ds.track_groups {
        group_sums.entry(g.clone()).or_insert((0.0, 0));
    }
    let mut overall_sum = 0.0;
    let mut overall_count = 0usize;
    for track in 0..ds.tracks {
        let mut a = Vec::with_capacity(ds.len() * ds.m);
        let mut b = Vec::with_capacity(ds.len() * ds.m);
        for (pred, rec) in preds.iter().zip(ds.records.iter()) {
            for bin in 0..ds.m {
                a.push(pred.at(bin, track));
                b.push(rec.targets.at(bin, track));
            }
        }
        let r = pearson(&a, &b)?;
        let group = ds.track_groups[track].clone();
        if let Some(v) = r {
            let entry = group_sums.get_mut(&group).expect("group present");
            entry.0 += v;
            entry.1 += 1;
            overall_sum += v;
            overall_count += 1;
        } else {
            undefined_tracks.push(track);
        }
        per_track.push(TrackMetric {
            track,
            group,
            pearson: r,
        });
    }
    let groups = group_sums
        .into_iter()
        .map(|(g, (sum, count))| (g, (count > 0).then(|| sum / count as f64)))
        .collect();
    Ok(MetricsReport {
        overall: (overall_count > 0).then(|| overall_sum / overall_count as f64),
        groups,
        per_track,
        undefined_tracks,
    })
}

/// Evaluate a model checkpoint on a dataset.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    ds: &AssayDataset,
) -> Result<MetricsReport> {
    if ds.n != config.n || ds.tracks != config.tracks || ds.m != config.m {
        return Err(Error::Config(format!(
            "dataset (n={}, m={}, tracks={}) is incompatible with model (n={}, m={}, tracks={})",
            ds.n, ds.m, ds.tracks, config.n, config.m, config.tracks
        )));
    }
    evaluate_with(
        |rec| {
            let mut tape = Tape::inference();
            Ok(forward(&mut tape, &rec.onehot, params, config, false)?.0)
        },
        ds,
    )
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    /// Cosine annealing horizon; defaults to `steps` when zero.
    pub t_max: u64,
    pub eta_min: f64,
    /// Global-norm gradient clipping; `None` disables.
    pub clip_norm: Option<f64>,
    /// Validation cadence in steps; validation also runs at the final step.
    pub eval_every: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 3e-4,
            batch: 8,
            steps: 1000,
            t_max: 0,
            eta_min: 0.0,
            clip_norm: Some(1.0),
            eval_every: 50,
        }
    }
}

/// Result of a training run. `best` is the parameter set with the highest
/// validation Pearson (the final parameters when no validation set was
/// given); on divergence it is the last state before the bad step.
#[derive(Debug)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub final_params: ModelParams,
    /// CSV with header `step,lr,train_loss,val_overall_pearson`; the last
    /// column is empty on steps without validation.
    pub log_csv: String,
    pub best_val: Option<f64>,
    pub diverged: bool,
}

/// Register every parameter as a tape leaf, returning the tracked parameter
/// set and the leaf handles for gradient extraction.
fn bind_params(tape: &mut Tape, params: &ModelParams) -> (ModelParams, Vec<(String, Tensor)>) {
    let mut tracked = params.clone();
    let mut leaves = Vec::new();
    tracked.visit_mut(&mut |name, t| {
        let leaf = tape.leaf(t);
        leaves.push((name, leaf.clone()));
        *t = leaf;
    });
    (tracked, leaves)
}

/// Seeded mini-batch training with cosine-annealed Adam. Fully deterministic
/// for a fixed `(config, initial params, data, hyper, seed)`.
pub fn train_loop(
    config: &ModelConfig,
    init: ModelParams,
    ds_train: &AssayDataset,
    ds_val: Option<&AssayDataset>,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<TrainOutcome> {
    if ds_train.is_empty() && hyper.steps > 0 {
        return Err(Error::Contract("train_loop: empty training set".into()));
    }
    if hyper.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let sched = LrSchedule::new(
        hyper.lr,
        if hyper.t_max == 0 {
            hyper.steps.max(1)
        } else {
            hyper.t_max
        },
        hyper.eta_min,
    )?;

    let mut params = init;
    let mut adam = AdamState::new();
    let mut log = String::from("step,lr,train_loss,val_overall_pearson\n");
    let mut best: Option<(f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..ds_train.len()).collect();
    let mut epoch = 0u64;
    let mut cursor = usize::MAX; // force an initial shuffle

    for step in 0..hyper.steps {
        if cursor >= order.len() || cursor + hyper.batch > order.len() {
            Rng::derive(seed, 0xBA7C4 ^ epoch).shuffle(&mut order);
            epoch += 1;
            cursor = 0;
        }
        let batch: Vec<usize> = order[cursor..(cursor + hyper.batch).min(order.len())].to_vec();
        cursor += hyper.batch;

        let lr = cosine_lr(step, &sched);
        let mut tape = Tape::new();
        let (tracked, leaves) = bind_params(&mut tape, &params);
        let mut total: Option<Tensor> = None;
        for &idx in &batch {
            let rec = &ds_train.records[idx];
            let (pred, _) = forward(&mut tape, &rec.onehot, &tracked, config, false)?;
            let nll = poisson_nll(&mut tape, &pred, &rec.targets)?;
            total = Some(match total {
                Some(t) => tape.add(&t, &nll),
                None => nll,
            });
        }
        let loss = tape.scale(&total.expect("nonempty batch"), 1.0 / batch.len() as f64);
        let loss_value = loss.item();
        if !loss_value.is_finite() {
            // abort with the last good parameters
            let best_params = best.as_ref().map(|(_, p)| p.clone());
            return Ok(TrainOutcome {
                best: best_params.unwrap_or_else(|| params.clone()),
                final_params: params,
                log_csv: log,
                best_val: best.map(|(v, _)| v),
                diverged: true,
            });
        }
        tape.backward(&loss);

        let mut grads: BTreeMap<String, Tensor> = leaves
            .iter()
            .map(|(name, leaf)| (name.clone(), tape.grad(leaf)))
            .collect();
        if let Some(max_norm) = hyper.clip_norm {
            let norm: f64 = grads
                .values()
                .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                for g in grads.values_mut() {
                    for v in g.data_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        adam_step(&mut params, &grads, &mut adam, lr)?;

        let step_no = step + 1;
        let val_field = match ds_val {
            Some(val)
                if !val.is_empty()
                    && ((hyper.eval_every > 0 && step_no % hyper.eval_every == 0)
                        || step_no == hyper.steps) =>
            {
                let report = evaluate(&params, config, val)?;
                match report.overall {
                    Some(overall) => {
                        if best.as_ref().is_none_or(|(b, _)| overall > *b) {
                            best = Some((overall, params.clone()));
                        }
                        overall.to_string()
                    }
                    None => String::new(),
                }
            }
            _ => String::new(),
        };
        log.push_str(&format!("{step_no},{lr},{loss_value},{val_field}\n"));
    }

    let best_val = best.as_ref().map(|(v, _)| *v);
    let best_params = best.map(|(_, p)| p).unwrap_or_else(|| params.clone());
    Ok(TrainOutcome {
        best: best_params,
        final_params: params,
        log_csv: log,
        best_val,
        diverged: false,
    })
}
