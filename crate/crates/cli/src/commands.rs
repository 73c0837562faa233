//! Subcommand implementations. Each returns `Ok(())` on success; the binary
//! maps error kinds to the exit-code contract (2 usage/config, 3 I/O,
//! 4 numerical failure).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use swin1d_core::atlas::{
    diagonality_index, export_atlas, render_heatmap, render_layer_grid, HeatmapStyle,
};
use swin1d_core::data::{generate_synthetic, load_dataset, save_dataset, AssayDataset};
use swin1d_core::error::{Error, Result};
use swin1d_core::model::{
    build, count_madds, forward, load_checkpoint, save_checkpoint, ModelConfig,
};
use swin1d_core::swin::Swin1dConfig;
use swin1d_core::tensor::{DType, Rng, Tape, Tensor};
use swin1d_core::train::{evaluate, train_loop, MetricsReport, TrainOutcome};

use crate::config::{resolve_run_config, resolve_task_spec, RunConfig, Sections};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `synth`: generate a dataset container from a task description.
pub fn cmd_synth(spec_path: &Path, count: usize, seed: u64, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| {
        Error::Config(format!(
            "cannot read task spec {}: {e}",
            spec_path.display()
        ))
    })?;
    let sections = Sections::parse(&text)?;
    let spec = resolve_task_spec(&sections)?;
    let ds = generate_synthetic(&spec, count, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    save_dataset(out, &ds)?;
    // provenance echo next to the container
    let echo_path = out.with_extension("spec.txt");
    write_file(
        &echo_path,
        format!("{}\ncount = {count}\nseed = {seed}\n", sections.echo()),
    )?;
    println!(
        "wrote {} records (n={}, m={}, tracks={}) to {}",
        ds.len(),
        ds.n,
        ds.m,
        ds.tracks,
        out.display()
    );
    Ok(())
}

fn check_compat(config: &ModelConfig, ds: &AssayDataset, what: &str) -> Result<()> {
    if ds.n != config.n || ds.m != config.m || ds.tracks != config.tracks {
        return Err(Error::Config(format!(
            "{what} dataset (n={}, m={}, tracks={}) is incompatible with the model \
             (n={}, m={}, tracks={})",
            ds.n, ds.m, ds.tracks, config.n, config.m, config.tracks
        )));
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub metrics: MetricsReport,
}

/// `train`: fit a model and write checkpoint, log and metrics. A divergence
/// still writes the last good checkpoint before the numerical-failure exit.
pub fn cmd_train(
    config_path: &Path,
    data: &Path,
    val: Option<&Path>,
    out_dir: &Path,
    seed_override: Option<u64>,
    overrides: &[String],
) -> Result<TrainArtifacts> {
    let mut sections = Sections::load(config_path)?;
    sections.apply_overrides(overrides)?;
    let mut run: RunConfig = resolve_run_config(&sections)?;
    if let Some(seed) = seed_override {
        run.seed = seed;
    }

    let ds_train = load_dataset(data)?;
    check_compat(&run.model, &ds_train, "training")?;
    run.model.track_groups = ds_train.track_groups.clone();
    let ds_val = match val {
        Some(path) => {
            let v = load_dataset(path)?;
            check_compat(&run.model, &v, "validation")?;
            Some(v)
        }
        None => None,
    };

    ensure_dir(out_dir)?;
    write_file(
        &out_dir.join("config_echo.txt"),
        format!("{}\nseed = {}\n", run.echo, run.seed),
    )?;

    let init = build(&run.model, run.seed)?;
    let outcome = train_loop(
        &run.model,
        init,
        &ds_train,
        ds_val.as_ref(),
        &run.hyper,
        run.seed,
    )?;

    save_checkpoint(&out_dir.join("checkpoint.ckpt"), &run.model, &outcome.best)?;
    write_file(&out_dir.join("train_log.csv"), &outcome.log_csv)?;

    // final metrics of the retained checkpoint, on validation when present
    let metrics = match &ds_val {
        Some(v) => evaluate(&outcome.best, &run.model, v)?,
        None => evaluate(&outcome.best, &run.model, &ds_train)?,
    };
    write_file(&out_dir.join("metrics.json"), metrics.to_json())?;

    if outcome.diverged {
        return Err(Error::Numeric(format!(
            "training diverged; last good checkpoint written to {}",
            out_dir.join("checkpoint.ckpt").display()
        )));
    }
    println!(
        "trained {} steps; metrics written to {}",
        outcome.log_csv.lines().count().saturating_sub(1),
        out_dir.join("metrics.json").display()
    );
    Ok(TrainArtifacts { outcome, metrics })
}

/// `eval`: score a checkpoint on a dataset; writes the JSON report and a
/// per-track CSV next to it.
pub fn cmd_eval(checkpoint: &Path, data: &Path, out: &Path) -> Result<MetricsReport> {
    let (config, params) = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    check_compat(&config, &ds, "evaluation")?;
    let report = evaluate(&params, &config, &ds)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_file(out, report.to_json())?;
    let csv_path = out.with_extension("per_track.csv");
    write_file(&csv_path, report.to_csv())?;
    match report.overall {
        Some(r) => println!("overall pearson {r:.4} ({} tracks)", report.per_track.len()),
        None => println!("all {} tracks undefined", report.per_track.len()),
    }
    Ok(report)
}

/// `predict`: per-record predictions as CSV `record_id,bin,track,prediction,target`.
pub fn cmd_predict(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let (config, params) = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    check_compat(&config, &ds, "prediction")?;
    let mut csv = String::from("record_id,bin,track,prediction,target\n");
    for rec in &ds.records {
        let mut tape = Tape::inference();
        let (pred, _) = forward(&mut tape, &rec.onehot, &params, &config, false)?;
        for bin in 0..ds.m {
            for track in 0..ds.tracks {
                csv.push_str(&format!(
                    "{},{bin},{track},{},{}\n",
                    rec.id,
                    pred.at(bin, track),
                    rec.targets.at(bin, track)
                ));
            }
        }
    }
    write_file(out, csv)?;
    println!(
        "wrote predictions for {} records to {}",
        ds.len(),
        out.display()
    );
    Ok(())
}

/// `attn`: capture the attention atlas for one record, export it, write the
/// per-site diagonality CSV, and optionally render SVG heatmaps.
pub fn cmd_attn(
    checkpoint: &Path,
    input: &Path,
    record: usize,
    out_dir: &Path,
    render: bool,
    layer: Option<usize>,
) -> Result<()> {
    let (config, params) = load_checkpoint(checkpoint)?;
    let ds = load_dataset(input)?;
    check_compat(&config, &ds, "attention")?;
    let rec = ds.records.get(record).ok_or_else(|| {
        Error::Config(format!(
            "record index {record} out of range ({} records)",
            ds.len()
        ))
    })?;
    if let Some(l) = layer {
        if l == 0 || l > config.blocks.len() {
            return Err(Error::Config(format!(
                "layer {l} out of range (model has {} shifted-window blocks)",
                config.blocks.len()
            )));
        }
    }

    let mut tape = Tape::new();
    let (_, atlas) = forward(&mut tape, &rec.onehot, &params, &config, true)?;
    let atlas = atlas.expect("capture requested");

    ensure_dir(out_dir)?;
    write_file(&out_dir.join("config_echo.txt"), serde_json_echo(&config)?)?;
    export_atlas(&atlas, &out_dir.join("atlas"))?;

    // diagonality per (layer, slot, window, head), plus the layer trend
    let mut csv = String::from("layer,slot,window,head,diagonality\n");
    let mut per_layer: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in &atlas.records {
        for (head, weights) in r.weights.iter().enumerate() {
            let d = diagonality_index(weights, r.len);
            csv.push_str(&format!("{},{},{},{head},{d}\n", r.layer, r.slot, r.window));
            let e = per_layer.entry(r.layer).or_insert((0.0, 0));
            e.0 += d;
            e.1 += 1;
        }
    }
    write_file(&out_dir.join("diagonality.csv"), &csv)?;
    println!("layer-wise mean diagonality (reported, not asserted):");
    for (l, (sum, count)) in &per_layer {
        println!("  layer {l}: {:.4}", sum / *count as f64);
    }

    if render {
        let render_dir = out_dir.join("render");
        ensure_dir(&render_dir)?;
        let style = HeatmapStyle::default();
        for (idx, meta) in atlas.layers.iter().enumerate() {
            let l = idx + 1;
            let records: Vec<_> = atlas.records.iter().filter(|r| r.layer == l).collect();
            render_layer_grid(
                &records,
                meta.span,
                &style,
                &render_dir.join(format!("layer{l}.svg")),
            )?;
        }
        if let Some(l) = layer {
            let span = atlas.layers[l - 1].span;
            for r in atlas.records.iter().filter(|r| r.layer == l) {
                for head in 0..r.weights.len() {
                    let name = format!("layer{l}_slot{}_window{}_head{head}.svg", r.slot, r.window);
                    render_heatmap(r, head, span, &style, &render_dir.join(name))?;
                }
            }
        }
    }
    println!(
        "exported {} attention records to {}",
        atlas.records.len(),
        out_dir.join("atlas").display()
    );
    Ok(())
}

fn serde_json_echo(config: &ModelConfig) -> Result<String> {
    serde_json::to_string_pretty(config)
        .map_err(|e| Error::Config(format!("config echo serialization: {e}")))
}

/// Window-size mode for the complexity benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMode {
    /// Fixed window size from the config at every layer.
    Windowed,
    /// Window equal to the token count at every layer (dense attention).
    Dense,
}

impl BenchMode {
    fn label(&self) -> &'static str {
        match self {
            BenchMode::Windowed => "windowed",
            BenchMode::Dense => "dense",
        }
    }
}

pub struct BenchRow {
    pub n: usize,
    pub mode: &'static str,
    pub window: usize,
    pub analytic_total: u64,
    pub measured_total: u64,
    pub analytic_score: u64,
    pub measured_score: u64,
    pub wall_ms_median: f64,
}

/// `bench`: compare the instrumented multiply-add counter against the closed
/// form across sequence lengths, in both windowed and dense modes, and fit
/// the growth exponent of the attention-score term.
pub fn cmd_bench(
    config_path: &Path,
    lengths: &[usize],
    out: &Path,
    repeats: Option<usize>,
    f32_mode: bool,
    overrides: &[String],
) -> Result<Vec<BenchRow>> {
    let mut sections = Sections::load(config_path)?;
    sections.apply_overrides(overrides)?;
    let run = resolve_run_config(&sections)?;
    let repeats = repeats.unwrap_or(run.bench_repeats).max(1);
    if lengths.is_empty() {
        return Err(Error::Config("bench: no lengths given".into()));
    }

    let mut rows = Vec::new();
    for &mode in &[BenchMode::Windowed, BenchMode::Dense] {
        for &n in lengths {
            let config = bench_config(&run.model, n, mode)?;
            let params = build(&config, run.seed)?;
            let x = random_onehot(n, run.seed ^ n as u64);

            // one counted pass, then timed repeats
            let mut tape = Tape::inference();
            if f32_mode {
                tape = tape.with_dtype(DType::F32);
            }
            forward(&mut tape, &x, &params, &config, false)?;
            let measured = tape.madds();
            let analytic = count_madds(&config, n);
            if analytic != measured {
                return Err(Error::Numeric(format!(
                    "bench: analytic count {analytic:?} differs from instrumented {measured:?} \
                     at n={n} mode={}",
                    mode.label()
                )));
            }

            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let mut t = Tape::inference();
                if f32_mode {
                    t = t.with_dtype(DType::F32);
                }
                let start = Instant::now();
                forward(&mut t, &x, &params, &config, false)?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            times.sort_by(f64::total_cmp);
            let wall_ms_median = times[times.len() / 2];

            rows.push(BenchRow {
                n,
                mode: mode.label(),
                window: match mode {
                    BenchMode::Windowed => config.blocks[0].window,
                    BenchMode::Dense => n,
                },
                analytic_total: analytic.total(),
                measured_total: measured.total(),
                analytic_score: analytic.score_term(),
                measured_score: measured.score_term(),
                wall_ms_median,
            });
        }
    }

    let mut csv = String::from(
        "n,mode,window,analytic_madds,measured_madds,analytic_score_madds,\
         measured_score_madds,wall_ms_median\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            r.n,
            r.mode,
            r.window,
            r.analytic_total,
            r.measured_total,
            r.analytic_score,
            r.measured_score,
            r.wall_ms_median
        ));
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_file(out, &csv)?;
    let echo_path = out.with_extension("config_echo.txt");
    write_file(&echo_path, &run.echo)?;

    for mode in ["windowed", "dense"] {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| ((r.n as f64).ln(), (r.analytic_score as f64).ln()))
            .collect();
        if pts.len() >= 2 {
            println!(
                "{mode} attention-score growth exponent: {:.3}",
                fit_slope(&pts)
            );
        }
    }
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(rows)
}

/// Model variant used by the benchmark at length `n`.
fn bench_config(base: &ModelConfig, n: usize, mode: BenchMode) -> Result<ModelConfig> {
    let mut config = base.clone();
    config.n = n;
    if mode == BenchMode::Dense {
        let mut tokens = n;
        config.blocks = base
            .blocks
            .iter()
            .map(|b| {
                let dense = Swin1dConfig {
                    window: tokens.max(1),
                    shift: 0,
                    ..*b
                };
                tokens /= 2;
                dense
            })
            .collect();
    }
    config.layer_plan()?;
    Ok(config)
}

fn random_onehot(n: usize, seed: u64) -> Tensor {
    let mut rng = Rng::derive(seed, 0xB3);
    let mut data = vec![0.0; n * 4];
    for row in 0..n {
        data[row * 4 + rng.next_below(4)] = 1.0;
    }
    Tensor::from_vec(data, &[n, 4])
}

/// Least-squares slope of `y` on `x`.
fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}
