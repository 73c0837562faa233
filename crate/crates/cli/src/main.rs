use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use swin1d_cli::commands;
use swin1d_cli::exit_code;

/// Hierarchical shifted-window sequence model: dataset synthesis, training,
/// evaluation, prediction, attention export and complexity benchmarking.
#[derive(Parser)]
#[command(name = "swin1d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset container from a task description.
    Synth {
        /// Task description file ([task]/[motifs]/[signals] sections).
        #[arg(long)]
        spec: PathBuf,
        /// Number of records to generate.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output container path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.ckpt, train_log.csv, metrics.json.
    Train {
        /// Run configuration file ([model]/[train] sections).
        #[arg(long)]
        config: PathBuf,
        /// Training dataset container.
        #[arg(long)]
        data: PathBuf,
        /// Optional validation container (best checkpoint selection).
        #[arg(long)]
        val: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the [train] seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Config override, `section.key=value`; repeatable, wins over file.
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint; writes the metrics JSON and a per-track CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path (JSON); the CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-record predictions as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export (and optionally render) the attention atlas of one record.
    Attn {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset container to read the record from.
        #[arg(long)]
        input: PathBuf,
        /// Record index within the container.
        #[arg(long, default_value_t = 0)]
        record: usize,
        #[arg(long)]
        out: PathBuf,
        /// Render SVG heatmaps (per-layer grids).
        #[arg(long)]
        render: bool,
        /// Layer for the per-head panels (with --render).
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Compare instrumented multiply-add counts against the closed form.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated sequence lengths, e.g. 256,512,1024.
        #[arg(long, value_delimiter = ',')]
        lengths: Vec<usize>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Wall-clock repeats per row (median reported).
        #[arg(long)]
        repeats: Option<usize>,
        /// Run the forward passes in single precision.
        #[arg(long)]
        f32: bool,
        #[arg(long = "set")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            spec,
            count,
            seed,
            out,
        } => commands::cmd_synth(&spec, count, seed, &out),
        Command::Train {
            config,
            data,
            val,
            out,
            seed,
            set,
        } => commands::cmd_train(&config, &data, val.as_deref(), &out, seed, &set).map(|_| ()),
        Command::Eval {
            checkpoint,
            data,
            out,
        } => commands::cmd_eval(&checkpoint, &data, &out).map(|_| ()),
        Command::Predict {
            checkpoint,
            data,
            out,
        } => commands::cmd_predict(&checkpoint, &data, &out),
        Command::Attn {
            checkpoint,
            input,
            record,
            out,
            render,
            layer,
        } => commands::cmd_attn(&checkpoint, &input, record, &out, render, layer),
        Command::Bench {
            config,
            lengths,
            out,
            repeats,
            f32,
            set,
        } => commands::cmd_bench(&config, &lengths, &out, repeats, f32, &set).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
