//! `key = value` configuration files with `[section]` headers, plus the
//! resolution of model/training/task structures from them.
//!
//! Grammar: lines are either `[section]`, `key = value`, blank, or a `#`
//! comment. Keys may repeat within a section (used for motif and weight
//! lists). Command-line `--set section.key=value` overrides replace every
//! earlier occurrence of the key.

use std::collections::BTreeMap;
use std::path::Path;

use swin1d_core::data::{InteractionRule, SyntheticTaskSpec};
use swin1d_core::error::{Error, Result};
use swin1d_core::model::{alpha_schedule, suggest_depth, ModelConfig};
use swin1d_core::swin::{default_shift, Swin1dConfig};
use swin1d_core::train::TrainHyper;

/// Parsed sections: ordered `(key, value)` pairs per section.
#[derive(Clone, Debug, Default)]
pub struct Sections {
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl Sections {
    pub fn parse(text: &str) -> Result<Sections> {
        let mut out = Sections::default();
        let mut current = String::from("");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Parse {
                    pos: lineno + 1,
                    msg: format!("unterminated section header {raw:?}"),
                })?;
                current = name.trim().to_string();
                out.sections.entry(current.clone()).or_default();
            } else if let Some((key, value)) = line.split_once('=') {
                out.sections
                    .entry(current.clone())
                    .or_default()
                    .push((key.trim().to_string(), value.trim().to_string()));
            } else {
                return Err(Error::Parse {
                    pos: lineno + 1,
                    msg: format!("expected `key = value` or `[section]`, got {raw:?}"),
                });
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Sections> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Sections::parse(&text)
    }

    /// Apply `--set section.key=value` overrides (replacing earlier values).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (place, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects section.key=value, got {item:?}"))
            })?;
            let (section, key) = place.split_once('.').ok_or_else(|| {
                Error::Config(format!("--set expects section.key=value, got {item:?}"))
            })?;
            let entries = self.sections.entry(section.trim().to_string()).or_default();
            entries.retain(|(k, _)| k != key.trim());
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(())
    }

    /// Last value of `key` in `section`.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|entries| {
            entries
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        })
    }

    /// Every value of `key` in `section`, in file order.
    pub fn get_all(&self, section: &str, key: &str) -> Vec<&str> {
        self.sections
            .get(section)
            .map(|entries| {
                entries
                    .iter()
                    .filter(|(k, _)| k == key)
                    .map(|(_, v)| v.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Canonical text form, written as the provenance echo next to outputs.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if !name.is_empty() {
                out.push_str(&format!("[{name}]\n"));
            }
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        }
        out
    }

    fn parse_value<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse {raw:?}"))),
        }
    }

    fn required<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.parse_value(section, key)?
            .ok_or_else(|| Error::Config(format!("[{section}] is missing required key {key}")))
    }

    fn or_default<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.parse_value(section, key)?.unwrap_or(default))
    }
}

fn parse_bool(sections: &Sections, section: &str, key: &str, default: bool) -> Result<bool> {
    match sections.get(section, key) {
        None => Ok(default),
        Some("true") | Some("on") | Some("1") => Ok(true),
        Some("false") | Some("off") | Some("0") => Ok(false),
        Some(other) => Err(Error::Config(format!(
            "[{section}] {key}: expected true/false, got {other:?}"
        ))),
    }
}

/// Resolved run configuration: model structure plus training
/// hyperparameters.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub hyper: TrainHyper,
    pub seed: u64,
    pub bench_repeats: usize,
    pub echo: String,
}

/// Resolve a [model]/[train]/[bench] config. Unset [model] `groups` are
/// filled with empty labels and replaced by the dataset's groups at train
/// time.
pub fn resolve_run_config(sections: &Sections) -> Result<RunConfig> {
    let n: usize = sections.required("model", "n")?;
    let m: usize = sections.required("model", "m")?;
    let tracks: usize = sections.required("model", "tracks")?;
    let d_in: usize = sections.or_default("model", "d_in", 4)?;
    let d0: usize = sections.or_default("model", "d0", 8)?;
    let width_cap: usize = sections.or_default("model", "width_cap", 32)?;
    let window: usize = sections.or_default("model", "window", 16)?;
    let heads: usize = sections.or_default("model", "heads", 4)?;
    let ff = parse_bool(sections, "model", "ff", true)?;
    let rel_bias = parse_bool(sections, "model", "rel_bias", true)?;
    let softplus_head = parse_bool(sections, "model", "softplus_head", true)?;
    let final_blocks: usize = sections.or_default("model", "final_blocks", 1)?;

    let depth = match sections.get("model", "blocks") {
        None | Some("auto") => suggest_depth(n, m),
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Config(format!("[model] blocks: cannot parse {raw:?}")))?,
    };
    let shift = match sections.get("model", "shift") {
        None | Some("auto") => default_shift(window),
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Config(format!("[model] shift: cannot parse {raw:?}")))?,
    };
    let track_groups: Vec<String> = match sections.get("model", "groups") {
        Some(raw) if !raw.is_empty() => raw.split(',').map(|s| s.trim().to_string()).collect(),
        _ => vec![String::new(); tracks],
    };

    let blocks = alpha_schedule(d0, depth, width_cap)
        .into_iter()
        .map(|alpha| Swin1dConfig {
            window,
            shift,
            alpha,
            heads,
            ff,
        })
        .collect();
    let model = ModelConfig {
        n,
        d_in,
        d0,
        m,
        tracks,
        blocks,
        final_blocks,
        rel_bias,
        softplus_head,
        track_groups,
    };
    model.layer_plan()?;

    let steps: u64 = sections.or_default("train", "steps", 1000)?;
    let t_max = match sections.get("train", "t_max") {
        None | Some("auto") => 0,
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Config(format!("[train] t_max: cannot parse {raw:?}")))?,
    };
    let clip: f64 = sections.or_default("train", "clip_norm", 1.0)?;
    let hyper = TrainHyper {
        lr: sections.or_default("train", "lr", 3e-4)?,
        batch: sections.or_default("train", "batch", 8)?,
        steps,
        t_max,
        eta_min: sections.or_default("train", "eta_min", 0.0)?,
        clip_norm: (clip > 0.0).then_some(clip),
        eval_every: sections.or_default("train", "eval_every", 50)?,
    };

    Ok(RunConfig {
        model,
        hyper,
        seed: sections.or_default("train", "seed", 1)?,
        bench_repeats: sections.or_default("bench", "repeats", 5)?,
        echo: sections.echo(),
    })
}

/// Resolve a [task]/[motifs]/[signals] synthetic task description.
pub fn resolve_task_spec(sections: &Sections) -> Result<SyntheticTaskSpec> {
    let tracks: usize = sections.required("task", "tracks")?;
    let motifs: Vec<String> = sections
        .get_all("motifs", "motif")
        .into_iter()
        .map(str::to_string)
        .collect();

    let mut weights = vec![vec![0.0; motifs.len()]; tracks];
    for raw in sections.get_all("signals", "weight") {
        let parts: Vec<&str> = raw.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "[signals] weight expects `track motif weight`, got {raw:?}"
            )));
        }
        let t: usize = parts[0]
            .parse()
            .map_err(|_| Error::Config(format!("weight track in {raw:?}")))?;
        let mi: usize = parts[1]
            .parse()
            .map_err(|_| Error::Config(format!("weight motif in {raw:?}")))?;
        let w: f64 = parts[2]
            .parse()
            .map_err(|_| Error::Config(format!("weight value in {raw:?}")))?;
        if t >= tracks || mi >= motifs.len() {
            return Err(Error::Config(format!(
                "weight {raw:?} out of range ({tracks} tracks, {} motifs)",
                motifs.len()
            )));
        }
        weights[t][mi] = w;
    }

    let mut interactions = Vec::new();
    for raw in sections.get_all("signals", "interaction") {
        let parts: Vec<&str> = raw.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "[signals] interaction expects `motif_a motif_b min_distance bonus`, got {raw:?}"
            )));
        }
        interactions.push(InteractionRule {
            motif_a: parts[0]
                .parse()
                .map_err(|_| Error::Config(format!("interaction motif_a in {raw:?}")))?,
            motif_b: parts[1]
                .parse()
                .map_err(|_| Error::Config(format!("interaction motif_b in {raw:?}")))?,
            min_distance: parts[2]
                .parse()
                .map_err(|_| Error::Config(format!("interaction distance in {raw:?}")))?,
            bonus: parts[3]
                .parse()
                .map_err(|_| Error::Config(format!("interaction bonus in {raw:?}")))?,
        });
    }

    let track_groups: Vec<String> = match sections.get("task", "groups") {
        Some(raw) if !raw.is_empty() => raw.split(',').map(|s| s.trim().to_string()).collect(),
        _ => vec!["unlabeled".to_string(); tracks],
    };

    let spec = SyntheticTaskSpec {
        n: sections.required("task", "n")?,
        m: sections.required("task", "m")?,
        tracks,
        bin_width: sections.required("task", "bin_width")?,
        motifs,
        weights,
        interactions,
        noise_rate: sections.or_default("task", "noise_rate", 0.0)?,
        plant_rate: sections.or_default("task", "plant_rate", 1.0)?,
        poisson_sample: parse_bool(sections, "task", "poisson_sample", false)?,
        track_groups,
    };
    spec.validate()?;
    Ok(spec)
}

/// The default task as a config file, for `synth --spec default` and the
/// docs.
pub fn default_task_text() -> String {
    let spec = SyntheticTaskSpec::desk_default();
    let mut out = String::from("[task]\n");
    out.push_str(&format!("n = {}\n", spec.n));
    out.push_str(&format!("m = {}\n", spec.m));
    out.push_str(&format!("tracks = {}\n", spec.tracks));
    out.push_str(&format!("bin_width = {}\n", spec.bin_width));
    out.push_str(&format!("noise_rate = {}\n", spec.noise_rate));
    out.push_str(&format!("plant_rate = {}\n", spec.plant_rate));
    out.push_str(&format!("poisson_sample = {}\n", spec.poisson_sample));
    out.push_str(&format!("groups = {}\n", spec.track_groups.join(",")));
    out.push_str("\n[motifs]\n");
    for m in &spec.motifs {
        out.push_str(&format!("motif = {m}\n"));
    }
    out.push_str("\n[signals]\n");
    for (t, row) in spec.weights.iter().enumerate() {
        for (mi, w) in row.iter().enumerate() {
            if *w != 0.0 {
                out.push_str(&format!("weight = {t} {mi} {w}\n"));
            }
        }
    }
    for rule in &spec.interactions {
        out.push_str(&format!(
            "interaction = {} {} {} {}\n",
            rule.motif_a, rule.motif_b, rule.min_distance, rule.bonus
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_overrides() {
        let text = "\n# comment\n[model]\nn = 64\nm = 4\ntracks = 2\n\n[train]\nsteps = 10\n";
        let mut s = Sections::parse(text).unwrap();
        assert_eq!(s.get("model", "n"), Some("64"));
        s.apply_overrides(&["model.n=128".into(), "train.lr=0.001".into()])
            .unwrap();
        assert_eq!(s.get("model", "n"), Some("128"));
        assert_eq!(s.get("train", "lr"), Some("0.001"));
        assert!(s.echo().contains("n = 128"));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Sections::parse("[model\nn = 4\n").is_err());
        assert!(Sections::parse("just words\n").is_err());
    }

    #[test]
    fn resolves_model_with_auto_depth() {
        let text = "[model]\nn = 64\nm = 4\ntracks = 2\nd0 = 4\nwindow = 4\nheads = 2\n";
        let cfg = resolve_run_config(&Sections::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.model.blocks.len(), 4); // 64 -> 4 needs 4 halvings
        assert_eq!(cfg.model.blocks[0].shift, 2);
        assert_eq!(cfg.hyper.lr, 3e-4);
        assert_eq!(cfg.hyper.batch, 8);
    }

    #[test]
    fn task_round_trips_through_default_text() {
        let text = default_task_text();
        let spec = resolve_task_spec(&Sections::parse(&text).unwrap()).unwrap();
        let expect = swin1d_core::data::SyntheticTaskSpec::desk_default();
        assert_eq!(spec.n, expect.n);
        assert_eq!(spec.motifs, expect.motifs);
        assert_eq!(spec.weights, expect.weights);
        assert_eq!(spec.interactions.len(), expect.interactions.len());
        assert_eq!(spec.track_groups, expect.track_groups);
    }
}
