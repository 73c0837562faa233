//! Serialization and rendering of captured attention maps.
//!
//! An export directory holds `manifest.json` plus `records.bin`. The binary
//! file concatenates records in manifest order, each as five u64 fields
//! (layer, slot, window, len, heads) followed by `heads` row-major `len x
//! len` double matrices, little-endian throughout (the same matrix layout as
//! the dataset container). The manifest stores per-layer bookkeeping (token
//! count, token span in bp, window size and count, head count) and a record
//! index with byte offsets.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionRecord;
use crate::binio;
use crate::error::{ContainerError, Error, Result};
use crate::model::{AtlasLayer, AttentionAtlas};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub layer: usize,
    pub slot: u8,
    pub window: usize,
    pub len: usize,
    pub heads: usize,
    /// Byte offset of this record inside `records.bin`.
    pub offset: u64,
}

/// On-disk description of one exported atlas.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtlasManifest {
    pub layers: Vec<AtlasLayer>,
    pub records: Vec<ManifestRecord>,
    pub records_file: String,
}

/// Write `manifest.json` and `records.bin` under `dir`.
pub fn export_atlas(atlas: &AttentionAtlas, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin_path = dir.join("records.bin");
    let file = File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut w = BufWriter::new(file);

    let mut index = Vec::with_capacity(atlas.records.len());
    let mut offset = 0u64;
    for rec in &atlas.records {
        index.push(ManifestRecord {
            layer: rec.layer,
            slot: rec.slot,
            window: rec.window,
            len: rec.len,
            heads: rec.weights.len(),
            offset,
        });
        let io = |e| Error::io(&bin_path, e);
        binio::write_u64(&mut w, rec.layer as u64).map_err(io)?;
        binio::write_u64(&mut w, rec.slot as u64).map_err(io)?;
        binio::write_u64(&mut w, rec.window as u64).map_err(io)?;
        binio::write_u64(&mut w, rec.len as u64).map_err(io)?;
        binio::write_u64(&mut w, rec.weights.len() as u64).map_err(io)?;
        for head in &rec.weights {
            binio::write_f64s(&mut w, head).map_err(io)?;
        }
        offset += 5 * 8 + (rec.weights.len() * rec.len * rec.len * 8) as u64;
    }
    w.flush().map_err(|e| Error::io(&bin_path, e))?;

    let manifest = AtlasManifest {
        layers: atlas.layers.clone(),
        records: index,
        records_file: "records.bin".into(),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
}

/// Load an exported atlas back, verifying index consistency.
pub fn load_atlas(dir: &Path) -> Result<AttentionAtlas> {
    let manifest_path = dir.join("manifest.json");
    let json = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: AtlasManifest = serde_json::from_str(&json)
        .map_err(|e| ContainerError::Header(format!("manifest: {e}")))?;

    let bin_path = dir.join(&manifest.records_file);
    let mut bytes = Vec::new();
    File::open(&bin_path)
        .map_err(|e| Error::io(&bin_path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&bin_path, e))?;

    let mut records = Vec::with_capacity(manifest.records.len());
    for entry in &manifest.records {
        if entry.offset as usize > bytes.len() {
            return Err(ContainerError::Truncated {
                needed: entry.offset,
                available: bytes.len() as u64,
            }
            .into());
        }
        let mut cursor = &bytes[entry.offset as usize..];
        let layer = binio::read_u64(&mut cursor)? as usize;
        let slot = binio::read_u64(&mut cursor)? as u8;
        let window = binio::read_u64(&mut cursor)? as usize;
        let len = binio::read_u64(&mut cursor)? as usize;
        let heads = binio::read_u64(&mut cursor)? as usize;
        if layer != entry.layer
            || slot != entry.slot
            || window != entry.window
            || len != entry.len
            || heads != entry.heads
        {
            return Err(ContainerError::Consistency(format!(
                "record at offset {} disagrees with the manifest index",
                entry.offset
            ))
            .into());
        }
        let mut weights = Vec::with_capacity(heads);
        for _ in 0..heads {
            weights.push(binio::read_f64s(&mut cursor, len * len)?);
        }
        records.push(AttentionRecord {
            layer,
            slot,
            window,
            len,
            weights,
        });
    }
    Ok(AttentionAtlas {
        layers: manifest.layers,
        records,
    })
}

/// How cell intensities are derived from attention weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Use the row-stochastic weights as-is.
    PerRow,
    /// Divide by the matrix maximum so the strongest cell saturates.
    GlobalMax,
}

impl Normalization {
    fn label(&self) -> &'static str {
        match self {
            Normalization::PerRow => "per-row",
            Normalization::GlobalMax => "global-max",
        }
    }
}

/// Rendering style. The color ramp is a two-stop linear interpolation from
/// white to a dark blue; intensity `t` maps each channel as
/// `round(c0 + (c1 - c0) * t)`.
#[derive(Clone, Copy, Debug)]
pub struct HeatmapStyle {
    pub cell_px: usize,
    pub normalization: Normalization,
}

impl Default for HeatmapStyle {
    fn default() -> Self {
        HeatmapStyle {
            cell_px: 12,
            normalization: Normalization::PerRow,
        }
    }
}

/// Ramp stops: white to #0D47A1.
const RAMP_LO: [u8; 3] = [255, 255, 255];
const RAMP_HI: [u8; 3] = [13, 71, 161];

fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let lo = RAMP_LO[c] as f64;
        let hi = RAMP_HI[c] as f64;
        out[c] = (lo + (hi - lo) * t).round() as u8;
    }
    out
}

/// Recover the intensity encoded by [`ramp`] from the red channel, for tests
/// and tooling that parse emitted files.
pub fn ramp_intensity_from_red(red: u8) -> f64 {
    (RAMP_LO[0] as f64 - red as f64) / (RAMP_LO[0] as f64 - RAMP_HI[0] as f64)
}

/// Render one head matrix of a record as an SVG heatmap. Cells are emitted
/// row-major, row `i` top to bottom and column `j` left to right; both axes
/// are annotated in input base pairs (`span_bp` per token). The
/// normalization mode is recorded in the file's metadata element.
pub fn render_heatmap(
    record: &AttentionRecord,
    head: usize,
    span_bp: usize,
    style: &HeatmapStyle,
    path: &Path,
) -> Result<()> {
    let weights = record.weights.get(head).ok_or_else(|| {
        Error::Contract(format!(
            "record has {} heads, requested {head}",
            record.weights.len()
        ))
    })?;
    let svg = heatmap_svg(
        weights,
        record.len,
        span_bp,
        style,
        &format!(
            "layer {} slot {} window {} head {head}",
            record.layer, record.slot, record.window
        ),
    );
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Tile every (slot, window, head) matrix of one layer into a single SVG
/// grid: rows are (slot, window) sites, columns are heads.
pub fn render_layer_grid(
    records: &[&AttentionRecord],
    span_bp: usize,
    style: &HeatmapStyle,
    path: &Path,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Contract("render_layer_grid: no records".into()));
    }
    let heads = records[0].weights.len();
    let max_len = records.iter().map(|r| r.len).max().unwrap();
    let cell = style.cell_px;
    let pad = 2 * cell;
    let tile_w = max_len * cell + pad;
    let tile_h = max_len * cell + pad;
    let width = heads * tile_w + pad;
    let height = records.len() * tile_h + pad + cell;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n\
         <metadata>normalization={}; span_bp={span_bp}</metadata>\n",
        style.normalization.label()
    ));
    for (row, rec) in records.iter().enumerate() {
        for head in 0..heads {
            let ox = pad / 2 + head * tile_w;
            let oy = pad / 2 + row * tile_h;
            svg.push_str(&format!(
                "<text x=\"{ox}\" y=\"{}\" font-size=\"{}\">L{} s{} w{} h{head}</text>\n",
                oy + max_len * cell + cell,
                cell,
                rec.layer,
                rec.slot,
                rec.window
            ));
            push_cells(&mut svg, &rec.weights[head], rec.len, style, ox, oy);
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn normalize(weights: &[f64], mode: Normalization) -> Vec<f64> {
    match mode {
        Normalization::PerRow => weights.to_vec(),
        Normalization::GlobalMax => {
            let mx = weights.iter().cloned().fold(0.0f64, f64::max);
            if mx <= 0.0 {
                weights.to_vec()
            } else {
                weights.iter().map(|w| w / mx).collect()
            }
        }
    }
}

fn push_cells(
    svg: &mut String,
    weights: &[f64],
    len: usize,
    style: &HeatmapStyle,
    ox: usize,
    oy: usize,
) {
    let cell = style.cell_px;
    let values = normalize(weights, style.normalization);
    for i in 0..len {
        for j in 0..len {
            let [r, g, b] = ramp(values[i * len + j]);
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({r},{g},{b})\"/>\n",
                ox + j * cell,
                oy + i * cell,
            ));
        }
    }
}

fn heatmap_svg(
    weights: &[f64],
    len: usize,
    span_bp: usize,
    style: &HeatmapStyle,
    title: &str,
) -> String {
    let cell = style.cell_px;
    let margin = 3 * cell;
    let width = len * cell + margin + cell;
    let height = len * cell + margin + cell;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n\
         <metadata>normalization={}; span_bp={span_bp}; title={title}</metadata>\n",
        style.normalization.label()
    ));
    push_cells(&mut svg, weights, len, style, margin, cell);
    // axis ticks in base pairs at the first, middle and last token
    for &tok in BTreeSet::from([0usize, len / 2, len - 1]).iter() {
        let bp = tok * span_bp;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"{cell}\">{bp}bp</text>\n",
            margin + tok * cell,
            cell + len * cell + cell,
        ));
        svg.push_str(&format!(
            "<text x=\"0\" y=\"{}\" font-size=\"{cell}\">{bp}bp</text>\n",
            cell + tok * cell + cell,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Diagonal concentration of a square attention matrix:
/// `sum w_ij (1 - |i-j|/(L-1)) / sum w_ij`, defined as 1 for `L = 1`.
/// Equals 1 iff all mass sits on the diagonal, and tends to 0 as mass moves
/// to the far corners.
pub fn diagonality_index(weights: &[f64], len: usize) -> f64 {
    assert_eq!(weights.len(), len * len, "diagonality_index: not square");
    if len <= 1 {
        return 1.0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..len {
        for j in 0..len {
            let w = weights[i * len + j];
            num += w * (1.0 - (i as f64 - j as f64).abs() / (len as f64 - 1.0));
            den += w;
        }
    }
    if den == 0.0 {
        return 1.0;
    }
    num / den
}
