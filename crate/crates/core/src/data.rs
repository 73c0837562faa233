//! Dataset construction: one-hot DNA ingestion, read binning, synthetic task
//! generation, the on-disk container, and train/val/test splits.
//!
//! # Container format
//!
//! A dataset file is a text header followed by a binary payload:
//!
//! ```text
//! SWIN1D-DATASET v1
//! n = 512
//! m = 8
//! tracks = 2
//! bin_width = 64
//! records = 128
//! groups = DNase,CAGE
//! payload_bytes = 1059328
//! checksum = 0x8f3a...            (FNV-1a 64 of the payload)
//! ---
//! <payload>
//! ```
//!
//! The payload holds, per record: the id (u64 length + UTF-8), a per-record
//! echo of `n`, `m` and `tracks` (u64 each, checked against the header on
//! load), then the one-hot matrix (`n x 4` doubles, row-major, little-endian)
//! and the targets (`m x tracks` doubles).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::error::{ContainerError, Error, Result};
use crate::tensor::{Rng, Tensor};

const DATASET_MAGIC: &str = "SWIN1D-DATASET";
const DATASET_VERSION: u64 = 1;

/// One training example: a one-hot DNA segment and its binned track targets.
#[derive(Clone, Debug)]
pub struct AssayRecord {
    pub id: String,
    /// `n x 4` one-hot matrix over A, C, G, T.
    pub onehot: Tensor,
    /// `m x tracks` non-negative bin values.
    pub targets: Tensor,
}

/// A collection of records with shared shape and track metadata.
#[derive(Clone, Debug)]
pub struct AssayDataset {
    pub n: usize,
    pub m: usize,
    pub tracks: usize,
    pub bin_width: usize,
    /// Group label per track (DNase/ChIP/CAGE-style, extensible).
    pub track_groups: Vec<String>,
    pub records: Vec<AssayRecord>,
}

impl AssayDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn with_records(&self, records: Vec<AssayRecord>) -> AssayDataset {
        AssayDataset {
            n: self.n,
            m: self.m,
            tracks: self.tracks,
            bin_width: self.bin_width,
            track_groups: self.track_groups.clone(),
            records,
        }
    }
}

/// One-hot encode a DNA string. `A`, `C`, `G`, `T` (case-insensitive) map to
/// unit vectors in that fixed order; `N` maps to a uniform 0.25 row so every
/// row stays stochastic.
pub fn one_hot_encode(seq: &str) -> Result<Tensor> {
    let n = seq.len();
    let mut data = vec![0.0; n * 4];
    for (pos, ch) in seq.bytes().enumerate() {
        match ch.to_ascii_uppercase() {
            b'A' => data[pos * 4] = 1.0,
            b'C' => data[pos * 4 + 1] = 1.0,
            b'G' => data[pos * 4 + 2] = 1.0,
            b'T' => data[pos * 4 + 3] = 1.0,
            b'N' => data[pos * 4..pos * 4 + 4].fill(0.25),
            other => {
                return Err(Error::Parse {
                    pos,
                    msg: format!("invalid base {:?}", other as char),
                })
            }
        }
    }
    Ok(Tensor::from_vec(data, &[n, 4]))
}

/// Recover the base string from an exact one-hot matrix (uniform rows decode
/// to `N`). Returns `None` for rows that are neither.
pub fn onehot_to_sequence(onehot: &Tensor) -> Option<String> {
    let n = onehot.rows();
    let mut out = String::with_capacity(n);
    for r in 0..n {
        let row: Vec<f64> = (0..4).map(|c| onehot.at(r, c)).collect();
        if row == [0.25, 0.25, 0.25, 0.25] {
            out.push('N');
            continue;
        }
        let mut found = None;
        for (c, base) in b"ACGT".iter().enumerate() {
            if row[c] == 1.0 {
                found = Some(*base as char);
            } else if row[c] != 0.0 {
                return None;
            }
        }
        out.push(found?);
    }
    Some(out)
}

/// Average per-bp values into `m` bins of `bin_width`, centered in the
/// segment (mirroring the model's centered crop).
pub fn bin_reads(per_bp: &[f64], bin_width: usize, m: usize) -> Result<Vec<f64>> {
    let n = per_bp.len();
    let covered = m * bin_width;
    if covered > n {
        return Err(Error::Contract(format!(
            "bin_reads: {m} bins of {bin_width} bp need {covered} bp, segment has {n}"
        )));
    }
    let offset = (n - covered) / 2;
    Ok((0..m)
        .map(|j| {
            let start = offset + j * bin_width;
            per_bp[start..start + bin_width].iter().sum::<f64>() / bin_width as f64
        })
        .collect())
}

/// A long-range interaction: an occurrence of `motif_a` with at least one
/// occurrence of `motif_b` more than `min_distance` bp away (start-to-start)
/// gains `bonus` over its footprint, and symmetrically for `motif_b`. The
/// bonus applies only to tracks that weight either motif of the pair, so a
/// purely local track stays local.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRule {
    pub motif_a: usize,
    pub motif_b: usize,
    pub min_distance: usize,
    pub bonus: f64,
}

/// Description of a synthetic prediction task.
///
/// Per-bp ground truth for track `t` is
/// `noise_rate + sum of weights[t][motif] over occurrences covering the
/// position + sum of interaction bonuses covering it`. Targets are the
/// centered bin averages of that rate, optionally Poisson-sampled.
#[derive(Clone, Debug)]
pub struct SyntheticTaskSpec {
    pub n: usize,
    pub m: usize,
    pub tracks: usize,
    pub bin_width: usize,
    /// Planted patterns, each 4..=8 bp over ACGT.
    pub motifs: Vec<String>,
    /// `tracks x motifs` weight matrix.
    pub weights: Vec<Vec<f64>>,
    pub interactions: Vec<InteractionRule>,
    /// Constant background rate added to every position of every track.
    pub noise_rate: f64,
    /// Mean number of planted copies per motif per record (Poisson).
    pub plant_rate: f64,
    /// Sample each target from a Poisson with the binned rate as mean. The
    /// exact-label oracle only applies when this is off.
    pub poisson_sample: bool,
    pub track_groups: Vec<String>,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.tracks == 0 || self.bin_width == 0 {
            return Err(Error::Config(
                "n, m, tracks, bin_width must be positive".into(),
            ));
        }
        if self.m * self.bin_width > self.n {
            return Err(Error::Config(format!(
                "{} bins of {} bp exceed segment length {}",
                self.m, self.bin_width, self.n
            )));
        }
        for (i, motif) in self.motifs.iter().enumerate() {
            if !(4..=8).contains(&motif.len()) {
                return Err(Error::Config(format!(
                    "motif {i} has length {}, expected 4..=8",
                    motif.len()
                )));
            }
            if motif.len() > self.n {
                return Err(Error::Contract(format!(
                    "motif {i} is longer than the segment"
                )));
            }
            if !motif
                .bytes()
                .all(|b| matches!(b, b'A' | b'C' | b'G' | b'T'))
            {
                return Err(Error::Config(format!("motif {i} must be over ACGT")));
            }
        }
        if self.weights.len() != self.tracks
            || self
                .weights
                .iter()
                .any(|row| row.len() != self.motifs.len())
        {
            return Err(Error::Config(format!(
                "weight matrix must be {} x {}",
                self.tracks,
                self.motifs.len()
            )));
        }
        for (i, rule) in self.interactions.iter().enumerate() {
            if rule.motif_a >= self.motifs.len()
                || rule.motif_b >= self.motifs.len()
                || rule.motif_a == rule.motif_b
            {
                return Err(Error::Config(format!(
                    "interaction {i} references invalid motifs"
                )));
            }
        }
        // Long-range requirement: some pair must force signal across bins.
        if !self.interactions.is_empty()
            && !self
                .interactions
                .iter()
                .any(|r| r.min_distance > self.bin_width)
        {
            return Err(Error::Config(
                "at least one interaction must have min_distance > bin_width".into(),
            ));
        }
        if self.track_groups.len() != self.tracks {
            return Err(Error::Config(format!(
                "{} group labels for {} tracks",
                self.track_groups.len(),
                self.tracks
            )));
        }
        if self.track_groups.iter().any(|g| g.contains(',')) {
            return Err(Error::Config("group labels must not contain commas".into()));
        }
        Ok(())
    }

    /// The default desk-scale task: one track driven by a local motif, one
    /// by a long-range motif pair. All weights are dyadic so rate sums are
    /// exact in any order.
    pub fn desk_default() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            n: 512,
            m: 8,
            tracks: 2,
            bin_width: 64,
            motifs: vec!["CCCCCC".into(), "GGGGGG".into(), "TTTTTT".into()],
            weights: vec![vec![4.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]],
            interactions: vec![InteractionRule {
                motif_a: 1,
                motif_b: 2,
                min_distance: 128,
                bonus: 4.0,
            }],
            noise_rate: 0.0,
            plant_rate: 4.0,
            poisson_sample: false,
            track_groups: vec!["DNase".into(), "CAGE".into()],
        }
    }
}

/// All start positions where `motif` occurs in `seq`.
fn occurrences(seq: &[u8], motif: &[u8]) -> Vec<usize> {
    if motif.len() > seq.len() {
        return Vec::new();
    }
    (0..=seq.len() - motif.len())
        .filter(|&s| &seq[s..s + motif.len()] == motif)
        .collect()
}

/// Per-bp ground-truth rate for every track, by scanning motif occurrences
/// and interaction pairs of the final sequence.
pub fn ground_truth_rate(spec: &SyntheticTaskSpec, seq: &[u8]) -> Vec<Vec<f64>> {
    let n = seq.len();
    let occ: Vec<Vec<usize>> = spec
        .motifs
        .iter()
        .map(|motif| occurrences(seq, motif.as_bytes()))
        .collect();

    let mut rate = vec![vec![spec.noise_rate; n]; spec.tracks];
    for (mi, positions) in occ.iter().enumerate() {
        let len = spec.motifs[mi].len();
        for &s in positions {
            for track in 0..spec.tracks {
                let w = spec.weights[track][mi];
                if w != 0.0 {
                    for p in s..s + len {
                        rate[track][p] += w;
                    }
                }
            }
        }
    }
    for rule in &spec.interactions {
        let affected: Vec<usize> = (0..spec.tracks)
            .filter(|&t| {
                spec.weights[t][rule.motif_a] != 0.0 || spec.weights[t][rule.motif_b] != 0.0
            })
            .collect();
        for (this, other) in [(rule.motif_a, rule.motif_b), (rule.motif_b, rule.motif_a)] {
            let len = spec.motifs[this].len();
            for &s in &occ[this] {
                let qualified = occ[other]
                    .iter()
                    .any(|&partner| s.abs_diff(partner) > rule.min_distance);
                if qualified {
                    for &t in &affected {
                        for p in s..s + len {
                            rate[t][p] += rule.bonus;
                        }
                    }
                }
            }
        }
    }
    rate
}

/// Generate `count` records. Record `i` is a pure function of
/// `(spec, seed, i)`: background bases are uniform, each motif is planted a
/// Poisson(`plant_rate`) number of times at uniform positions, and targets
/// are the binned ground-truth rate of the final sequence.
pub fn generate_synthetic(
    spec: &SyntheticTaskSpec,
    count: usize,
    seed: u64,
) -> Result<AssayDataset> {
    spec.validate()?;
    const BASES: [u8; 4] = *b"ACGT";
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = Rng::derive(seed, i as u64);
        let mut seq: Vec<u8> = (0..spec.n).map(|_| BASES[rng.next_below(4)]).collect();
        for motif in &spec.motifs {
            let copies = rng.next_poisson(spec.plant_rate);
            for _ in 0..copies {
                let start = rng.next_below(spec.n - motif.len() + 1);
                seq[start..start + motif.len()].copy_from_slice(motif.as_bytes());
            }
        }
        let rate = ground_truth_rate(spec, &seq);
        let mut targets = vec![0.0; spec.m * spec.tracks];
        for (track, per_bp) in rate.iter().enumerate() {
            let bins = bin_reads(per_bp, spec.bin_width, spec.m)?;
            for (j, v) in bins.into_iter().enumerate() {
                targets[j * spec.tracks + track] = if spec.poisson_sample {
                    rng.next_poisson(v) as f64
                } else {
                    v
                };
            }
        }
        records.push(AssayRecord {
            id: format!("synth-{i:06}"),
            onehot: one_hot_encode(std::str::from_utf8(&seq).unwrap())?,
            targets: Tensor::from_vec(targets, &[spec.m, spec.tracks]),
        });
    }
    Ok(AssayDataset {
        n: spec.n,
        m: spec.m,
        tracks: spec.tracks,
        bin_width: spec.bin_width,
        track_groups: spec.track_groups.clone(),
        records,
    })
}

// ── Container I/O ───────────────────────────────────────────────────

pub fn save_dataset(path: &Path, ds: &AssayDataset) -> Result<()> {
    let mut payload = Vec::new();
    for rec in &ds.records {
        binio::write_str(&mut payload, &rec.id).map_err(|e| Error::io(path, e))?;
        binio::write_u64(&mut payload, ds.n as u64).map_err(|e| Error::io(path, e))?;
        binio::write_u64(&mut payload, ds.m as u64).map_err(|e| Error::io(path, e))?;
        binio::write_u64(&mut payload, ds.tracks as u64).map_err(|e| Error::io(path, e))?;
        binio::write_f64s(&mut payload, rec.onehot.data()).map_err(|e| Error::io(path, e))?;
        binio::write_f64s(&mut payload, rec.targets.data()).map_err(|e| Error::io(path, e))?;
    }
    let checksum = binio::fnv1a64(&payload);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "{DATASET_MAGIC} v{DATASET_VERSION}\n\
         n = {}\n\
         m = {}\n\
         tracks = {}\n\
         bin_width = {}\n\
         records = {}\n\
         groups = {}\n\
         payload_bytes = {}\n\
         checksum = {checksum:#018x}\n\
         ---\n",
        ds.n,
        ds.m,
        ds.tracks,
        ds.bin_width,
        ds.records.len(),
        ds.track_groups.join(","),
        payload.len(),
    );
    w.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&payload).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<AssayDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    let sep = b"\n---\n";
    let header_end = bytes
        .windows(sep.len())
        .position(|w| w == sep)
        .ok_or_else(|| ContainerError::Header("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| ContainerError::Header("header is not UTF-8".into()))?;
    let payload = &bytes[header_end + sep.len()..];

    let mut lines = header.lines();
    let first = lines.next().unwrap_or_default();
    let (magic, version_str) = first.split_once(" v").unwrap_or((first, ""));
    if magic != DATASET_MAGIC {
        return Err(ContainerError::Magic {
            expected: DATASET_MAGIC.into(),
            found: magic.into(),
        }
        .into());
    }
    let version: u64 = version_str
        .parse()
        .map_err(|_| ContainerError::Header(format!("bad version {version_str:?}")))?;
    if version != DATASET_VERSION {
        return Err(ContainerError::Version {
            expected: DATASET_VERSION,
            found: version,
        }
        .into());
    }

    let mut fields = std::collections::BTreeMap::new();
    for line in lines {
        if let Some((key, value)) = line.split_once('=') {
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    let get = |key: &str| -> std::result::Result<String, ContainerError> {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| ContainerError::Header(format!("missing field {key}")))
    };
    let num = |key: &str| -> std::result::Result<usize, ContainerError> {
        get(key)?
            .parse()
            .map_err(|_| ContainerError::Header(format!("field {key} is not a number")))
    };

    let n = num("n")?;
    let m = num("m")?;
    let tracks = num("tracks")?;
    let bin_width = num("bin_width")?;
    let count = num("records")?;
    let groups_raw = get("groups")?;
    let track_groups: Vec<String> = if groups_raw.is_empty() {
        Vec::new()
    } else {
        groups_raw.split(',').map(str::to_string).collect()
    };
    if track_groups.len() != tracks {
        return Err(ContainerError::Consistency(format!(
            "{} group labels for {tracks} tracks",
            track_groups.len()
        ))
        .into());
    }
    let payload_bytes = num("payload_bytes")? as u64;
    let declared_checksum = u64::from_str_radix(get("checksum")?.trim_start_matches("0x"), 16)
        .map_err(|_| ContainerError::Header("checksum is not hex".into()))?;

    if (payload.len() as u64) < payload_bytes {
        return Err(ContainerError::Truncated {
            needed: payload_bytes,
            available: payload.len() as u64,
        }
        .into());
    }
    if payload.len() as u64 > payload_bytes {
        return Err(ContainerError::Consistency(format!(
            "{} trailing bytes after declared payload",
            payload.len() as u64 - payload_bytes
        ))
        .into());
    }
    let computed = binio::fnv1a64(payload);
    if computed != declared_checksum {
        return Err(ContainerError::Checksum {
            declared: declared_checksum,
            computed,
        }
        .into());
    }

    let mut cursor = payload;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let id = binio::read_str(&mut cursor, 1 << 16)?;
        let rec_n = binio::read_u64(&mut cursor)? as usize;
        let rec_m = binio::read_u64(&mut cursor)? as usize;
        let rec_tracks = binio::read_u64(&mut cursor)? as usize;
        if rec_n != n || rec_m != m || rec_tracks != tracks {
            return Err(ContainerError::Consistency(format!(
                "record {i} declares n={rec_n} m={rec_m} tracks={rec_tracks}, \
                 header says n={n} m={m} tracks={tracks}"
            ))
            .into());
        }
        let onehot = binio::read_f64s(&mut cursor, n * 4)?;
        let targets = binio::read_f64s(&mut cursor, m * tracks)?;
        records.push(AssayRecord {
            id,
            onehot: Tensor::from_vec(onehot, &[n, 4]),
            targets: Tensor::from_vec(targets, &[m, tracks]),
        });
    }
    if !cursor.is_empty() {
        return Err(ContainerError::Consistency(format!(
            "{} unread payload bytes after {count} records",
            cursor.len()
        ))
        .into());
    }
    Ok(AssayDataset {
        n,
        m,
        tracks,
        bin_width,
        track_groups,
        records,
    })
}

// ── Text ingestion ──────────────────────────────────────────────────

/// Read sequences from plain text, one record per line: `id<TAB>sequence`.
pub fn read_sequence_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, seq) = line.split_once('\t').ok_or_else(|| Error::Parse {
            pos: lineno,
            msg: "expected `id<TAB>sequence`".into(),
        })?;
        let onehot = one_hot_encode(seq.trim()).map_err(|e| match e {
            Error::Parse { pos, msg } => Error::Parse {
                pos,
                msg: format!("line {}: {msg}", lineno + 1),
            },
            other => other,
        })?;
        out.push((id.to_string(), onehot));
    }
    Ok(out)
}

/// Read targets from CSV lines `record_id,track,bin,value`, returning one
/// zero-initialized `m x tracks` tensor per id in `ids` with the listed
/// entries filled in.
pub fn read_targets_csv(
    path: &Path,
    ids: &[String],
    m: usize,
    tracks: usize,
) -> Result<Vec<Tensor>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let index: std::collections::BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut out = vec![vec![0.0; m * tracks]; ids.len()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                pos: lineno,
                msg: format!("expected 4 fields, got {}", parts.len()),
            });
        }
        let rec = *index.get(parts[0].trim()).ok_or_else(|| Error::Parse {
            pos: lineno,
            msg: format!("unknown record id {:?}", parts[0]),
        })?;
        let track: usize = parts[1].trim().parse().map_err(|_| Error::Parse {
            pos: lineno,
            msg: "track is not an integer".into(),
        })?;
        let bin: usize = parts[2].trim().parse().map_err(|_| Error::Parse {
            pos: lineno,
            msg: "bin is not an integer".into(),
        })?;
        let value: f64 = parts[3].trim().parse().map_err(|_| Error::Parse {
            pos: lineno,
            msg: "value is not a number".into(),
        })?;
        if track >= tracks || bin >= m {
            return Err(Error::Parse {
                pos: lineno,
                msg: format!("track {track} or bin {bin} out of range"),
            });
        }
        out[rec][bin * tracks + track] = value;
    }
    Ok(out
        .into_iter()
        .map(|data| Tensor::from_vec(data, &[m, tracks]))
        .collect())
}

// ── Splits ──────────────────────────────────────────────────────────

/// Records per split block. Blockwise assignment keeps overlapping genomic
/// neighborhoods in the same split.
pub const SPLIT_BLOCK: usize = 16;

/// Split into train/val/test by seeded shuffle of 16-record blocks and
/// cumulative-rounded assignment. A split with a positive fraction must end
/// up nonempty; zero fractions yield empty splits.
pub fn split_dataset(
    ds: &AssayDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(AssayDataset, AssayDataset, AssayDataset)> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || ((ft + fv + fe) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "fractions must be non-negative and sum to 1, got ({ft}, {fv}, {fe})"
        )));
    }
    let blocks = ds.len().div_ceil(SPLIT_BLOCK);
    let mut order: Vec<usize> = (0..blocks).collect();
    Rng::derive(seed, 0x73706C6974).shuffle(&mut order);

    let c1 = ((ft * blocks as f64) + 0.5).floor() as usize;
    let c2 = (((ft + fv) * blocks as f64) + 0.5).floor() as usize;
    let (c1, c2) = (c1.min(blocks), c2.min(blocks).max(c1));

    let mut parts: [Vec<AssayRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (rank, &block) in order.iter().enumerate() {
        let part = if rank < c1 {
            0
        } else if rank < c2 {
            1
        } else {
            2
        };
        let start = block * SPLIT_BLOCK;
        let end = (start + SPLIT_BLOCK).min(ds.len());
        parts[part].extend(ds.records[start..end].iter().cloned());
    }
    let [train, val, test] = parts;
    for (frac, part, name) in [
        (ft, &train, "train"),
        (fv, &val, "val"),
        (fe, &test, "test"),
    ] {
        if frac > 0.0 && part.is_empty() {
            return Err(Error::Config(format!(
                "{name} split has fraction {frac} but received no records"
            )));
        }
    }
    Ok((
        ds.with_records(train),
        ds.with_records(val),
        ds.with_records(test),
    ))
}

/// Independent reference labeler for synthetic tasks, used by the
/// verification suite. Deliberately written against the task *definition*
/// rather than sharing the generator's occurrence-list code: motif hits are
/// found by inline byte comparison into indicator arrays, and rates are
/// accumulated position by position.
pub mod reference {
    use super::{bin_reads, SyntheticTaskSpec};

    fn match_indicator(seq: &[u8], motif: &[u8]) -> Vec<bool> {
        (0..seq.len())
            .map(|s| {
                s + motif.len() <= seq.len() && (0..motif.len()).all(|i| seq[s + i] == motif[i])
            })
            .collect()
    }

    /// Recompute the `m x tracks` targets of one sequence from scratch.
    /// Only meaningful for specs without Poisson sampling.
    pub fn brute_force_targets(spec: &SyntheticTaskSpec, seq: &[u8]) -> Vec<f64> {
        let n = seq.len();
        let hits: Vec<Vec<bool>> = spec
            .motifs
            .iter()
            .map(|m| match_indicator(seq, m.as_bytes()))
            .collect();

        let mut rate = vec![vec![spec.noise_rate; n]; spec.tracks];
        // local motif contributions, accumulated per position
        for p in 0..n {
            for (mi, motif) in spec.motifs.iter().enumerate() {
                let len = motif.len();
                let lo = p.saturating_sub(len - 1);
                for s in lo..=p {
                    if hits[mi][s] {
                        for (track, row) in rate.iter_mut().enumerate() {
                            row[p] += spec.weights[track][mi];
                        }
                    }
                }
            }
        }
        // interaction bonuses: an occurrence fires once when any partner
        // beyond min_distance exists; only tracks weighting the pair gain
        for rule in &spec.interactions {
            for (this, other) in [(rule.motif_a, rule.motif_b), (rule.motif_b, rule.motif_a)] {
                let len = spec.motifs[this].len();
                for s in 0..n {
                    if !hits[this][s] {
                        continue;
                    }
                    let qualified =
                        (0..n).any(|q| hits[other][q] && s.abs_diff(q) > rule.min_distance);
                    if !qualified {
                        continue;
                    }
                    for (track, row) in rate.iter_mut().enumerate() {
                        if spec.weights[track][rule.motif_a] != 0.0
                            || spec.weights[track][rule.motif_b] != 0.0
                        {
                            for p in s..s + len {
                                row[p] += rule.bonus;
                            }
                        }
                    }
                }
            }
        }

        let mut out = vec![0.0; spec.m * spec.tracks];
        for (track, row) in rate.iter().enumerate() {
            let bins = bin_reads(row, spec.bin_width, spec.m).expect("valid spec");
            for (j, v) in bins.into_iter().enumerate() {
                out[j * spec.tracks + track] = v;
            }
        }
        out
    }
}
