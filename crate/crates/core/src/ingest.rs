//! Raw data loading and encoding: PCM16 WAV and CSV readers, windowing,
//! Haar pre-passes, feature scaling and the product feature map.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mps::Mps;
use crate::wavelet::haar_step;

#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub values: Vec<f64>,
    pub label: f64,
    pub source_id: String,
}

impl RawSample {
    pub fn new(values: Vec<f64>, label: f64, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        if values.is_empty() {
            return Err(Error::Data(format!("{source_id}: empty sample")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{source_id}: non-finite value at index {i}")));
        }
        if !label.is_finite() {
            return Err(Error::Data(format!("{source_id}: non-finite label")));
        }
        Ok(RawSample { values, label, source_id })
    }
}

/// Reads a RIFF/WAVE PCM16 file. Multi-channel audio is averaged to mono and
/// samples are divided by 32768.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn u16_at(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

struct WavFormat {
    channels: usize,
    block_align: usize,
}

pub fn decode_wav(b: &[u8]) -> Result<Vec<f64>> {
    let need = |off: usize, len: usize, what: &str| -> Result<()> {
        if off + len > b.len() {
            Err(Error::format(off as u64, format!("truncated {what}")))
        } else {
            Ok(())
        }
    };
    need(0, 12, "RIFF header")?;
    if &b[0..4] != b"RIFF" {
        return Err(Error::format(0, "missing RIFF tag"));
    }
    if &b[8..12] != b"WAVE" {
        return Err(Error::format(8, "missing WAVE tag"));
    }
    let mut off = 12;
    let mut format: Option<WavFormat> = None;
    loop {
        need(off, 8, "chunk header")?;
        let id = &b[off..off + 4];
        let size = u32_at(b, off + 4) as usize;
        let body = off + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format(off as u64 + 4, format!("fmt chunk too short ({size} bytes)")));
                }
                need(body, size, "fmt chunk")?;
                let mut tag = u16_at(b, body);
                if tag == 0xFFFE {
                    if size < 40 {
                        return Err(Error::format(body as u64, "extensible fmt chunk too short"));
                    }
                    tag = u16_at(b, body + 24);
                }
                if tag != 1 {
                    return Err(Error::format(body as u64, format!("unsupported codec tag {tag:#06x}; PCM required")));
                }
                let channels = u16_at(b, body + 2) as usize;
                let block_align = u16_at(b, body + 12) as usize;
                let bits = u16_at(b, body + 14);
                if bits != 16 {
                    return Err(Error::format(body as u64 + 14, format!("{bits}-bit samples; 16-bit PCM required")));
                }
                if channels == 0 || block_align != 2 * channels {
                    return Err(Error::format(
                        body as u64 + 2,
                        format!("inconsistent layout: {channels} channels, block align {block_align}"),
                    ));
                }
                format = Some(WavFormat { channels, block_align });
            }
            b"data" => {
                let fmt = format
                    .as_ref()
                    .ok_or_else(|| Error::format(off as u64, "data chunk before fmt chunk"))?;
                need(body, size, "data chunk")?;
                if size % fmt.block_align != 0 {
                    return Err(Error::format(off as u64 + 4, format!("data size {size} is not a whole number of frames")));
                }
                let scale = 1.0 / (32768.0 * fmt.channels as f64);
                return Ok(b[body..body + size]
                    .chunks_exact(fmt.block_align)
                    .map(|frame| {
                        frame
                            .chunks_exact(2)
                            .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64)
                            .sum::<f64>()
                            * scale
                    })
                    .collect());
            }
            _ => need(body, size, "chunk body")?,
        }
        off = body + size + (size & 1);
    }
}

/// CSV input options: `column` selects a named column (header row
/// required); without it the first field of each line is used and there is
/// no header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvOptions {
    #[serde(default)]
    pub column: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            column: None,
            delimiter: ',',
        }
    }
}

/// Reads one numeric series from CSV. Blank lines are skipped; a
/// non-numeric cell is an error naming its line.
pub fn read_csv_series(path: &Path, opts: &CsvOptions) -> Result<Vec<f64>> {
    let text = fs::read(path)?;
    parse_csv_series(&text, opts).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_csv_series(text: &[u8], opts: &CsvOptions) -> Result<Vec<f64>> {
    if !opts.delimiter.is_ascii() {
        return Err(Error::arg("CSV delimiter must be an ASCII character"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter as u8)
        .has_headers(opts.column.is_some())
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text);
    let col = match &opts.column {
        Some(name) => {
            let headers = rdr.headers().map_err(|e| Error::Data(e.to_string()))?;
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("no column named {name:?}")))?
        }
        None => 0,
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let cell = rec
            .get(col)
            .ok_or_else(|| Error::Data(format!("line {line}: missing column {col}")))?;
        let v: f64 = cell
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: non-numeric value {cell:?}")))?;
        if !v.is_finite() {
            return Err(Error::Data(format!("line {line}: non-finite value {cell:?}")));
        }
        out.push(v);
    }
    Ok(out)
}

/// Smallest power of two `>= n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// `v` followed by zeros up to `target` elements.
pub fn pad_to_pow2(v: &[f64], target: usize) -> Result<Vec<f64>> {
    if !target.is_power_of_two() {
        return Err(Error::arg(format!("pad target {target} is not a power of two")));
    }
    if v.len() > target {
        return Err(Error::arg(format!("vector of length {} exceeds pad target {target}", v.len())));
    }
    let mut out = v.to_vec();
    out.resize(target, 0.0);
    Ok(out)
}

/// Stride-1 windows of length `p`, each labeled with the value that follows
/// it. Source ids are `"{prefix}@{start}"`.
pub fn make_windows(series: &[f64], p: usize, prefix: &str) -> Result<Vec<RawSample>> {
    if p < 4 || !p.is_power_of_two() {
        return Err(Error::arg(format!("window length {p} must be a power of two >= 4")));
    }
    if series.len() <= p {
        return Err(Error::arg(format!("series of length {} is too short for windows of {p}", series.len())));
    }
    (0..series.len() - p)
        .map(|s| RawSample::new(series[s..s + p].to_vec(), series[s + p], format!("{prefix}@{s}")))
        .collect()
}

/// Windows whose values and label all lie in the inclusive index range
/// `[lo, hi]` of `series`.
pub fn windows_in_range(series: &[f64], p: usize, range: (usize, usize), prefix: &str) -> Result<Vec<RawSample>> {
    let (lo, hi) = range;
    if lo > hi || hi >= series.len() {
        return Err(Error::arg(format!(
            "range [{lo}, {hi}] invalid for a series of length {}",
            series.len()
        )));
    }
    let mut w = make_windows(&series[lo..=hi], p, prefix)?;
    for s in &mut w {
        let (name, start) = s.source_id.rsplit_once('@').expect("window id");
        let start: usize = start.parse().expect("window start");
        s.source_id = format!("{name}@{}", start + lo);
    }
    Ok(w)
}

/// `n_h2` Haar averaging steps.
pub fn haar_preprocess(v: &[f64], n_h2: usize) -> Result<Vec<f64>> {
    let f = 1usize
        .checked_shl(n_h2 as u32)
        .filter(|&f| f != 0)
        .ok_or_else(|| Error::arg("too many Haar steps"))?;
    if v.is_empty() || v.len() % f != 0 {
        return Err(Error::arg(format!("length {} is not divisible by 2^{n_h2}", v.len())));
    }
    let mut out = v.to_vec();
    for _ in 0..n_h2 {
        out = haar_step(&out)?;
    }
    Ok(out)
}

/// Affine map sending `[lo, hi]` onto `[0, 1]`, clamping outside values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub lo: f64,
    pub hi: f64,
}

impl FeatureScaler {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Data(format!("degenerate feature range [{lo}, {hi}]")));
        }
        Ok(FeatureScaler { lo, hi })
    }

    /// Fits on every value of the (training) samples.
    pub fn fit(samples: &[RawSample]) -> Result<Self> {
        let (lo, hi) = samples
            .iter()
            .flat_map(|s| s.values.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if samples.is_empty() {
            return Err(Error::Data("cannot fit a scaler on no samples".into()));
        }
        Self::new(lo, hi)
    }

    pub fn apply_value(&self, v: f64) -> f64 {
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply_value(v)).collect()
    }

    pub fn apply_sample(&self, s: &RawSample) -> RawSample {
        RawSample {
            values: self.apply(&s.values),
            label: s.label,
            source_id: s.source_id.clone(),
        }
    }
}

/// Product state of the local feature vectors `(1, x_i)`.
pub fn encode_sample(x: &[f64]) -> Result<Mps> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite feature at index {i}")));
    }
    let vs: Vec<Vec<f64>> = x.iter().map(|&v| vec![1.0, v]).collect();
    Mps::product_state(&vs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub path: PathBuf,
    pub label: f64,
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSource {
    pub path: PathBuf,
    #[serde(default, flatten)]
    pub csv: CsvOptions,
}

/// Dataset description. Relative paths are resolved against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum DatasetManifest {
    /// Labeled files (`.wav` or single-series `.csv`), labels `+1` / `-1`.
    /// Entries without an explicit split are assigned by a seeded shuffle.
    Classification {
        entries: Vec<ClassEntry>,
        #[serde(default)]
        csv: CsvOptions,
    },
    /// One series cut into windows of length `p`. Ranges are inclusive index
    /// ranges; the training and test window starts must not overlap.
    Regression {
        series: SeriesSource,
        p: usize,
        fit_range: (usize, usize),
        test_range: (usize, usize),
    },
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub train: Vec<RawSample>,
    pub test: Vec<RawSample>,
}

fn read_signal(path: &Path, csv: &CsvOptions) -> Result<Vec<f64>> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("wav") => read_wav(path),
        Some("csv") | Some("txt") => read_csv_series(path, csv),
        _ => Err(Error::Data(format!("{}: unsupported file type (expected .wav or .csv)", path.display()))),
    }
}

/// Reads every file named by the manifest at `manifest_path`. Samples are
/// ordered by source path (then window offset).
pub fn load_dataset(manifest_path: &Path, test_fraction: f64, seed: u64) -> Result<RawDataset> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_manifest(&manifest, base, test_fraction, seed)
}

pub fn load_manifest(manifest: &DatasetManifest, base: &Path, test_fraction: f64, seed: u64) -> Result<RawDataset> {
    match manifest {
        DatasetManifest::Classification { entries, csv } => {
            if entries.is_empty() {
                return Err(Error::Data("manifest has no entries".into()));
            }
            if !(0.0..1.0).contains(&test_fraction) {
                return Err(Error::arg(format!("test fraction {test_fraction} must be in [0, 1)")));
            }
            for e in entries {
                if e.label != 1.0 && e.label != -1.0 {
                    return Err(Error::Data(format!("{}: label {} is not +1 or -1", e.path.display(), e.label)));
                }
            }
            let splits = assign_splits(entries, test_fraction, seed);
            let mut samples: Vec<(Split, RawSample)> = entries
                .par_iter()
                .zip(splits.par_iter())
                .map(|(e, &split)| {
                    let path = base.join(&e.path);
                    let values = read_signal(&path, csv)?;
                    Ok((split, RawSample::new(values, e.label, e.path.to_string_lossy())?))
                })
                .collect::<Result<_>>()?;
            samples.sort_by(|a, b| a.1.source_id.cmp(&b.1.source_id));
            let (train, test): (Vec<_>, Vec<_>) = samples.into_iter().partition(|(s, _)| *s == Split::Train);
            Ok(RawDataset {
                train: train.into_iter().map(|(_, s)| s).collect(),
                test: test.into_iter().map(|(_, s)| s).collect(),
            })
        }
        DatasetManifest::Regression { series, p, fit_range, test_range } => {
            let path = base.join(&series.path);
            let values = read_csv_series(&path, &series.csv)?;
            let train_starts = fit_range.0..=fit_range.1.saturating_sub(*p);
            let test_starts = test_range.0..=test_range.1.saturating_sub(*p);
            if train_starts.start() <= test_starts.end() && test_starts.start() <= train_starts.end() {
                return Err(Error::Data(format!(
                    "fit range {fit_range:?} and test range {test_range:?} give overlapping window starts"
                )));
            }
            let name = series.path.to_string_lossy();
            Ok(RawDataset {
                train: windows_in_range(&values, *p, *fit_range, &name)?,
                test: windows_in_range(&values, *p, *test_range, &name)?,
            })
        }
    }
}

/// Explicit splits are kept; the rest are shuffled with `seed` and the first
/// `round(test_fraction * n)` go to the test split.
fn assign_splits(entries: &[ClassEntry], test_fraction: f64, seed: u64) -> Vec<Split> {
    let mut out: Vec<Split> = entries.iter().map(|e| e.split.unwrap_or(Split::Train)).collect();
    let mut free: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].split.is_none()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    free.shuffle(&mut rng);
    let n_test = (test_fraction * free.len() as f64).round() as usize;
    for &i in &free[..n_test] {
        out[i] = Split::Test;
    }
    out
}
