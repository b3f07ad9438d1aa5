use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wmera_core::coarsegrain::daub4_layers;
use wmera_core::finegrain::{fine_grain_weights, multiscale_schedule};
use wmera_core::ingest::{encode_sample, haar_preprocess, load_dataset, next_pow2, pad_to_pow2, FeatureScaler, RawSample};
use wmera_core::trainer::{cost, evaluate, train, train_from};
use wmera_core::{Error, Mps, ScaleCache, ScaleData, SweepStats, Task};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Overrides the directory that holds preprocessed caches.
pub const CACHE_ENV: &str = "WMERA_CACHE_DIR";
pub const SNAPSHOT_FILE: &str = "config.resolved.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
const RECORD_FILE: &str = "preprocess.json";

pub fn cache_root(cfg: &PipelineConfig) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output.join("cache"),
    }
}

/// Hash of everything that determines the cached scales.
pub fn fingerprint(cfg: &PipelineConfig) -> CliResult<String> {
    let manifest = fs::read(&cfg.manifest)?;
    let mut h = Sha256::new();
    h.update(format!("wmera-cache {}\n", env!("CARGO_PKG_VERSION")));
    h.update((manifest.len() as u64).to_le_bytes());
    h.update(&manifest);
    let settings = serde_json::json!({
        "n_h2": cfg.n_h2,
        "n_d4_layers": cfg.n_d4_layers,
        "compression": cfg.compression,
        "pad_to": cfg.pad_to,
        "test_fraction": cfg.test_fraction,
        "seed": cfg.seed,
    });
    h.update(settings.to_string());
    Ok(hex::encode(h.finalize()))
}

fn cache_dir(cfg: &PipelineConfig, fp: &str) -> PathBuf {
    cache_root(cfg).join(&fp[..16])
}

fn model_path(cfg: &PipelineConfig, s: usize) -> PathBuf {
    cfg.output.join("models").join(format!("scale{s:02}.mps"))
}

fn init_path(cfg: &PipelineConfig, s: usize) -> PathBuf {
    cfg.output.join("models").join(format!("scale{s:02}.init.mps"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PreprocessRecord {
    fingerprint: String,
    widths: Vec<usize>,
    n_train: usize,
    n_test: usize,
    scaler: FeatureScaler,
}

/// Both dataset splits at every scale.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fingerprint: String,
    pub dir: PathBuf,
    /// True when an existing cache with the same fingerprint was loaded.
    pub reused: bool,
    pub scaler: FeatureScaler,
    pub train: ScaleCache,
    pub test: ScaleCache,
}

impl Prepared {
    pub fn widths(&self) -> Vec<usize> {
        self.train.widths()
    }
}

fn write_snapshot(cfg: &PipelineConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.output)?;
    let text = cfg.resolved()?.to_toml()?;
    fs::write(cfg.output.join(SNAPSHOT_FILE), text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Pads, Haar-filters, rescales and encodes both splits. The scaler is fit on
/// the training split.
pub fn encode_splits(
    train: &[RawSample],
    test: &[RawSample],
    cfg: &PipelineConfig,
) -> CliResult<(ScaleData, ScaleData, FeatureScaler)> {
    if train.is_empty() {
        return Err(Error::Data("the training split is empty".into()).into());
    }
    let longest = train.iter().chain(test).map(|s| s.values.len()).max().unwrap_or(1);
    let target = cfg.pad_to.unwrap_or_else(|| next_pow2(longest));
    let width = target >> cfg.n_h2.min(usize::BITS as usize - 1);
    if width << cfg.n_h2 != target || (cfg.n_d4_layers > 0 && (width >> (cfg.n_d4_layers - 1)) < 4) {
        return Err(CliError::Config(format!(
            "signal length {target} with n_h2 = {} leaves too few sites for {} Daubechies-4 layers",
            cfg.n_h2, cfg.n_d4_layers
        )));
    }
    if width % (1 << cfg.n_d4_layers) != 0 {
        return Err(CliError::Config(format!(
            "width {width} is not divisible by 2^{}",
            cfg.n_d4_layers
        )));
    }
    let filter = |samples: &[RawSample]| -> CliResult<Vec<RawSample>> {
        samples
            .par_iter()
            .map(|s| {
                let padded = pad_to_pow2(&s.values, target)
                    .map_err(|e| Error::Data(format!("{}: {e}", s.source_id)))?;
                let values = haar_preprocess(&padded, cfg.n_h2)?;
                Ok(RawSample::new(values, s.label, s.source_id.clone())?)
            })
            .collect()
    };
    let (train, test) = (filter(train)?, filter(test)?);
    let scaler = FeatureScaler::fit(&train)?;
    let encode = |samples: &[RawSample]| -> CliResult<ScaleData> {
        let mps: Vec<Mps> = samples
            .par_iter()
            .map(|s| encode_sample(&scaler.apply(&s.values)))
            .collect::<wmera_core::Result<_>>()?;
        Ok(ScaleData::new(mps, samples.iter().map(|s| s.label).collect())?)
    };
    Ok((encode(&train)?, encode(&test)?, scaler))
}

fn load_prepared(cfg: &PipelineConfig, fp: &str) -> CliResult<Option<Prepared>> {
    let dir = cache_dir(cfg, fp);
    let record_path = dir.join(RECORD_FILE);
    if !record_path.is_file() {
        return Ok(None);
    }
    let record: PreprocessRecord = serde_json::from_slice(&fs::read(&record_path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", record_path.display())))?;
    if record.fingerprint != fp {
        return Ok(None);
    }
    let train = ScaleCache::load(&dir.join("train"))?;
    let test = ScaleCache::load(&dir.join("test"))?;
    for c in [&train, &test] {
        if c.provenance != fp {
            return Err(Error::Data(format!("cache in {} has a foreign fingerprint", dir.display())).into());
        }
    }
    Ok(Some(Prepared {
        fingerprint: fp.to_string(),
        dir,
        reused: true,
        scaler: record.scaler,
        train,
        test,
    }))
}

/// Builds (or reuses) the scale caches for both splits.
pub fn cmd_preprocess(cfg: &PipelineConfig) -> CliResult<Prepared> {
    cfg.validate()?;
    write_snapshot(cfg)?;
    let fp = fingerprint(cfg)?;
    if let Some(p) = load_prepared(cfg, &fp)? {
        info!("reusing cache {}", p.dir.display());
        return Ok(p);
    }
    let raw = load_dataset(&cfg.manifest, cfg.test_fraction, cfg.seed)?;
    let (train0, test0, scaler) = encode_splits(&raw.train, &raw.test, cfg)?;
    let width = train0.n_sites().unwrap_or(0);
    info!(
        "coarse-graining {} train / {} test samples of width {width} through {} layers",
        train0.len(),
        test0.len(),
        cfg.n_d4_layers
    );
    let layers = daub4_layers(width, cfg.n_d4_layers)?;
    let train = ScaleCache::build(train0, &layers, cfg.compression, fp.clone())?;
    let test = ScaleCache::build(test0, &layers, cfg.compression, fp.clone())?;
    let dir = cache_dir(cfg, &fp);
    train.save(&dir.join("train"))?;
    test.save(&dir.join("test"))?;
    let record = PreprocessRecord {
        fingerprint: fp.clone(),
        widths: train.widths(),
        n_train: train.scales[0].len(),
        n_test: test.scales[0].len(),
        scaler,
    };
    // written last: marks the cache complete
    write_json(&dir.join(RECORD_FILE), &record)?;
    Ok(Prepared {
        fingerprint: fp,
        dir,
        reused: false,
        scaler,
        train,
        test,
    })
}

fn require_cache(cfg: &PipelineConfig) -> CliResult<Prepared> {
    cfg.validate()?;
    let fp = fingerprint(cfg)?;
    load_prepared(cfg, &fp)?.ok_or(CliError::Missing {
        what: format!("scale cache for this config under {}", cache_root(cfg).display()),
        step: "preprocess",
    })
}

fn check_scale(cfg: &PipelineConfig, s: usize) -> CliResult<()> {
    if s > cfg.n_d4_layers {
        return Err(CliError::Config(format!("scale {s} does not exist (n_d4_layers = {})", cfg.n_d4_layers)));
    }
    Ok(())
}

fn load_model(path: &Path, step: &'static str) -> CliResult<Mps> {
    if !path.is_file() {
        return Err(CliError::Missing {
            what: path.display().to_string(),
            step,
        });
    }
    Ok(Mps::load(path)?)
}

/// One JSON-lines record: the scale plus the sweep's stats.
#[derive(Serialize)]
struct MetricsLine<'a> {
    scale: usize,
    #[serde(flatten)]
    stats: &'a SweepStats,
}

fn write_metrics<'a>(path: &Path, runs: impl IntoIterator<Item = (usize, &'a [SweepStats])>) -> CliResult<()> {
    let mut out = Vec::new();
    for (scale, stats) in runs {
        for st in stats {
            serde_json::to_writer(&mut out, &MetricsLine { scale, stats: st }).map_err(|e| Error::Data(e.to_string()))?;
            out.push(b'\n');
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    f.sync_all()?;
    Ok(())
}

/// Train and test metric of one model at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub scale: usize,
    pub n_sites: usize,
    pub n_sweeps: usize,
    pub max_bond: usize,
    pub train_cost: f64,
    pub train_metric: f64,
    pub test_metric: Option<f64>,
    pub projection_error: f64,
    pub cost_before_projection: Option<f64>,
    pub cost_after_projection: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: Task,
    pub fingerprint: String,
    /// Coarsest scale first.
    pub scales: Vec<ScaleSummary>,
}

fn summarize(cfg: &PipelineConfig, prep: &Prepared, s: usize, w: &Mps, n_sweeps: usize) -> CliResult<ScaleSummary> {
    let tc = cfg.train_config(s)?;
    let train = prep.train.scale(s)?;
    let test = prep.test.scale(s)?;
    Ok(ScaleSummary {
        scale: s,
        n_sites: w.len(),
        n_sweeps,
        max_bond: w.max_bond(),
        train_cost: cost(w, train, tc.lambda)?,
        train_metric: evaluate(w, train, cfg.task)?,
        test_metric: if test.is_empty() {
            None
        } else {
            Some(evaluate(w, test, cfg.task)?)
        },
        projection_error: 0.0,
        cost_before_projection: None,
        cost_after_projection: None,
    })
}

/// Trains at one scale (default: the coarsest). Starts from the fine-grained
/// weights left by `finegrain` when present, otherwise from random weights.
pub fn cmd_train(cfg: &PipelineConfig, scale: Option<usize>) -> CliResult<ScaleSummary> {
    let s = scale.unwrap_or(cfg.n_d4_layers);
    check_scale(cfg, s)?;
    let prep = require_cache(cfg)?;
    write_snapshot(cfg)?;
    let tc = cfg.train_config(s)?;
    let data = prep.train.scale(s)?;
    let init = init_path(cfg, s);
    let (w, stats) = if init.is_file() {
        info!("training scale {s} from {}", init.display());
        train_from(&Mps::load(&init)?, data, &tc)?
    } else {
        info!("training scale {s} from random weights");
        train(data, &tc)?
    };
    fs::create_dir_all(cfg.output.join("models"))?;
    w.save(&model_path(cfg, s))?;
    write_metrics(&cfg.output.join(format!("metrics_scale{s:02}.jsonl")), [(s, &stats[..])])?;
    let summary = summarize(cfg, &prep, s, &w, stats.len())?;
    write_json(&cfg.output.join(format!("train_scale{s:02}.json")), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineGrainReport {
    pub from_scale: usize,
    pub to_scale: usize,
    pub truncation_error: f64,
    pub cost_before: f64,
    pub cost_after: f64,
    pub max_bond: usize,
}

/// Projects the model trained at `scale` (default: the coarsest) one layer
/// down, leaving it as the starting point for training at `scale - 1`.
pub fn cmd_finegrain(cfg: &PipelineConfig, scale: Option<usize>) -> CliResult<FineGrainReport> {
    let s = scale.unwrap_or(cfg.n_d4_layers);
    check_scale(cfg, s)?;
    if s == 0 {
        return Err(CliError::Config("scale 0 is already the finest".into()));
    }
    let prep = require_cache(cfg)?;
    write_snapshot(cfg)?;
    let w = load_model(&model_path(cfg, s), "train")?;
    let fine_cfg = cfg.train_config(s - 1)?;
    let fg = fine_grain_weights(&w, &prep.train.layer(s)?, fine_cfg.truncation()?)?;
    fg.weights.save(&init_path(cfg, s - 1))?;
    let report = FineGrainReport {
        from_scale: s,
        to_scale: s - 1,
        truncation_error: fg.truncation_error,
        cost_before: cost(&w, prep.train.scale(s)?, cfg.train_config(s)?.lambda)?,
        cost_after: cost(&fg.weights, prep.train.scale(s - 1)?, fine_cfg.lambda)?,
        max_bond: fg.weights.max_bond(),
    };
    write_json(&cfg.output.join(format!("finegrain_scale{:02}.json", s - 1)), &report)?;
    Ok(report)
}

/// Evaluates the saved model at `scale` (default: `fine_grain_to`) on both
/// splits.
pub fn cmd_eval(cfg: &PipelineConfig, scale: Option<usize>) -> CliResult<Summary> {
    let s = scale.unwrap_or(cfg.fine_grain_to);
    check_scale(cfg, s)?;
    let prep = require_cache(cfg)?;
    write_snapshot(cfg)?;
    let w = load_model(&model_path(cfg, s), "train")?;
    let summary = Summary {
        task: cfg.task,
        fingerprint: prep.fingerprint.clone(),
        scales: vec![summarize(cfg, &prep, s, &w, 0)?],
    };
    write_json(&cfg.output.join(format!("eval_scale{s:02}.json")), &summary)?;
    Ok(summary)
}

/// Preprocesses, trains at the coarsest scale, and alternates fine-graining
/// and retraining down to `fine_grain_to`. Writes a model per scale,
/// per-sweep metrics and a summary.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> CliResult<Summary> {
    let prep = cmd_preprocess(cfg)?;
    let configs = (0..=cfg.n_d4_layers)
        .map(|s| cfg.train_config(s))
        .collect::<CliResult<Vec<_>>>()?;
    let (_, runs) = multiscale_schedule(&prep.train, |s| configs[s].clone(), cfg.n_d4_layers, cfg.fine_grain_to, None)?;
    fs::create_dir_all(cfg.output.join("models"))?;
    let mut scales = Vec::with_capacity(runs.len());
    for run in &runs {
        run.weights.save(&model_path(cfg, run.scale))?;
        let mut entry = summarize(cfg, &prep, run.scale, &run.weights, run.stats.len())?;
        entry.projection_error = run.projection_error;
        entry.cost_before_projection = run.cost_before_projection;
        entry.cost_after_projection = run.cost_after_projection;
        info!(
            "scale {}: train metric {:.4}, test metric {:?}",
            entry.scale, entry.train_metric, entry.test_metric
        );
        scales.push(entry);
    }
    write_metrics(
        &cfg.output.join(METRICS_FILE),
        runs.iter().map(|r| (r.scale, &r.stats[..])),
    )?;
    let summary = Summary {
        task: cfg.task,
        fingerprint: prep.fingerprint.clone(),
        scales,
    };
    write_json(&cfg.output.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Runs `f` on a dedicated pool of `threads` workers (all cores if `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
