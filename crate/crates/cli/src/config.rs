use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wmera_core::{Compression, Task, TrainConfig};

use crate::error::{CliError, CliResult};

/// Everything a run needs. Loaded from a TOML file; command-line flags are
/// applied on top with [`Overrides`].
///
/// ```toml
/// task = "classification"
/// manifest = "data/manifest.json"
/// n_h2 = 2
/// n_d4_layers = 2
/// fine_grain_to = 0
/// output = "runs/demo"
/// seed = 7
///
/// [compression]
/// delta_data = 1e-12
/// chi_data = 16
///
/// [train]
/// n_sweeps = 5
///
/// [scales.2]
/// n_sweeps = 10
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    pub manifest: PathBuf,
    #[serde(default)]
    pub n_h2: usize,
    pub n_d4_layers: usize,
    #[serde(default)]
    pub fine_grain_to: usize,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Share of unassigned classification entries held out for testing.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Signal length after zero padding; defaults to the next power of two
    /// above the longest sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_to: Option<usize>,
    #[serde(default)]
    pub compression: Compression,
    /// Shared training settings.
    #[serde(default)]
    pub train: TrainConfig,
    /// Per-scale overrides merged over `train`, keyed by scale index.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scales: BTreeMap<String, toml::Table>,
}

fn default_test_fraction() -> f64 {
    0.5
}

/// Flag values that win over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.manifest.is_relative() {
            cfg.manifest = base.join(&cfg.manifest);
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.output {
            self.output = out.clone();
        }
    }

    /// Checks value ranges, every per-scale table and that the manifest exists.
    pub fn validate(&self) -> CliResult<()> {
        if self.fine_grain_to > self.n_d4_layers {
            return Err(CliError::Config(format!(
                "fine_grain_to = {} exceeds n_d4_layers = {}",
                self.fine_grain_to, self.n_d4_layers
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(CliError::Config(format!("test_fraction = {} is outside [0, 1)", self.test_fraction)));
        }
        if let Some(p) = self.pad_to {
            if !p.is_power_of_two() {
                return Err(CliError::Config(format!("pad_to = {p} is not a power of two")));
            }
        }
        self.compression
            .truncation()
            .map_err(|e| CliError::Config(format!("compression: {e}")))?;
        for key in self.scales.keys() {
            let s: usize = key
                .parse()
                .map_err(|_| CliError::Config(format!("[scales.{key}]: key is not a scale index")))?;
            if s > self.n_d4_layers {
                return Err(CliError::Config(format!("[scales.{key}]: only scales 0..={} exist", self.n_d4_layers)));
            }
        }
        for s in 0..=self.n_d4_layers {
            self.train_config(s)?;
        }
        if !self.manifest.is_file() {
            return Err(CliError::Config(format!("manifest {} does not exist", self.manifest.display())));
        }
        Ok(())
    }

    /// Training settings at scale `s`: shared table, then the scale's
    /// overrides. `task` and `seed` always come from the top level.
    pub fn train_config(&self, s: usize) -> CliResult<TrainConfig> {
        let mut cfg = match self.scales.get(&s.to_string()) {
            None => self.train.clone(),
            Some(over) => {
                let mut table = toml::Table::try_from(&self.train).map_err(|e| CliError::Config(e.to_string()))?;
                for (k, v) in over {
                    table.insert(k.clone(), v.clone());
                }
                table
                    .try_into()
                    .map_err(|e: toml::de::Error| CliError::Config(format!("[scales.{s}]: {e}")))?
            }
        };
        cfg.task = self.task;
        cfg.seed = self.seed;
        cfg.validate().map_err(|e| CliError::Config(format!("training settings at scale {s}: {e}")))?;
        Ok(cfg)
    }

    /// The config with every scale's training table spelled out. Loading the
    /// snapshot reproduces the run.
    pub fn resolved(&self) -> CliResult<Self> {
        let mut out = self.clone();
        out.train.task = self.task;
        out.train.seed = self.seed;
        out.scales.clear();
        for s in self.fine_grain_to..=self.n_d4_layers {
            let t = self.train_config(s)?;
            if t != out.train {
                let table = toml::Table::try_from(&t).map_err(|e| CliError::Config(e.to_string()))?;
                out.scales.insert(s.to_string(), table);
            }
        }
        Ok(out)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
task = "regression"
manifest = "m.json"
n_d4_layers = 2
output = "out"
seed = 3

[train]
n_sweeps = 4
chi_max = 8

[scales.1]
n_sweeps = 9
"#;

    #[test]
    fn per_scale_tables_override_shared_settings() {
        let cfg = PipelineConfig::parse(BASE).unwrap();
        let t2 = cfg.train_config(2).unwrap();
        let t1 = cfg.train_config(1).unwrap();
        assert_eq!((t2.n_sweeps, t2.chi_max, t2.seed), (4, 8, 3));
        assert_eq!((t1.n_sweeps, t1.chi_max), (9, 8));
        assert_eq!(t1.task, Task::Regression);
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = PipelineConfig::parse(BASE).unwrap();
        let snap = cfg.resolved().unwrap();
        let back = PipelineConfig::parse(&snap.to_toml().unwrap()).unwrap();
        for s in 0..=2 {
            assert_eq!(back.train_config(s).unwrap(), cfg.train_config(s).unwrap());
        }
        assert_eq!(back.compression, cfg.compression);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let bad = BASE.replace("n_sweeps = 9", "n_sweepz = 9");
        let cfg = PipelineConfig::parse(&bad).unwrap();
        assert!(matches!(cfg.train_config(1), Err(CliError::Config(_))));
        assert!(matches!(PipelineConfig::parse("task = \"x\""), Err(CliError::Config(_))));
        let mut cfg = PipelineConfig::parse(BASE).unwrap();
        cfg.fine_grain_to = 3;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
