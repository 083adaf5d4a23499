//! Run configuration: built-in defaults, then a TOML file, then `--set
//! key.path=value` overrides. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use gdce_core::image::Normalization;
use gdce_core::models::{GdceConfig, PERCEPTUAL_SEED};
use gdce_core::synth::{ShiftProfile, SynthSpec};
use gdce_core::train::{Reduction, TrainConfig};
use serde::{Deserialize, Serialize};

/// Environment variable holding the default seed.
pub const SEED_ENV: &str = "GDCE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Read(String, std::io::Error),
    #[error("{0}: {1}")]
    Parse(String, String),
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
    #[error("{0} is not a valid seed")]
    Seed(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub classes: usize,
    pub per_class: usize,
    /// Images per class in the test split.
    pub test_per_class: usize,
    pub image_size: usize,
    pub blob_counts: Vec<usize>,
    pub blob_sigmas: Vec<f64>,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            classes: s.classes,
            per_class: 400,
            test_per_class: 100,
            image_size: s.image_size,
            blob_counts: s.blob_counts,
            blob_sigmas: s.blob_sigmas,
            noise: s.noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptualConfig {
    pub tap: usize,
    pub reduction: Reduction,
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self { tap: 2, reduction: Reduction::Mean, seed: PERCEPTUAL_SEED }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fold held out for per-epoch validation.
    pub val_fold: usize,
    /// Labels removed from the training manifest.
    pub drop_classes: Vec<usize>,
}

impl Default for StageConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { lr: t.lr, batch_size: t.batch_size, epochs: t.epochs, val_fold: 4, drop_classes: Vec::new() }
    }
}

impl StageConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { lr: self.lr, batch_size: self.batch_size, epochs: self.epochs, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub layers: Vec<usize>,
    pub iterations: Vec<usize>,
    /// Enhancer epochs per grid cell.
    pub epochs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { layers: vec![2, 4, 8, 12], iterations: vec![2, 4, 6, 8], epochs: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub normalization: String,
    pub data: DataConfig,
    pub shift: ShiftProfile,
    pub model: GdceConfig,
    pub perceptual: PerceptualConfig,
    pub classifier: StageConfig,
    pub gdce: StageConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            normalization: Normalization::default().name().into(),
            data: DataConfig::default(),
            shift: ShiftProfile::gamma_sigmoid(),
            model: GdceConfig::default(),
            perceptual: PerceptualConfig::default(),
            classifier: StageConfig { lr: 3e-4, epochs: 20, ..StageConfig::default() },
            gdce: StageConfig { epochs: 30, ..StageConfig::default() },
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, `GDCE_SEED` when no seed is given explicitly, the file,
    /// then overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut merged = toml::Value::try_from(Self::default()).expect("defaults serialize");
        let mut explicit = toml::Table::new();
        if let Some(path) = file {
            let name = path.display().to_string();
            let text = fs::read_to_string(path).map_err(|e| ConfigError::Read(name.clone(), e))?;
            let table: toml::Table =
                text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(name, e.to_string()))?;
            merge(&mut explicit, table);
        }
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let value = parse_value(value.trim());
            let mut path: Vec<&str> = key.trim().split('.').collect();
            let last = path.pop().filter(|k| !k.is_empty()).ok_or_else(|| ConfigError::Override(o.clone()))?;
            let mut table = toml::Table::new();
            table.insert(last.to_owned(), value);
            for k in path.into_iter().rev() {
                let mut outer = toml::Table::new();
                outer.insert(k.to_owned(), toml::Value::Table(table));
                table = outer;
            }
            merge(&mut explicit, table);
        }
        if !explicit.contains_key("seed") {
            if let Ok(s) = std::env::var(SEED_ENV) {
                let seed: i64 = s.trim().parse().map_err(|_| ConfigError::Seed(s.clone()))?;
                explicit.insert("seed".into(), toml::Value::Integer(seed));
            }
        }
        merge(merged.as_table_mut().expect("table"), explicit);
        let cfg: Self =
            merged.try_into().map_err(|e: toml::de::Error| ConfigError::Parse("config".into(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: gdce_core::Error| ConfigError::Invalid(e.to_string());
        self.normalization()?;
        self.synth_spec(false).validate().map_err(inv)?;
        self.shift.validate().map_err(inv)?;
        self.model.validate().map_err(inv)?;
        if self.model.image_size != self.data.image_size {
            return Err(ConfigError::Invalid(format!(
                "model.image_size {} differs from data.image_size {}",
                self.model.image_size, self.data.image_size
            )));
        }
        for (name, stage) in [("classifier", &self.classifier), ("gdce", &self.gdce)] {
            stage.train_config(self.seed).validate().map_err(inv)?;
            if stage.val_fold >= gdce_core::synth::FOLDS {
                return Err(ConfigError::Invalid(format!("{name}.val_fold must be below {}", gdce_core::synth::FOLDS)));
            }
        }
        if self.data.test_per_class == 0 {
            return Err(ConfigError::Invalid("data.test_per_class must be positive".into()));
        }
        Ok(())
    }

    pub fn normalization(&self) -> Result<Normalization, ConfigError> {
        Normalization::from_name(&self.normalization).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "unknown normalization `{}` (full-range, bitdepth, window, zscore)",
                self.normalization
            ))
        })
    }

    pub fn synth_spec(&self, test: bool) -> SynthSpec {
        let d = &self.data;
        SynthSpec {
            classes: d.classes,
            per_class: if test { d.test_per_class } else { d.per_class },
            image_size: d.image_size,
            blob_counts: d.blob_counts.clone(),
            blob_sigmas: d.blob_sigmas.clone(),
            noise: d.noise,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Write the effective configuration next to a run's outputs.
    pub fn dump(&self, dir: &Path) -> std::io::Result<()> {
        fs::write(dir.join("config.toml"), self.to_toml())
    }
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_value(s: &str) -> toml::Value {
    format!("v = {s}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(s.to_owned()))
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = RunConfig::resolve(None, &["gdce.epochs=3".into(), "seed=9".into(), "normalization=zscore".into()])
            .unwrap();
        assert_eq!(cfg.gdce.epochs, 3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.normalization, "zscore");
        let err = RunConfig::resolve(None, &["gdce.epoch=3".into()]).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
    }

    #[test]
    fn file_then_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "seed = 4\n[shift]\ngamma = 0.7\n").unwrap();
        let cfg = RunConfig::resolve(Some(&p), &["shift.gamma=0.9".into()]).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.shift.gamma, 0.9);
        assert_eq!(cfg.shift.out_bit_depth, ShiftProfile::gamma_sigmoid().out_bit_depth);
    }

    #[test]
    fn dump_round_trips() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn mismatched_sizes_rejected() {
        assert!(RunConfig::resolve(None, &["data.image_size=32".into()]).is_err());
    }
}
