//! Experiment configuration: a TOML document with strict validation,
//! environment-variable overrides (`RISKCAST_<SECTION>__<KEY>`), and
//! lossless round-tripping. The resolved document is persisted alongside
//! every checkpoint.

use std::path::{Path, PathBuf};

use riskcast_core::model::ModelConfig;
use riskcast_core::views::TopkAxis;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const ENV_PREFIX: &str = "RISKCAST_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub flags: FlagsSection,
    #[serde(default)]
    pub synthetic: SyntheticSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset manifest; the single entry point to every input file.
    pub manifest: PathBuf,
    /// Output directory: processed dataset, checkpoints, logs, exports.
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub t_in: usize,
    pub horizon: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub k_pairwise: usize,
    pub hyperedge_ratio: f64,
    pub k_members: usize,
    pub temperature: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            t_in: 12,
            horizon: 6,
            embed_dim: 32,
            heads: 8,
            layers: 2,
            k_pairwise: 40,
            hyperedge_ratio: 0.1,
            k_members: 40,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 8,
            train_ratio: 0.8,
            val_ratio: 0.1,
            max_epochs: 500,
            patience: 25,
            seed: 7,
            grad_clip: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagsSection {
    pub use_pkde: bool,
    pub use_contrastive: bool,
    pub use_hypergraph: bool,
    pub use_attention_fusion: bool,
    pub use_poi: bool,
    pub use_road: bool,
    pub dynamic_temporal_view: bool,
    /// "column" caps members per hyperedge; "row" caps hyperedges per region.
    pub topk_axis: TopkAxisConfig,
}

impl Default for FlagsSection {
    fn default() -> Self {
        Self {
            use_pkde: true,
            use_contrastive: true,
            use_hypergraph: true,
            use_attention_fusion: true,
            use_poi: true,
            use_road: true,
            dynamic_temporal_view: true,
            topk_axis: TopkAxisConfig::Column,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopkAxisConfig {
    Column,
    Row,
}

impl From<TopkAxisConfig> for TopkAxis {
    fn from(v: TopkAxisConfig) -> TopkAxis {
        match v {
            TopkAxisConfig::Column => TopkAxis::Column,
            TopkAxisConfig::Row => TopkAxis::Row,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n_regions: usize,
    pub n_steps: usize,
    pub n_hotspots: usize,
    pub interval_hours: u32,
    /// Directory the generated CSV files and manifest are written to.
    pub out_dir: PathBuf,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            n_regions: 25,
            n_steps: 240,
            n_hotspots: 5,
            interval_hours: 12,
            out_dir: PathBuf::from("data"),
        }
    }
}

impl ExperimentConfig {
    /// Loads a TOML config, applies `RISKCAST_<SECTION>__<KEY>` environment
    /// overrides, validates every field, and rejects unknown keys.
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn from_toml_with_env(
        text: &str,
        env: impl Iterator<Item = (String, String)>,
    ) -> AppResult<Self> {
        let mut value: toml::Value = toml::from_str(text)
            .map_err(|e| AppError::usage(format!("config parse error: {e}")))?;
        for (key, raw) in env {
            let Some(path) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let segments: Vec<String> = path.split("__").map(|s| s.to_lowercase()).collect();
            if segments.len() < 2 || segments.iter().any(|s| s.is_empty()) {
                continue;
            }
            apply_override(&mut value, &segments, &raw)?;
        }
        let config: ExperimentConfig = value
            .try_into()
            .map_err(|e| AppError::usage(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> AppResult<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| AppError::usage(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> AppResult<()> {
        let m = &self.model;
        let t = &self.train;
        let check = |ok: bool, msg: &str| -> AppResult<()> {
            if ok {
                Ok(())
            } else {
                Err(AppError::usage(msg.to_string()))
            }
        };
        check(m.t_in >= 3, "model.t_in must be at least the temporal kernel (3)")?;
        check(m.horizon >= 1, "model.horizon must be >= 1")?;
        check(m.embed_dim >= 1, "model.embed_dim must be >= 1")?;
        check(m.heads >= 1, "model.heads must be >= 1")?;
        check(
            m.embed_dim % m.heads == 0,
            "model.embed_dim must be divisible by model.heads",
        )?;
        check(m.layers >= 1, "model.layers must be >= 1")?;
        check(m.k_pairwise >= 1, "model.k_pairwise must be >= 1")?;
        check(
            m.hyperedge_ratio > 0.0 && m.hyperedge_ratio <= 2.0,
            "model.hyperedge_ratio must be in (0, 2]",
        )?;
        check(m.k_members >= 1, "model.k_members must be >= 1")?;
        check(m.temperature > 0.0, "model.temperature must be > 0")?;
        check(self.loss.lambda1 >= 0.0, "loss.lambda1 must be >= 0")?;
        check(self.loss.lambda2 >= 0.0, "loss.lambda2 must be >= 0")?;
        check(t.learning_rate > 0.0, "train.learning_rate must be > 0")?;
        check(
            matches!(t.batch_size, 4 | 8 | 16),
            "train.batch_size must be one of {4, 8, 16}",
        )?;
        check(
            t.train_ratio > 0.0 && t.train_ratio <= 1.0,
            "train.train_ratio must be in (0, 1]",
        )?;
        check(
            t.val_ratio >= 0.0 && t.train_ratio + t.val_ratio <= 1.0,
            "train.train_ratio + train.val_ratio must not exceed 1",
        )?;
        check(t.max_epochs >= 1, "train.max_epochs must be >= 1")?;
        check(t.patience >= 1, "train.patience must be >= 1")?;
        check(t.grad_clip >= 0.0, "train.grad_clip must be >= 0 (0 disables)")?;
        let s = &self.synthetic;
        check(s.n_regions >= 1, "synthetic.n_regions must be >= 1")?;
        check(s.n_steps >= 1, "synthetic.n_steps must be >= 1")?;
        check(
            s.n_hotspots <= s.n_regions,
            "synthetic.n_hotspots must not exceed synthetic.n_regions",
        )?;
        check(
            matches!(s.interval_hours, 12 | 24),
            "synthetic.interval_hours must be 12 or 24",
        )?;
        Ok(())
    }

    /// Core model configuration for a dataset with the given dimensions.
    pub fn model_config(&self, n_regions: usize, d_poi: usize, d_road: usize, d_met: usize, d_cal: usize) -> ModelConfig {
        ModelConfig {
            n_regions,
            t_in: self.model.t_in,
            horizon: self.model.horizon,
            d_poi,
            d_road,
            d_met,
            d_cal,
            embed_dim: self.model.embed_dim,
            heads: self.model.heads,
            layers: self.model.layers,
            k_pairwise: self.model.k_pairwise,
            hyperedge_ratio: self.model.hyperedge_ratio,
            k_members: self.model.k_members,
            temperature: self.model.temperature,
            lambda1: self.loss.lambda1,
            lambda2: self.loss.lambda2,
            use_contrastive: self.flags.use_contrastive,
            use_hypergraph: self.flags.use_hypergraph,
            use_attention_fusion: self.flags.use_attention_fusion,
            use_poi: self.flags.use_poi,
            use_road: self.flags.use_road,
            dynamic_temporal_view: self.flags.dynamic_temporal_view,
            topk_axis: self.flags.topk_axis.into(),
        }
    }
}

fn apply_override(value: &mut toml::Value, segments: &[String], raw: &str) -> AppResult<()> {
    let mut node = value;
    for seg in &segments[..segments.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| AppError::usage(format!("override path {seg} is not a table")))?;
        node = table
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let leaf = segments.last().unwrap();
    let table = node
        .as_table_mut()
        .ok_or_else(|| AppError::usage(format!("override path {leaf} is not a table")))?;
    let parsed = parse_env_value(raw);
    table.insert(leaf.clone(), parsed);
    Ok(())
}

fn parse_env_value(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\nmanifest = \"data/dataset.manifest\"\nworkdir = \"runs/x\"\n";

    #[test]
    fn defaults_fill_every_section() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.model.t_in, 12);
        assert_eq!(cfg.model.horizon, 6);
        assert_eq!(cfg.model.embed_dim, 32);
        assert_eq!(cfg.model.heads, 8);
        assert_eq!(cfg.model.layers, 2);
        assert_eq!(cfg.model.k_pairwise, 40);
        assert_eq!(cfg.model.hyperedge_ratio, 0.1);
        assert_eq!(cfg.model.k_members, 40);
        assert_eq!(cfg.loss.lambda1, 0.1);
        assert_eq!(cfg.loss.lambda2, 0.001);
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!(cfg.train.seed, 7);
        assert!(cfg.flags.use_pkde);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[model]\nbogus_knob = 3\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, AppError::Usage(_)), "{err}");
        assert!(err.to_string().contains("bogus_knob"));
    }

    #[test]
    fn round_trip_is_identity() {
        let text = format!(
            "{MINIMAL}\n[model]\nembed_dim = 16\nheads = 4\n\n[train]\nseed = 99\nbatch_size = 4\n"
        );
        let a = ExperimentConfig::from_toml(&text).unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        let c = ExperimentConfig::from_toml(&b.to_toml()).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn env_overrides_apply_with_prefix() {
        let env = vec![
            ("RISKCAST_TRAIN__SEED".to_string(), "123".to_string()),
            ("RISKCAST_FLAGS__USE_PKDE".to_string(), "false".to_string()),
            ("RISKCAST_MODEL__HYPEREDGE_RATIO".to_string(), "0.2".to_string()),
            ("UNRELATED".to_string(), "zzz".to_string()),
        ];
        let cfg = ExperimentConfig::from_toml_with_env(MINIMAL, env.into_iter()).unwrap();
        assert_eq!(cfg.train.seed, 123);
        assert!(!cfg.flags.use_pkde);
        assert_eq!(cfg.model.hyperedge_ratio, 0.2);
    }

    #[test]
    fn validation_catches_bad_fields() {
        for (section, line) in [
            ("model", "t_in = 2"),
            ("model", "embed_dim = 30"), // not divisible by 8 heads
            ("train", "batch_size = 5"),
            ("train", "learning_rate = 0.0"),
            ("train", "train_ratio = 0.95\nval_ratio = 0.2"),
            ("synthetic", "interval_hours = 6"),
        ] {
            let text = format!("{MINIMAL}\n[{section}]\n{line}\n");
            let err = ExperimentConfig::from_toml(&text).unwrap_err();
            assert!(matches!(err, AppError::Usage(_)), "{section}/{line}: {err}");
        }
    }

    #[test]
    fn topk_axis_parses_both_variants() {
        let text = format!("{MINIMAL}\n[flags]\ntopk_axis = \"row\"\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.flags.topk_axis, TopkAxisConfig::Row);
        assert_eq!(TopkAxis::from(cfg.flags.topk_axis), TopkAxis::Row);
    }
}
