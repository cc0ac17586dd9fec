//! Run configuration: one TOML file holding every setting of a run.

use std::path::{Path, PathBuf};

use motpose_core::losses::LossWeights;
use motpose_core::matcher::MatchCostConfig;
use motpose_core::model::{AdamWConfig, ModelConfig, TrainConfig};
use motpose_core::scenes::SceneConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MOTPOSE_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    /// Trailing share of the training sequences held out for validation.
    pub val_fraction: f64,
    /// Objects less visible than this are neither supervised nor scored.
    pub min_visibility: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_sequences: 40,
            test_sequences: 20,
            val_fraction: 0.2,
            min_visibility: motpose_core::metrics::MIN_VISIBILITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Validate every this many steps; 0 validates only at the end.
    pub validate_every: u64,
    /// Stop after this many validations without improvement; 0 never stops early.
    pub patience: usize,
    pub supervise_all_frames: bool,
    pub temporal_after_fusion: bool,
    pub pose_teacher: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            steps: 2000,
            batch_size: 3,
            validate_every: 200,
            patience: 0,
            supervise_all_frames: t.supervise_all_frames,
            temporal_after_fusion: t.temporal_after_fusion,
            pose_teacher: t.pose_teacher,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives scene generation, weight initialization and batch order.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Threads for data generation and evaluation.
    pub workers: usize,
    pub model: ModelConfig,
    pub scenes: SceneConfig,
    pub data: DataConfig,
    pub optimizer: AdamWConfig,
    pub loss: LossWeights,
    pub matching: MatchCostConfig,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            workers: 1,
            model: ModelConfig::default(),
            scenes: SceneConfig::default(),
            data: DataConfig::default(),
            optimizer: AdamWConfig {
                lr: 2e-3,
                warmup_steps: 50,
                decay_steps: 1950,
                min_lr_ratio: 0.02,
                ..AdamWConfig::default()
            },
            loss: LossWeights::default(),
            matching: MatchCostConfig::default(),
            train: TrainSection::default(),
        }
    }
}

/// Command-line changes applied on top of a loaded file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub window: Option<usize>,
    pub no_tefm: bool,
    pub no_tofm: bool,
    pub no_rfe: bool,
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Parses and validates TOML text. `origin` names the source in messages.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| toml_error(&e, text, origin))?;
        // The run seed is the only seed; a second one would silently disagree.
        if raw.get("scenes").and_then(|s| s.get("seed")).is_some() {
            return Err(HarnessError::Config(format!(
                "{origin}: key `scenes.seed` is not allowed; the top-level `seed` drives generation"
            )));
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(&e, text, origin))?;
        cfg.scenes.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: cannot read config: {e}", path.display())))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// TOML that [`RunConfig::from_toml`] reads back to `self`.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("run config serializes");
        if let Some(toml::Value::Table(scenes)) = table.get_mut("scenes") {
            scenes.remove("seed");
        }
        toml::to_string(&table).expect("run config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
            self.scenes.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out_dir = Some(out.clone());
        }
        if let Some(w) = o.window {
            self.model.window = w;
        }
        self.model.use_tefm &= !o.no_tefm;
        self.model.use_tofm &= !o.no_tofm;
        self.model.use_rfe &= !o.no_rfe;
        if let Some(w) = o.workers {
            self.workers = w;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scenes.validate()?;
        self.optimizer.validate()?;
        self.objective().validate()?;
        self.matching.validate()?;
        let bad = |m: String| Err(HarnessError::Config(m));
        let (m, s) = (&self.model, &self.scenes);
        if m.num_classes != s.num_classes {
            return bad(format!("model.num_classes {} differs from scenes.num_classes {}", m.num_classes, s.num_classes));
        }
        if m.in_channels != s.raster_channels() {
            return bad(format!(
                "model.in_channels {} but scenes render {} channels",
                m.in_channels,
                s.raster_channels()
            ));
        }
        if (m.image_width, m.image_height) != (s.camera.width, s.camera.height) {
            return bad(format!(
                "model image {}x{} differs from camera {}x{}",
                m.image_width, m.image_height, s.camera.width, s.camera.height
            ));
        }
        if m.num_queries < s.max_objects {
            return bad(format!("{} queries cannot hold {} objects", m.num_queries, s.max_objects));
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return bad(format!("data.val_fraction {} outside [0, 1)", self.data.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.data.min_visibility) {
            return bad(format!("data.min_visibility {} outside [0, 1]", self.data.min_visibility));
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    pub fn objective(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            matching: self.matching,
            supervise_all_frames: self.train.supervise_all_frames,
            temporal_after_fusion: self.train.temporal_after_fusion,
            pose_teacher: self.train.pose_teacher,
        }
    }

    /// Where outputs go: the explicit directory, else `$MOTPOSE_OUT`, else `runs`.
    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(default_out_root)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serializes");
        hex(&Sha256::digest(json))
    }
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn toml_error(e: &toml::de::Error, text: &str, origin: &str) -> HarnessError {
    let line = e
        .span()
        .map(|s| format!(":{}", text[..s.start.min(text.len())].matches('\n').count() + 1))
        .unwrap_or_default();
    HarnessError::Config(format!("{origin}{line}: {}", e.message().trim()))
}
