//! Run configuration: a JSON document with shape / moc / train / embed /
//! output sections. Unknown keys are rejected and every module-level
//! invariant is re-validated on load. Bundled presets carry the four
//! bundled reference model shapes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use moc_core::masking::Criterion;
use moc_core::memory::LayerShape;
use moc_core::moc::MocConfig;
use moc_core::train::TrainConfig;

use crate::CliError;

pub const PRESET_60M: &str = include_str!("../presets/llama-60m.json");
pub const PRESET_130M: &str = include_str!("../presets/llama-130m.json");
pub const PRESET_350M: &str = include_str!("../presets/llama-350m.json");
pub const PRESET_1B: &str = include_str!("../presets/llama-1b.json");

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub shape: ShapeSection,
    pub moc: MocSection,
    pub train: TrainSection,
    pub embed: EmbedSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeSection {
    pub batch: usize,
    pub seq: usize,
    pub d: usize,
    pub d_ffn: usize,
    pub heads: usize,
    pub bytes_per_element: u64,
    pub bytes_per_index: u64,
    pub n_layers: usize,
    pub vocab: usize,
    pub lm_head_bytes_per_element: u64,
}

impl Default for ShapeSection {
    fn default() -> Self {
        // the 350M shape
        ShapeSection {
            batch: 64,
            seq: 256,
            d: 1024,
            d_ffn: 2736,
            heads: 16,
            bytes_per_element: 2,
            bytes_per_index: 2,
            n_layers: 24,
            vocab: 32_000,
            lm_head_bytes_per_element: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MocSection {
    /// Per-row Top-K; mutually exclusive with a/b. When neither is given,
    /// K defaults to half the hidden width d.
    pub k: Option<usize>,
    pub a: Option<usize>,
    pub b: Option<usize>,
    pub criterion: Criterion,
    pub gcp: bool,
}

impl Default for MocSection {
    fn default() -> Self {
        MocSection {
            k: None,
            a: None,
            b: None,
            criterion: Criterion::PreSiluValue,
            gcp: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub d: usize,
    pub d_ffn: usize,
    /// Student Top-K; defaults to half of d.
    pub k: Option<usize>,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub batch: usize,
    pub seed: u64,
    pub task_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            d: 16,
            d_ffn: 43,
            k: None,
            peak_lr: 1e-3,
            min_lr: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            total_steps: 2000,
            warmup_frac: 0.1,
            batch: 64,
            seed: 2024,
            task_seed: 91,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    pub a: usize,
    pub b: usize,
    pub samples: usize,
    pub d: usize,
    pub d_ffn: usize,
    pub seed: u64,
}

impl Default for EmbedSection {
    fn default() -> Self {
        EmbedSection {
            a: 2,
            b: 3,
            samples: 100,
            d: 4,
            d_ffn: 5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub format: OutputFormat,
    pub path: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            format: OutputFormat::Csv,
            path: None,
        }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<RunConfig, CliError> {
        let text = match name {
            "60m" => PRESET_60M,
            "130m" => PRESET_130M,
            "350m" => PRESET_350M,
            "1b" => PRESET_1B,
            other => {
                return Err(CliError::Config(format!(
                    "unknown preset `{other}`; expected one of 60m, 130m, 350m, 1b"
                )))
            }
        };
        RunConfig::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    /// Re-run every module-level invariant against the loaded values.
    pub fn validate(&self) -> Result<(), CliError> {
        self.layer_shape()?;
        self.moc_config()?;
        self.train_config()?;
        self.train_moc_config()?;
        if self.embed.a == 0 || self.embed.b == 0 || self.embed.a > self.embed.b {
            return Err(CliError::Config(format!(
                "embed.a:embed.b = {}:{} is not a valid group",
                self.embed.a, self.embed.b
            )));
        }
        if self.embed.d == 0 || self.embed.d_ffn == 0 || self.embed.samples == 0 {
            return Err(CliError::Config(
                "embed.d, embed.d_ffn and embed.samples must be positive".to_string(),
            ));
        }
        Ok(())
    }

    pub fn layer_shape(&self) -> Result<LayerShape, CliError> {
        let s = &self.shape;
        LayerShape::new(s.batch, s.seq, s.d, s.d_ffn, s.heads)
            .and_then(|shape| shape.with_bytes(s.bytes_per_element, s.bytes_per_index))
            .map_err(|e| CliError::Config(format!("shape: {e}")))
    }

    /// MoC layer config for the model shape.
    pub fn moc_config(&self) -> Result<MocConfig, CliError> {
        let base = match (self.moc.k, self.moc.a, self.moc.b) {
            (Some(k), None, None) => MocConfig::top_k(k),
            (None, Some(a), Some(b)) => MocConfig::grouped(a, b),
            (None, None, None) => MocConfig::top_k((self.shape.d / 2).max(1)),
            _ => {
                return Err(CliError::Config(
                    "moc: specify either k or both a and b, not a mixture".to_string(),
                ))
            }
        };
        let cfg = base
            .with_criterion(self.moc.criterion)
            .with_gcp(self.moc.gcp);
        cfg.validate_for(self.shape.d_ffn)
            .map_err(|e| CliError::Config(format!("moc: {e}")))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let cfg = TrainConfig {
            peak_lr: t.peak_lr,
            min_lr: t.min_lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            total_steps: t.total_steps,
            warmup_frac: t.warmup_frac,
            batch: t.batch,
            seed: t.seed,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(cfg)
    }

    /// Top-K config for the toy training student.
    pub fn train_moc_config(&self) -> Result<MocConfig, CliError> {
        let k = self.train.k.unwrap_or((self.train.d / 2).max(1));
        let cfg = MocConfig::top_k(k);
        cfg.validate_for(self.train.d_ffn)
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(cfg)
    }
}
