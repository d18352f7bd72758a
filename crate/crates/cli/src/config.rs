//! Run configuration file: parsing, path resolution and field-level checks.

use hyposearch::client::{BackendRegistry, BackendSettings};
use hyposearch::discovery::LoopConfig;
use hyposearch::hypogen::GenerationSettings;
use hyposearch::ingest::SplitRatios;
use hyposearch::synth::{ChatBehavior, SYNTHETIC_BACKEND};
use hyposearch::vqa::EmbedSettings;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config {path} is not valid: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n"))]
    Fields(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub manifest: Option<PathBuf>,
    /// World spec file for an offline synthetic dataset.
    pub synthetic: Option<PathBuf>,
    /// Base directory for relative image paths in the manifest.
    pub image_dir: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_llm_model")]
    pub model: String,
    #[serde(default = "default_llm_temperature")]
    pub temperature: f64,
    #[serde(default = "default_llm_tokens")]
    pub max_tokens: u32,
    /// Extra attempts for a reply that yields too few hypotheses.
    #[serde(default = "default_retries")]
    pub retries: u32,
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Synthetic backend only: `vocabulary` or `noise`.
    #[serde(default)]
    pub behavior: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MllmSection {
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_mllm_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_mllm_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub cache_dir: Option<PathBuf>,
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_ceiling")]
    pub missing_ceiling: f64,
    /// Synthetic backend only: fraction of images whose calls always fail.
    #[serde(default)]
    pub failure_rate: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub run_dir: PathBuf,
    /// Also emit k-fold cross-validated predictions per segment.
    pub cv_folds: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: DatasetSection,
    #[serde(rename = "loop", default)]
    pub loop_config: LoopConfig,
    pub llm: LlmSection,
    pub mllm: MllmSection,
    pub output: OutputSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base: PathBuf,
}

fn default_backend() -> String {
    "openai".into()
}
fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}
fn default_llm_model() -> String {
    GenerationSettings::default().model
}
fn default_llm_temperature() -> f64 {
    GenerationSettings::default().temperature
}
fn default_llm_tokens() -> u32 {
    GenerationSettings::default().max_tokens
}
fn default_retries() -> u32 {
    GenerationSettings::default().retries
}
fn default_mllm_model() -> String {
    EmbedSettings::default().model
}
fn default_mllm_tokens() -> u32 {
    EmbedSettings::default().max_tokens
}
fn default_parallelism() -> usize {
    EmbedSettings::default().parallelism
}
fn default_ceiling() -> f64 {
    EmbedSettings::default().missing_ceiling
}
fn default_timeout() -> u64 {
    120
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.output.run_dir)
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.mllm.cache_dir.as_deref().map(|p| self.resolve(p))
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.loop_config.seed = seed;
    }

    pub fn chat_behavior(&self) -> ChatBehavior {
        match self.llm.behavior.as_deref() {
            Some("noise") => ChatBehavior::Noise,
            _ => ChatBehavior::Vocabulary,
        }
    }

    pub fn generation_settings(&self) -> GenerationSettings {
        GenerationSettings {
            model: self.llm.model.clone(),
            temperature: self.llm.temperature,
            max_tokens: self.llm.max_tokens,
            retries: self.llm.retries,
        }
    }

    pub fn embed_settings(&self) -> EmbedSettings {
        EmbedSettings {
            model: self.mllm.model.clone(),
            temperature: self.mllm.temperature,
            max_tokens: self.mllm.max_tokens,
            parallelism: self.mllm.parallelism,
            missing_ceiling: self.mllm.missing_ceiling,
            ..EmbedSettings::default()
        }
    }

    pub fn llm_backend(&self) -> BackendSettings {
        BackendSettings {
            base_url: self.llm.base_url.clone(),
            model: self.llm.model.clone(),
            auth_env: self.llm.auth_env.clone(),
            timeout_secs: self.llm.timeout_secs,
        }
    }

    pub fn mllm_backend(&self) -> BackendSettings {
        BackendSettings {
            base_url: self.mllm.base_url.clone(),
            model: self.mllm.model.clone(),
            auth_env: self.mllm.auth_env.clone(),
            timeout_secs: self.mllm.timeout_secs,
        }
    }

    /// Collects every field-level problem rather than stopping at the first.
    /// The synthetic backend counts as known even before it is registered.
    pub fn validate(&self, registry: &BackendRegistry) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let d = &self.dataset;
        match (&d.manifest, &d.synthetic) {
            (Some(_), Some(_)) => problems.push(
                "dataset: `manifest` and `synthetic` are mutually exclusive; set exactly one".to_string(),
            ),
            (None, None) => problems.push("dataset: set exactly one of `manifest` or `synthetic`".to_string()),
            _ => {}
        }
        for (field, path) in [
            ("dataset.manifest", &d.manifest),
            ("dataset.synthetic", &d.synthetic),
            ("dataset.image_dir", &d.image_dir),
        ] {
            if let Some(p) = path {
                let full = self.resolve(p);
                if !full.exists() {
                    problems.push(format!("{field}: {} does not exist", full.display()));
                }
            }
        }
        if let Err(e) = d.split.validate() {
            problems.push(format!("dataset.split: {e}"));
        }
        if let Err(e) = self.loop_config.validate() {
            problems.push(e.to_string().trim_start_matches("configuration: ").to_string());
        }
        let known = |names: Vec<&str>, b: &str| b == SYNTHETIC_BACKEND || names.contains(&b);
        if !known(registry.chat_names(), &self.llm.backend) {
            problems.push(format!(
                "llm.backend: unknown backend {:?} (known: {})",
                self.llm.backend,
                registry.chat_names().join(", ")
            ));
        }
        if !known(registry.vision_names(), &self.mllm.backend) {
            problems.push(format!(
                "mllm.backend: unknown backend {:?} (known: {})",
                self.mllm.backend,
                registry.vision_names().join(", ")
            ));
        }
        let synthetic_data = d.synthetic.is_some();
        for (field, backend) in [("llm.backend", &self.llm.backend), ("mllm.backend", &self.mllm.backend)] {
            if backend == SYNTHETIC_BACKEND && !synthetic_data {
                problems.push(format!("{field}: the synthetic backend needs a synthetic dataset"));
            }
        }
        if synthetic_data && self.mllm.backend != SYNTHETIC_BACKEND {
            problems.push("mllm.backend: synthetic scenes can only be answered by the synthetic backend".into());
        }
        if let Some(b) = &self.llm.behavior {
            if b != "vocabulary" && b != "noise" {
                problems.push(format!("llm.behavior: expected `vocabulary` or `noise`, got {b:?}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mllm.failure_rate) {
            problems.push(format!("mllm.failure_rate: must be in [0, 1], got {}", self.mllm.failure_rate));
        }
        if !(0.0..=1.0).contains(&self.mllm.missing_ceiling) {
            problems.push(format!(
                "mllm.missing_ceiling: must be in [0, 1], got {}",
                self.mllm.missing_ceiling
            ));
        }
        if self.mllm.parallelism == 0 {
            problems.push("mllm.parallelism: must be >= 1".into());
        }
        if let Some(f) = self.output.cv_folds {
            if f < 2 {
                problems.push(format!("output.cv_folds: must be >= 2, got {f}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Fields(problems))
        }
    }
}
