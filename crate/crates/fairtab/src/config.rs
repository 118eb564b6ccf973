//! Experiment configuration files.

use std::path::{Path, PathBuf};

use fairtab_core::classify::{AdapterConfig, ClassWeight, LinearOptions};
use fairtab_core::lm::{Pooling, PretrainConfig, ToyLmConfig};
use fairtab_core::metrics::MetricOptions;
use fairtab_core::table::{EncodeOptions, SplitSpec};
use fairtab_core::unlearn::{LossWeights, UnlearnRunConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_json;

/// Which of the four pipeline stages to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    Pretrained = 1,
    Cda = 2,
    Unlearned = 3,
    UnlearnedCda = 4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Pretrained, Stage::Cda, Stage::Unlearned, Stage::UnlearnedCda];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::Pretrained => "Pretrained",
            Stage::Cda => "+CDA",
            Stage::Unlearned => "Unlearned",
            Stage::UnlearnedCda => "Unlearned+CDA",
        }
    }

    pub fn cda(self) -> bool {
        matches!(self, Stage::Cda | Stage::UnlearnedCda)
    }

    pub fn unlearned(self) -> bool {
        matches!(self, Stage::Unlearned | Stage::UnlearnedCda)
    }

    pub fn with_cda(self) -> Self {
        if self.unlearned() {
            Stage::UnlearnedCda
        } else {
            Stage::Cda
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(n: u8) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|s| s.number() == n)
            .ok_or_else(|| format!("stage must be 1, 2, 3 or 4, got {n}"))
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierPath {
    /// Logistic regression on encoded features.
    Tabular,
    /// Logistic regression on frozen LM embeddings of serialized rows.
    Embed,
    /// Adapter-tuned LM answering yes/no.
    Lm,
}

impl ClassifierPath {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierPath::Tabular => "tabular",
            ClassifierPath::Embed => "embed",
            ClassifierPath::Lm => "lm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub csv: PathBuf,
    pub schema: PathBuf,
    /// Classification task JSON; required for the LM paths.
    #[serde(default)]
    pub task: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

/// Where the neutral corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeutralSource {
    Jsonl(PathBuf),
    Synthetic { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Registered backend name; only `toy` ships.
    #[serde(default = "default_backend")]
    pub name: String,
    /// Pretrained checkpoint to load instead of pretraining in-run.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Unlearned checkpoint to load instead of unlearning in-run.
    #[serde(default)]
    pub unlearned_checkpoint: Option<PathBuf>,
    pub qa: PathBuf,
    pub neutral: NeutralSource,
    /// Held-out corpus for perplexity; defaults to the neutral corpus.
    #[serde(default)]
    pub perplexity_corpus: Option<NeutralSource>,
    #[serde(default)]
    pub toy: ToyLmConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    /// Stereotype answers per antistereotype answer in the pretraining text.
    #[serde(default = "default_skew")]
    pub stereotype_skew: usize,
    /// Dataset prompts (without answers) added to the tokenizer and
    /// pretraining text.
    #[serde(default = "default_corpus_rows")]
    pub corpus_rows: usize,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
}

fn default_backend() -> String {
    "toy".into()
}
fn default_skew() -> usize {
    7
}
fn default_corpus_rows() -> usize {
    256
}
fn default_max_vocab() -> usize {
    256
}

pub fn default_unlearn() -> UnlearnRunConfig {
    UnlearnRunConfig {
        validation_fraction: 0.0,
        ..UnlearnRunConfig::new(LossWeights::new(0.5, 0.25, 0.25, 1.0), 1e-3, 30, 2)
    }
}

fn default_linear() -> LinearOptions {
    LinearOptions {
        class_weight: ClassWeight::Balanced,
        ..LinearOptions::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Model label used in result tables.
    #[serde(default)]
    pub model: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default = "default_path")]
    pub path: ClassifierPath,
    #[serde(default = "default_stage")]
    pub stage: Stage,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_linear")]
    pub linear: LinearOptions,
    #[serde(default)]
    pub encode: EncodeOptions,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default = "default_unlearn")]
    pub unlearn: UnlearnRunConfig,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub pooling: Pooling,
    /// Subsample of each training partition used by the LM paths.
    #[serde(default)]
    pub max_train_rows: Option<usize>,
    /// Subsample of each test partition used by the LM paths.
    #[serde(default)]
    pub max_test_rows: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_path() -> ClassifierPath {
    ClassifierPath::Tabular
}
fn default_stage() -> Stage {
    Stage::Pretrained
}
fn default_out() -> PathBuf {
    "out".into()
}

/// Replaces `${VAR}` with the environment variable's value.
pub fn expand_env(path: &Path) -> Result<PathBuf> {
    let s = path.to_string_lossy();
    let mut out = String::new();
    let mut rest: &str = &s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| Error::Config(format!("unterminated variable in `{s}`")))?;
        let var = &rest[start + 2..start + end];
        let val = std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?;
        out.push_str(&val);
        rest = &rest[start + end + 1..];
    }
    out.push_str(rest);
    Ok(out.into())
}

/// Expands variables and anchors relative paths at `base`.
pub fn resolve(base: &Path, path: &Path) -> Result<PathBuf> {
    let p = expand_env(path)?;
    Ok(if p.is_absolute() { p } else { base.join(p) })
}

fn resolve_source(base: &Path, s: &mut NeutralSource) -> Result<()> {
    if let NeutralSource::Jsonl(p) = s {
        *p = resolve(base, p)?;
    }
    Ok(())
}

impl BackendConfig {
    fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        for p in [&mut self.checkpoint, &mut self.unlearned_checkpoint].into_iter().flatten() {
            *p = resolve(base, p)?;
        }
        self.qa = resolve(base, &self.qa)?;
        resolve_source(base, &mut self.neutral)?;
        if let Some(s) = &mut self.perplexity_corpus {
            resolve_source(base, s)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name != "toy" {
            return Err(Error::Config(format!("unknown backend `{}` (available: toy)", self.name)));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Reads a config file, resolving its paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        self.dataset.csv = resolve(base, &self.dataset.csv)?;
        self.dataset.schema = resolve(base, &self.dataset.schema)?;
        if let Some(t) = &mut self.dataset.task {
            *t = resolve(base, t)?;
        }
        if let Some(b) = &mut self.backend {
            b.resolve_paths(base)?;
        }
        self.out = resolve(base, &self.out)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.delimiter.is_ascii() {
            return Err(Error::Config("delimiter must be an ASCII character".into()));
        }
        match self.path {
            ClassifierPath::Tabular if self.stage.unlearned() => {
                return Err(Error::Config("the tabular path has no language model to unlearn (stages 1-2 only)".into()))
            }
            ClassifierPath::Tabular => {}
            _ => {
                let b = self.backend.as_ref().ok_or_else(|| {
                    Error::Config(format!("path `{}` requires a backend", self.path.as_str()))
                })?;
                b.validate()?;
                if self.dataset.task.is_none() {
                    return Err(Error::Config(format!("path `{}` requires dataset.task", self.path.as_str())));
                }
            }
        }
        if self.stage.unlearned() {
            self.unlearn.validate()?;
        }
        Ok(())
    }

    /// Label of the model column in result tables.
    pub fn model_label(&self) -> String {
        self.model.clone().unwrap_or_else(|| match self.path {
            ClassifierPath::Tabular => "Logistic Reg.".into(),
            ClassifierPath::Embed => "toy LM embeddings".into(),
            ClassifierPath::Lm => "toy LM adapters".into(),
        })
    }
}

/// Probe of intrinsic bias before and/or after unlearning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicConfig {
    pub backend: BackendConfig,
    #[serde(default = "default_unlearn")]
    pub unlearn: UnlearnRunConfig,
    #[serde(default = "default_models")]
    pub models: Vec<ProbeModel>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeModel {
    Pretrained,
    Unlearned,
}

fn default_models() -> Vec<ProbeModel> {
    vec![ProbeModel::Pretrained, ProbeModel::Unlearned]
}

impl IntrinsicConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.backend.resolve_paths(base)?;
        cfg.out = resolve(base, &cfg.out)?;
        cfg.backend.validate()?;
        Ok(cfg)
    }
}

/// Hyperparameter sweep over unlearning configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub backend: BackendConfig,
    #[serde(default = "default_unlearn")]
    pub base: UnlearnRunConfig,
    #[serde(default)]
    pub space: fairtab_core::unlearn::GridSpace,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.backend.resolve_paths(base)?;
        cfg.out = resolve(base, &cfg.out)?;
        cfg.backend.validate()?;
        Ok(cfg)
    }
}
