//! Construction of the language-model backend: tokenizer, bias-carrying
//! pretraining and the unlearned checkpoint.

use std::collections::BTreeMap;
use std::path::Path;

use fairtab_core::lm::{neutral_corpus, pretrain, ToyLm, WordTokenizer};
use fairtab_core::metrics::IntrinsicReport;
use fairtab_core::qa::QaPair;
use fairtab_core::unlearn::{train_unlearn, EpochLog, RunStatus, UnlearnRunConfig};
use serde::{Deserialize, Serialize};

use crate::config::{BackendConfig, NeutralSource};
use crate::error::{Context, Result};
use crate::io::{load_model, load_neutral, load_qa, sha256_file};

pub fn neutral_texts(source: &NeutralSource) -> Result<Vec<String>> {
    Ok(match source {
        NeutralSource::Jsonl(p) => load_neutral(p)?.iter().map(|e| e.text()).collect(),
        NeutralSource::Synthetic { n, seed } => neutral_corpus(*n, *seed).iter().map(|e| e.text()).collect(),
    })
}

/// Pretraining text: the neutral corpus, every probe prompt answered `skew`
/// times with its stereotype and once with its antistereotype, and `extra`.
pub fn pretraining_corpus(neutral: &[String], qa: &[QaPair], skew: usize, extra: &[String]) -> Vec<String> {
    let mut c = neutral.to_vec();
    for p in qa {
        for _ in 0..skew {
            c.push(format!("{} {}", p.prompt, p.stereotype));
        }
        c.push(format!("{} {}", p.prompt, p.antistereotype));
    }
    c.extend_from_slice(extra);
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnSummary {
    /// `in-run` or `checkpoint`.
    pub source: String,
    pub config: Option<UnlearnRunConfig>,
    pub selected_epoch: Option<usize>,
    pub status: Option<RunStatus>,
    /// Intrinsic report of the selected checkpoint on the validation pairs.
    pub validation: Option<IntrinsicReport>,
}

#[derive(Debug, Clone)]
pub struct Unlearned {
    pub model: ToyLm,
    pub summary: UnlearnSummary,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct Backend {
    pub config: BackendConfig,
    pub pretrained: ToyLm,
    pub qa: Vec<QaPair>,
    pub neutral: Vec<String>,
    pub perplexity_corpus: Vec<String>,
    /// Mean next-token loss of every pretraining epoch (empty when loaded).
    pub pretrain_losses: Vec<f64>,
    /// SHA-256 of every file read, keyed by role.
    pub inputs: BTreeMap<String, String>,
    unlearned: Option<Unlearned>,
}

impl Backend {
    /// Loads or pretrains the base model. `extra` texts join the tokenizer
    /// and pretraining corpora; `required` tokens are always in the
    /// vocabulary.
    pub fn build(cfg: &BackendConfig, extra: &[String], required: &[&str]) -> Result<Self> {
        cfg.validate()?;
        let mut inputs = BTreeMap::new();
        let qa = load_qa(&cfg.qa)?;
        inputs.insert("backend.qa".into(), sha256_file(&cfg.qa)?);
        if let NeutralSource::Jsonl(p) = &cfg.neutral {
            inputs.insert("backend.neutral".into(), sha256_file(p)?);
        }
        if let Some(NeutralSource::Jsonl(p)) = &cfg.perplexity_corpus {
            inputs.insert("backend.perplexity_corpus".into(), sha256_file(p)?);
        }
        let neutral = neutral_texts(&cfg.neutral)?;
        let perplexity_corpus = match &cfg.perplexity_corpus {
            Some(s) => neutral_texts(s)?,
            None => neutral.clone(),
        };
        let (pretrained, pretrain_losses) = match &cfg.checkpoint {
            Some(p) => {
                inputs.insert("backend.checkpoint".into(), sha256_file(p)?);
                (load_model(p)?, Vec::new())
            }
            None => {
                let corpus = pretraining_corpus(&neutral, &qa, cfg.stereotype_skew, extra);
                let mut req: Vec<&str> = required.to_vec();
                for p in &qa {
                    req.push(&p.stereotype);
                    req.push(&p.antistereotype);
                }
                let tok = WordTokenizer::from_corpus(&corpus, &req, cfg.max_vocab).context("building tokenizer")?;
                let base = ToyLm::new(tok, cfg.toy.clone()).context("building toy model")?;
                log::info!("pretraining toy model on {} texts", corpus.len());
                pretrain(&base, &corpus, &cfg.pretrain).context("pretraining")?
            }
        };
        let mut b = Self {
            config: cfg.clone(),
            pretrained,
            qa,
            neutral,
            perplexity_corpus,
            pretrain_losses,
            inputs,
            unlearned: None,
        };
        if let Some(p) = &cfg.unlearned_checkpoint {
            b.inputs.insert("backend.unlearned_checkpoint".into(), sha256_file(p)?);
            b.unlearned = Some(Unlearned {
                model: load_model(p)?,
                summary: UnlearnSummary {
                    source: "checkpoint".into(),
                    config: None,
                    selected_epoch: None,
                    status: None,
                    validation: None,
                },
                log: Vec::new(),
            });
        }
        Ok(b)
    }

    /// The unlearned model, trained on first use.
    pub fn unlearned(&mut self, cfg: &UnlearnRunConfig) -> Result<&Unlearned> {
        if self.unlearned.is_none() {
            log::info!("unlearning with weights {:?}", cfg.weights.as_array());
            let out = train_unlearn(&self.pretrained, &self.qa, &self.neutral, cfg).context("unlearning")?;
            self.unlearned = Some(Unlearned {
                model: out.model,
                summary: UnlearnSummary {
                    source: "in-run".into(),
                    config: Some(cfg.clone()),
                    selected_epoch: Some(out.selected_epoch),
                    status: Some(out.status),
                    validation: Some(out.validation),
                },
                log: out.log,
            });
        }
        Ok(self.unlearned.as_ref().expect("set above"))
    }

    pub fn unlearned_if_ready(&self) -> Option<&Unlearned> {
        self.unlearned.as_ref()
    }
}

/// Resolved model checkpoints of a backend, written by `fairtab backend`.
pub fn save_backend(b: &mut Backend, cfg: &UnlearnRunConfig, dir: &Path) -> Result<()> {
    crate::io::save_model(&dir.join("pretrained.json"), &b.pretrained)?;
    let u = b.unlearned(cfg)?;
    crate::io::save_model(&dir.join("unlearned.json"), &u.model)?;
    crate::io::write_jsonl(&dir.join("runlog.jsonl"), &u.log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fairtab_core::qa::Context as Ctx;

    #[test]
    fn corpus_carries_the_skew() {
        let qa = vec![QaPair::new("Who are poor?", "women", "men", Ctx::Poverty)];
        let c = pretraining_corpus(&["a b".into()], &qa, 3, &["x".into()]);
        assert_eq!(c.len(), 1 + 3 + 1 + 1);
        assert_eq!(c.iter().filter(|t| t.ends_with("women")).count(), 3);
        assert_eq!(c.last().unwrap(), "x");
    }
}
