use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, AdapterHost, CausalLm, LoraSpec, Pooling, TokenId, Tokenizer};
use crate::math;
use crate::optim::{Adam, AdamConfig};
use crate::serialize::{SerializedExample, TaskTemplate};
use crate::table::{EncodedColumn, FeatureMatrix};

/// Embeds every example with the frozen model; row `i` is the embedding of
/// `examples[i].text`.
pub fn embed_dataset<M: CausalLm>(model: &M, examples: &[SerializedExample], pooling: Pooling) -> Result<FeatureMatrix> {
    let m = model.hidden_size();
    let mut data = Vec::with_capacity(examples.len() * m);
    for ex in examples {
        data.extend(lm::embed(model, &ex.text, pooling)?);
    }
    let mut out = FeatureMatrix::new(
        examples.len(),
        m,
        data,
        examples.iter().map(|e| e.label).collect(),
        examples.iter().map(|e| e.group).collect(),
    )?;
    out.columns = (0..m)
        .map(|j| EncodedColumn {
            feature: alloc::format!("h{j}"),
            level: None,
        })
        .collect();
    Ok(out)
}

/// Standardizes columns of `train` and applies the same map to `test`.
pub fn standardize(train: &mut FeatureMatrix, test: &mut FeatureMatrix) {
    for j in 0..train.cols {
        let col: Vec<f64> = train.column(j).collect();
        let (mean, std) = math::mean_std(&col);
        for x in [&mut *train, &mut *test] {
            for i in 0..x.rows {
                let v = &mut x.data[i * x.cols + j];
                *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    #[serde(flatten)]
    pub lora: LoraSpec,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_val_fraction")]
    pub validation_fraction: f64,
    /// Global gradient-norm clip applied before every step.
    #[serde(default = "default_clip")]
    pub max_grad_norm: Option<f64>,
}

fn default_epochs() -> usize {
    3
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    8
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            lora: LoraSpec::default(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_steps: None,
            validation_fraction: default_val_fraction(),
            max_grad_norm: default_clip(),
        }
    }
}

/// Token the model should emit for `label`.
pub fn gold_token(label: u8, task: &TaskTemplate) -> &str {
    if (label == 1) == task.positive_means_yes {
        &task.yes_token
    } else {
        &task.no_token
    }
}

/// `true` (yes) iff `logits[yes] ≥ logits[no]`; every other token is
/// ignored and ties go to yes.
pub fn restricted_argmax(logits: &[f64], yes: TokenId, no: TokenId) -> bool {
    logits[yes as usize] >= logits[no as usize]
}

fn answer_ids<M: CausalLm>(model: &M, task: &TaskTemplate) -> Result<(TokenId, TokenId)> {
    let tok = model.tokenizer();
    let one = |s: &str| match tok.encode(s).as_slice() {
        [t] if tok.token_id(s) == Some(*t) => Ok(*t),
        _ => Err(Error::UnknownToken(s.into())),
    };
    Ok((one(&task.yes_token)?, one(&task.no_token)?))
}

/// Predicted label for `prompt` under the yes/no restricted argmax.
pub fn predict_yes_no<M: CausalLm>(model: &M, prompt: &str, task: &TaskTemplate) -> Result<u8> {
    let (yes, no) = answer_ids(model, task)?;
    let ids = model.input_ids(prompt);
    if ids.len() > model.context_size() {
        return Err(Error::ContextOverflow {
            len: ids.len(),
            max: model.context_size(),
        });
    }
    let said_yes = restricted_argmax(&model.next_token_logits(&ids)?, yes, no);
    Ok(u8::from(said_yes == task.positive_means_yes))
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome<M> {
    pub model: M,
    /// Mean training cross-entropy of every optimizer step.
    pub step_losses: Vec<f64>,
    pub epoch_val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub base_digest_before: [u8; 32],
}

/// Fine-tunes low-rank adapters with full-vocabulary cross-entropy on the
/// gold answer token and keeps the epoch with the best validation accuracy
/// (ties go to the lower validation cross-entropy, then the earliest).
pub fn finetune_lm_classifier<M: AdapterHost>(
    model: &M,
    prompts: &[impl AsRef<str>],
    labels: &[u8],
    task: &TaskTemplate,
    cfg: &AdapterConfig,
    seed: u64,
) -> Result<FineTuneOutcome<M>> {
    if prompts.len() != labels.len() {
        return Err(Error::Dimension {
            expected: prompts.len(),
            got: labels.len(),
        });
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::SingleClass);
    }
    if cfg.batch_size == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let (yes, no) = answer_ids(model, task)?;
    let mut tuned = model.clone();
    let base_digest_before = tuned.base_digest();
    tuned.attach_adapters(&cfg.lora, seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = prompts.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 10 {
        (math::round(cfg.validation_fraction * n as f64) as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val: Vec<usize> = if n_val == 0 { (0..n).collect() } else { order[..n_val].to_vec() };
    let mut train: Vec<usize> = if n_val == 0 { (0..n).collect() } else { order[n_val..].to_vec() };

    let encoded: Vec<Vec<TokenId>> = prompts
        .iter()
        .map(|p| {
            let ids = tuned.input_ids(p.as_ref());
            if ids.len() > tuned.context_size() {
                Err(Error::ContextOverflow {
                    len: ids.len(),
                    max: tuned.context_size(),
                })
            } else {
                Ok(ids)
            }
        })
        .collect::<Result<_>>()?;
    let gold: Vec<TokenId> = labels.iter().map(|&y| if (y == 1) == task.positive_means_yes { yes } else { no }).collect();

    // accuracy and mean gold-token cross-entropy on the validation prompts
    let validate = |m: &M| -> Result<(f64, f64)> {
        let mut correct = 0;
        let mut ce = 0.0;
        for &i in &val {
            let logits = m.next_token_logits(&encoded[i])?;
            let said_yes = restricted_argmax(&logits, yes, no);
            if u8::from(said_yes == task.positive_means_yes) == labels[i] {
                correct += 1;
            }
            ce += math::log_sum_exp(&logits) - logits[gold[i] as usize];
        }
        Ok((correct as f64 / val.len() as f64, ce / val.len() as f64))
    };

    let v = tuned.vocab_size();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate), tuned.parameters().len());
    let mut grad = vec![0.0; tuned.parameters().len()];
    let mut step_losses = Vec::new();
    let mut epoch_val_accuracy = Vec::new();
    let mut best: Option<(M, usize, (f64, f64))> = None;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);

    let mut epoch = 0;
    let mut pending = false;
    while epoch < cfg.epochs.max(1) && step_losses.len() < max_steps {
        epoch += 1;
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size) {
            if step_losses.len() >= max_steps {
                break;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            let b = batch.len() as f64;
            for &i in batch {
                let ids = &encoded[i];
                let (logits, trace) = tuned.forward_trace(ids, ids.len() - 1, Some(&mut rng))?;
                let p = math::softmax(&logits);
                let g = gold[i] as usize;
                loss -= math::ln(p[g].max(f64::MIN_POSITIVE)) / b;
                let mut d: Vec<f64> = p.iter().map(|x| x / b).collect();
                d[g] -= 1.0 / b;
                debug_assert_eq!(d.len(), v);
                tuned.backward(&trace, &d, &mut grad);
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite("fine-tuning loss".into()));
            }
            if let Some(max) = cfg.max_grad_norm {
                let n = math::norm(&grad);
                if n > max {
                    grad.iter_mut().for_each(|g| *g *= max / n);
                }
            }
            opt.step(tuned.parameters_mut(), &grad);
            step_losses.push(loss);
            pending = true;
        }
        if pending {
            let score = validate(&tuned)?;
            epoch_val_accuracy.push(score.0);
            if best.as_ref().is_none_or(|b| score.0 > b.2 .0 || (score.0 == b.2 .0 && score.1 < b.2 .1)) {
                best = Some((tuned.clone(), epoch, score));
            }
            pending = false;
        }
    }
    if best.is_none() {
        best = Some((tuned.clone(), 0, validate(&tuned)?));
    }
    let (model, best_epoch, _) = best.expect("set above");
    Ok(FineTuneOutcome {
        model,
        step_losses,
        epoch_val_accuracy,
        best_epoch,
        base_digest_before,
    })
}
