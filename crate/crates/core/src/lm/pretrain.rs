use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TokenId, TrainableLm};
use crate::error::{Error, Result};
use crate::math;
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-2,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Next-token cross-entropy training on `corpus`. Returns the trained model
/// and the mean per-token loss of every epoch.
pub fn pretrain<M: TrainableLm, S: AsRef<str>>(model: &M, corpus: &[S], cfg: &PretrainConfig) -> Result<(M, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::Empty("pretraining corpus"));
    }
    if cfg.batch_size == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let docs: Vec<Vec<TokenId>> = corpus
        .iter()
        .map(|t| model.input_ids(t.as_ref()))
        .filter(|ids| ids.len() >= 2)
        .collect();
    if let Some(long) = docs.iter().find(|d| d.len() > model.context_size()) {
        return Err(Error::ContextOverflow {
            len: long.len(),
            max: model.context_size(),
        });
    }
    if docs.is_empty() {
        return Err(Error::Empty("pretraining tokens"));
    }
    let mut m = model.clone();
    let v = m.vocab_size();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate), m.parameters().len());
    let mut grad = vec![0.0; m.parameters().len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let n: usize = batch.iter().map(|&i| docs[i].len() - 1).sum();
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let ids = &docs[i];
                let (logits, trace) = m.forward_trace(ids, 0, None)?;
                let mut d = vec![0.0; logits.len()];
                for pos in 0..ids.len() - 1 {
                    let row = &logits[pos * v..(pos + 1) * v];
                    let p = math::softmax(row);
                    let target = ids[pos + 1] as usize;
                    total -= math::ln(p[target].max(f64::MIN_POSITIVE));
                    for c in 0..v {
                        d[pos * v + c] = p[c] / n as f64;
                    }
                    d[pos * v + target] -= 1.0 / n as f64;
                }
                m.backward(&trace, &d, &mut grad);
            }
            count += n;
            opt.step(m.parameters_mut(), &grad);
        }
        let mean = total / count as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("pretraining loss".into()));
        }
        history.push(mean);
    }
    Ok((m, history))
}
