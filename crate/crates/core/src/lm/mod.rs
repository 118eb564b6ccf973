//! Causal language-model interface and the operations built on it.

mod neutral;
mod pretrain;
mod tokenizer;
mod toy;

use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub use neutral::{neutral_corpus, NeutralExample};
pub use pretrain::{pretrain, PretrainConfig};
pub use tokenizer::{pieces, Tokenizer, WordTokenizer, BOS, PAD, UNK};
pub use toy::{Block, LoraSpec, PlantedBias, Projection, ToyLm, ToyLmConfig, ToyTrace};

pub type TokenId = u32;

/// How a sequence of final-layer hidden states is reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Last,
    Mean,
}

/// Read-only view of a causal LM: next-token distributions and hidden
/// states for token sequences.
pub trait CausalLm {
    type Tok: Tokenizer;

    fn tokenizer(&self) -> &Self::Tok;
    fn context_size(&self) -> usize;
    /// Width `m` of the final hidden state.
    fn hidden_size(&self) -> usize;

    /// Row-major logits for positions `from..tokens.len()`.
    fn logits(&self, tokens: &[TokenId], from: usize) -> Result<Vec<f64>>;

    /// Final-layer hidden states, row-major `tokens.len() x hidden_size`.
    fn hidden_states(&self, tokens: &[TokenId]) -> Result<Vec<f64>>;

    fn vocab_size(&self) -> usize {
        self.tokenizer().vocab_size()
    }

    fn next_token_logits(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        self.logits(tokens, tokens.len() - 1)
    }

    /// Model input for `text`: the sequence-start token followed by its
    /// encoding.
    fn input_ids(&self, text: &str) -> Vec<TokenId> {
        let tok = self.tokenizer();
        tok.bos().into_iter().chain(tok.encode(text)).collect()
    }
}

/// A causal LM with a flat vector of trainable parameters and an explicit
/// backward pass.
pub trait TrainableLm: CausalLm + Clone {
    type Trace;

    /// Forward pass that keeps what `backward` needs. Dropout (where the
    /// model has any) is active only when `rng` is given.
    fn forward_trace(
        &self,
        tokens: &[TokenId],
        from: usize,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<f64>, Self::Trace)>;

    /// Accumulates into `grad` the gradient of `sum(dlogits * logits)` with
    /// respect to the trainable parameters.
    fn backward(&self, trace: &Self::Trace, dlogits: &[f64], grad: &mut [f64]);

    fn parameters(&self) -> &[f64];
    fn parameters_mut(&mut self) -> &mut [f64];

    /// Frozen copy; later training of `self` never affects it.
    fn snapshot(&self) -> Self {
        self.clone()
    }
}

/// Models that can be fine-tuned through low-rank adapters while their base
/// weights stay frozen.
pub trait AdapterHost: TrainableLm {
    /// Attaches fresh adapters. Afterwards `parameters` exposes only the
    /// adapter factors.
    fn attach_adapters(&mut self, spec: &LoraSpec, seed: u64) -> Result<()>;
    fn has_adapters(&self) -> bool;
    /// SHA-256 of the base weights.
    fn base_digest(&self) -> [u8; 32];
}

fn check_context<M: CausalLm + ?Sized>(model: &M, len: usize) -> Result<()> {
    if len > model.context_size() {
        return Err(Error::ContextOverflow {
            len,
            max: model.context_size(),
        });
    }
    Ok(())
}

/// Prompt and answer token ids; the answer starts at index `split`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scored {
    pub tokens: Vec<TokenId>,
    pub split: usize,
}

impl Scored {
    pub fn new<M: CausalLm + ?Sized>(model: &M, prompt: &str, answer: &str) -> Result<Self> {
        let mut tokens = model.input_ids(prompt);
        let split = tokens.len();
        tokens.extend(model.tokenizer().encode(answer));
        if tokens.len() == split {
            return Err(Error::Empty("answer tokens"));
        }
        if split == 0 {
            return Err(Error::Empty("prompt tokens"));
        }
        check_context(model, tokens.len())?;
        Ok(Self { tokens, split })
    }

    /// First position whose logits are needed.
    pub fn from(&self) -> usize {
        self.split - 1
    }

    /// Answer log-probability from logits rows starting at `from()`.
    pub fn log_prob(&self, logits: &[f64], vocab: usize) -> f64 {
        let mut lp = 0.0;
        for (k, &t) in self.tokens[self.split..].iter().enumerate() {
            let row = &logits[k * vocab..(k + 1) * vocab];
            lp += row[t as usize] - math::log_sum_exp(row);
        }
        lp
    }

    /// `d log_prob / d logits`, scaled by `weight`, added into `dlogits`.
    pub fn add_grad(&self, logits: &[f64], vocab: usize, weight: f64, dlogits: &mut [f64]) {
        for (k, &t) in self.tokens[self.split..].iter().enumerate() {
            let row = &logits[k * vocab..(k + 1) * vocab];
            let p = math::softmax(row);
            let d = &mut dlogits[k * vocab..(k + 1) * vocab];
            for v in 0..vocab {
                d[v] -= weight * p[v];
            }
            d[t as usize] += weight;
        }
    }
}

/// `Σ log P(answer_k | prompt, answer_<k)`, without length normalization.
pub fn sequence_log_prob<M: CausalLm + ?Sized>(model: &M, prompt: &str, answer: &str) -> Result<f64> {
    let s = Scored::new(model, prompt, answer)?;
    let logits = model.logits(&s.tokens, s.from())?;
    Ok(s.log_prob(&logits, model.vocab_size()))
}

/// Total negative log-likelihood and number of predicted positions of one
/// text (every token after the sequence start).
pub fn text_nll<M: CausalLm + ?Sized>(model: &M, text: &str) -> Result<(f64, usize)> {
    let tokens = model.input_ids(text);
    if tokens.len() < 2 {
        return Ok((0.0, 0));
    }
    check_context(model, tokens.len())?;
    let v = model.vocab_size();
    let logits = model.logits(&tokens, 0)?;
    let mut nll = 0.0;
    for i in 0..tokens.len() - 1 {
        let row = &logits[i * v..(i + 1) * v];
        nll += math::log_sum_exp(row) - row[tokens[i + 1] as usize];
    }
    Ok((nll, tokens.len() - 1))
}

/// `exp` of the mean per-token negative log-likelihood, pooled over all
/// predicted positions of all documents.
pub fn perplexity<M: CausalLm + ?Sized, S: AsRef<str>>(model: &M, corpus: &[S]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for text in corpus {
        let (nll, n) = text_nll(model, text.as_ref())?;
        total += nll;
        count += n;
    }
    if count == 0 {
        return Err(Error::Empty("corpus tokens"));
    }
    Ok(math::exp(total / count as f64))
}

/// Hidden-state embedding of `text` (sequence-start token included in the
/// input).
pub fn embed<M: CausalLm + ?Sized>(model: &M, text: &str, pooling: Pooling) -> Result<Vec<f64>> {
    if model.tokenizer().encode(text).is_empty() {
        return Err(Error::Empty("tokenization"));
    }
    let tokens = model.input_ids(text);
    check_context(model, tokens.len())?;
    let h = model.hidden_states(&tokens)?;
    let m = model.hidden_size();
    let t = tokens.len();
    Ok(match pooling {
        Pooling::Last => h[(t - 1) * m..t * m].to_vec(),
        Pooling::Mean => {
            let mut out = alloc::vec![0.0; m];
            for i in 0..t {
                for j in 0..m {
                    out[j] += h[i * m + j];
                }
            }
            out.iter_mut().for_each(|x| *x /= t as f64);
            out
        }
    })
}

/// Next-token probability of `token` after `prompt`.
pub fn next_token_prob<M: CausalLm + ?Sized>(model: &M, prompt: &str, token: TokenId) -> Result<f64> {
    let tokens = model.input_ids(prompt);
    check_context(model, tokens.len())?;
    let p = math::softmax(&model.next_token_logits(&tokens)?);
    p.get(token as usize)
        .copied()
        .ok_or_else(|| Error::UnknownToken(alloc::format!("id {token}")))
}
