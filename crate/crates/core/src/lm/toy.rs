//! A small decoder-only transformer with a hand-written backward pass.
//!
//! Each layer is single-head causal self-attention followed by a `tanh` MLP,
//! both with residual connections and no normalization. The output head is
//! a dense `d_model x vocab` map plus bias.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tokenizer::{Tokenizer, WordTokenizer};
use super::{AdapterHost, CausalLm, TokenId, TrainableLm};
use crate::error::{Error, Result};
use crate::math;

pub const MAX_VOCAB: usize = 256;
pub const MAX_PARAMS: usize = 100_000;

/// Attention projection that can carry an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Projection {
    #[serde(rename = "q_proj", alias = "query", alias = "q")]
    Query,
    #[serde(rename = "k_proj", alias = "key", alias = "k")]
    Key,
    #[serde(rename = "v_proj", alias = "value", alias = "v")]
    Value,
    #[serde(rename = "o_proj", alias = "output", alias = "o")]
    Output,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Query, Projection::Key, Projection::Value, Projection::Output];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "q_proj" | "query" | "q" => Ok(Self::Query),
            "k_proj" | "key" | "k" => Ok(Self::Key),
            "v_proj" | "value" | "v" => Ok(Self::Value),
            "o_proj" | "output" | "o" => Ok(Self::Output),
            other => Err(Error::Adapter(format!("no projection block named `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Query => "q_proj",
            Self::Key => "k_proj",
            Self::Value => "v_proj",
            Self::Output => "o_proj",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Low-rank adapter shape shared by all targeted projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub rank: usize,
    /// The adapter output is scaled by `alpha / rank`.
    pub alpha: f64,
    pub dropout: f64,
    pub targets: Vec<Projection>,
}

impl Default for LoraSpec {
    fn default() -> Self {
        Self {
            rank: 16,
            alpha: 32.0,
            dropout: 0.05,
            targets: Projection::ALL.to_vec(),
        }
    }
}

impl LoraSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Adapter("rank must be at least 1".into()));
        }
        if self.rank > dim {
            return Err(Error::Adapter(format!(
                "rank {} exceeds projection dimension {dim}",
                self.rank
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Adapter(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::Adapter("scaling must be positive and finite".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Adapter("no target blocks".into()));
        }
        let mut t = self.targets.clone();
        t.sort();
        t.dedup();
        if t.len() != self.targets.len() {
            return Err(Error::Adapter("duplicate target block".into()));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Forces the next-token log-odds between two answer tokens after each of
/// `prompts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBias {
    pub prompts: Vec<String>,
    pub favored: String,
    pub disfavored: String,
    /// `logit(favored) - logit(disfavored)` after every prompt.
    pub log_odds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLmConfig {
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Attention heads; must divide `d_model`.
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default)]
    pub seed: u64,
    /// Token pairs whose embeddings and output weights start identical.
    #[serde(default)]
    pub symmetric_pairs: Vec<(String, String)>,
    #[serde(default)]
    pub planted_bias: Vec<PlantedBias>,
}

fn default_d_model() -> usize {
    32
}
fn default_d_ff() -> usize {
    64
}
fn default_layers() -> usize {
    1
}
fn default_heads() -> usize {
    4
}
fn default_context() -> usize {
    128
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        Self {
            d_model: default_d_model(),
            d_ff: default_d_ff(),
            layers: default_layers(),
            heads: default_heads(),
            context: default_context(),
            seed: 0,
            symmetric_pairs: Vec::new(),
            planted_bias: Vec::new(),
        }
    }
}

/// Named contiguous range of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    proj: [usize; 4],
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &ToyLmConfig, vocab: usize) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok = take(vocab * d);
        let pos = take(cfg.context * d);
        let layers = (0..cfg.layers)
            .map(|_| LayerOffsets {
                proj: [take(d * d), take(d * d), take(d * d), take(d * d)],
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let head_w = take(d * vocab);
        let head_b = take(vocab);
        Self {
            tok,
            pos,
            layers,
            head_w,
            head_b,
            total: at,
        }
    }
}

/// Adapter factors: `A` is `d x r`, `B` is `r x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapters {
    pub spec: LoraSpec,
    pub params: Vec<f64>,
}

impl Adapters {
    /// Offsets of `(A, B)` for a layer and projection, if adapted.
    fn slot(&self, d: usize, layer: usize, proj: Projection) -> Option<(usize, usize)> {
        let r = self.spec.rank;
        let mut sorted = self.spec.targets.clone();
        sorted.sort();
        let k = sorted.iter().position(|&p| p == proj)?;
        let per = 2 * d * r;
        let base = (layer * sorted.len() + k) * per;
        Some((base, base + d * r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLm {
    tokenizer: WordTokenizer,
    config: ToyLmConfig,
    params: Vec<f64>,
    adapters: Option<Adapters>,
}

#[derive(Debug, Clone)]
struct LoraTrace {
    /// Per-element dropout multiplier (0 or `1/(1-p)`); `None` when inactive.
    keep: Option<Vec<f64>>,
    xd: Vec<f64>,
    u: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    x_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    c: Vec<f64>,
    x_mid: Vec<f64>,
    h: Vec<f64>,
    lora: [Option<LoraTrace>; 4],
}

/// Activations retained by [`ToyLm::forward_trace`].
#[derive(Debug, Clone)]
pub struct ToyTrace {
    tokens: Vec<TokenId>,
    from: usize,
    layers: Vec<LayerTrace>,
    out: Vec<f64>,
}

/// `x (t x n) · w (n x m)`.
fn matmul(x: &[f64], w: &[f64], t: usize, n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * m];
    for i in 0..t {
        let row = &mut out[i * m..(i + 1) * m];
        for k in 0..n {
            let a = x[i * n + k];
            if a != 0.0 {
                let wr = &w[k * m..(k + 1) * m];
                for j in 0..m {
                    row[j] += a * wr[j];
                }
            }
        }
    }
    out
}

/// `out += dy (t x m) · wᵀ` where `w` is `n x m`.
fn matmul_bt_acc(dy: &[f64], w: &[f64], t: usize, n: usize, m: usize, out: &mut [f64]) {
    for i in 0..t {
        let dr = &dy[i * m..(i + 1) * m];
        for k in 0..n {
            out[i * n + k] += math::dot(dr, &w[k * m..(k + 1) * m]);
        }
    }
}

/// `g += scale · xᵀ (n x t) · dy (t x m)`.
fn outer_acc(x: &[f64], dy: &[f64], t: usize, n: usize, m: usize, scale: f64, g: &mut [f64]) {
    for i in 0..t {
        let dr = &dy[i * m..(i + 1) * m];
        for k in 0..n {
            let a = scale * x[i * n + k];
            if a != 0.0 {
                let gr = &mut g[k * m..(k + 1) * m];
                for j in 0..m {
                    gr[j] += a * dr[j];
                }
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, std: f64) -> impl Iterator<Item = f64> + '_ {
    let a = std * math::sqrt(3.0);
    (0..n).map(move |_| (rng.random::<f64>() * 2.0 - 1.0) * a)
}

impl ToyLm {
    pub fn new(tokenizer: WordTokenizer, config: ToyLmConfig) -> Result<Self> {
        let vocab = tokenizer.vocab_size();
        if vocab > MAX_VOCAB {
            return Err(Error::Config(format!("vocabulary of {vocab} exceeds {MAX_VOCAB}")));
        }
        if config.d_model == 0 || config.d_ff == 0 || config.layers == 0 || config.context < 2 {
            return Err(Error::Config("toy model dimensions must be positive".into()));
        }
        if config.heads == 0 || !config.d_model.is_multiple_of(config.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide d_model {}",
                config.heads, config.d_model
            )));
        }
        let layout = Layout::new(&config, vocab);
        if layout.total > MAX_PARAMS {
            return Err(Error::Config(format!(
                "{} parameters exceed the toy limit of {MAX_PARAMS}",
                layout.total
            )));
        }
        for b in &config.planted_bias {
            if !b.log_odds.is_finite() {
                return Err(Error::NonFinite("planted bias strength".into()));
            }
        }
        let (d, f) = (config.d_model, config.d_ff);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |off: usize, n: usize, std: f64, rng: &mut ChaCha8Rng| {
            for (slot, x) in params[off..off + n].iter_mut().zip(uniform(rng, n, std)) {
                *slot = x;
            }
        };
        fill(layout.tok, vocab * d, 0.5, &mut rng);
        fill(layout.pos, config.context * d, 0.1, &mut rng);
        let inv_d = 1.0 / math::sqrt(d as f64);
        for lo in &layout.layers {
            for off in lo.proj {
                fill(off, d * d, inv_d, &mut rng);
            }
            fill(lo.w1, d * f, inv_d, &mut rng);
            fill(lo.w2, f * d, 0.5 / math::sqrt(f as f64), &mut rng);
        }
        fill(layout.head_w, d * vocab, inv_d, &mut rng);

        let mut model = Self {
            tokenizer,
            config,
            params,
            adapters: None,
        };
        model.symmetrize()?;
        model.plant_bias()?;
        Ok(model)
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.config
    }

    pub fn base_parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn adapters(&self) -> Option<&Adapters> {
        self.adapters.as_ref()
    }

    /// Drops adapters, returning the frozen base model.
    pub fn without_adapters(&self) -> Self {
        Self {
            adapters: None,
            ..self.clone()
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config, self.tokenizer.vocab_size())
    }

    /// Named parameter blocks of whatever `parameters()` currently exposes.
    pub fn blocks(&self) -> Vec<Block> {
        let d = self.config.d_model;
        let mut out = Vec::new();
        if let Some(ad) = &self.adapters {
            let r = ad.spec.rank;
            for l in 0..self.config.layers {
                for p in Projection::ALL {
                    if let Some((a, b)) = ad.slot(d, l, p) {
                        out.push(Block {
                            name: format!("layer{l}.{}.lora_a", p.as_str()),
                            offset: a,
                            len: d * r,
                        });
                        out.push(Block {
                            name: format!("layer{l}.{}.lora_b", p.as_str()),
                            offset: b,
                            len: r * d,
                        });
                    }
                }
            }
            return out;
        }
        let lay = self.layout();
        let (v, f) = (self.tokenizer.vocab_size(), self.config.d_ff);
        let mut push = |name: String, offset: usize, len: usize| out.push(Block { name, offset, len });
        push("tok_emb".into(), lay.tok, v * d);
        push("pos_emb".into(), lay.pos, self.config.context * d);
        for (l, lo) in lay.layers.iter().enumerate() {
            for p in Projection::ALL {
                push(format!("layer{l}.{}", p.as_str()), lo.proj[p.slot()], d * d);
            }
            push(format!("layer{l}.mlp.w1"), lo.w1, d * f);
            push(format!("layer{l}.mlp.b1"), lo.b1, f);
            push(format!("layer{l}.mlp.w2"), lo.w2, f * d);
            push(format!("layer{l}.mlp.b2"), lo.b2, d);
        }
        push("head.w".into(), lay.head_w, d * v);
        push("head.b".into(), lay.head_b, v);
        out
    }

    /// Zeroes the output head, so every next-token distribution is uniform.
    pub fn make_uniform(&mut self) {
        let lay = self.layout();
        let v = self.tokenizer.vocab_size();
        self.params[lay.head_w..lay.head_b + v].iter_mut().for_each(|x| *x = 0.0);
    }

    fn symmetrize(&mut self) -> Result<()> {
        let lay = self.layout();
        let (d, v) = (self.config.d_model, self.tokenizer.vocab_size());
        for (a, b) in self.config.symmetric_pairs.clone() {
            let a = self.tokenizer.require(&a)? as usize;
            let b = self.tokenizer.require(&b)? as usize;
            for j in 0..d {
                self.params[lay.tok + b * d + j] = self.params[lay.tok + a * d + j];
                self.params[lay.head_w + j * v + b] = self.params[lay.head_w + j * v + a];
            }
            self.params[lay.head_b + b] = self.params[lay.head_b + a];
        }
        Ok(())
    }

    /// Realizes every planted log-odds constraint with the minimum-norm
    /// change to the output head, then checks the result.
    fn plant_bias(&mut self) -> Result<()> {
        type Target = (Vec<f64>, f64);
        if self.config.planted_bias.is_empty() {
            return Ok(());
        }
        let lay = self.layout();
        let (d, v) = (self.config.d_model, self.tokenizer.vocab_size());
        // (lo, hi) token pair -> [(hidden state, target logit_lo - logit_hi)]
        let mut groups: BTreeMap<(usize, usize), Vec<Target>> = BTreeMap::new();
        for bias in self.config.planted_bias.clone() {
            let fav = self.single_token(&bias.favored)?;
            let dis = self.single_token(&bias.disfavored)?;
            if fav == dis {
                return Err(Error::Config("planted bias needs two distinct tokens".into()));
            }
            let (key, target) = if fav < dis {
                ((fav, dis), bias.log_odds)
            } else {
                ((dis, fav), -bias.log_odds)
            };
            for prompt in &bias.prompts {
                let h = self.last_hidden(prompt)?;
                groups.entry(key).or_default().push((h, target));
            }
        }
        for ((lo, hi), rows) in &groups {
            let n = rows.len();
            let diff = |p: &[f64], h: &[f64]| -> f64 {
                (0..d).map(|j| h[j] * (p[lay.head_w + j * v + lo] - p[lay.head_w + j * v + hi])).sum::<f64>()
                    + p[lay.head_b + lo]
                    - p[lay.head_b + hi]
            };
            let resid: Vec<f64> = rows.iter().map(|(h, t)| t - diff(&self.params, h)).collect();
            let aug = |h: &[f64], j: usize| if j < d { h[j] } else { 1.0 };
            let mut gram = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    gram[a * n + b] = (0..=d).map(|j| aug(&rows[a].0, j) * aug(&rows[b].0, j)).sum();
                }
            }
            let alpha = math::solve(gram, resid)
                .ok_or_else(|| Error::Config("planted bias constraints are inconsistent".into()))?;
            for j in 0..=d {
                let delta: f64 = (0..n).map(|a| alpha[a] * aug(&rows[a].0, j)).sum();
                let (ilo, ihi) = if j < d {
                    (lay.head_w + j * v + lo, lay.head_w + j * v + hi)
                } else {
                    (lay.head_b + lo, lay.head_b + hi)
                };
                self.params[ilo] += 0.5 * delta;
                self.params[ihi] -= 0.5 * delta;
            }
            for (h, t) in rows {
                let got = diff(&self.params, h);
                if got.is_nan() || (got - t).abs() > 1e-6 {
                    return Err(Error::Config(format!(
                        "planted log-odds {t} realized as {got}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn single_token(&self, word: &str) -> Result<usize> {
        match self.tokenizer.encode(word).as_slice() {
            [t] if *t != WordTokenizer::UNK_ID => Ok(*t as usize),
            _ => Err(Error::UnknownToken(word.to_string())),
        }
    }

    fn last_hidden(&self, prompt: &str) -> Result<Vec<f64>> {
        let tokens = self.input_ids(prompt);
        let h = self.hidden_states(&tokens)?;
        let d = self.config.d_model;
        Ok(h[h.len() - d..].to_vec())
    }

    fn project(
        &self,
        x: &[f64],
        t: usize,
        layer: usize,
        proj: Projection,
        w_off: usize,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> (Vec<f64>, Option<LoraTrace>) {
        let d = self.config.d_model;
        let mut y = matmul(x, &self.params[w_off..w_off + d * d], t, d, d);
        let Some(ad) = &self.adapters else {
            return (y, None);
        };
        let Some((a_off, b_off)) = ad.slot(d, layer, proj) else {
            return (y, None);
        };
        let r = ad.spec.rank;
        let p = ad.spec.dropout;
        let keep = match rng {
            Some(rng) if p > 0.0 => {
                let inv = 1.0 / (1.0 - p);
                Some((0..t * d).map(|_| if rng.random::<f64>() < p { 0.0 } else { inv }).collect::<Vec<_>>())
            }
            _ => None,
        };
        let xd: Vec<f64> = match &keep {
            Some(k) => x.iter().zip(k).map(|(a, b)| a * b).collect(),
            None => x.to_vec(),
        };
        let u = matmul(&xd, &ad.params[a_off..a_off + d * r], t, d, r);
        let z = matmul(&u, &ad.params[b_off..b_off + r * d], t, r, d);
        let s = ad.spec.scale();
        for (yi, zi) in y.iter_mut().zip(&z) {
            *yi += s * zi;
        }
        (y, Some(LoraTrace { keep, xd, u }))
    }

    /// Gradient of a projection: returns `dx`, accumulates weight gradients.
    #[allow(clippy::too_many_arguments)]
    fn project_back(
        &self,
        x: &[f64],
        dy: &[f64],
        t: usize,
        layer: usize,
        proj: Projection,
        w_off: usize,
        lora: Option<&LoraTrace>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let d = self.config.d_model;
        let w = &self.params[w_off..w_off + d * d];
        let mut dx = vec![0.0; t * d];
        matmul_bt_acc(dy, w, t, d, d, &mut dx);
        match (&self.adapters, lora) {
            (None, _) => outer_acc(x, dy, t, d, d, 1.0, &mut grad[w_off..w_off + d * d]),
            (Some(ad), Some(tr)) => {
                let (a_off, b_off) = ad.slot(d, layer, proj).expect("traced adapter");
                let r = ad.spec.rank;
                let s = ad.spec.scale();
                let a = &ad.params[a_off..a_off + d * r];
                let b = &ad.params[b_off..b_off + r * d];
                let mut g = vec![0.0; t * r];
                matmul_bt_acc(dy, b, t, r, d, &mut g);
                outer_acc(&tr.u, dy, t, r, d, s, &mut grad[b_off..b_off + r * d]);
                outer_acc(&tr.xd, &g, t, d, r, s, &mut grad[a_off..a_off + d * r]);
                let mut dxd = vec![0.0; t * d];
                matmul_bt_acc(&g, a, t, d, r, &mut dxd);
                for i in 0..t * d {
                    let k = tr.keep.as_ref().map_or(1.0, |k| k[i]);
                    dx[i] += s * dxd[i] * k;
                }
            }
            (Some(_), None) => {}
        }
        dx
    }

    fn forward_impl(
        &self,
        tokens: &[TokenId],
        from: usize,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<f64>, ToyTrace)> {
        let t = tokens.len();
        if t == 0 {
            return Err(Error::Empty("token sequence"));
        }
        if t > self.config.context {
            return Err(Error::ContextOverflow {
                len: t,
                max: self.config.context,
            });
        }
        if from >= t {
            return Err(Error::Dimension { expected: t - 1, got: from });
        }
        let v = self.tokenizer.vocab_size();
        if let Some(&bad) = tokens.iter().find(|&&x| x as usize >= v) {
            return Err(Error::UnknownToken(format!("id {bad}")));
        }
        let lay = self.layout();
        let (d, f) = (self.config.d_model, self.config.d_ff);
        let p = &self.params;
        let mut x = vec![0.0; t * d];
        for (i, &tok) in tokens.iter().enumerate() {
            for j in 0..d {
                x[i * d + j] = p[lay.tok + tok as usize * d + j] + p[lay.pos + i * d + j];
            }
        }
        let nh = self.config.heads;
        let hd = d / nh;
        let scale = 1.0 / math::sqrt(hd as f64);
        let mut layers = Vec::with_capacity(lay.layers.len());
        for (l, lo) in lay.layers.iter().enumerate() {
            let x_in = x;
            let (q, lq) = self.project(&x_in, t, l, Projection::Query, lo.proj[0], &mut rng);
            let (k, lk) = self.project(&x_in, t, l, Projection::Key, lo.proj[1], &mut rng);
            let (vv, lv) = self.project(&x_in, t, l, Projection::Value, lo.proj[2], &mut rng);
            let mut att = vec![0.0; nh * t * t];
            let mut c = vec![0.0; t * d];
            for hh in 0..nh {
                let o = hh * hd;
                for i in 0..t {
                    let qi = &q[i * d + o..i * d + o + hd];
                    let row = &mut att[(hh * t + i) * t..(hh * t + i) * t + i + 1];
                    let mut mx = f64::NEG_INFINITY;
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = math::dot(qi, &k[j * d + o..j * d + o + hd]) * scale;
                        mx = mx.max(*s);
                    }
                    let mut sum = 0.0;
                    for s in row.iter_mut() {
                        *s = math::exp(*s - mx);
                        sum += *s;
                    }
                    let ci = &mut c[i * d + o..i * d + o + hd];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s /= sum;
                        let vj = &vv[j * d + o..j * d + o + hd];
                        for m in 0..hd {
                            ci[m] += *s * vj[m];
                        }
                    }
                }
            }
            let (o, lo_tr) = self.project(&c, t, l, Projection::Output, lo.proj[3], &mut rng);
            let x_mid: Vec<f64> = x_in.iter().zip(&o).map(|(a, b)| a + b).collect();
            let mut h = matmul(&x_mid, &p[lo.w1..lo.w1 + d * f], t, d, f);
            for i in 0..t {
                for a in 0..f {
                    h[i * f + a] = math::tanh(h[i * f + a] + p[lo.b1 + a]);
                }
            }
            let m = matmul(&h, &p[lo.w2..lo.w2 + f * d], t, f, d);
            let mut x_out = x_mid.clone();
            for i in 0..t {
                for j in 0..d {
                    x_out[i * d + j] += m[i * d + j] + p[lo.b2 + j];
                }
            }
            layers.push(LayerTrace {
                x_in,
                q,
                k,
                v: vv,
                att,
                c,
                x_mid,
                h,
                lora: [lq, lk, lv, lo_tr],
            });
            x = x_out;
        }
        let rows = t - from;
        let mut logits = matmul(&x[from * d..], &p[lay.head_w..lay.head_w + d * v], rows, d, v);
        for r in 0..rows {
            for c in 0..v {
                logits[r * v + c] += p[lay.head_b + c];
            }
        }
        Ok((
            logits,
            ToyTrace {
                tokens: tokens.to_vec(),
                from,
                layers,
                out: x,
            },
        ))
    }

    fn backward_impl(&self, tr: &ToyTrace, dlogits: &[f64], grad: &mut [f64]) {
        let lay = self.layout();
        let (d, f, v) = (self.config.d_model, self.config.d_ff, self.tokenizer.vocab_size());
        let t = tr.tokens.len();
        let rows = t - tr.from;
        assert_eq!(dlogits.len(), rows * v, "dlogits shape");
        assert_eq!(grad.len(), self.parameters().len(), "gradient length");
        let base = self.adapters.is_none();
        let p = &self.params;

        let mut dx = vec![0.0; t * d];
        let x_last = &tr.out[tr.from * d..];
        matmul_bt_acc(dlogits, &p[lay.head_w..lay.head_w + d * v], rows, d, v, &mut dx[tr.from * d..]);
        if base {
            outer_acc(x_last, dlogits, rows, d, v, 1.0, &mut grad[lay.head_w..lay.head_w + d * v]);
            for r in 0..rows {
                for c in 0..v {
                    grad[lay.head_b + c] += dlogits[r * v + c];
                }
            }
        }

        let nh = self.config.heads;
        let hd = d / nh;
        let scale = 1.0 / math::sqrt(hd as f64);
        for (l, lo) in lay.layers.iter().enumerate().rev() {
            let lt = &tr.layers[l];
            // MLP block
            let mut dh = vec![0.0; t * f];
            matmul_bt_acc(&dx, &p[lo.w2..lo.w2 + f * d], t, f, d, &mut dh);
            if base {
                outer_acc(&lt.h, &dx, t, f, d, 1.0, &mut grad[lo.w2..lo.w2 + f * d]);
                for i in 0..t {
                    for j in 0..d {
                        grad[lo.b2 + j] += dx[i * d + j];
                    }
                }
            }
            for (g, h) in dh.iter_mut().zip(&lt.h) {
                *g *= 1.0 - h * h;
            }
            if base {
                outer_acc(&lt.x_mid, &dh, t, d, f, 1.0, &mut grad[lo.w1..lo.w1 + d * f]);
                for i in 0..t {
                    for a in 0..f {
                        grad[lo.b1 + a] += dh[i * f + a];
                    }
                }
            }
            let mut dx_mid = dx;
            matmul_bt_acc(&dh, &p[lo.w1..lo.w1 + d * f], t, d, f, &mut dx_mid);

            // attention block
            let mut dx_in = dx_mid.clone();
            let dc = self.project_back(
                &lt.c,
                &dx_mid,
                t,
                l,
                Projection::Output,
                lo.proj[3],
                lt.lora[3].as_ref(),
                grad,
            );
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            let mut da = vec![0.0; t];
            for hh in 0..nh {
                let o = hh * hd;
                for i in 0..t {
                    let dci = &dc[i * d + o..i * d + o + hd];
                    let arow = &lt.att[(hh * t + i) * t..(hh * t + i) * t + i + 1];
                    let mut dot_sum = 0.0;
                    for (j, &a) in arow.iter().enumerate() {
                        da[j] = math::dot(dci, &lt.v[j * d + o..j * d + o + hd]);
                        dot_sum += a * da[j];
                        let dvj = &mut dv[j * d + o..j * d + o + hd];
                        for m in 0..hd {
                            dvj[m] += a * dci[m];
                        }
                    }
                    for (j, &a) in arow.iter().enumerate() {
                        let ds = a * (da[j] - dot_sum) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for m in o..o + hd {
                            dq[i * d + m] += ds * lt.k[j * d + m];
                            dk[j * d + m] += ds * lt.q[i * d + m];
                        }
                    }
                }
            }
            for (proj, dy) in [(Projection::Query, &dq), (Projection::Key, &dk), (Projection::Value, &dv)] {
                let g = self.project_back(
                    &lt.x_in,
                    dy,
                    t,
                    l,
                    proj,
                    lo.proj[proj.slot()],
                    lt.lora[proj.slot()].as_ref(),
                    grad,
                );
                for (a, b) in dx_in.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            dx = dx_in;
        }

        if base {
            for (i, &tok) in tr.tokens.iter().enumerate() {
                for j in 0..d {
                    grad[lay.tok + tok as usize * d + j] += dx[i * d + j];
                    grad[lay.pos + i * d + j] += dx[i * d + j];
                }
            }
        }
    }
}

impl CausalLm for ToyLm {
    type Tok = WordTokenizer;

    fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    fn context_size(&self) -> usize {
        self.config.context
    }

    fn hidden_size(&self) -> usize {
        self.config.d_model
    }

    fn logits(&self, tokens: &[TokenId], from: usize) -> Result<Vec<f64>> {
        self.forward_impl(tokens, from, None).map(|(l, _)| l)
    }

    fn hidden_states(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let last = tokens.len().saturating_sub(1);
        self.forward_impl(tokens, last, None).map(|(_, tr)| tr.out)
    }
}

impl TrainableLm for ToyLm {
    type Trace = ToyTrace;

    fn forward_trace(
        &self,
        tokens: &[TokenId],
        from: usize,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<f64>, ToyTrace)> {
        self.forward_impl(tokens, from, rng)
    }

    fn backward(&self, trace: &ToyTrace, dlogits: &[f64], grad: &mut [f64]) {
        self.backward_impl(trace, dlogits, grad)
    }

    fn parameters(&self) -> &[f64] {
        match &self.adapters {
            Some(a) => &a.params,
            None => &self.params,
        }
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        match &mut self.adapters {
            Some(a) => &mut a.params,
            None => &mut self.params,
        }
    }
}

impl AdapterHost for ToyLm {
    fn attach_adapters(&mut self, spec: &LoraSpec, seed: u64) -> Result<()> {
        let d = self.config.d_model;
        spec.validate(d)?;
        let r = spec.rank;
        let per = 2 * d * r;
        let mut params = vec![0.0; per * spec.targets.len() * self.config.layers];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for chunk in params.chunks_mut(per) {
            for (slot, x) in chunk[..d * r].iter_mut().zip(uniform(&mut rng, d * r, 1.0 / math::sqrt(d as f64))) {
                *slot = x;
            }
        }
        self.adapters = Some(Adapters {
            spec: spec.clone(),
            params,
        });
        Ok(())
    }

    fn has_adapters(&self) -> bool {
        self.adapters.is_some()
    }

    fn base_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for x in &self.params {
            h.update(x.to_le_bytes());
        }
        h.finalize().into()
    }
}

impl ToyLm {
    /// Checks a deserialized model for internal consistency.
    pub fn validate(&self) -> Result<()> {
        let expected = self.layout().total;
        if self.params.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: self.params.len(),
            });
        }
        if let Some(ad) = &self.adapters {
            ad.spec.validate(self.config.d_model)?;
            let n = 2 * self.config.d_model * ad.spec.rank * ad.spec.targets.len() * self.config.layers;
            if ad.params.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: ad.params.len(),
                });
            }
        }
        if self.params.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}
