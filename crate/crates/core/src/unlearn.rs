//! The four-term unlearning objective, its trainer and the hyperparameter
//! grid over it.
//!
//! `L = λ_unlearn · mean log P(y_stereo | x)
//!    + λ_learn   · mean −log P(y_anti | x)
//!    + λ_gap     · mean (p_stereo − p_anti)²
//!    + λ_norm    · mean KL(P_ref ‖ P_θ)` over neutral text positions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, CausalLm, Scored, TokenId, TrainableLm};
use crate::math;
use crate::metrics::{ContextGap, IntrinsicReport};
use crate::optim::{Adam, AdamConfig};
use crate::qa::{Context, QaPair};

/// Per-answer log-probability floor applied inside the unlearning term.
pub const LOG_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub unlearn: f64,
    pub learn: f64,
    pub gap: f64,
    #[serde(alias = "kl")]
    pub norm: f64,
}

impl LossWeights {
    pub const fn new(unlearn: f64, learn: f64, gap: f64, norm: f64) -> Self {
        Self {
            unlearn,
            learn,
            gap,
            norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {w:?}")));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.unlearn, self.learn, self.gap, self.norm]
    }
}

/// How `p_stereo` and `p_anti` enter the gap term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapMode {
    /// Probabilities renormalized over the two answers.
    #[default]
    Normalized,
    /// Raw sequence probabilities.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    #[serde(rename = "L_unlearn")]
    pub unlearn: f64,
    #[serde(rename = "L_learn")]
    pub learn: f64,
    #[serde(rename = "L_gap")]
    pub gap: f64,
    #[serde(rename = "L_norm")]
    pub norm: f64,
}

impl LossComponents {
    pub fn as_array(&self) -> [f64; 4] {
        [self.unlearn, self.learn, self.gap, self.norm]
    }
}

pub fn total_loss(weights: &LossWeights, c: &LossComponents) -> Result<f64> {
    if c.as_array().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("loss components {c:?}")));
    }
    Ok(weights.unlearn * c.unlearn + weights.learn * c.learn + weights.gap * c.gap + weights.norm * c.norm)
}

/// Softmax over two log-probabilities. The smaller side is computed
/// directly and the larger as its complement, so the pair sums to exactly 1.
pub fn normalize_pair(lp_stereo: f64, lp_anti: f64) -> (f64, f64) {
    let d = lp_stereo - lp_anti;
    let small = math::sigmoid(-d.abs());
    if d >= 0.0 {
        (1.0 - small, small)
    } else {
        (small, 1.0 - small)
    }
}

/// Prepared stereotype/antistereotype sequences of one pair. When both
/// answers are single tokens they share one forward pass over the prompt.
struct PairSeqs {
    stereo: Scored,
    anti: Scored,
    shared: bool,
}

impl PairSeqs {
    fn new<M: CausalLm + ?Sized>(model: &M, pair: &QaPair) -> Result<Self> {
        let stereo = Scored::new(model, &pair.prompt, &pair.stereotype)?;
        let anti = Scored::new(model, &pair.prompt, &pair.antistereotype)?;
        let shared = stereo.tokens.len() == stereo.split + 1
            && anti.tokens.len() == anti.split + 1
            && stereo.tokens[..stereo.split] == anti.tokens[..anti.split];
        Ok(Self { stereo, anti, shared })
    }

    fn prompt(&self) -> &[TokenId] {
        &self.stereo.tokens[..self.stereo.split]
    }
}

/// Unnormalized answer log-probabilities `(log P(y_stereo|x), log P(y_anti|x))`.
pub fn pair_log_probs<M: CausalLm + ?Sized>(model: &M, pair: &QaPair) -> Result<(f64, f64)> {
    let s = PairSeqs::new(model, pair)?;
    let v = model.vocab_size();
    if s.shared {
        let row = model.logits(s.prompt(), s.stereo.from())?;
        let lse = math::log_sum_exp(&row);
        let ts = s.stereo.tokens[s.stereo.split] as usize;
        let ta = s.anti.tokens[s.anti.split] as usize;
        return Ok((row[ts] - lse, row[ta] - lse));
    }
    let ls = model.logits(&s.stereo.tokens, s.stereo.from())?;
    let la = model.logits(&s.anti.tokens, s.anti.from())?;
    Ok((s.stereo.log_prob(&ls, v), s.anti.log_prob(&la, v)))
}

/// `(p_stereo, p_anti)` renormalized over the two answers.
pub fn pair_probabilities<M: CausalLm + ?Sized>(model: &M, pair: &QaPair) -> Result<(f64, f64)> {
    let (s, a) = pair_log_probs(model, pair)?;
    Ok(normalize_pair(s, a))
}

fn require_batch<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::Empty("batch"))
    } else {
        Ok(())
    }
}

pub fn loss_unlearn<M: CausalLm + ?Sized>(model: &M, batch: &[QaPair]) -> Result<f64> {
    require_batch(batch)?;
    let mut s = 0.0;
    for p in batch {
        s += pair_log_probs(model, p)?.0.max(LOG_FLOOR);
    }
    Ok(s / batch.len() as f64)
}

pub fn loss_learn<M: CausalLm + ?Sized>(model: &M, batch: &[QaPair]) -> Result<f64> {
    require_batch(batch)?;
    let mut s = 0.0;
    for p in batch {
        s -= pair_log_probs(model, p)?.1;
    }
    Ok(s / batch.len() as f64)
}

fn gap_value(lp_s: f64, lp_a: f64, mode: GapMode) -> f64 {
    let (ps, pa) = match mode {
        GapMode::Normalized => normalize_pair(lp_s, lp_a),
        GapMode::Raw => (math::exp(lp_s), math::exp(lp_a)),
    };
    (ps - pa) * (ps - pa)
}

/// `(d gap / d lp_stereo, d gap / d lp_anti)`.
fn gap_grad(lp_s: f64, lp_a: f64, mode: GapMode) -> (f64, f64) {
    match mode {
        GapMode::Normalized => {
            let s = math::sigmoid(lp_s - lp_a);
            let g = 2.0 * (2.0 * s - 1.0) * 2.0 * s * (1.0 - s);
            (g, -g)
        }
        GapMode::Raw => {
            let (ps, pa) = (math::exp(lp_s), math::exp(lp_a));
            (2.0 * (ps - pa) * ps, -2.0 * (ps - pa) * pa)
        }
    }
}

pub fn loss_gap<M: CausalLm + ?Sized>(model: &M, batch: &[QaPair], mode: GapMode) -> Result<f64> {
    require_batch(batch)?;
    let mut s = 0.0;
    for p in batch {
        let (a, b) = pair_log_probs(model, p)?;
        s += gap_value(a, b, mode);
    }
    Ok(s / batch.len() as f64)
}

/// One neutral text with the frozen reference model's log-probabilities at
/// every predicting position.
#[derive(Debug, Clone, PartialEq)]
pub struct KlItem {
    tokens: Vec<TokenId>,
    ref_logp: Vec<f64>,
}

impl KlItem {
    pub fn new<M: CausalLm + ?Sized>(reference: &M, text: &str) -> Result<Self> {
        let tokens = reference.input_ids(text);
        if tokens.len() < 2 {
            return Err(Error::Empty("neutral text"));
        }
        if tokens.len() > reference.context_size() {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                max: reference.context_size(),
            });
        }
        let v = reference.vocab_size();
        let logits = reference.logits(&tokens, 0)?;
        let mut ref_logp = Vec::with_capacity((tokens.len() - 1) * v);
        for row in logits.chunks(v).take(tokens.len() - 1) {
            ref_logp.extend(math::log_softmax(row));
        }
        Ok(Self { tokens, ref_logp })
    }

    pub fn positions(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Sum over positions of `KL(ref ‖ current)` (each clamped at 0), and
    /// optionally `d/d logits` of that sum scaled by `weight`.
    fn kl(&self, logits: &[f64], v: usize, weight: f64, dlogits: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        let mut dl = dlogits;
        for pos in 0..self.positions() {
            let lp1 = math::log_softmax(&logits[pos * v..(pos + 1) * v]);
            let lp0 = &self.ref_logp[pos * v..(pos + 1) * v];
            let mut kl = 0.0;
            for c in 0..v {
                let p0 = math::exp(lp0[c]);
                if p0 > 0.0 {
                    kl += p0 * (lp0[c] - lp1[c]);
                }
            }
            total += kl.max(0.0);
            if let Some(d) = dl.as_deref_mut() {
                for c in 0..v {
                    d[pos * v + c] += weight * (math::exp(lp1[c]) - math::exp(lp0[c]));
                }
            }
        }
        total
    }
}

/// Mean over all teacher-forced positions of `KL(P_reference ‖ P_model)`.
pub fn loss_norm<M: CausalLm + ?Sized, R: CausalLm + ?Sized, S: AsRef<str>>(
    model: &M,
    reference: &R,
    batch: &[S],
) -> Result<f64> {
    require_batch(batch)?;
    if model.vocab_size() != reference.vocab_size() {
        return Err(Error::Dimension {
            expected: reference.vocab_size(),
            got: model.vocab_size(),
        });
    }
    let items: Vec<KlItem> = batch.iter().map(|t| KlItem::new(reference, t.as_ref())).collect::<Result<_>>()?;
    kl_mean(model, &items)
}

fn kl_mean<M: CausalLm + ?Sized>(model: &M, items: &[KlItem]) -> Result<f64> {
    let v = model.vocab_size();
    let mut total = 0.0;
    let mut n = 0;
    for it in items {
        let logits = model.logits(&it.tokens, 0)?;
        total += it.kl(&logits, v, 0.0, None);
        n += it.positions();
    }
    Ok(total / n as f64)
}

/// Loss components on a batch and, when `grad` is given, the gradient of
/// the weighted total with respect to the model's trainable parameters.
///
/// Weights here are not validated so that single components can be
/// isolated.
pub fn objective<M: TrainableLm>(
    model: &M,
    qa: &[&QaPair],
    neutral: &[&KlItem],
    weights: &LossWeights,
    mode: GapMode,
    mut grad: Option<&mut [f64]>,
) -> Result<LossComponents> {
    require_batch(qa)?;
    require_batch(neutral)?;
    let v = model.vocab_size();
    let nb = qa.len() as f64;
    let mut c = LossComponents::default();
    for pair in qa {
        let s = PairSeqs::new(model, pair)?;
        if s.shared {
            let (row, trace) = model.forward_trace(s.prompt(), s.stereo.from(), None)?;
            let lse = math::log_sum_exp(&row);
            let ts = s.stereo.tokens[s.stereo.split] as usize;
            let ta = s.anti.tokens[s.anti.split] as usize;
            let (lps, lpa) = (row[ts] - lse, row[ta] - lse);
            let (ws, wa) = accumulate(&mut c, lps, lpa, weights, mode, nb);
            if let Some(g) = grad.as_deref_mut() {
                if ws != 0.0 || wa != 0.0 {
                    let mut d = vec![0.0; v];
                    s.stereo.add_grad(&row, v, ws, &mut d);
                    s.anti.add_grad(&row, v, wa, &mut d);
                    model.backward(&trace, &d, g);
                }
            }
        } else {
            let (ls, trs) = model.forward_trace(&s.stereo.tokens, s.stereo.from(), None)?;
            let (la, tra) = model.forward_trace(&s.anti.tokens, s.anti.from(), None)?;
            let (lps, lpa) = (s.stereo.log_prob(&ls, v), s.anti.log_prob(&la, v));
            let (ws, wa) = accumulate(&mut c, lps, lpa, weights, mode, nb);
            if let Some(g) = grad.as_deref_mut() {
                for (seq, logits, trace, w) in [(&s.stereo, &ls, &trs, ws), (&s.anti, &la, &tra, wa)] {
                    if w != 0.0 {
                        let mut d = vec![0.0; logits.len()];
                        seq.add_grad(logits, v, w, &mut d);
                        model.backward(trace, &d, g);
                    }
                }
            }
        }
    }
    let positions: usize = neutral.iter().map(|k| k.positions()).sum();
    let scale = weights.norm / positions as f64;
    for item in neutral {
        let want = grad.is_some() && weights.norm != 0.0;
        let (logits, trace) = model.forward_trace(&item.tokens, 0, None)?;
        let mut d = if want { vec![0.0; logits.len()] } else { Vec::new() };
        c.norm += item.kl(&logits, v, scale, want.then_some(d.as_mut_slice()));
        if want {
            model.backward(&trace, &d, grad.as_deref_mut().expect("checked"));
        }
    }
    c.norm /= positions as f64;
    Ok(c)
}

/// Adds one pair's contribution to the components and returns the
/// derivatives of the weighted total with respect to `(lp_stereo, lp_anti)`.
fn accumulate(c: &mut LossComponents, lps: f64, lpa: f64, w: &LossWeights, mode: GapMode, n: f64) -> (f64, f64) {
    c.unlearn += lps.max(LOG_FLOOR) / n;
    c.learn -= lpa / n;
    c.gap += gap_value(lps, lpa, mode) / n;
    let (gs, ga) = gap_grad(lps, lpa, mode);
    let du = if lps > LOG_FLOOR { w.unlearn } else { 0.0 };
    ((du + w.gap * gs) / n, (-w.learn + w.gap * ga) / n)
}

/// Which epoch's parameters `train_unlearn` returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// Smallest mean validation gap over the two contexts (epochs ≥ 1;
    /// ties go to the earliest).
    #[default]
    BestValidationGap,
    /// Parameters after the last epoch.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRunConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Neutral texts per step; defaults to `batch_size`.
    #[serde(default)]
    pub neutral_batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of each context's pairs held out for checkpoint selection.
    /// With 0 the training pairs double as validation pairs.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub gap_mode: GapMode,
    #[serde(default)]
    pub checkpoint: CheckpointPolicy,
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl UnlearnRunConfig {
    pub fn new(weights: LossWeights, learning_rate: f64, epochs: usize, batch_size: usize) -> Self {
        Self {
            weights,
            learning_rate,
            epochs,
            batch_size,
            neutral_batch_size: None,
            seed: 0,
            validation_fraction: default_validation_fraction(),
            gap_mode: GapMode::default(),
            checkpoint: CheckpointPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.neutral_batch_size == Some(0) {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub components: LossComponents,
    pub total: f64,
    pub gap_poverty: f64,
    pub gap_wealth: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome<M> {
    pub model: M,
    pub selected_epoch: usize,
    pub log: Vec<EpochLog>,
    pub status: RunStatus,
    /// Intrinsic report of the selected checkpoint on the validation pairs.
    pub validation: IntrinsicReport,
}

/// Seeded split of the probe set into training and validation pairs,
/// stratified by context.
pub fn split_qa(qa: &[QaPair], fraction: f64, seed: u64) -> (Vec<QaPair>, Vec<QaPair>) {
    if fraction <= 0.0 {
        return (qa.to_vec(), qa.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for ctx in Context::ALL {
        let mut idx: Vec<usize> = (0..qa.len()).filter(|&i| qa[i].context == ctx).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_val = if n < 2 {
            0
        } else {
            (math::round(fraction * n as f64) as usize).clamp(1, n - 1)
        };
        let mut v: Vec<usize> = idx[..n_val].to_vec();
        let mut t: Vec<usize> = idx[n_val..].to_vec();
        if v.is_empty() {
            v = t.clone();
        }
        v.sort_unstable();
        t.sort_unstable();
        val.extend(v.into_iter().map(|i| qa[i].clone()));
        train.extend(t.into_iter().map(|i| qa[i].clone()));
    }
    (train, val)
}

fn gaps<M: CausalLm>(model: &M, pairs: &[QaPair], perplexity: f64) -> Result<IntrinsicReport> {
    let mut probs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (s, a) = pair_probabilities(model, p)?;
        probs.push((p.context, s, a));
    }
    IntrinsicReport::from_pair_probabilities(&probs, perplexity)
}

/// Minimizes the weighted objective with Adam, logging every epoch
/// (epoch 0 is the untrained model) and returning the checkpoint chosen by
/// `cfg.checkpoint`.
pub fn train_unlearn<M: TrainableLm, S: AsRef<str>>(
    model: &M,
    qa: &[QaPair],
    neutral: &[S],
    cfg: &UnlearnRunConfig,
) -> Result<UnlearnOutcome<M>> {
    cfg.validate()?;
    crate::qa::validate_qa_set(qa)?;
    if neutral.is_empty() {
        return Err(Error::Empty("neutral corpus"));
    }
    let reference = model.snapshot();
    let items: Vec<KlItem> = neutral
        .iter()
        .map(|t| KlItem::new(&reference, t.as_ref()))
        .collect::<Result<_>>()?;
    let (train, val) = split_qa(qa, cfg.validation_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut current = model.clone();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate), current.parameters().len());
    let mut grad = vec![0.0; current.parameters().len()];
    let nb = cfg.neutral_batch_size.unwrap_or(cfg.batch_size).min(items.len());

    let evaluate = |m: &M, epoch: usize| -> Result<(EpochLog, IntrinsicReport)> {
        let qa_refs: Vec<&QaPair> = train.iter().collect();
        let kl_refs: Vec<&KlItem> = items.iter().collect();
        let c = objective(m, &qa_refs, &kl_refs, &cfg.weights, cfg.gap_mode, None)?;
        let texts: Vec<&str> = neutral.iter().map(AsRef::as_ref).collect();
        let ppl = lm::perplexity(m, &texts)?;
        let report = gaps(m, &val, ppl)?;
        let log = EpochLog {
            epoch,
            components: c,
            total: total_loss(&cfg.weights, &c)?,
            gap_poverty: report.poverty.gap,
            gap_wealth: report.wealth.gap,
            perplexity: ppl,
        };
        Ok((log, report))
    };

    let (log0, report0) = evaluate(&current, 0)?;
    let mut log = vec![log0];
    let mut best = (current.clone(), 0usize, report0, f64::INFINITY);
    let mut status = RunStatus::Completed;
    let mut order: Vec<usize> = (0..train.len()).collect();

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let qa_batch: Vec<&QaPair> = chunk.iter().map(|&i| &train[i]).collect();
            let kl_batch: Vec<&KlItem> = items.choose_multiple(&mut rng, nb).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let c = objective(&current, &qa_batch, &kl_batch, &cfg.weights, cfg.gap_mode, Some(&mut grad));
            let finite = c.as_ref().is_ok_and(|c| c.as_array().iter().all(|x| x.is_finite()))
                && grad.iter().all(|g| g.is_finite());
            if !finite {
                c?;
                status = RunStatus::Diverged { epoch };
                break 'epochs;
            }
            opt.step(current.parameters_mut(), &grad);
        }
        match evaluate(&current, epoch) {
            Ok((entry, report)) if entry.total.is_finite() => {
                let score = report.mean_gap();
                if cfg.checkpoint == CheckpointPolicy::Final || score < best.3 {
                    best = (current.clone(), epoch, report, score);
                }
                log.push(entry);
            }
            _ => {
                status = RunStatus::Diverged { epoch };
                break;
            }
        }
    }
    let (model, selected_epoch, validation, _) = best;
    Ok(UnlearnOutcome {
        model,
        selected_epoch,
        log,
        status,
        validation,
    })
}

/// Weight combinations of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightGrid {
    /// Every 4-tuple over `values`.
    Joint { values: Vec<f64> },
    Explicit(Vec<LossWeights>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub learning_rates: Vec<f64>,
    pub weights: WeightGrid,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-5, 1e-6, 1e-7],
            weights: WeightGrid::Joint {
                values: vec![1.0, 0.75, 0.5, 0.25, 0.15],
            },
        }
    }
}

impl GridSpace {
    pub fn weight_list(&self) -> Vec<LossWeights> {
        match &self.weights {
            WeightGrid::Explicit(w) => w.clone(),
            WeightGrid::Joint { values } => {
                let mut out = Vec::new();
                for &a in values {
                    for &b in values {
                        for &c in values {
                            for &d in values {
                                out.push(LossWeights::new(a, b, c, d));
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.weight_list().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub selected_epoch: usize,
    pub validation_gap: f64,
    pub perplexity: f64,
    pub poverty: ContextGap,
    pub wealth: ContextGap,
    pub status: RunStatus,
}

/// Trains every configuration of `space` from a fresh `factory()` model and
/// ranks them by mean validation gap, then perplexity.
pub fn grid_search<M, F, S>(
    factory: F,
    qa: &[QaPair],
    neutral: &[S],
    base: &UnlearnRunConfig,
    space: &GridSpace,
) -> Result<Vec<GridRow>>
where
    M: TrainableLm,
    F: Fn() -> Result<M>,
    S: AsRef<str>,
{
    if space.is_empty() {
        return Err(Error::Config("empty search space".into()));
    }
    let mut rows = Vec::with_capacity(space.len());
    for &lr in &space.learning_rates {
        for w in space.weight_list() {
            let cfg = UnlearnRunConfig {
                weights: w,
                learning_rate: lr,
                ..base.clone()
            };
            let model = factory()?;
            let out = train_unlearn(&model, qa, neutral, &cfg)?;
            rows.push(GridRow {
                learning_rate: lr,
                weights: w,
                selected_epoch: out.selected_epoch,
                validation_gap: out.validation.mean_gap(),
                perplexity: out.validation.perplexity,
                poverty: out.validation.poverty,
                wealth: out.validation.wealth,
                status: out.status,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.validation_gap
            .total_cmp(&b.validation_gap)
            .then(a.perplexity.total_cmp(&b.perplexity))
    });
    Ok(rows)
}

/// Formats grid rows as CSV with one anti/stereo column pair per context.
pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from(
        "rank,lr,unlearn,learn,gap,kl,epoch,poverty_anti,poverty_stereo,wealth_anti,wealth_stereo,mean_gap,perplexity\n",
    );
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{:e},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            i + 1,
            r.learning_rate,
            r.weights.unlearn,
            r.weights.learn,
            r.weights.gap,
            r.weights.norm,
            r.selected_epoch,
            r.poverty.mean_anti,
            r.poverty.mean_stereo,
            r.wealth.mean_anti,
            r.wealth.mean_stereo,
            0.5 * (r.poverty.gap + r.wealth.gap),
            r.perplexity
        ));
    }
    out
}
