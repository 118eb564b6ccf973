//! Group-fairness metrics over binary predictions and the intrinsic
//! stereotype-gap report.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, CausalLm};
use crate::qa::{Context, QaPair};
use crate::unlearn::pair_probabilities;

/// Aligned true labels, predictions and group membership.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedOutcomes {
    y_true: Vec<u8>,
    y_pred: Vec<u8>,
    group: Vec<u8>,
}

impl GroupedOutcomes {
    pub fn new(y_true: Vec<u8>, y_pred: Vec<u8>, group: Vec<u8>) -> Result<Self> {
        if y_true.is_empty() {
            return Err(Error::Empty("outcomes"));
        }
        if y_pred.len() != y_true.len() || group.len() != y_true.len() {
            return Err(Error::Dimension {
                expected: y_true.len(),
                got: if y_pred.len() != y_true.len() { y_pred.len() } else { group.len() },
            });
        }
        if y_true.iter().chain(&y_pred).chain(&group).any(|&v| v > 1) {
            return Err(Error::Schema("outcomes must be coded 0/1".into()));
        }
        Ok(Self { y_true, y_pred, group })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn y_true(&self) -> &[u8] {
        &self.y_true
    }

    pub fn y_pred(&self) -> &[u8] {
        &self.y_pred
    }

    pub fn group(&self) -> &[u8] {
        &self.group
    }

    pub fn confusion(&self) -> [Confusion; 2] {
        let mut c = [Confusion::default(); 2];
        for i in 0..self.len() {
            let g = &mut c[usize::from(self.group[i])];
            match (self.y_true[i], self.y_pred[i]) {
                (1, 1) => g.tp += 1,
                (0, 1) => g.fp += 1,
                (0, 0) => g.tn += 1,
                _ => g.fn_ += 1,
            }
        }
        c
    }
}

/// Per-group confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    fn positive_rate(&self) -> f64 {
        (self.tp + self.fp) as f64 / self.total() as f64
    }

    fn tpr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    fn fpr(&self) -> Option<f64> {
        let n = self.fp + self.tn;
        (n > 0).then(|| self.fp as f64 / n as f64)
    }
}

/// How the two rate differences of equality of odds are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EqOddsConvention {
    #[default]
    Sum,
    Mean,
}

/// What to do when a group has no true positives or no true negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyStratum {
    #[default]
    Error,
    DropTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    #[serde(default)]
    pub eqodds: EqOddsConvention,
    #[serde(default)]
    pub empty_stratum: EmptyStratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub acc: f64,
    pub accp: f64,
    pub dp: f64,
    pub eqodds: f64,
    pub eqodds_convention: EqOddsConvention,
    /// Rows in group 0 and group 1.
    pub group_sizes: [usize; 2],
    pub strata: [Confusion; 2],
    /// Rate terms left out of `eqodds` because their stratum was empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_terms: Vec<String>,
}

fn require_both_groups(c: &[Confusion; 2]) -> Result<()> {
    for (g, conf) in c.iter().enumerate() {
        if conf.total() == 0 {
            return Err(Error::MissingGroup(g as u8));
        }
    }
    Ok(())
}

pub fn accuracy(o: &GroupedOutcomes) -> f64 {
    let correct = o.y_true.iter().zip(&o.y_pred).filter(|(t, p)| t == p).count();
    correct as f64 / o.len() as f64
}

/// `|acc(A=0) - acc(A=1)|`.
pub fn accuracy_parity(o: &GroupedOutcomes) -> Result<f64> {
    let c = o.confusion();
    require_both_groups(&c)?;
    Ok((c[0].accuracy() - c[1].accuracy()).abs())
}

/// `|P(Ŷ=1 | A=0) - P(Ŷ=1 | A=1)|`.
pub fn demographic_parity(o: &GroupedOutcomes) -> Result<f64> {
    let c = o.confusion();
    require_both_groups(&c)?;
    Ok((c[0].positive_rate() - c[1].positive_rate()).abs())
}

/// `|FPR₀ - FPR₁| + |TPR₀ - TPR₁|`, or half of it under the mean
/// convention. Returns the value and the names of dropped terms.
pub fn equality_of_odds(o: &GroupedOutcomes, opts: MetricOptions) -> Result<(f64, Vec<String>)> {
    let c = o.confusion();
    require_both_groups(&c)?;
    let terms = [
        ("fpr", c[0].fpr(), c[1].fpr()),
        ("tpr", c[0].tpr(), c[1].tpr()),
    ];
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (name, a, b) in terms {
        match (a, b) {
            (Some(a), Some(b)) => kept.push((a - b).abs()),
            _ => match opts.empty_stratum {
                EmptyStratum::Error => {
                    return Err(Error::UndefinedRate(format!(
                        "{name} is undefined: a group has no {} true labels",
                        if name == "tpr" { "positive" } else { "negative" }
                    )))
                }
                EmptyStratum::DropTerm => dropped.push(String::from(name)),
            },
        }
    }
    let sum: f64 = kept.iter().sum();
    let value = match opts.eqodds {
        EqOddsConvention::Sum => sum,
        EqOddsConvention::Mean if kept.is_empty() => 0.0,
        EqOddsConvention::Mean => sum / kept.len() as f64,
    };
    Ok((value, dropped))
}

pub fn fairness_report(o: &GroupedOutcomes, opts: MetricOptions) -> Result<FairnessReport> {
    let strata = o.confusion();
    require_both_groups(&strata)?;
    let (eqodds, dropped_terms) = equality_of_odds(o, opts)?;
    Ok(FairnessReport {
        acc: accuracy(o),
        accp: accuracy_parity(o)?,
        dp: demographic_parity(o)?,
        eqodds,
        eqodds_convention: opts.eqodds,
        group_sizes: [strata[0].total(), strata[1].total()],
        strata,
        dropped_terms,
    })
}

/// Mean stereotype and antistereotype probability over one context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextGap {
    pub mean_anti: f64,
    pub mean_stereo: f64,
    pub gap: f64,
    pub n_pairs: usize,
}

impl ContextGap {
    /// Gap of means: average each side first, then take the difference.
    pub fn from_probabilities(probs: &[(f64, f64)]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("context bucket"));
        }
        let n = probs.len() as f64;
        let mean_stereo = probs.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_anti = probs.iter().map(|p| p.1).sum::<f64>() / n;
        Ok(Self {
            mean_anti,
            mean_stereo,
            gap: (mean_stereo - mean_anti).abs(),
            n_pairs: probs.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub poverty: ContextGap,
    pub wealth: ContextGap,
    pub perplexity: f64,
}

impl IntrinsicReport {
    /// Builds the report from stored `(context, p_stereo, p_anti)` triples.
    pub fn from_pair_probabilities(pairs: &[(Context, f64, f64)], perplexity: f64) -> Result<Self> {
        let bucket = |ctx: Context| -> Vec<(f64, f64)> {
            pairs.iter().filter(|p| p.0 == ctx).map(|p| (p.1, p.2)).collect()
        };
        Ok(Self {
            poverty: ContextGap::from_probabilities(&bucket(Context::Poverty))?,
            wealth: ContextGap::from_probabilities(&bucket(Context::Wealth))?,
            perplexity,
        })
    }

    pub fn context(&self, ctx: Context) -> &ContextGap {
        match ctx {
            Context::Poverty => &self.poverty,
            Context::Wealth => &self.wealth,
        }
    }

    pub fn mean_gap(&self) -> f64 {
        0.5 * (self.poverty.gap + self.wealth.gap)
    }
}

/// Probes the model on every pair and measures perplexity on the neutral
/// texts.
pub fn intrinsic_gap_report<M: CausalLm>(model: &M, qa: &[QaPair], neutral: &[String]) -> Result<IntrinsicReport> {
    let mut probs = Vec::with_capacity(qa.len());
    for pair in qa {
        let (s, a) = pair_probabilities(model, pair)?;
        probs.push((pair.context, s, a));
    }
    let ppl = lm::perplexity(model, neutral)?;
    IntrinsicReport::from_pair_probabilities(&probs, ppl)
}
