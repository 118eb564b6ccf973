//! Text-template serialization of tabular rows: `"name is value."`
//! statements in descending feature importance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classify::{train_linear, LinearOptions};
use crate::error::{Error, Result};
use crate::lm::Tokenizer;
use crate::table::{FeatureMatrix, RowView, TabularDataset, Value, UNKNOWN_CATEGORY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOrder {
    pub ranked: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

impl FeatureOrder {
    /// Fixed order with all scores zero.
    pub fn from_ranked<S: AsRef<str>>(ranked: &[S]) -> Self {
        let ranked: Vec<String> = ranked.iter().map(|s| s.as_ref().to_string()).collect();
        let scores = ranked.iter().map(|f| (f.clone(), 0.0)).collect();
        Self { ranked, scores }
    }
}

/// Ranks `features` (in schema order) by the absolute coefficients of a
/// logistic regression on `train`. A categorical feature scores the largest
/// magnitude over its one-hot columns; ties keep schema order.
pub fn rank_features<S: AsRef<str>>(train: &FeatureMatrix, features: &[S], opts: &LinearOptions) -> Result<FeatureOrder> {
    let fit = train_linear(train, opts)?;
    let mut scores: BTreeMap<String, f64> = features.iter().map(|f| (f.as_ref().to_string(), 0.0)).collect();
    for (col, w) in train.columns.iter().zip(&fit.model.weights) {
        if let Some(s) = scores.get_mut(&col.feature) {
            *s = s.max(w.abs());
        }
    }
    let mut ranked: Vec<String> = features.iter().map(|f| f.as_ref().to_string()).collect();
    ranked.sort_by(|a, b| scores[b].total_cmp(&scores[a]));
    Ok(FeatureOrder { ranked, scores })
}

/// Anything that can look up a feature value by name.
pub trait Record {
    fn value(&self, feature: &str) -> Option<String>;
}

impl Record for RowView<'_> {
    fn value(&self, feature: &str) -> Option<String> {
        self.get(feature).map(Value::to_string)
    }
}

impl Record for BTreeMap<String, String> {
    fn value(&self, feature: &str) -> Option<String> {
        self.get(feature).cloned()
    }
}

impl<S: AsRef<str>, T: AsRef<str>> Record for [(S, T)] {
    fn value(&self, feature: &str) -> Option<String> {
        self.iter().find(|(k, _)| k.as_ref() == feature).map(|(_, v)| v.as_ref().to_string())
    }
}

/// `"name is value."` statements joined by single spaces, in ranked order.
pub fn serialize_record<R: Record + ?Sized>(row: &R, order: &FeatureOrder) -> String {
    let mut out = String::new();
    for name in &order.ranked {
        if !out.is_empty() {
            out.push(' ');
        }
        let v = row.value(name).unwrap_or_else(|| UNKNOWN_CATEGORY.to_string());
        out.push_str(&format!("{name} is {v}."));
    }
    out
}

/// Splits serialized text back into its statements (each keeps its final
/// period).
pub fn statements(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    let parts: Vec<&str> = text.split(". ").collect();
    let last = parts.len() - 1;
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| if i == last { p.to_string() } else { format!("{p}.") })
        .collect()
}

/// Longest statement-wise prefix of `text` whose token count fits `budget`.
pub fn truncate_to_budget<T: Tokenizer + ?Sized>(text: &str, budget: usize, tokenizer: &T) -> Result<String> {
    if budget == 0 {
        return Err(Error::Budget {
            budget,
            needed: tokenizer.count(text).max(1),
        });
    }
    if tokenizer.count(text) <= budget {
        return Ok(text.to_string());
    }
    let parts = statements(text);
    let mut kept = String::new();
    for (i, s) in parts.iter().enumerate() {
        let candidate = if i == 0 { s.clone() } else { format!("{kept} {s}") };
        if tokenizer.count(&candidate) > budget {
            if i == 0 {
                return Err(Error::Budget {
                    budget,
                    needed: tokenizer.count(s),
                });
            }
            break;
        }
        kept = candidate;
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub instruction: String,
    pub yes_token: String,
    pub no_token: String,
    /// Whether `yes` stands for target label 1.
    pub positive_means_yes: bool,
    #[serde(default = "default_cue")]
    pub answer_cue: String,
}

fn default_cue() -> String {
    "Answer:".into()
}

impl TaskTemplate {
    pub fn new(instruction: &str) -> Self {
        Self {
            instruction: instruction.into(),
            yes_token: "yes".into(),
            no_token: "no".into(),
            positive_means_yes: true,
            answer_cue: default_cue(),
        }
    }

    pub fn adult() -> Self {
        Self::new("Predict whether the given person earns a salary >50k USD based on their description. Answer only as yes/no")
    }

    pub fn german() -> Self {
        Self::new("Predict whether the given person is a good credit risk based on their description. Answer only as yes/no")
    }

    pub fn acs() -> Self {
        Self::new("Predict whether the given person is employed based on their description. Answer only as yes/no")
    }
}

/// Instruction, serialized text and answer cue, one per line; an empty
/// serialized text is skipped.
pub fn build_classification_prompt(serialized: &str, task: &TaskTemplate) -> String {
    [task.instruction.as_str(), serialized, task.answer_cue.as_str()]
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join("\n")
}

/// Token budget left for serialized text: context minus the prompt frame,
/// the sequence-start token and an 8-token answer margin.
pub fn default_token_budget<T: Tokenizer + ?Sized>(context: usize, task: &TaskTemplate, tokenizer: &T) -> Result<usize> {
    let frame = tokenizer.count(&build_classification_prompt("", task)) + usize::from(tokenizer.bos().is_some());
    context
        .checked_sub(frame + 8)
        .filter(|b| *b > 0)
        .ok_or(Error::Budget {
            budget: context,
            needed: frame + 9,
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedExample {
    pub text: String,
    pub label: u8,
    pub group: u8,
    pub source_row_id: usize,
}

/// Serializes and truncates every row of `data`.
pub fn serialize_dataset<T: Tokenizer + ?Sized>(
    data: &TabularDataset,
    order: &FeatureOrder,
    budget: usize,
    tokenizer: &T,
) -> Result<Vec<SerializedExample>> {
    (0..data.len())
        .map(|i| {
            let text = serialize_record(&data.record(i), order);
            Ok(SerializedExample {
                text: truncate_to_budget(&text, budget, tokenizer)?,
                label: data.label(i),
                group: data.group(i),
                source_row_id: data.origins[i].original_id,
            })
        })
        .collect()
}
