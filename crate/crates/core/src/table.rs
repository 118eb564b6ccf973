//! Tabular datasets with one binary target and one binary sensitive
//! attribute: validation, seeded train/test splits and feature encoding.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Literal category substituted for missing categorical values.
pub const UNKNOWN_CATEGORY: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Target,
    Sensitive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.to_string(),
            kind,
            role,
        }
    }

    pub fn feature(name: &str, kind: ColumnKind) -> Self {
        Self::new(name, kind, ColumnRole::Feature)
    }
}

/// Declarative schema: column specs plus the value coding of the two binary
/// columns. `positive_label` maps to target 1 and `privileged_group` maps to
/// group 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub positive_label: String,
    pub privileged_group: String,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let targets = self.columns.iter().filter(|c| c.role == ColumnRole::Target).count();
        let sensitive = self.columns.iter().filter(|c| c.role == ColumnRole::Sensitive).count();
        if targets != 1 {
            return Err(Error::Schema(format!("expected exactly one target column, found {targets}")));
        }
        if sensitive != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one sensitive column, found {sensitive}"
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
            if c.role != ColumnRole::Feature && c.kind != ColumnKind::Categorical {
                return Err(Error::Schema(format!(
                    "column `{}` is {:?} and must be categorical",
                    c.name, c.role
                )));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target_index(&self) -> usize {
        self.columns.iter().position(|c| c.role == ColumnRole::Target).expect("validated schema")
    }

    pub fn sensitive_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Sensitive)
            .expect("validated schema")
    }

    pub fn target(&self) -> &ColumnSpec {
        &self.columns[self.target_index()]
    }

    pub fn sensitive(&self) -> &ColumnSpec {
        &self.columns[self.sensitive_index()]
    }

    /// Columns usable as model inputs, in schema order. The sensitive column
    /// is included; the target never is.
    pub fn feature_columns(&self) -> impl Iterator<Item = (usize, &ColumnSpec)> {
        self.columns.iter().enumerate().filter(|(_, c)| c.role != ColumnRole::Target)
    }
}

/// One cell. Missing cells are explicit, never absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    Cat(String),
    Missing,
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    /// Numbers use the shortest round-trip representation, so `46.0` renders
    /// as `46` and `0.50` as `0.5`. Missing cells render as `unknown`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Cat(s) => f.write_str(s),
            Value::Missing => f.write_str(UNKNOWN_CATEGORY),
        }
    }
}

/// Where a row came from; counterfactual copies keep their source id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOrigin {
    pub original_id: usize,
    pub is_counterfactual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub schema: Schema,
    /// Cells in schema column order.
    pub rows: Vec<Vec<Value>>,
    pub origins: Vec<RowOrigin>,
}

/// Cell strings treated as missing on ingest.
pub const MISSING_MARKERS: [&str; 3] = ["", "?", "NA"];

impl TabularDataset {
    /// Builds a validated dataset from raw text cells. `header` names the
    /// columns of each row; columns not mentioned by the schema are ignored.
    pub fn from_text_rows<H: AsRef<str>, S: AsRef<str>>(
        name: &str,
        schema: Schema,
        header: &[H],
        rows: &[Vec<S>],
    ) -> Result<Self> {
        schema.validate()?;
        let mut positions = Vec::with_capacity(schema.columns.len());
        for c in &schema.columns {
            let pos = header
                .iter()
                .position(|h| h.as_ref().trim() == c.name)
                .ok_or_else(|| Error::MissingColumn(c.name.clone()))?;
            positions.push(pos);
        }
        if rows.is_empty() {
            return Err(Error::NoRows);
        }
        let mut out = Vec::with_capacity(rows.len());
        for (r, raw) in rows.iter().enumerate() {
            let mut cells = Vec::with_capacity(schema.columns.len());
            for (c, &pos) in schema.columns.iter().zip(&positions) {
                let text = raw
                    .get(pos)
                    .map(|s| s.as_ref().trim())
                    .ok_or_else(|| Error::Schema(format!("data row {} is too short", r + 1)))?;
                let cell = if MISSING_MARKERS.contains(&text) {
                    Value::Missing
                } else {
                    match c.kind {
                        ColumnKind::Categorical => Value::Cat(text.to_string()),
                        ColumnKind::Numeric => {
                            let x: f64 = text.parse().map_err(|_| Error::BadNumber {
                                column: c.name.clone(),
                                value: text.to_string(),
                                row: r + 1,
                            })?;
                            if !x.is_finite() {
                                return Err(Error::BadNumber {
                                    column: c.name.clone(),
                                    value: text.to_string(),
                                    row: r + 1,
                                });
                            }
                            Value::Num(x)
                        }
                    }
                };
                cells.push(cell);
            }
            out.push(cells);
        }
        Self::from_values(name, schema, out)
    }

    /// Builds a dataset from typed cells, validating the binary columns.
    pub fn from_values(name: &str, schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(Error::NoRows);
        }
        let origins = (0..rows.len())
            .map(|i| RowOrigin {
                original_id: i,
                is_counterfactual: false,
            })
            .collect();
        let ds = Self {
            name: name.to_string(),
            schema,
            rows,
            origins,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks row widths and the two-valued target and sensitive columns.
    pub fn validate(&self) -> Result<()> {
        let width = self.schema.columns.len();
        if let Some(r) = self.rows.iter().position(|r| r.len() != width) {
            return Err(Error::Schema(format!("row {r} has {} cells, expected {width}", self.rows[r].len())));
        }
        if self.origins.len() != self.rows.len() {
            return Err(Error::Schema("provenance length mismatch".to_string()));
        }
        for (idx, wanted) in [
            (self.schema.target_index(), &self.schema.positive_label),
            (self.schema.sensitive_index(), &self.schema.privileged_group),
        ] {
            let column = &self.schema.columns[idx].name;
            let values = self.distinct_values(idx)?;
            if values.len() != 2 {
                return Err(Error::NotBinary {
                    column: column.clone(),
                    found: values.len(),
                });
            }
            if !values.contains(wanted.as_str()) {
                return Err(Error::Schema(format!(
                    "value `{wanted}` is not observed in column `{column}`"
                )));
            }
        }
        Ok(())
    }

    fn distinct_values(&self, idx: usize) -> Result<BTreeSet<&str>> {
        let column = &self.schema.columns[idx].name;
        let mut set = BTreeSet::new();
        for row in &self.rows {
            match &row[idx] {
                Value::Cat(s) => {
                    set.insert(s.as_str());
                }
                _ => {
                    return Err(Error::Schema(format!("column `{column}` has a missing or numeric cell")));
                }
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Target coded to {0,1}; `positive_label` is 1.
    pub fn label(&self, row: usize) -> u8 {
        let t = self.schema.target_index();
        u8::from(self.rows[row][t].as_str() == Some(self.schema.positive_label.as_str()))
    }

    /// Group coded to {0,1}; `privileged_group` is 1.
    pub fn group(&self, row: usize) -> u8 {
        let s = self.schema.sensitive_index();
        u8::from(self.rows[row][s].as_str() == Some(self.schema.privileged_group.as_str()))
    }

    pub fn labels(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    pub fn groups(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.group(i)).collect()
    }

    pub fn value(&self, row: usize, column: &str) -> Option<&Value> {
        self.schema.index_of(column).map(|c| &self.rows[row][c])
    }

    pub fn record(&self, row: usize) -> RowView<'_> {
        RowView {
            schema: &self.schema,
            cells: &self.rows[row],
        }
    }

    /// Copies the given rows (in the given order), keeping provenance.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
        }
    }

    /// Observed values of the sensitive column, privileged value first.
    pub fn sensitive_values(&self) -> Result<(String, String)> {
        let values = self.distinct_values(self.schema.sensitive_index())?;
        let privileged = self.schema.privileged_group.clone();
        let other = values
            .into_iter()
            .find(|v| *v != privileged)
            .ok_or_else(|| Error::NotBinary {
                column: self.schema.sensitive().name.clone(),
                found: 1,
            })?
            .to_string();
        Ok((privileged, other))
    }
}

/// Borrowed view of one row, addressable by column name.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    schema: &'a Schema,
    cells: &'a [Value],
}

impl<'a> RowView<'a> {
    pub fn get(&self, column: &str) -> Option<&'a Value> {
        self.schema.index_of(column).map(|c| &self.cells[c])
    }
}

/// Repeated random train/test splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_repeats() -> usize {
    3
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train_fraction: default_train_fraction(),
            n_repeats: default_repeats(),
        }
    }
}

/// Seed of the shuffle used for repeat `repeat_index`.
pub fn repeat_seed(seed: u64, repeat_index: usize) -> u64 {
    seed ^ (repeat_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Row indices of the train and test partitions (each in ascending order).
///
/// Shuffling rule: the identity permutation `0..n` is shuffled with
/// `SliceRandom::shuffle` driven by `ChaCha8Rng::seed_from_u64(repeat_seed(seed,
/// repeat_index))`; the first `round(train_fraction * n)` shuffled indices
/// form the training partition.
pub fn split_indices(n: usize, spec: &SplitSpec, repeat_index: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if spec.n_repeats == 0 {
        return Err(Error::Config("n_repeats must be at least 1".to_string()));
    }
    if repeat_index >= spec.n_repeats {
        return Err(Error::Config(format!(
            "repeat index {repeat_index} out of range for {} repeats",
            spec.n_repeats
        )));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config("train_fraction must lie in (0, 1)".to_string()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(repeat_seed(spec.seed, repeat_index));
    order.shuffle(&mut rng);
    let n_train = math::round(spec.train_fraction * n as f64) as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Deterministic train/test split. Both partitions must contain both target
/// classes and both sensitive groups.
pub fn split(
    data: &TabularDataset,
    spec: &SplitSpec,
    repeat_index: usize,
) -> Result<(TabularDataset, TabularDataset)> {
    let (train_idx, test_idx) = split_indices(data.len(), spec, repeat_index)?;
    let train = data.subset(&train_idx);
    let test = data.subset(&test_idx);
    for (part, name) in [(&train, "train"), (&test, "test")] {
        let labels: BTreeSet<u8> = part.labels().into_iter().collect();
        let groups: BTreeSet<u8> = part.groups().into_iter().collect();
        if labels.len() < 2 {
            return Err(Error::DegenerateSplit(format!("{name} partition lacks a target class")));
        }
        if groups.len() < 2 {
            return Err(Error::DegenerateSplit(format!("{name} partition lacks a sensitive group")));
        }
    }
    Ok((train, test))
}

/// Dense row-major design matrix with the label and group vectors carried
/// alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
    pub groups: Vec<u8>,
    /// Source feature of every column, in column order.
    pub columns: Vec<EncodedColumn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub feature: String,
    /// Category level for one-hot columns; `None` for numeric columns.
    pub level: Option<String>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, labels: Vec<u8>, groups: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if labels.len() != rows || groups.len() != rows {
            return Err(Error::Dimension {
                expected: rows,
                got: labels.len().min(groups.len()),
            });
        }
        let columns = (0..cols)
            .map(|j| EncodedColumn {
                feature: format!("x{j}"),
                level: None,
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            data,
            labels,
            groups,
            columns,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.data[i * self.cols + j])
    }

    /// Feature names in first-appearance order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.columns {
            if out.last() != Some(&c.feature) && !out.contains(&c.feature) {
                out.push(c.feature.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncodedBlock {
    Numeric {
        feature: String,
        mean: f64,
        std: f64,
        median: f64,
        /// Zero variance in train: every row encodes to 0.
        constant: bool,
    },
    Categorical {
        feature: String,
        levels: Vec<String>,
    },
}

impl EncodedBlock {
    pub fn feature(&self) -> &str {
        match self {
            EncodedBlock::Numeric { feature, .. } | EncodedBlock::Categorical { feature, .. } => feature,
        }
    }

    fn width(&self) -> usize {
        match self {
            EncodedBlock::Numeric { .. } => 1,
            EncodedBlock::Categorical { levels, .. } => levels.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    /// Encode the sensitive column as an input feature (it is always carried
    /// as the group vector).
    pub include_sensitive: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            include_sensitive: true,
        }
    }
}

/// Fitted encoder: one block per input feature, in schema order.
/// Categorical levels are sorted; numeric columns are standardized with the
/// train mean and population standard deviation after median imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub blocks: Vec<EncodedBlock>,
}

impl Encoder {
    pub fn fit(train: &TabularDataset, options: EncodeOptions) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::NoRows);
        }
        let mut blocks = Vec::new();
        for (idx, spec) in train.schema.feature_columns() {
            if spec.role == ColumnRole::Sensitive && !options.include_sensitive {
                continue;
            }
            match spec.kind {
                ColumnKind::Numeric => {
                    let present: Vec<f64> = train
                        .rows
                        .iter()
                        .filter_map(|r| match r[idx] {
                            Value::Num(x) => Some(x),
                            _ => None,
                        })
                        .collect();
                    let median = if present.is_empty() { 0.0 } else { math::median(&present) };
                    let imputed: Vec<f64> = train
                        .rows
                        .iter()
                        .map(|r| match r[idx] {
                            Value::Num(x) => x,
                            _ => median,
                        })
                        .collect();
                    let (mean, std) = math::mean_std(&imputed);
                    blocks.push(EncodedBlock::Numeric {
                        feature: spec.name.clone(),
                        mean,
                        std,
                        median,
                        constant: std <= f64::EPSILON * mean.abs().max(1.0),
                    });
                }
                ColumnKind::Categorical => {
                    let levels: BTreeSet<String> = train.rows.iter().map(|r| category(&r[idx])).collect();
                    blocks.push(EncodedBlock::Categorical {
                        feature: spec.name.clone(),
                        levels: levels.into_iter().collect(),
                    });
                }
            }
        }
        Ok(Self { blocks })
    }

    pub fn width(&self) -> usize {
        self.blocks.iter().map(EncodedBlock::width).sum()
    }

    pub fn columns(&self) -> Vec<EncodedColumn> {
        let mut out = Vec::with_capacity(self.width());
        for b in &self.blocks {
            match b {
                EncodedBlock::Numeric { feature, .. } => out.push(EncodedColumn {
                    feature: feature.clone(),
                    level: None,
                }),
                EncodedBlock::Categorical { feature, levels } => {
                    out.extend(levels.iter().map(|l| EncodedColumn {
                        feature: feature.clone(),
                        level: Some(l.clone()),
                    }))
                }
            }
        }
        out
    }

    pub fn transform(&self, data: &TabularDataset) -> Result<FeatureMatrix> {
        let width = self.width();
        let mut indices = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            indices.push(
                data.schema
                    .index_of(b.feature())
                    .ok_or_else(|| Error::MissingColumn(b.feature().to_string()))?,
            );
        }
        let mut out = Vec::with_capacity(data.len() * width);
        for row in &data.rows {
            for (b, &idx) in self.blocks.iter().zip(&indices) {
                match b {
                    EncodedBlock::Numeric {
                        mean,
                        std,
                        median,
                        constant,
                        ..
                    } => {
                        let x = match row[idx] {
                            Value::Num(x) => x,
                            _ => *median,
                        };
                        out.push(if *constant { 0.0 } else { (x - mean) / std });
                    }
                    EncodedBlock::Categorical { levels, .. } => {
                        let c = category(&row[idx]);
                        out.extend(levels.iter().map(|l| if *l == c { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        Ok(FeatureMatrix {
            rows: data.len(),
            cols: width,
            data: out,
            labels: data.labels(),
            groups: data.groups(),
            columns: self.columns(),
        })
    }
}

fn category(v: &Value) -> String {
    match v {
        Value::Cat(s) => s.clone(),
        Value::Missing => UNKNOWN_CATEGORY.to_string(),
        Value::Num(x) => format!("{x}"),
    }
}

/// Fits the encoder on `train` and applies it to both partitions. Test
/// categories unseen in train encode to an all-zero block.
pub fn encode_features(
    train: &TabularDataset,
    test: &TabularDataset,
    options: EncodeOptions,
) -> Result<(FeatureMatrix, FeatureMatrix, Encoder)> {
    if train.schema != test.schema {
        return Err(Error::Schema("train and test schemas differ".to_string()));
    }
    let encoder = Encoder::fit(train, options)?;
    let a = encoder.transform(train)?;
    let b = encoder.transform(test)?;
    Ok((a, b, encoder))
}
