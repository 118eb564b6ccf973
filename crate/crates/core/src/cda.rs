//! Counterfactual data augmentation: every training row gets a twin with
//! the sensitive attribute flipped.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{ColumnRole, RowOrigin, TabularDataset, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipSpec {
    pub column: String,
    pub pair: (String, String),
}

impl FlipSpec {
    /// Flip over the dataset's sensitive column and its two observed values
    /// (privileged value first).
    pub fn from_dataset(data: &TabularDataset) -> Result<Self> {
        Ok(Self {
            column: data.schema.sensitive().name.clone(),
            pair: data.sensitive_values()?,
        })
    }

    pub fn flip_value<'a>(&'a self, v: &str) -> Result<&'a str> {
        if v == self.pair.0 {
            Ok(&self.pair.1)
        } else if v == self.pair.1 {
            Ok(&self.pair.0)
        } else {
            Err(Error::FlipValue(format!(
                "`{v}` is not one of `{}` / `{}`",
                self.pair.0, self.pair.1
            )))
        }
    }
}

/// Original rows followed by one flipped copy of each, in the same order.
pub fn augment(train: &TabularDataset, flip: &FlipSpec) -> Result<TabularDataset> {
    let col = train
        .schema
        .index_of(&flip.column)
        .ok_or_else(|| Error::MissingColumn(flip.column.clone()))?;
    if train.schema.columns[col].role != ColumnRole::Sensitive {
        return Err(Error::Schema(format!("column `{}` is not the sensitive column", flip.column)));
    }
    let mut rows = Vec::with_capacity(2 * train.len());
    let mut origins = Vec::with_capacity(2 * train.len());
    rows.extend(train.rows.iter().cloned());
    origins.extend(train.origins.iter().copied());
    for (row, origin) in train.rows.iter().zip(&train.origins) {
        let current = match &row[col] {
            Value::Cat(s) => s.as_str(),
            other => return Err(Error::FlipValue(format!("{other:?}"))),
        };
        let mut twin = row.clone();
        twin[col] = Value::Cat(flip.flip_value(current)?.into());
        rows.push(twin);
        origins.push(RowOrigin {
            original_id: origin.original_id,
            is_counterfactual: true,
        });
    }
    Ok(TabularDataset {
        name: format!("{}+cda", train.name),
        schema: train.schema.clone(),
        rows,
        origins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{ColumnKind, ColumnSpec, Schema};
    use alloc::string::ToString;
    use alloc::vec;

    fn data(rows: &[(&str, f64, &str)]) -> TabularDataset {
        let schema = Schema {
            columns: vec![
                ColumnSpec::new("sex", ColumnKind::Categorical, ColumnRole::Sensitive),
                ColumnSpec::feature("age", ColumnKind::Numeric),
                ColumnSpec::new("y", ColumnKind::Categorical, ColumnRole::Target),
            ],
            positive_label: "1".into(),
            privileged_group: "male".into(),
        };
        let rows = rows
            .iter()
            .map(|(s, a, y)| vec![Value::Cat(s.to_string()), Value::Num(*a), Value::Cat(y.to_string())])
            .collect();
        TabularDataset::from_values("toy", schema, rows).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let f = FlipSpec {
            column: "sex".into(),
            pair: ("male".into(), "female".into()),
        };
        assert_eq!(f.flip_value("male").unwrap(), "female");
        assert_eq!(f.flip_value("female").unwrap(), "male");
        assert!(matches!(f.flip_value("unknown"), Err(Error::FlipValue(_))));
    }

    #[test]
    fn rows_double_and_groups_balance() {
        let ds = data(&[
            ("male", 27.0, "1"),
            ("male", 30.0, "0"),
            ("male", 41.0, "1"),
            ("female", 22.0, "0"),
            ("female", 50.0, "1"),
        ]);
        let f = FlipSpec::from_dataset(&ds).unwrap();
        let out = augment(&ds, &f).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out.groups().iter().filter(|&&g| g == 1).count(), 5);
        assert_eq!(out.name, "toy+cda");
        assert_eq!(out.rows[5][0], Value::Cat("female".into()));
        assert_eq!(out.rows[5][1], Value::Num(27.0));
        assert!(out.origins[5].is_counterfactual && out.origins[5].original_id == 0);
        assert!(!out.origins[0].is_counterfactual);
    }
}
