//! Conversion of the raw benchmark files into headered CSV plus schema JSON.

use std::fs;
use std::path::Path;

use fairtab_core::serialize::TaskTemplate;
use fairtab_core::table::{ColumnKind, ColumnRole, ColumnSpec, Schema};

use crate::error::{io_err, Error, Result};
use crate::io::{write_file, write_json};

use ColumnKind::{Categorical as Cat, Numeric as Num};

fn schema(cols: &[(&str, ColumnKind)], target: &str, sensitive: &str, positive: &str, privileged: &str) -> Schema {
    let columns = cols
        .iter()
        .map(|&(name, kind)| {
            let role = if name == target {
                ColumnRole::Target
            } else if name == sensitive {
                ColumnRole::Sensitive
            } else {
                ColumnRole::Feature
            };
            ColumnSpec::new(name, kind, role)
        })
        .collect();
    Schema {
        columns,
        positive_label: positive.into(),
        privileged_group: privileged.into(),
    }
}

const ADULT_COLUMNS: [(&str, ColumnKind); 15] = [
    ("age", Num),
    ("workclass", Cat),
    ("fnlwgt", Num),
    ("education", Cat),
    ("education-num", Num),
    ("marital-status", Cat),
    ("occupation", Cat),
    ("relationship", Cat),
    ("race", Cat),
    ("sex", Cat),
    ("capital-gain", Num),
    ("capital-loss", Num),
    ("hours-per-week", Num),
    ("native-country", Cat),
    ("income", Cat),
];

pub fn adult_schema() -> Schema {
    schema(&ADULT_COLUMNS, "income", "sex", ">50K", "male")
}

const GERMAN_COLUMNS: [(&str, ColumnKind); 21] = [
    ("checking-account", Cat),
    ("duration-months", Num),
    ("credit-history", Cat),
    ("purpose", Cat),
    ("credit-amount", Num),
    ("savings", Cat),
    ("employed-since", Cat),
    ("installment-rate", Num),
    ("sex", Cat),
    ("other-debtors", Cat),
    ("residence-since", Num),
    ("property", Cat),
    ("age", Num),
    ("other-installment-plans", Cat),
    ("housing", Cat),
    ("existing-credits", Num),
    ("job", Cat),
    ("people-liable", Num),
    ("telephone", Cat),
    ("foreign-worker", Cat),
    ("credit-risk", Cat),
];

pub fn german_schema() -> Schema {
    schema(&GERMAN_COLUMNS, "credit-risk", "sex", "good", "male")
}

const ACS_COLUMNS: [(&str, ColumnKind); 17] = [
    ("AGEP", Num),
    ("SCHL", Num),
    ("MAR", Cat),
    ("RELP", Cat),
    ("DIS", Cat),
    ("ESP", Cat),
    ("CIT", Cat),
    ("MIG", Cat),
    ("MIL", Cat),
    ("ANC", Cat),
    ("NATIVITY", Cat),
    ("DEAR", Cat),
    ("DEYE", Cat),
    ("DREM", Cat),
    ("SEX", Cat),
    ("RAC1P", Cat),
    ("ESR", Cat),
];

pub fn acs_schema() -> Schema {
    schema(&ACS_COLUMNS, "ESR", "SEX", "employed", "male")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Benchmark {
    Adult,
    German,
    Acs,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Adult => "adult",
            Benchmark::German => "german",
            Benchmark::Acs => "acs_utah_2018",
        }
    }

    pub fn schema(self) -> Schema {
        match self {
            Benchmark::Adult => adult_schema(),
            Benchmark::German => german_schema(),
            Benchmark::Acs => acs_schema(),
        }
    }

    pub fn task(self) -> TaskTemplate {
        match self {
            Benchmark::Adult => TaskTemplate::adult(),
            Benchmark::German => TaskTemplate::german(),
            Benchmark::Acs => TaskTemplate::acs(),
        }
    }
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |source| Error::Csv {
        path: "<memory>".into(),
        source,
    };
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| io_err("<memory>")(e.into_error()))
}

/// `adult.data` + `adult.test` (48,842 rows). Sex is lower-cased and the
/// trailing period of the test labels dropped; `?` stays as the missing
/// marker.
pub fn adult_rows(raw_dir: &Path) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for file in ["adult.data", "adult.test"] {
        let path = raw_dir.join(file);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('|') {
                continue;
            }
            let mut cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            if cells.len() != ADULT_COLUMNS.len() {
                return Err(Error::Config(format!("{}: line {} has {} fields", path.display(), i + 1, cells.len())));
            }
            cells[9] = cells[9].to_lowercase();
            let label = &mut cells[14];
            *label = label.trim_end_matches('.').to_string();
            rows.push(cells);
        }
    }
    Ok(rows)
}

fn german_code(attr: usize, code: &str) -> Option<&'static str> {
    Some(match (attr, code) {
        (1, "A11") => "balance below 0 DM",
        (1, "A12") => "balance between 0 and 200 DM",
        (1, "A13") => "balance of at least 200 DM",
        (1, "A14") => "no checking account",
        (3, "A30") => "no credits taken or all paid back duly",
        (3, "A31") => "all credits at this bank paid back duly",
        (3, "A32") => "existing credits paid back duly till now",
        (3, "A33") => "delay in paying off in the past",
        (3, "A34") => "critical account or credits existing elsewhere",
        (4, "A40") => "new car",
        (4, "A41") => "used car",
        (4, "A42") => "furniture or equipment",
        (4, "A43") => "radio or television",
        (4, "A44") => "domestic appliances",
        (4, "A45") => "repairs",
        (4, "A46") => "education",
        (4, "A47") => "vacation",
        (4, "A48") => "retraining",
        (4, "A49") => "business",
        (4, "A410") => "others",
        (6, "A61") => "below 100 DM",
        (6, "A62") => "between 100 and 500 DM",
        (6, "A63") => "between 500 and 1000 DM",
        (6, "A64") => "at least 1000 DM",
        (6, "A65") => "unknown or no savings account",
        (7, "A71") => "unemployed",
        (7, "A72") => "less than 1 year",
        (7, "A73") => "between 1 and 4 years",
        (7, "A74") => "between 4 and 7 years",
        (7, "A75") => "at least 7 years",
        (9, "A91" | "A93" | "A94") => "male",
        (9, "A92" | "A95") => "female",
        (10, "A101") => "none",
        (10, "A102") => "co-applicant",
        (10, "A103") => "guarantor",
        (12, "A121") => "real estate",
        (12, "A122") => "savings agreement or life insurance",
        (12, "A123") => "car or other",
        (12, "A124") => "unknown or no property",
        (14, "A141") => "bank",
        (14, "A142") => "stores",
        (14, "A143") => "none",
        (15, "A151") => "rent",
        (15, "A152") => "own",
        (15, "A153") => "for free",
        (17, "A171") => "unemployed or unskilled non-resident",
        (17, "A172") => "unskilled resident",
        (17, "A173") => "skilled employee or official",
        (17, "A174") => "management or highly qualified",
        (19, "A191") => "none",
        (19, "A192") => "yes",
        (20, "A201") => "yes",
        (20, "A202") => "no",
        (21, "1") => "good",
        (21, "2") => "bad",
        _ => return None,
    })
}

/// `german.data` (1,000 rows). Attribute codes are decoded to text; the
/// personal-status attribute is reduced to `sex`; class 1 is `good`.
pub fn german_rows(raw_dir: &Path) -> Result<Vec<Vec<String>>> {
    let path = raw_dir.join("german.data");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != GERMAN_COLUMNS.len() {
            return Err(Error::Config(format!("{}: line {} has {} fields", path.display(), i + 1, fields.len())));
        }
        let row = fields
            .iter()
            .enumerate()
            .map(|(j, f)| match GERMAN_COLUMNS[j].1 {
                Num if j != 20 => Ok(f.to_string()),
                _ => german_code(j + 1, f)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Config(format!("{}: line {}: unknown code {f}", path.display(), i + 1))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// A folktables-style ACSEmployment export (headered CSV with the 17 columns
/// above, already filtered to the desired state and year). `ESR` is recoded
/// to employed/not employed (`1` or `True` means employed) and `SEX` to
/// male/female (`1`/`2`).
pub fn acs_rows(raw: &Path) -> Result<Vec<Vec<String>>> {
    let csv_err = |source| Error::Csv {
        path: raw.into(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(raw).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let pos = ACS_COLUMNS
        .iter()
        .map(|(n, _)| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Config(format!("{}: column {n} missing", raw.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let mut row: Vec<String> = pos.iter().map(|&p| rec.get(p).unwrap_or("").to_string()).collect();
        let numeric_one = |s: &str| s.parse::<f64>().map(|x| x == 1.0).unwrap_or(false);
        row[16] = if row[16].eq_ignore_ascii_case("true") || numeric_one(&row[16]) {
            "employed".into()
        } else {
            "not employed".into()
        };
        row[14] = match row[14].parse::<f64>() {
            Ok(1.0) => "male".into(),
            Ok(2.0) => "female".into(),
            _ => row[14].to_lowercase(),
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `<out>/<name>.csv`, `<name>.schema.json` and `<name>.task.json`.
pub fn prepare(bench: Benchmark, raw: &Path, out_dir: &Path) -> Result<usize> {
    let rows = match bench {
        Benchmark::Adult => adult_rows(raw)?,
        Benchmark::German => german_rows(raw)?,
        Benchmark::Acs => acs_rows(raw)?,
    };
    let schema = bench.schema();
    let header: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let name = bench.name();
    write_file(&out_dir.join(format!("{name}.csv")), &csv_text(&header, &rows)?)?;
    write_json(&out_dir.join(format!("{name}.schema.json")), &schema)?;
    write_json(&out_dir.join(format!("{name}.task.json")), &bench.task())?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schemas_validate() {
        for b in [Benchmark::Adult, Benchmark::German, Benchmark::Acs] {
            let s = b.schema();
            s.validate().unwrap();
        }
        assert_eq!(adult_schema().feature_columns().count(), 14);
        assert_eq!(german_schema().feature_columns().count(), 20);
        assert_eq!(acs_schema().feature_columns().count(), 16);
    }

    #[test]
    fn german_codes_cover_sex() {
        for (c, s) in [("A91", "male"), ("A92", "female"), ("A93", "male"), ("A94", "male"), ("A95", "female")] {
            assert_eq!(german_code(9, c), Some(s));
        }
        assert_eq!(german_code(9, "A96"), None);
    }

    #[test]
    fn decoded_values_never_contain_the_statement_delimiter() {
        for attr in 1..=21 {
            for n in 0..=410 {
                if let Some(v) = german_code(attr, &format!("A{n}")) {
                    assert!(!v.contains(". "), "{v}");
                }
            }
        }
    }
}
