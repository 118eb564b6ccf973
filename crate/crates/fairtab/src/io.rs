//! File formats: delimited tables, schema and config JSON, JSONL corpora and
//! model checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use fairtab_core::lm::{AdapterHost, LoraSpec, NeutralExample, ToyLm, TrainableLm};
use fairtab_core::qa::{validate_qa_set, QaPair};
use fairtab_core::table::{Schema, TabularDataset, Value};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Context, Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// One JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::JsonLine {
            path: path.into(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

pub fn load_schema(path: &Path) -> Result<Schema> {
    let schema: Schema = read_json(path)?;
    schema.validate().context(path.display().to_string())?;
    Ok(schema)
}

/// Reads a delimited file with a header row into a validated dataset.
pub fn load_dataset(path: &Path, schema: &Schema, delimiter: u8) -> Result<TabularDataset> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    TabularDataset::from_text_rows(&name, schema.clone(), &header, &rows).context(path.display().to_string())
}

/// Writes `data` in schema column order; missing cells are left empty. With
/// `provenance` two extra columns record each row's origin.
pub fn write_dataset(path: &Path, data: &TabularDataset, delimiter: u8, provenance: bool) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(Vec::new());
    let mut header: Vec<&str> = data.schema.columns.iter().map(|c| c.name.as_str()).collect();
    if provenance {
        header.extend(["original_id", "is_counterfactual"]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for (row, origin) in data.rows.iter().zip(&data.origins) {
        let mut cells: Vec<String> = row
            .iter()
            .map(|v| match v {
                Value::Missing => String::new(),
                v => v.to_string(),
            })
            .collect();
        if provenance {
            cells.push(origin.original_id.to_string());
            cells.push(origin.is_counterfactual.to_string());
        }
        w.write_record(&cells).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path)(e.into_error()))?;
    write_file(path, &bytes)
}

/// Stereotype probe pairs, one JSON object per line.
pub fn load_qa(path: &Path) -> Result<Vec<QaPair>> {
    let pairs: Vec<QaPair> = read_jsonl(path)?;
    if pairs.is_empty() {
        return Err(Error::Core {
            context: path.display().to_string(),
            source: fairtab_core::Error::Empty("QA pairs"),
        });
    }
    for (i, p) in pairs.iter().enumerate() {
        p.validate().context(format!("{}: line {}", path.display(), i + 1))?;
    }
    validate_qa_set(&pairs).context(path.display().to_string())?;
    Ok(pairs)
}

/// Neutral corpus lines `{question, best_answer}`.
pub fn load_neutral(path: &Path) -> Result<Vec<NeutralExample>> {
    let items: Vec<NeutralExample> = read_jsonl(path)?;
    if items.is_empty() {
        return Err(Error::Core {
            context: path.display().to_string(),
            source: fairtab_core::Error::Empty("neutral corpus"),
        });
    }
    Ok(items)
}

pub const CHECKPOINT_FORMAT: &str = "fairtab-toy-lm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: ToyLm,
}

/// Saves the model (base weights, tokenizer, config and any adapters).
pub fn save_model(path: &Path, model: &ToyLm) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let bytes = serde_json::to_vec(&ck).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    write_file(path, &bytes)
}

pub fn load_model(path: &Path) -> Result<ToyLm> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            ck.format,
            ck.version
        )));
    }
    Ok(ck.model)
}

pub const ADAPTER_FORMAT: &str = "fairtab-lora";
pub const ADAPTER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPair {
    /// `d x r`, row-major.
    pub a: Vec<f64>,
    /// `r x d`, row-major.
    pub b: Vec<f64>,
}

/// Adapter-only checkpoint: header plus one factor pair per adapted block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterFile {
    pub format: String,
    pub version: u32,
    pub spec: LoraSpec,
    /// SHA-256 of the base weights the adapters were trained on.
    pub base_sha256: String,
    pub blocks: BTreeMap<String, FactorPair>,
}

impl AdapterFile {
    pub fn from_model(model: &ToyLm) -> Result<Self> {
        let spec = model
            .adapters()
            .ok_or_else(|| Error::Config("model has no adapters to save".into()))?
            .spec
            .clone();
        let params = model.parameters();
        let mut blocks: BTreeMap<String, FactorPair> = BTreeMap::new();
        for b in model.blocks() {
            let values = params[b.offset..b.offset + b.len].to_vec();
            let (name, is_a) = match (b.name.strip_suffix(".lora_a"), b.name.strip_suffix(".lora_b")) {
                (Some(n), _) => (n, true),
                (_, Some(n)) => (n, false),
                _ => continue,
            };
            let pair = blocks.entry(name.to_string()).or_insert_with(|| FactorPair {
                a: Vec::new(),
                b: Vec::new(),
            });
            if is_a {
                pair.a = values;
            } else {
                pair.b = values;
            }
        }
        Ok(Self {
            format: ADAPTER_FORMAT.into(),
            version: ADAPTER_VERSION,
            spec,
            base_sha256: hex::encode(model.base_digest()),
            blocks,
        })
    }

    /// `base` with these adapters attached.
    pub fn apply(&self, base: &ToyLm) -> Result<ToyLm> {
        if self.format != ADAPTER_FORMAT || self.version != ADAPTER_VERSION {
            return Err(Error::Config(format!("unsupported adapter file {} v{}", self.format, self.version)));
        }
        if hex::encode(base.base_digest()) != self.base_sha256 {
            return Err(Error::Config("adapters were trained on different base weights".into()));
        }
        let mut m = base.without_adapters();
        m.attach_adapters(&self.spec, 0).context("attaching adapters")?;
        let layout = m.blocks();
        if layout.len() != 2 * self.blocks.len() {
            return Err(Error::Config(format!(
                "expected {} adapter blocks, found {}",
                layout.len() / 2,
                self.blocks.len()
            )));
        }
        for b in layout {
            let (name, factor) = match (b.name.strip_suffix(".lora_a"), b.name.strip_suffix(".lora_b")) {
                (Some(n), _) => (n, "a"),
                (_, Some(n)) => (n, "b"),
                _ => continue,
            };
            let pair = self
                .blocks
                .get(name)
                .ok_or_else(|| Error::Config(format!("adapter block `{name}` missing")))?;
            let values = if factor == "a" { &pair.a } else { &pair.b };
            if values.len() != b.len {
                return Err(Error::Config(format!(
                    "{name}.{factor}: expected {} values, found {}",
                    b.len,
                    values.len()
                )));
            }
            m.parameters_mut()[b.offset..b.offset + b.len].copy_from_slice(values);
        }
        Ok(m)
    }
}

pub fn save_adapters(path: &Path, model: &ToyLm) -> Result<()> {
    write_json(path, &AdapterFile::from_model(model)?)
}

pub fn load_adapters(path: &Path, base: &ToyLm) -> Result<ToyLm> {
    let file: AdapterFile = read_json(path)?;
    file.apply(base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Appends lines to a JSONL log held in memory until `flush`.
#[derive(Debug, Default)]
pub struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    pub fn push<T: Serialize>(&mut self, event: &str, body: &T) {
        let mut v = serde_json::to_value(body).unwrap_or(serde_json::Value::Null);
        match v.as_object_mut() {
            Some(obj) => {
                obj.insert("event".into(), event.into());
            }
            None => v = serde_json::json!({ "event": event, "value": v }),
        }
        self.lines.push(v.to_string());
    }

    pub fn extend(&mut self, other: RunLog) {
        self.lines.extend(other.lines);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for l in &self.lines {
            writeln!(buf, "{l}").map_err(io_err(path))?;
        }
        write_file(path, &buf)
    }
}
