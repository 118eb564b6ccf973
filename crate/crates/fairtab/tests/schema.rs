use std::fs;
use std::path::{Path, PathBuf};

use fairtab::config::{ExperimentConfig, GridConfig, IntrinsicConfig};
use serde_json::{json, Value};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn schema() -> Value {
    serde_json::from_str(&fs::read_to_string(repo().join("schemas/config.schema.json")).unwrap()).unwrap()
}

fn validator(def: Option<&str>) -> jsonschema::Validator {
    let mut s = schema();
    if let Some(d) = def {
        s["$ref"] = json!(format!("#/$defs/{d}"));
        s.as_object_mut().unwrap().remove("oneOf");
    }
    jsonschema::validator_for(&s).unwrap()
}

fn kind(name: &str) -> &'static str {
    match name {
        "probe.json" => "probe",
        "grid.json" => "grid",
        _ => "experiment",
    }
}

#[test]
fn shipped_configs_validate_and_load() {
    let any = validator(None);
    let mut seen = 0;
    for entry in fs::read_dir(repo().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let doc: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let v = validator(Some(kind(&name)));
        let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
        assert!(any.is_valid(&doc), "{name} should match exactly one config kind");
        match kind(&name) {
            "probe" => drop(IntrinsicConfig::load(&path).unwrap()),
            "grid" => drop(GridConfig::load(&path).unwrap()),
            _ => {
                if !fs::read_to_string(&path).unwrap().contains("${") {
                    drop(ExperimentConfig::load(&path).unwrap());
                }
            }
        }
        seen += 1;
    }
    assert!(seen >= 8);
}

#[test]
fn schema_rejects_bad_configs() {
    let exp = validator(Some("experiment"));
    let base = json!({"dataset": {"name": "G", "csv": "g.csv", "schema": "g.schema.json"}});
    assert!(exp.is_valid(&base));

    let mut bad = base.clone();
    bad["stage"] = json!(5);
    assert!(!exp.is_valid(&bad));

    let mut bad = base.clone();
    bad["path"] = json!("forest");
    assert!(!exp.is_valid(&bad));

    let mut bad = base.clone();
    bad["unlearn"] = json!({"weights": {"unlearn": 1, "learn": 1, "gap": 1}, "learning_rate": 1e-3, "epochs": 1, "batch_size": 2});
    assert!(!exp.is_valid(&bad), "missing norm weight");
    bad["unlearn"]["weights"]["kl"] = json!(1.0);
    assert!(exp.is_valid(&bad));

    let mut bad = base;
    bad["adapter"] = json!({"rank": 2, "alpha": 4, "dropout": 0.0, "targets": ["gate_proj"]});
    assert!(!exp.is_valid(&bad));

    let probe = validator(Some("probe"));
    assert!(!probe.is_valid(&json!({"backend": {"qa": "qa.jsonl", "neutral": {"csv": "x"}}})));
    assert!(probe.is_valid(&json!({"backend": {"qa": "qa.jsonl", "neutral": {"synthetic": {"n": 10, "seed": 1}}}})));
}
