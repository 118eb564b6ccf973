//! End-to-end stage runs: ingest, optional augmentation, per-path training
//! and fairness measurement over repeated splits.

use std::collections::BTreeMap;
use std::path::Path;

use fairtab_core::cda::{augment, FlipSpec};
use fairtab_core::classify::{
    embed_dataset, finetune_lm_classifier, predict_linear, predict_yes_no, standardize, train_linear,
};
use fairtab_core::lm::{AdapterHost, CausalLm, ToyLm, WordTokenizer};
use fairtab_core::metrics::{fairness_report, FairnessReport, GroupedOutcomes};
use fairtab_core::serialize::{
    build_classification_prompt, default_token_budget, rank_features, serialize_dataset, serialize_record,
    truncate_to_budget, FeatureOrder, TaskTemplate,
};
use fairtab_core::table::{encode_features, repeat_seed, split, TabularDataset};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, UnlearnSummary};
use crate::config::{ClassifierPath, ExperimentConfig, Stage};
use crate::error::{Context, Error, Result};
use crate::io::{load_dataset, load_schema, read_json, save_adapters, sha256_file, sha256_hex, write_json, RunLog};
use crate::report::{emit_report_table, ReportFile};

/// Mean of each metric over the successful splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: f64,
    pub accp: f64,
    pub dp: f64,
    pub eqodds: f64,
}

impl MetricSummary {
    pub fn mean(reports: &[&FairnessReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&FairnessReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(Self {
            acc: avg(|r| r.acc),
            accp: avg(|r| r.accp),
            dp: avg(|r| r.dp),
            eqodds: avg(|r| r.eqodds),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub repeat: usize,
    /// Training rows before augmentation.
    pub train_rows_original: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_order: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<FairnessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical config JSON (output directory excluded).
    pub config_sha256: String,
    /// SHA-256 of every input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub model: String,
    pub dataset: String,
    pub path: ClassifierPath,
    pub stage: Stage,
    pub stage_label: String,
    pub cda: bool,
    pub unlearned: bool,
    pub splits: Vec<SplitOutcome>,
    pub aggregate: Option<MetricSummary>,
    /// Fewer than the configured number of splits succeeded.
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlearning: Option<UnlearnSummary>,
    pub provenance: Provenance,
}

/// Dataset, task and backend loaded once and shared by every stage.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: TabularDataset,
    pub task: Option<TaskTemplate>,
    pub backend: Option<Backend>,
    inputs: BTreeMap<String, String>,
    unlearning_logged: bool,
}

fn config_hash(cfg: &ExperimentConfig, stage: Stage) -> String {
    let mut c = cfg.clone();
    c.out = Default::default();
    c.stage = stage;
    sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

fn evenly_spaced(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

fn subsample(data: TabularDataset, max: Option<usize>, seed: u64) -> TabularDataset {
    match max {
        Some(k) if k < data.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, data.len(), k).into_vec();
            idx.sort_unstable();
            data.subset(&idx)
        }
        _ => data,
    }
}

/// Classification prompts of a schema-ordered sample of `data`, cut to the
/// default budget of a `context`-token model.
pub fn corpus_prompts(data: &TabularDataset, task: &TaskTemplate, rows: usize, context: usize) -> Result<Vec<String>> {
    let names: Vec<String> = data.schema.feature_columns().map(|(_, c)| c.name.clone()).collect();
    let order = FeatureOrder::from_ranked(&names);
    // Every piece becomes one token whatever the vocabulary, so counts are
    // exact before the tokenizer exists.
    let counter = WordTokenizer::new::<&str>(&[]);
    let budget = default_token_budget(context, task, &counter).context("token budget")?;
    evenly_spaced(data.len(), rows)
        .into_iter()
        .map(|i| {
            let text = truncate_to_budget(&serialize_record(&data.record(i), &order), budget, &counter)
                .context("serializing corpus row")?;
            Ok(build_classification_prompt(&text, task))
        })
        .collect()
}

impl Experiment {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut inputs = BTreeMap::new();
        let schema = load_schema(&config.dataset.schema)?;
        inputs.insert("dataset.schema".into(), sha256_file(&config.dataset.schema)?);
        let mut data = load_dataset(&config.dataset.csv, &schema, config.dataset.delimiter as u8)?;
        data.name = config.dataset.name.clone();
        inputs.insert("dataset.csv".into(), sha256_file(&config.dataset.csv)?);
        let task: Option<TaskTemplate> = match &config.dataset.task {
            Some(p) => {
                inputs.insert("dataset.task".into(), sha256_file(p)?);
                Some(read_json(p)?)
            }
            None => None,
        };
        let backend = match (&config.backend, config.path) {
            (Some(b), ClassifierPath::Embed | ClassifierPath::Lm) => {
                let task = task.as_ref().expect("validated");
                let extra = corpus_prompts(&data, task, b.corpus_rows, b.toy.context)?;
                Some(Backend::build(b, &extra, &[&task.yes_token, &task.no_token])?)
            }
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            data,
            task,
            backend,
            inputs,
            unlearning_logged: false,
        })
    }

    /// Runs one stage over every split. Split failures are recorded in the
    /// report; only setup failures return an error.
    pub fn run_stage(&mut self, stage: Stage, log: &mut RunLog, split_dir: Option<&Path>) -> Result<StageReport> {
        let cfg = self.config.clone();
        let mut cfg_stage = cfg.clone();
        cfg_stage.stage = stage;
        cfg_stage.validate()?;
        let flip = FlipSpec::from_dataset(&self.data).context("flip pair")?;

        let mut unlearning = None;
        let model: Option<ToyLm> = match &mut self.backend {
            None => None,
            Some(b) if stage.unlearned() => {
                let u = b.unlearned(&cfg.unlearn)?;
                if !self.unlearning_logged {
                    for e in &u.log {
                        log.push("unlearn_epoch", e);
                    }
                    self.unlearning_logged = true;
                }
                unlearning = Some(u.summary.clone());
                Some(u.model.clone())
            }
            Some(b) => Some(b.pretrained.clone()),
        };

        let mut splits = Vec::with_capacity(cfg.split.n_repeats);
        for r in 0..cfg.split.n_repeats {
            let s = self.run_split(stage, r, &flip, model.as_ref(), log, split_dir);
            log.push(
                "split",
                &serde_json::json!({
                    "stage": stage.number(),
                    "repeat": r,
                    "ok": s.report.is_some(),
                    "train_rows": s.train_rows,
                    "test_rows": s.test_rows,
                    "error": s.error,
                }),
            );
            if let Some(dir) = split_dir {
                write_json(&dir.join(format!("stage{}_split{r}.json", stage.number())), &s)?;
            }
            splits.push(s);
        }

        let ok: Vec<&FairnessReport> = splits.iter().filter_map(|s| s.report.as_ref()).collect();
        let mut inputs = self.inputs.clone();
        if let Some(b) = &self.backend {
            inputs.extend(b.inputs.clone());
        }
        Ok(StageReport {
            model: cfg.model_label(),
            dataset: cfg.dataset.name.clone(),
            path: cfg.path,
            stage,
            stage_label: stage.label().into(),
            cda: stage.cda(),
            unlearned: stage.unlearned(),
            aggregate: MetricSummary::mean(&ok),
            partial: ok.len() < cfg.split.n_repeats,
            splits,
            unlearning,
            provenance: Provenance {
                config_sha256: config_hash(&cfg, stage),
                inputs,
            },
        })
    }

    fn run_split(
        &self,
        stage: Stage,
        r: usize,
        flip: &FlipSpec,
        model: Option<&ToyLm>,
        log: &mut RunLog,
        split_dir: Option<&Path>,
    ) -> SplitOutcome {
        let cfg = &self.config;
        let mut out = SplitOutcome {
            repeat: r,
            train_rows_original: 0,
            train_rows: 0,
            test_rows: 0,
            feature_order: None,
            report: None,
            error: None,
        };
        macro_rules! tri {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(e) => {
                        out.error = Some(Error::from(e).to_string());
                        return out;
                    }
                }
            };
        }
        let (train, test) = tri!(split(&self.data, &cfg.split, r).context(format!("split {r}")));
        let seed = repeat_seed(cfg.seed, r);
        let (train, test) = if cfg.path == ClassifierPath::Tabular {
            (train, test)
        } else {
            (
                subsample(train, cfg.max_train_rows, seed),
                subsample(test, cfg.max_test_rows, seed.wrapping_add(1)),
            )
        };
        out.train_rows_original = train.len();
        let train = if stage.cda() {
            tri!(augment(&train, flip).context("augmenting"))
        } else {
            train
        };
        out.train_rows = train.len();
        out.test_rows = test.len();

        let (train_m, test_m, _) = tri!(encode_features(&train, &test, cfg.encode).context("encoding"));
        let y_pred: Vec<u8> = match cfg.path {
            ClassifierPath::Tabular => {
                let fit = tri!(train_linear(&train_m, &cfg.linear).context("training linear model"));
                tri!(predict_linear(&fit.model, &test_m).context("predicting")).0
            }
            ClassifierPath::Embed | ClassifierPath::Lm => {
                let model = model.expect("validated");
                let task = self.task.as_ref().expect("validated");
                let names: Vec<String> = train.schema.feature_columns().map(|(_, c)| c.name.clone()).collect();
                let order = tri!(rank_features(&train_m, &names, &cfg.linear).context("ranking features"));
                out.feature_order = Some(order.ranked.clone());
                let tok = model.tokenizer();
                let budget = tri!(default_token_budget(model.context_size(), task, tok).context("token budget"));
                let tr = tri!(serialize_dataset(&train, &order, budget, tok).context("serializing train"));
                let te = tri!(serialize_dataset(&test, &order, budget, tok).context("serializing test"));
                if cfg.path == ClassifierPath::Embed {
                    let mut a = tri!(embed_dataset(model, &tr, cfg.pooling).context("embedding train"));
                    let mut b = tri!(embed_dataset(model, &te, cfg.pooling).context("embedding test"));
                    standardize(&mut a, &mut b);
                    let fit = tri!(train_linear(&a, &cfg.linear).context("training linear model"));
                    tri!(predict_linear(&fit.model, &b).context("predicting")).0
                } else {
                    let prompts: Vec<String> = tr.iter().map(|e| build_classification_prompt(&e.text, task)).collect();
                    let labels: Vec<u8> = tr.iter().map(|e| e.label).collect();
                    let ft = tri!(finetune_lm_classifier(model, &prompts, &labels, task, &cfg.adapter, seed)
                        .context("fine-tuning adapters"));
                    log.push(
                        "finetune",
                        &serde_json::json!({
                            "stage": stage.number(),
                            "repeat": r,
                            "steps": ft.step_losses.len(),
                            "final_loss": ft.step_losses.last(),
                            "epoch_val_accuracy": ft.epoch_val_accuracy,
                            "best_epoch": ft.best_epoch,
                            "base_unchanged": ft.model.base_digest() == ft.base_digest_before,
                        }),
                    );
                    if let Some(dir) = split_dir {
                        let p = dir.join(format!("stage{}_split{r}.adapters.json", stage.number()));
                        tri!(save_adapters(&p, &ft.model));
                    }
                    tri!(te
                        .iter()
                        .map(|e| predict_yes_no(&ft.model, &build_classification_prompt(&e.text, task), task))
                        .collect::<fairtab_core::Result<Vec<u8>>>()
                        .context("predicting"))
                }
            }
        };
        let outcomes = tri!(GroupedOutcomes::new(test.labels(), y_pred, test.groups()).context("outcomes"));
        out.report = Some(tri!(fairness_report(&outcomes, cfg.metrics).context("metrics")));
        out
    }
}

/// Runs `stages` with shared data and backend, writing `report.json`,
/// `table.csv`, `table.md`, `runlog.jsonl`, per-split files and optional
/// plots to `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig, stages: &[Stage], plots: bool) -> Result<Vec<StageReport>> {
    let mut exp = Experiment::load(cfg)?;
    let mut log = RunLog::default();
    if let Some(b) = &exp.backend {
        for (epoch, loss) in b.pretrain_losses.iter().enumerate() {
            log.push("pretrain_epoch", &serde_json::json!({ "epoch": epoch + 1, "loss": loss }));
        }
    }
    let split_dir = cfg.out.join("splits");
    let mut reports = Vec::with_capacity(stages.len());
    for &stage in stages {
        log::info!("{} / {} / stage {}", cfg.dataset.name, cfg.path.as_str(), stage.number());
        reports.push(exp.run_stage(stage, &mut log, Some(&split_dir))?);
    }
    write_json(&cfg.out.join("report.json"), &ReportFile { reports: reports.clone() })?;
    emit_report_table(&reports, &cfg.out, plots)?;
    log.write(&cfg.out.join("runlog.jsonl"))?;
    Ok(reports)
}

/// One stage of `cfg` with all outputs written to `cfg.out`.
pub fn run_stage(cfg: &ExperimentConfig) -> Result<StageReport> {
    Ok(run_experiment(cfg, &[cfg.stage], false)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_is_the_arithmetic_mean() {
        let r = |acc: f64, dp: f64| FairnessReport {
            acc,
            accp: 0.0,
            dp,
            eqodds: 0.1,
            eqodds_convention: Default::default(),
            group_sizes: [1, 1],
            strata: Default::default(),
            dropped_terms: Vec::new(),
        };
        let (a, b, c) = (r(0.7, 0.1), r(0.8, 0.2), r(0.9, 0.6));
        let m = MetricSummary::mean(&[&a, &b, &c]).unwrap();
        assert!((m.acc - 0.8).abs() < 1e-12);
        assert!((m.dp - 0.3).abs() < 1e-12);
        assert!((m.eqodds - 0.1).abs() < 1e-12);
        assert!(MetricSummary::mean(&[]).is_none());
    }

    #[test]
    fn evenly_spaced_indices() {
        assert_eq!(evenly_spaced(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(evenly_spaced(3, 5), vec![0, 1, 2]);
    }
}
