//! Acceptance gate. Each criterion runs in turn and prints one PASS/FAIL
//! line; the process exits non-zero if any criterion fails.
//!
//! `cargo test -p fairtab --test acceptance -- 3 9` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fairtab::backend::Backend;
use fairtab::config::IntrinsicConfig;
use fairtab::io::read_json;
use fairtab::prepare::adult_schema;
use fairtab::{run_stage, ExperimentConfig, Stage};
use fairtab_core::cda::{augment, FlipSpec};
use fairtab_core::classify::{finetune_lm_classifier, predict_yes_no, restricted_argmax, AdapterConfig};
use fairtab_core::lm::{
    next_token_prob, perplexity, AdapterHost, CausalLm, Tokenizer, ToyLm, ToyLmConfig, TrainableLm, WordTokenizer,
};
use fairtab_core::metrics::{
    fairness_report, intrinsic_gap_report, EmptyStratum, EqOddsConvention, GroupedOutcomes, IntrinsicReport,
    MetricOptions,
};
use fairtab_core::oracle::brute_force_fairness;
use fairtab_core::qa::{Context, QaPair};
use fairtab_core::serialize::{
    build_classification_prompt, serialize_record, statements, truncate_to_budget, FeatureOrder, TaskTemplate,
};
use fairtab_core::table::{split, SplitSpec, TabularDataset};
use fairtab_core::unlearn::{objective, train_unlearn, CheckpointPolicy, GapMode, KlItem, LossWeights};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METRIC_TOL: f64 = 1e-12;
const METRIC_TABLES: usize = 1000;
const METRIC_MAX_ROWS: usize = 200;
const METRIC_BUDGET: Duration = Duration::from_secs(30);

const ADULT_ACC: (f64, f64) = (0.812, 0.02);
const ADULT_DP: (f64, f64) = (0.326, 0.06);
const ADULT_EQODDS: (f64, f64) = (0.365, 0.08);
const GERMAN_ACC: (f64, f64) = (0.738, 0.05);
const ACS_ACC: (f64, f64) = (0.701, 0.03);
const BASELINE_BUDGET: Duration = Duration::from_secs(5 * 60);

const GAP_TOL: f64 = 1e-12;
const UNIFORM_PPL_TOL: f64 = 1e-9;

const FD_STEP: f64 = 1e-4;
const FD_MAX_REL_ERR: f64 = 1e-3;
const FD_SAMPLES: usize = 64;
const FD_MAX_PARAMS: usize = 100_000;
const FD_BUDGET: Duration = Duration::from_secs(3 * 60);

const INITIAL_GAP_MIN: f64 = 0.5;
const UNLEARNED_GAP_MAX: f64 = 0.2;
const PPL_CHANGE_MAX: f64 = 0.10;
const UNLEARN_BUDGET: Duration = Duration::from_secs(10 * 60);

const FLIP_P_ANTI_MIN: f64 = 0.9;
const KL_ONLY_DRIFT_MAX: f64 = 0.05;
const ABLATION_EPOCHS: usize = 60;
const ABLATION_BUDGET: Duration = Duration::from_secs(10 * 60);

const GOLD_P_MIN: f64 = 0.9;
const ADAPTER_STEPS: usize = 200;

const GOLDEN_PREFIX: &str = "workclass is Private. hours-per-week is 46. sex is male. age is 27.";

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn within(x: f64, (target, tol): (f64, f64)) -> bool {
    (x - target).abs() <= tol
}

fn random_outcomes(rng: &mut ChaCha8Rng) -> GroupedOutcomes {
    let n = rng.random_range(2..=METRIC_MAX_ROWS);
    // skewed rates make empty strata common
    let (pt, pp, pg) = (rng.random::<f64>(), rng.random::<f64>(), rng.random_range(0.02..0.98));
    let mut t = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        t.push(u8::from(rng.random::<f64>() < pt));
        p.push(u8::from(rng.random::<f64>() < pp));
        g.push(if i < 2 { i as u8 } else { u8::from(rng.random::<f64>() < pg) });
    }
    GroupedOutcomes::new(t, p, g).expect("valid table")
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let conventions = [
        MetricOptions::default(),
        MetricOptions {
            eqodds: EqOddsConvention::Mean,
            empty_stratum: EmptyStratum::DropTerm,
        },
        MetricOptions {
            eqodds: EqOddsConvention::Sum,
            empty_stratum: EmptyStratum::DropTerm,
        },
    ];
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for i in 0..METRIC_TABLES {
        let o = random_outcomes(&mut rng);
        let opts = conventions[i % conventions.len()];
        match (fairness_report(&o, opts), brute_force_fairness(&o, opts)) {
            (Ok(a), Ok(b)) => {
                for (x, y) in [(a.acc, b.acc), (a.accp, b.accp), (a.dp, b.dp), (a.eqodds, b.eqodds)] {
                    worst = worst.max((x - y).abs());
                }
                if a.dropped_terms != b.dropped_terms {
                    return verdict(false, format!("table {i}: dropped terms differ"));
                }
                compared += 1;
            }
            (Err(_), Err(_)) => {}
            (a, b) => return verdict(false, format!("table {i}: fast {:?} vs oracle {:?}", a.err(), b.err())),
        }
    }
    let took = start.elapsed();
    verdict(
        worst <= METRIC_TOL && took < METRIC_BUDGET && compared > METRIC_TABLES / 2,
        format!("{compared}/{METRIC_TABLES} tables compared, max |diff| {worst:.1e}, {took:.1?}"),
    )
}

fn baseline(config: &str, csv: Option<PathBuf>) -> fairtab::Result<fairtab::pipeline::MetricSummary> {
    let dir = repo().join("configs");
    let mut cfg: ExperimentConfig = read_json(&dir.join(config))?;
    if let Some(csv) = csv {
        cfg.dataset.csv = csv;
    }
    let out = tempfile::tempdir().expect("tempdir");
    cfg.resolve_paths(&dir)?;
    cfg.out = out.path().to_path_buf();
    let report = run_stage(&cfg)?;
    Ok(report.aggregate.expect("every split succeeded"))
}

fn acs_csv() -> Option<PathBuf> {
    std::env::var_os("FAIRTAB_ACS_CSV")
        .map(PathBuf::from)
        .or_else(|| Some(repo().join("data/acs_utah_2018.csv")))
        .filter(|p| p.exists())
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    match baseline("adult_tabular.json", None) {
        Ok(m) => {
            ok &= within(m.acc, ADULT_ACC) && within(m.dp, ADULT_DP) && within(m.eqodds, ADULT_EQODDS);
            parts.push(format!("Adult acc {:.3} dp {:.3} eqodds {:.3}", m.acc, m.dp, m.eqodds));
        }
        Err(e) => {
            ok = false;
            parts.push(format!("Adult error: {e}"));
        }
    }
    match baseline("german_tabular.json", None) {
        Ok(m) => {
            ok &= within(m.acc, GERMAN_ACC);
            parts.push(format!("German acc {:.3}", m.acc));
        }
        Err(e) => {
            ok = false;
            parts.push(format!("German error: {e}"));
        }
    }
    match acs_csv() {
        None => {
            ok = false;
            parts.push("ACS data not found (data/acs_utah_2018.csv or $FAIRTAB_ACS_CSV)".into());
        }
        Some(csv) => match baseline("acs_tabular.json", Some(csv)) {
            Ok(m) => {
                ok &= within(m.acc, ACS_ACC);
                parts.push(format!("ACS acc {:.3}", m.acc));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("ACS error: {e}"));
            }
        },
    }
    let took = start.elapsed();
    parts.push(format!("{took:.1?}"));
    verdict(ok && took < BASELINE_BUDGET, parts.join("; "))
}

fn probe_words() -> Vec<String> {
    [
        "the cat sat on the mat",
        "a dog ran in the park",
        "the sky is blue today",
        "we read a book",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn criterion_3() -> Verdict {
    let pairs = [
        (Context::Poverty, 0.70, 0.30),
        (Context::Poverty, 0.86, 0.14),
        (Context::Poverty, 0.78, 0.22),
        (Context::Wealth, 0.80, 0.20),
        (Context::Wealth, 0.76, 0.24),
    ];
    let report = IntrinsicReport::from_pair_probabilities(&pairs, 1.0).expect("report");
    let gap_err = [report.poverty.gap, report.wealth.gap]
        .iter()
        .map(|g| (g - 0.560).abs())
        .fold(0.0, f64::max);

    let texts = probe_words();
    let tok = WordTokenizer::from_corpus(&texts, &[], 256).expect("tokenizer");
    let mut m = ToyLm::new(tok, ToyLmConfig::default()).expect("model");
    m.make_uniform();
    let v = m.vocab_size() as f64;
    let ppl = perplexity(&m, &texts).expect("perplexity");
    let ppl_err = (ppl - v).abs();
    verdict(
        gap_err <= GAP_TOL && ppl_err <= UNIFORM_PPL_TOL,
        format!("max |gap - 0.560| {gap_err:.1e}; uniform ppl {ppl} vs V {v} (|diff| {ppl_err:.1e})"),
    )
}

fn toy_probe_set() -> Vec<QaPair> {
    let path = repo().join("data/toy/qa.jsonl");
    fairtab::io::load_qa(&path).expect("probe set")
}

fn objective_value(m: &ToyLm, qa: &[&QaPair], kl: &[&KlItem], w: &LossWeights) -> f64 {
    let c = objective(m, qa, kl, w, GapMode::Normalized, None).expect("objective");
    w.as_array().iter().zip(c.as_array()).map(|(a, b)| a * b).sum()
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let qa = toy_probe_set();
    let neutral: Vec<String> = fairtab_core::lm::neutral_corpus(4, 7).iter().map(|e| e.text()).collect();
    let mut texts = neutral.clone();
    texts.extend(qa.iter().map(|p| format!("{} {} {}", p.prompt, p.stereotype, p.antistereotype)));
    let tok = WordTokenizer::from_corpus(&texts, &[], 256).expect("tokenizer");
    let reference = ToyLm::new(tok, ToyLmConfig::default()).expect("model");
    let kl: Vec<KlItem> = neutral.iter().map(|t| KlItem::new(&reference, t).expect("kl item")).collect();
    let mut m = reference.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in m.parameters_mut() {
        *p += 0.05 * (rng.random::<f64>() * 2.0 - 1.0);
    }
    let n_params = m.parameters().len();
    if n_params > FD_MAX_PARAMS {
        return verdict(false, format!("{n_params} parameters"));
    }
    let q: Vec<&QaPair> = qa.iter().collect();
    let k: Vec<&KlItem> = kl.iter().collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, w) in [
        ("unlearn", LossWeights::new(1.0, 0.0, 0.0, 0.0)),
        ("learn", LossWeights::new(0.0, 1.0, 0.0, 0.0)),
        ("gap", LossWeights::new(0.0, 0.0, 1.0, 0.0)),
        ("kl", LossWeights::new(0.0, 0.0, 0.0, 1.0)),
    ] {
        let mut grad = vec![0.0; n_params];
        objective(&m, &q, &k, &w, GapMode::Normalized, Some(&mut grad)).expect("gradient");
        let live: Vec<usize> = (0..n_params).filter(|&i| grad[i] != 0.0).collect();
        if live.len() < FD_SAMPLES {
            return verdict(false, format!("{name}: only {} parameters carry gradient", live.len()));
        }
        let mut worst: f64 = 0.0;
        for &i in live.choose_multiple(&mut rng, FD_SAMPLES) {
            let mut plus = m.clone();
            plus.parameters_mut()[i] += FD_STEP;
            let mut minus = m.clone();
            minus.parameters_mut()[i] -= FD_STEP;
            let fd = (objective_value(&plus, &q, &k, &w) - objective_value(&minus, &q, &k, &w)) / (2.0 * FD_STEP);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        ok &= worst < FD_MAX_REL_ERR;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let took = start.elapsed();
    verdict(
        ok && took < FD_BUDGET,
        format!("{n_params} params, max rel err: {}; {took:.1?}", parts.join(", ")),
    )
}

fn toy_backend() -> (Backend, IntrinsicConfig) {
    let cfg = IntrinsicConfig::load(&repo().join("configs/probe.json")).expect("probe config");
    let backend = Backend::build(&cfg.backend, &[], &[]).expect("backend");
    (backend, cfg)
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let (b, cfg) = toy_backend();
    let before = intrinsic_gap_report(&b.pretrained, &b.qa, &b.perplexity_corpus).expect("probe");
    let w = cfg.unlearn.weights;
    if w != LossWeights::new(0.5, 0.25, 0.25, 1.0) || cfg.unlearn.learning_rate != 1e-3 {
        return verdict(false, "probe config does not use the reference weights and learning rate");
    }
    let out = train_unlearn(&b.pretrained, &b.qa, &b.neutral, &cfg.unlearn).expect("unlearning");
    let after = intrinsic_gap_report(&out.model, &b.qa, &b.perplexity_corpus).expect("probe");
    let ppl_change = (after.perplexity - before.perplexity).abs() / before.perplexity;
    let took = start.elapsed();
    verdict(
        before.poverty.gap >= INITIAL_GAP_MIN
            && after.poverty.gap <= UNLEARNED_GAP_MAX
            && after.wealth.gap <= UNLEARNED_GAP_MAX
            && ppl_change <= PPL_CHANGE_MAX
            && took < UNLEARN_BUDGET,
        format!(
            "poverty gap {:.3} -> {:.3}, wealth gap {:.3} -> {:.3}, ppl {:.4} -> {:.4} ({:+.1}%), epoch {}; {took:.1?}",
            before.poverty.gap,
            after.poverty.gap,
            before.wealth.gap,
            after.wealth.gap,
            before.perplexity,
            after.perplexity,
            100.0 * (after.perplexity / before.perplexity - 1.0),
            out.selected_epoch,
        ),
    )
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let (b, cfg) = toy_backend();
    let before = intrinsic_gap_report(&b.pretrained, &b.qa, &b.perplexity_corpus).expect("probe");
    let run = |w: LossWeights| {
        let mut c = cfg.unlearn.clone();
        c.weights = w;
        c.epochs = ABLATION_EPOCHS;
        c.checkpoint = CheckpointPolicy::Final;
        let out = train_unlearn(&b.pretrained, &b.qa, &b.neutral, &c).expect("ablation run");
        intrinsic_gap_report(&out.model, &b.qa, &b.perplexity_corpus).expect("probe")
    };
    let learn = run(LossWeights::new(0.0, 1.0, 0.0, 0.0));
    let kl = run(LossWeights::new(0.0, 0.0, 0.0, 1.0));
    let drift = (kl.poverty.gap - before.poverty.gap)
        .abs()
        .max((kl.wealth.gap - before.wealth.gap).abs());
    let took = start.elapsed();
    verdict(
        learn.poverty.mean_anti >= FLIP_P_ANTI_MIN
            && learn.wealth.mean_anti >= FLIP_P_ANTI_MIN
            && drift <= KL_ONLY_DRIFT_MAX
            && took < ABLATION_BUDGET,
        format!(
            "learning-only p_anti poverty {:.3} wealth {:.3}; KL-only gap drift {drift:.4}; {took:.1?}",
            learn.poverty.mean_anti, learn.wealth.mean_anti
        ),
    )
}

fn load_real(name: &str) -> TabularDataset {
    let dir = repo().join("configs");
    let cfg = ExperimentConfig::load(&dir.join(format!("{name}_tabular.json"))).expect("config");
    let schema = fairtab::io::load_schema(&cfg.dataset.schema).expect("schema");
    fairtab::io::load_dataset(&cfg.dataset.csv, &schema, b',').expect("dataset")
}

fn criterion_7() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["adult", "german"] {
        let data = load_real(name);
        let flip = FlipSpec::from_dataset(&data).expect("flip pair");
        for r in 0..SplitSpec::default().n_repeats {
            let (train, _) = split(&data, &SplitSpec::default(), r).expect("split");
            let aug = augment(&train, &flip).expect("augment");
            let doubled = aug.len() == 2 * train.len();
            let groups = aug.groups();
            let labels = aug.labels();
            let count = |g: u8, y: Option<u8>| {
                groups
                    .iter()
                    .zip(&labels)
                    .filter(|(&gg, &yy)| gg == g && y.is_none_or(|y| y == yy))
                    .count()
            };
            let balanced = count(0, None) == count(1, None);
            let label_dp_zero = (0..2u8).all(|y| count(0, Some(y)) == count(1, Some(y)));
            ok &= doubled && balanced && label_dp_zero;
            if r == 0 {
                parts.push(format!(
                    "{name}: {} -> {} rows, groups {}/{}",
                    train.len(),
                    aug.len(),
                    count(0, None),
                    count(1, None)
                ));
            }
        }
    }
    verdict(ok, format!("3 splits each; {}", parts.join("; ")))
}

fn criterion_8() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();

    let ln = f64::ln;
    let cases: [(&[f64], bool); 5] = [
        (&[ln(0.6), ln(0.1), ln(0.3)], true),
        (&[ln(0.1), ln(0.6), ln(0.3)], false),
        (&[ln(0.2), ln(0.2), ln(0.6)], true),
        (&[ln(0.001), ln(0.0005), ln(0.9985)], true),
        (&[ln(0.0005), ln(0.001), ln(0.9985)], false),
    ];
    let argmax_ok = cases.iter().all(|(l, want)| restricted_argmax(l, 0, 1) == *want);
    ok &= argmax_ok;
    parts.push(format!("restricted argmax {}", if argmax_ok { "ok" } else { "wrong" }));

    let task = TaskTemplate::new("Is the color warm? Answer yes or no.");
    let colors = [("red", 1u8), ("orange", 1), ("blue", 0), ("green", 0)];
    let sizes = ["small", "large", "medium"];
    let (prompts, labels): (Vec<String>, Vec<u8>) = (0..64)
        .map(|i| {
            let (c, y) = colors[i % 4];
            let text = format!("size is {}. color is {c}.", sizes[(i / 4) % 3]);
            (build_classification_prompt(&text, &task), y)
        })
        .unzip();
    let tok = WordTokenizer::from_corpus(&prompts, &["yes", "no"], 256).expect("tokenizer");
    let base = ToyLm::new(tok, ToyLmConfig::default()).expect("model");

    // a model whose yes and no logits tie answers yes
    let mut flat = base.clone();
    flat.make_uniform();
    let tie_yes = predict_yes_no(&flat, &prompts[0], &task).expect("predict") == 1;
    let mut inverted = task.clone();
    inverted.positive_means_yes = false;
    let tie_inverted = predict_yes_no(&flat, &prompts[0], &inverted).expect("predict") == 0;
    ok &= tie_yes && tie_inverted;
    parts.push(format!("tie -> yes {}", if tie_yes && tie_inverted { "ok" } else { "wrong" }));

    let cfg = AdapterConfig {
        epochs: usize::MAX,
        max_steps: Some(ADAPTER_STEPS),
        learning_rate: 1e-3,
        batch_size: 8,
        ..AdapterConfig::default()
    };
    let base_digest = base.base_digest();
    let out = finetune_lm_classifier(&base, &prompts, &labels, &task, &cfg, 0).expect("fine-tune");
    let tuned = &out.model;
    let yes = tuned.tokenizer().token_id("yes").expect("yes");
    let no = tuned.tokenizer().token_id("no").expect("no");
    let min_gold = prompts
        .iter()
        .zip(&labels)
        .map(|(p, &y)| next_token_prob(tuned, p, if y == 1 { yes } else { no }).expect("prob"))
        .fold(1.0, f64::min);
    let frozen = tuned.base_digest() == base_digest && base.base_digest() == base_digest;
    ok &= frozen && min_gold >= GOLD_P_MIN && out.step_losses.len() <= ADAPTER_STEPS;
    parts.push(format!(
        "base hash {}, min gold p {min_gold:.4} after {} steps",
        if frozen { "unchanged" } else { "CHANGED" },
        out.step_losses.len()
    ));
    verdict(ok, parts.join("; "))
}

fn criterion_9() -> Verdict {
    let schema = adult_schema();
    let header: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    let values = [
        ("age", "27"),
        ("workclass", "Private"),
        ("fnlwgt", "160178"),
        ("education", "Some-college"),
        ("education-num", "10"),
        ("marital-status", "Divorced"),
        ("occupation", "Adm-clerical"),
        ("relationship", "Not-in-family"),
        ("race", "White"),
        ("sex", "male"),
        ("capital-gain", "0"),
        ("capital-loss", "0"),
        ("hours-per-week", "46"),
        ("native-country", "United-States"),
        ("income", "<=50K"),
    ];
    let row: Vec<&str> = header
        .iter()
        .map(|h| values.iter().find(|(k, _)| k == h).expect("fixture value").1)
        .collect();
    // a second row gives the table both classes and both groups
    let mut other = row.clone();
    other[schema.target_index()] = ">50K";
    other[schema.sensitive_index()] = "female";
    let data =
        TabularDataset::from_text_rows("adult-fixture", schema.clone(), &header, &[row, other]).expect("fixture rows");
    let mut ranked = vec!["workclass", "hours-per-week", "sex", "age"];
    for (_, c) in schema.feature_columns() {
        if !ranked.contains(&c.name.as_str()) {
            ranked.push(&c.name);
        }
    }
    let text = serialize_record(&data.record(0), &FeatureOrder::from_ranked(&ranked));
    let golden = text.starts_with(GOLDEN_PREFIX);

    let tok = WordTokenizer::from_corpus(&[text.as_str()], &[], 512).expect("tokenizer");
    let parts = statements(&text);
    let full = tok.count(&text);
    let mut sweep_ok = true;
    let mut checked = 0;
    for budget in 1..=full + 2 {
        let keep = (0..=parts.len())
            .rev()
            .find(|&k| k == 0 || tok.count(&parts[..k].join(" ")) <= budget)
            .expect("k = 0 always fits");
        let got = truncate_to_budget(&text, budget, &tok);
        sweep_ok &= match (keep, got) {
            (0, Err(_)) => true,
            (k, Ok(s)) if k > 0 => s == parts[..k].join(" "),
            _ => false,
        };
        checked += 1;
    }
    verdict(
        golden && sweep_ok,
        format!(
            "golden prefix {}; {checked} budgets up to {full} tokens {}",
            if golden { "matches" } else { "differs" },
            if sweep_ok { "keep the top-ranked prefix" } else { "MISMATCH" }
        ),
    )
}

fn determinism(config: &str, stage: Stage, shrink: Option<(usize, usize)>) -> Result<String, String> {
    let dir = repo().join("configs");
    let mut cfg = ExperimentConfig::load(&dir.join(config)).map_err(|e| e.to_string())?;
    cfg.stage = stage;
    if let Some((train, test)) = shrink {
        cfg.max_train_rows = Some(train);
        cfg.max_test_rows = Some(test);
    }
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        cfg.out = out.path().to_path_buf();
        run_stage(&cfg).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(out.path().join("report.json")).map_err(|e| e.to_string())?);
    }
    if bytes[0] == bytes[1] {
        Ok(format!("{config} stage {} identical ({} bytes)", stage.number(), bytes[0].len()))
    } else {
        Err(format!("{config} stage {} differs", stage.number()))
    }
}

fn criterion_10() -> Verdict {
    let runs = [
        determinism("german_tabular.json", Stage::Cda, None),
        determinism("german_embed.json", Stage::UnlearnedCda, Some((200, 100))),
        determinism("german_lm.json", Stage::Pretrained, Some((120, 60))),
    ];
    let ok = runs.iter().all(Result::is_ok);
    let detail: Vec<String> = runs.into_iter().map(|r| r.unwrap_or_else(|e| e)).collect();
    verdict(ok, detail.join("; "))
}

type Criterion = fn() -> Verdict;

const CRITERIA: [(&str, Criterion); 10] = [
    ("metric oracle equivalence", criterion_1),
    ("logistic baseline reproduction", criterion_2),
    ("intrinsic gap and perplexity arithmetic", criterion_3),
    ("loss gradients vs finite differences", criterion_4),
    ("toy unlearning efficacy", criterion_5),
    ("learning-only flip and KL-only stability", criterion_6),
    ("counterfactual augmentation invariants", criterion_7),
    ("classifier contracts", criterion_8),
    ("serialization golden prefix and truncation", criterion_9),
    ("end-to-end determinism", criterion_10),
];

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n:>2} [{}] {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
