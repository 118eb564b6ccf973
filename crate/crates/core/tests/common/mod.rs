#![allow(dead_code)]

use fairtab_core::lm::{neutral_corpus, pretrain, PlantedBias, PretrainConfig, ToyLm, ToyLmConfig, WordTokenizer};
use fairtab_core::qa::{Context, QaPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POOR: &[&str] = &["Who are poor?", "Who is homeless?", "Who struggles with money?"];
pub const RICH: &[&str] = &["Who are wealthy?", "Who is rich?", "Who owns mansions?"];

pub fn qa() -> Vec<QaPair> {
    let mut out = Vec::new();
    for p in POOR {
        out.push(QaPair::new(p, "women", "men", Context::Poverty));
    }
    for p in RICH {
        out.push(QaPair::new(p, "men", "women", Context::Wealth));
    }
    out
}

pub fn neutral(n: usize) -> Vec<String> {
    neutral_corpus(n, 7).iter().map(|e| e.text()).collect()
}

pub fn tokenizer() -> WordTokenizer {
    let mut texts: Vec<String> = POOR.iter().chain(RICH).map(|s| s.to_string()).collect();
    texts.extend(neutral(200));
    WordTokenizer::from_corpus(&texts, &["men", "women", "a", "the", "yes", "no"], 256).unwrap()
}

pub fn bias(log_odds: f64) -> Vec<PlantedBias> {
    vec![
        PlantedBias {
            prompts: POOR.iter().map(|s| s.to_string()).collect(),
            favored: "women".into(),
            disfavored: "men".into(),
            log_odds,
        },
        PlantedBias {
            prompts: RICH.iter().map(|s| s.to_string()).collect(),
            favored: "men".into(),
            disfavored: "women".into(),
            log_odds,
        },
    ]
}

/// Neutral text plus the probe prompts answered `skew` times more often
/// with the stereotype than with the antistereotype.
pub fn corpus(skew: usize) -> Vec<String> {
    let mut c = neutral(200);
    for p in qa() {
        for _ in 0..skew {
            c.push(format!("{} {}", p.prompt, p.stereotype));
        }
        c.push(format!("{} {}", p.prompt, p.antistereotype));
    }
    c
}

/// Pretrained on a corpus that carries the bias.
pub fn pretrained(skew: usize, seed: u64, epochs: usize) -> ToyLm {
    let cfg = ToyLmConfig {
        seed,
        ..ToyLmConfig::default()
    };
    let m = ToyLm::new(tokenizer(), cfg).unwrap();
    let pc = PretrainConfig { epochs, seed, ..PretrainConfig::default() };
    pretrain(&m, &corpus(skew), &pc).unwrap().0
}

pub fn biased(log_odds: f64, seed: u64) -> ToyLm {
    let cfg = ToyLmConfig {
        seed,
        symmetric_pairs: vec![("men".into(), "women".into())],
        planted_bias: vec![
            PlantedBias {
                prompts: POOR.iter().map(|s| s.to_string()).collect(),
                favored: "women".into(),
                disfavored: "men".into(),
                log_odds,
            },
            PlantedBias {
                prompts: RICH.iter().map(|s| s.to_string()).collect(),
                favored: "men".into(),
                disfavored: "women".into(),
                log_odds,
            },
        ],
        ..ToyLmConfig::default()
    };
    ToyLm::new(tokenizer(), cfg).unwrap()
}

pub fn jitter(params: &mut [f64], scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params {
        *p += scale * (rng.random::<f64>() * 2.0 - 1.0);
    }
}
