//! The toy model's forward pass against a direct loop-by-loop evaluation
//! that reads weights by block name.

mod common;

use fairtab_core::lm::{AdapterHost, CausalLm, LoraSpec, Projection, ToyLm, TrainableLm};

fn block<'a>(m: &ToyLm, params: &'a [f64], name: &str) -> &'a [f64] {
    let b = m.blocks().into_iter().find(|b| b.name == name).unwrap_or_else(|| panic!("no block {name}"));
    &params[b.offset..b.offset + b.len]
}

/// `x · W` with `W` row-major `n x m`.
fn mul(x: &[Vec<f64>], w: &[f64], m: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| (0..m).map(|j| row.iter().enumerate().map(|(k, a)| a * w[k * m + j]).sum()).collect())
        .collect()
}

fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn reference_logits(m: &ToyLm, tokens: &[u32]) -> Vec<Vec<f64>> {
    let base = m.without_adapters();
    let p = base.parameters();
    let d = m.hidden_size();
    let v = m.vocab_size();
    let f = m.config().d_ff;
    let tok = block(&base, p, "tok_emb");
    let pos = block(&base, p, "pos_emb");
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| (0..d).map(|j| tok[t as usize * d + j] + pos[i * d + j]).collect())
        .collect();
    let lora = |l: usize, proj: Projection, input: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let Some(ad) = m.adapters() else {
            return vec![vec![0.0; d]; input.len()];
        };
        let names = (format!("layer{l}.{}.lora_a", proj.as_str()), format!("layer{l}.{}.lora_b", proj.as_str()));
        let Some(a) = m.blocks().into_iter().find(|b| b.name == names.0) else {
            return vec![vec![0.0; d]; input.len()];
        };
        let b = m.blocks().into_iter().find(|b| b.name == names.1).unwrap();
        let r = ad.spec.rank;
        let u = mul(input, &ad.params[a.offset..a.offset + a.len], r);
        let z = mul(&u, &ad.params[b.offset..b.offset + b.len], d);
        z.into_iter().map(|row| row.into_iter().map(|e| e * ad.spec.scale()).collect()).collect()
    };
    for l in 0..m.config().layers {
        let proj = |pr: Projection, input: &[Vec<f64>]| {
            add(&mul(input, block(&base, p, &format!("layer{l}.{}", pr.as_str())), d), &lora(l, pr, input))
        };
        let q = proj(Projection::Query, &x);
        let k = proj(Projection::Key, &x);
        let val = proj(Projection::Value, &x);
        let t = x.len();
        let heads = m.config().heads;
        let hd = d / heads;
        let mut c = vec![vec![0.0; d]; t];
        for h in 0..heads {
            let dims = h * hd..(h + 1) * hd;
            for i in 0..t {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| dims.clone().map(|e| q[i][e] * k[j][e]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for j in 0..=i {
                    let a = (scores[j] - mx).exp() / z;
                    for e in dims.clone() {
                        c[i][e] += a * val[j][e];
                    }
                }
            }
        }
        let x_mid = add(&x, &proj(Projection::Output, &c));
        let b1 = block(&base, p, &format!("layer{l}.mlp.b1"));
        let b2 = block(&base, p, &format!("layer{l}.mlp.b2"));
        let h: Vec<Vec<f64>> = mul(&x_mid, block(&base, p, &format!("layer{l}.mlp.w1")), f)
            .into_iter()
            .map(|row| row.iter().zip(b1).map(|(a, b)| (a + b).tanh()).collect())
            .collect();
        let out: Vec<Vec<f64>> = mul(&h, block(&base, p, &format!("layer{l}.mlp.w2")), d)
            .into_iter()
            .map(|row| row.iter().zip(b2).map(|(a, b)| a + b).collect())
            .collect();
        x = add(&x_mid, &out);
    }
    let hb = block(&base, p, "head.b");
    mul(&x, block(&base, p, "head.w"), v)
        .into_iter()
        .map(|row| row.iter().zip(hb).map(|(a, b)| a + b).collect())
        .collect()
}

fn assert_matches(m: &ToyLm, text: &str) {
    let ids = m.input_ids(text);
    let got = m.logits(&ids, 0).unwrap();
    let want = reference_logits(m, &ids);
    let v = m.vocab_size();
    for (i, row) in want.iter().enumerate() {
        for (c, w) in row.iter().enumerate() {
            let g = got[i * v + c];
            assert!((g - w).abs() <= 1e-10 * (1.0 + w.abs()), "pos {i} token {c}: {g} vs {w}");
        }
    }
    let tail = m.logits(&ids, ids.len() - 1).unwrap();
    assert_eq!(&tail[..], &got[(ids.len() - 1) * v..]);
}

#[test]
fn base_forward_matches_loops() {
    let m = common::biased(2.0, 3);
    for text in ["Who are poor? women", "What color is the sky? The sky is blue.", "a"] {
        assert_matches(&m, text);
    }
}

#[test]
fn adapted_forward_matches_loops() {
    let mut m = common::biased(2.0, 4);
    let spec = LoraSpec {
        rank: 4,
        alpha: 8.0,
        dropout: 0.0,
        targets: vec![Projection::Value, Projection::Query],
    };
    m.attach_adapters(&spec, 9).unwrap();
    common::jitter(m.parameters_mut(), 0.3, 5);
    assert_matches(&m, "Who is rich? men");
}

#[test]
fn single_head_forward_matches_loops() {
    let m = ToyLm::new(
        common::tokenizer(),
        fairtab_core::lm::ToyLmConfig {
            heads: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert_matches(&m, "Is the sea deep? Yes, the sea is deep.");
}

#[test]
fn hidden_states_feed_the_head() {
    let m = common::biased(0.0, 1);
    let ids = m.input_ids("Describe the sea.");
    let h = m.hidden_states(&ids).unwrap();
    assert_eq!(h.len(), ids.len() * m.hidden_size());
}
