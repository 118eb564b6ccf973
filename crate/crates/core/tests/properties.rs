mod common;

use fairtab_core::cda::{augment, FlipSpec};
use fairtab_core::lm::WordTokenizer;
use fairtab_core::metrics::{fairness_report, GroupedOutcomes, MetricOptions};
use fairtab_core::serialize::{serialize_record, statements, truncate_to_budget, FeatureOrder};
use fairtab_core::table::{
    split_indices, ColumnKind, ColumnRole, ColumnSpec, Schema, SplitSpec, TabularDataset,
};
use fairtab_core::unlearn::{loss_gap, GapMode};
use proptest::prelude::*;

fn outcomes() -> impl Strategy<Value = GroupedOutcomes> {
    (8usize..120).prop_flat_map(|n| {
        proptest::collection::vec((0u8..2, 0u8..2, 0u8..2), n).prop_filter_map("needs every stratum", |rows| {
            let has = |g: u8, y: u8| rows.iter().any(|r| r.2 == g && r.0 == y);
            if !(has(0, 0) && has(0, 1) && has(1, 0) && has(1, 1)) {
                return None;
            }
            let (t, p, g) = rows.iter().fold((vec![], vec![], vec![]), |(mut a, mut b, mut c), r| {
                a.push(r.0);
                b.push(r.1);
                c.push(r.2);
                (a, b, c)
            });
            GroupedOutcomes::new(t, p, g).ok()
        })
    })
}

fn dataset(sexes: &[bool], labels: &[bool]) -> TabularDataset {
    let schema = Schema {
        columns: vec![
            ColumnSpec::feature("age", ColumnKind::Numeric),
            ColumnSpec::new("sex", ColumnKind::Categorical, ColumnRole::Sensitive),
            ColumnSpec::new("income", ColumnKind::Categorical, ColumnRole::Target),
        ],
        positive_label: ">50K".into(),
        privileged_group: "male".into(),
    };
    let rows: Vec<Vec<String>> = sexes
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&s, &y))| {
            vec![
                (20 + i).to_string(),
                if s { "male" } else { "female" }.to_string(),
                if y { ">50K" } else { "<=50K" }.to_string(),
            ]
        })
        .collect();
    TabularDataset::from_text_rows("t", schema, &["age", "sex", "income"], &rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 200,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn metrics_ignore_group_names_and_row_order(o in outcomes(), seed in any::<u64>()) {
        let opts = MetricOptions::default();
        let r = fairness_report(&o, opts).unwrap();
        let swapped = GroupedOutcomes::new(
            o.y_true().to_vec(),
            o.y_pred().to_vec(),
            o.group().iter().map(|g| 1 - g).collect(),
        ).unwrap();
        let s = fairness_report(&swapped, opts).unwrap();
        prop_assert_eq!((r.acc, r.accp, r.dp, r.eqodds), (s.acc, s.accp, s.dp, s.eqodds));

        let n = o.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let pick = |v: &[u8]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let shuffled = GroupedOutcomes::new(pick(o.y_true()), pick(o.y_pred()), pick(o.group())).unwrap();
        let p = fairness_report(&shuffled, opts).unwrap();
        prop_assert_eq!(r.strata, p.strata);
        prop_assert!((r.dp - p.dp).abs() < 1e-15 && (r.eqodds - p.eqodds).abs() < 1e-15);

        prop_assert!((0.0..=1.0).contains(&r.acc) && (0.0..=1.0).contains(&r.dp) && (0.0..=1.0).contains(&r.accp));
        prop_assert!((0.0..=2.0).contains(&r.eqodds));
    }

    #[test]
    fn perfect_predictions_are_fair(o in outcomes()) {
        let perfect = GroupedOutcomes::new(o.y_true().to_vec(), o.y_true().to_vec(), o.group().to_vec()).unwrap();
        let r = fairness_report(&perfect, MetricOptions::default()).unwrap();
        prop_assert_eq!(r.acc, 1.0);
        prop_assert_eq!(r.accp, 0.0);
        prop_assert_eq!(r.eqodds, 0.0);
    }

    #[test]
    fn splits_partition_and_repeat(n in 0usize..500, seed in any::<u64>(), rep in 0usize..3) {
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let (tr, te) = split_indices(n, &spec, rep).unwrap();
        prop_assert_eq!(split_indices(n, &spec, rep).unwrap(), (tr.clone(), te.clone()));
        prop_assert_eq!(tr.len(), (0.8 * n as f64).round() as usize);
        let mut all = [tr, te].concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn cda_doubles_and_balances(rows in proptest::collection::vec((any::<bool>(), any::<bool>()), 2..80)) {
        let mut sexes: Vec<bool> = rows.iter().map(|r| r.0).collect();
        sexes[0] = true;
        sexes[1] = false;
        let mut labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
        labels[0] = true;
        labels[1] = false;
        let d = dataset(&sexes, &labels);
        let flip = FlipSpec::from_dataset(&d).unwrap();
        let a = augment(&d, &flip).unwrap();
        prop_assert_eq!(a.len(), 2 * d.len());
        let groups = a.groups();
        let ones = groups.iter().filter(|&&g| g == 1).count();
        prop_assert_eq!(2 * ones, a.len());
        for y in [0u8, 1] {
            let in_label: Vec<u8> = (0..a.len()).filter(|&i| a.label(i) == y).map(|i| groups[i]).collect();
            prop_assert_eq!(2 * in_label.iter().filter(|&&g| g == 1).count(), in_label.len());
        }
        for i in 0..d.len() {
            let twin = d.len() + i;
            prop_assert_eq!(a.label(twin), d.label(i));
            prop_assert_eq!(a.group(twin), 1 - d.group(i));
            prop_assert_eq!(a.value(twin, "age"), d.value(i, "age"));
            prop_assert!(a.origins[twin].is_counterfactual);
            prop_assert_eq!(a.origins[twin].original_id, d.origins[i].original_id);
        }
    }

    #[test]
    fn truncation_is_a_monotone_idempotent_prefix(
        values in proptest::collection::vec("[a-z]{1,4}( [a-z]{1,3}){0,2}", 1..8),
        budget in 1usize..60,
    ) {
        let names: Vec<String> = (0..values.len()).map(|i| format!("f{i}")).collect();
        let row: Vec<(String, String)> = names.iter().cloned().zip(values.iter().cloned()).collect();
        let order = FeatureOrder::from_ranked(&names);
        let text = serialize_record(&row[..], &order);
        let mut words: Vec<String> = names.clone();
        words.extend(values.iter().flat_map(|v| v.split(' ').map(String::from)));
        words.extend(["is".to_string(), ".".to_string()]);
        let tok = WordTokenizer::new(&words);
        let all = statements(&text);
        match truncate_to_budget(&text, budget, &tok) {
            Ok(t) => {
                prop_assert_eq!(truncate_to_budget(&t, budget, &tok).unwrap(), t.clone());
                let kept = statements(&t);
                prop_assert_eq!(&all[..kept.len()], &kept[..]);
                prop_assert!(fairtab_core::lm::Tokenizer::count(&tok, &t) <= budget);
                if kept.len() < all.len() {
                    let next = format!("{t} {}", all[kept.len()]);
                    prop_assert!(fairtab_core::lm::Tokenizer::count(&tok, &next) > budget);
                }
                let more = truncate_to_budget(&text, budget + 5, &tok).unwrap();
                prop_assert!(statements(&more).len() >= kept.len());
            }
            Err(_) => prop_assert!(fairtab_core::lm::Tokenizer::count(&tok, &all[0]) > budget),
        }
    }
}

#[test]
fn gap_loss_is_symmetric_under_answer_swap() {
    let m = common::biased(1.5, 0);
    let qa = common::qa();
    let swapped: Vec<_> = qa.iter().map(|p| p.swapped()).collect();
    for mode in [GapMode::Normalized, GapMode::Raw] {
        let a = loss_gap(&m, &qa, mode).unwrap();
        let b = loss_gap(&m, &swapped, mode).unwrap();
        assert!((a - b).abs() < 1e-15, "{mode:?}: {a} vs {b}");
    }
}
