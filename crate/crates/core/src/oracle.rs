//! Slow reference implementations of the fairness metrics, written as
//! explicit loops over rows. Used only as test oracles.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::{Confusion, EmptyStratum, EqOddsConvention, FairnessReport, GroupedOutcomes, MetricOptions};

/// Largest table accepted by the oracle.
pub const MAX_ROWS: usize = 10_000;

fn rate(t: &[u8], p: &[u8], g: &[u8], group: u8, cond: impl Fn(u8) -> bool, hit: impl Fn(u8, u8) -> bool) -> Option<f64> {
    let mut num = 0u64;
    let mut den = 0u64;
    for i in 0..t.len() {
        if g[i] == group && cond(t[i]) {
            den += 1;
            if hit(t[i], p[i]) {
                num += 1;
            }
        }
    }
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

pub fn brute_force_fairness(o: &GroupedOutcomes, opts: MetricOptions) -> Result<FairnessReport> {
    let (t, p, g) = (o.y_true(), o.y_pred(), o.group());
    if t.len() > MAX_ROWS {
        return Err(Error::Dimension {
            expected: MAX_ROWS,
            got: t.len(),
        });
    }
    for group in [0u8, 1] {
        if !g.contains(&group) {
            return Err(Error::MissingGroup(group));
        }
    }

    let mut correct = 0u64;
    for i in 0..t.len() {
        if t[i] == p[i] {
            correct += 1;
        }
    }
    let acc = correct as f64 / t.len() as f64;

    let any = |_: u8| true;
    let acc0 = rate(t, p, g, 0, any, |a, b| a == b).unwrap();
    let acc1 = rate(t, p, g, 1, any, |a, b| a == b).unwrap();
    let pos0 = rate(t, p, g, 0, any, |_, b| b == 1).unwrap();
    let pos1 = rate(t, p, g, 1, any, |_, b| b == 1).unwrap();
    let tpr0 = rate(t, p, g, 0, |a| a == 1, |_, b| b == 1);
    let tpr1 = rate(t, p, g, 1, |a| a == 1, |_, b| b == 1);
    let fpr0 = rate(t, p, g, 0, |a| a == 0, |_, b| b == 1);
    let fpr1 = rate(t, p, g, 1, |a| a == 0, |_, b| b == 1);

    let mut diffs = Vec::new();
    let mut dropped = Vec::new();
    for (name, a, b) in [("fpr", fpr0, fpr1), ("tpr", tpr0, tpr1)] {
        if let (Some(a), Some(b)) = (a, b) {
            diffs.push(if a > b { a - b } else { b - a });
        } else if opts.empty_stratum == EmptyStratum::DropTerm {
            dropped.push(String::from(name));
        } else {
            return Err(Error::UndefinedRate(String::from(name)));
        }
    }
    let mut eqodds = 0.0;
    for d in &diffs {
        eqodds += d;
    }
    if opts.eqodds == EqOddsConvention::Mean && !diffs.is_empty() {
        eqodds /= diffs.len() as f64;
    }

    let mut strata = [Confusion::default(); 2];
    for i in 0..t.len() {
        let s = &mut strata[g[i] as usize];
        if t[i] == 1 && p[i] == 1 {
            s.tp += 1;
        } else if t[i] == 0 && p[i] == 1 {
            s.fp += 1;
        } else if t[i] == 0 {
            s.tn += 1;
        } else {
            s.fn_ += 1;
        }
    }

    Ok(FairnessReport {
        acc,
        accp: if acc0 > acc1 { acc0 - acc1 } else { acc1 - acc0 },
        dp: if pos0 > pos1 { pos0 - pos1 } else { pos1 - pos0 },
        eqodds,
        eqodds_convention: opts.eqodds,
        group_sizes: [g.iter().filter(|&&x| x == 0).count(), g.iter().filter(|&&x| x == 1).count()],
        strata,
        dropped_terms: dropped,
    })
}
