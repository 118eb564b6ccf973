//! Intrinsic bias probe and the unlearning hyperparameter sweep.

use std::fmt::Write as _;

use fairtab_core::metrics::{intrinsic_gap_report, IntrinsicReport};
use fairtab_core::qa::Context as Ctx;
use fairtab_core::unlearn::{grid_csv, grid_search, GridRow};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, UnlearnSummary};
use crate::config::{GridConfig, IntrinsicConfig, ProbeModel};
use crate::error::{Context, Result};
use crate::io::{write_file, write_json, RunLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicRow {
    pub model: ProbeModel,
    pub report: IntrinsicReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicOutput {
    pub rows: Vec<IntrinsicRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlearning: Option<UnlearnSummary>,
}

/// Table layout: anti/stereo/gap per context, then perplexity.
pub const INTRINSIC_COLUMNS: [&str; 8] = [
    "Model",
    "Poverty AntiStero",
    "Poverty Stero",
    "Poverty GAP",
    "Wealth AntiStero",
    "Wealth Stero",
    "Wealth GAP",
    "Perplexity",
];

fn label(m: ProbeModel) -> &'static str {
    match m {
        ProbeModel::Pretrained => "Pretrained",
        ProbeModel::Unlearned => "Unlearned",
    }
}

fn cells(row: &IntrinsicRow) -> Vec<String> {
    let mut v = vec![label(row.model).to_string()];
    for ctx in Ctx::ALL {
        let g = row.report.context(ctx);
        v.extend([g.mean_anti, g.mean_stereo, g.gap].map(|x| format!("{x:.3}")));
    }
    v.push(format!("{:.4}", row.report.perplexity));
    v
}

pub fn intrinsic_csv(rows: &[IntrinsicRow]) -> String {
    let mut s = INTRINSIC_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&cells(r).join(","));
        s.push('\n');
    }
    s
}

pub fn intrinsic_markdown(rows: &[IntrinsicRow]) -> String {
    let mut s = format!("| {} |\n|---|{}\n", INTRINSIC_COLUMNS.join(" | "), "---:|".repeat(7));
    for r in rows {
        let _ = writeln!(s, "| {} |", cells(r).join(" | "));
    }
    s
}

/// Probes every model in `cfg.models`: per-context mean pair probabilities
/// over all probe pairs plus perplexity on the perplexity corpus.
pub fn probe(backend: &mut Backend, cfg: &IntrinsicConfig) -> Result<IntrinsicOutput> {
    let mut rows = Vec::new();
    let mut unlearning = None;
    for &m in &cfg.models {
        let model = match m {
            ProbeModel::Pretrained => backend.pretrained.clone(),
            ProbeModel::Unlearned => {
                let u = backend.unlearned(&cfg.unlearn)?;
                unlearning = Some(u.summary.clone());
                u.model.clone()
            }
        };
        let report = intrinsic_gap_report(&model, &backend.qa, &backend.perplexity_corpus).context("intrinsic probe")?;
        rows.push(IntrinsicRow { model: m, report });
    }
    Ok(IntrinsicOutput { rows, unlearning })
}

/// Builds the backend, probes it and writes `intrinsic.json`,
/// `intrinsic.csv`, `intrinsic.md` and `runlog.jsonl` to `cfg.out`.
pub fn run_intrinsic_eval(cfg: &IntrinsicConfig) -> Result<IntrinsicOutput> {
    let mut backend = Backend::build(&cfg.backend, &[], &[])?;
    let out = probe(&mut backend, cfg)?;
    let mut log = RunLog::default();
    for (epoch, loss) in backend.pretrain_losses.iter().enumerate() {
        log.push("pretrain_epoch", &serde_json::json!({ "epoch": epoch + 1, "loss": loss }));
    }
    if let Some(u) = backend.unlearned_if_ready() {
        for e in &u.log {
            log.push("unlearn_epoch", e);
        }
    }
    write_json(&cfg.out.join("intrinsic.json"), &out)?;
    write_file(&cfg.out.join("intrinsic.csv"), intrinsic_csv(&out.rows).as_bytes())?;
    write_file(&cfg.out.join("intrinsic.md"), intrinsic_markdown(&out.rows).as_bytes())?;
    log.write(&cfg.out.join("runlog.jsonl"))?;
    Ok(out)
}

/// Sweeps `cfg.space` from the same pretrained model and writes `grid.csv`
/// and `grid.json` ranked by mean validation gap.
pub fn run_grid(cfg: &GridConfig) -> Result<Vec<GridRow>> {
    let backend = Backend::build(&cfg.backend, &[], &[])?;
    let base = backend.pretrained.clone();
    let rows = grid_search(|| Ok(base.clone()), &backend.qa, &backend.neutral, &cfg.base, &cfg.space).context("grid search")?;
    write_file(&cfg.out.join("grid.csv"), grid_csv(&rows).as_bytes())?;
    write_json(&cfg.out.join("grid.json"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fairtab_core::metrics::ContextGap;

    #[test]
    fn table_has_the_probe_columns() {
        let g = ContextGap::from_probabilities(&[(0.78, 0.22)]).unwrap();
        let row = IntrinsicRow {
            model: ProbeModel::Pretrained,
            report: IntrinsicReport {
                poverty: g,
                wealth: g,
                perplexity: 9.4515,
            },
        };
        let csv = intrinsic_csv(std::slice::from_ref(&row));
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), INTRINSIC_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "Pretrained,0.220,0.780,0.560,0.220,0.780,0.560,9.4515");
        assert_eq!(intrinsic_markdown(&[row]).lines().count(), 3);
    }
}
