//! Result tables and bar charts derived from stage reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::io::{read_json, write_file};
use crate::pipeline::StageReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub reports: Vec<StageReport>,
}

/// Every `report.json` below `dir`, visited in sorted path order.
pub fn collect_reports(dir: &Path) -> Result<Vec<StageReport>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let p = entry.map_err(io_err(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "report.json") {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_json::<ReportFile>(&f)?.reports);
    }
    Ok(out)
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen: Vec<&str> = Vec::new();
    for s in items {
        if !seen.contains(&s) {
            seen.push(s);
        }
    }
    seen
}

/// Reports ordered by model (first appearance), then stage, then dataset
/// (first appearance).
pub fn ordered(reports: &[StageReport]) -> Vec<&StageReport> {
    let models = first_seen(reports.iter().map(|r| r.model.as_str()));
    let datasets = first_seen(reports.iter().map(|r| r.dataset.as_str()));
    let pos = |v: &[&str], s: &str| v.iter().position(|x| *x == s).unwrap_or(usize::MAX);
    let mut out: Vec<&StageReport> = reports.iter().collect();
    out.sort_by_key(|r| (pos(&models, &r.model), r.stage, pos(&datasets, &r.dataset)));
    out
}

pub fn table_csv(reports: &[StageReport]) -> Result<String> {
    let wrap = |source| Error::Csv {
        path: "table.csv".into(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model", "stage", "stage_label", "dataset", "path", "acc", "accp", "dp", "eqodds", "splits", "partial",
    ])
    .map_err(wrap)?;
    for r in ordered(reports) {
        let ok = r.splits.iter().filter(|s| s.report.is_some()).count();
        let m = |f: fn(&crate::pipeline::MetricSummary) -> f64| r.aggregate.as_ref().map(f).map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.model.clone(),
            r.stage.number().to_string(),
            r.stage_label.clone(),
            r.dataset.clone(),
            r.path.as_str().to_string(),
            m(|a| a.acc),
            m(|a| a.accp),
            m(|a| a.dp),
            m(|a| a.eqodds),
            ok.to_string(),
            r.partial.to_string(),
        ])
        .map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| io_err("table.csv")(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// One row per model and stage, four metric columns per dataset. Partial
/// aggregates carry a `*`.
pub fn table_markdown(reports: &[StageReport]) -> String {
    let rows = ordered(reports);
    let datasets = first_seen(reports.iter().map(|r| r.dataset.as_str()));
    let mut s = String::from("| Model | Stage |");
    for d in &datasets {
        let _ = write!(s, " {d} Acc | {d} AccP | {d} DP | {d} EqOdds |");
    }
    s.push_str("\n|---|---|");
    s.push_str(&"---:|".repeat(4 * datasets.len()));
    s.push('\n');
    let mut keys: Vec<(&str, crate::config::Stage)> = Vec::new();
    for r in &rows {
        if !keys.contains(&(r.model.as_str(), r.stage)) {
            keys.push((r.model.as_str(), r.stage));
        }
    }
    for (model, stage) in keys {
        let _ = write!(s, "| {model} | {} |", stage.label());
        for d in &datasets {
            let hit = rows.iter().find(|r| r.model == model && r.stage == stage && r.dataset == *d);
            match hit.and_then(|r| r.aggregate.map(|a| (a, r.partial))) {
                Some((a, partial)) => {
                    let star = if partial { "*" } else { "" };
                    for v in [a.acc, a.accp, a.dp, a.eqodds] {
                        let _ = write!(s, " {v:.3}{star} |");
                    }
                }
                None => s.push_str(&" n/a |".repeat(4)),
            }
        }
        s.push('\n');
    }
    s
}

const STAGE_COLORS: [&str; 4] = ["#ffffff", "#9ecae1", "#fdae6b", "#a1d99b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Grouped bar chart of one metric for one dataset: a group per model, a
/// bar per stage.
pub fn bar_chart_svg(reports: &[StageReport], dataset: &str, metric: &str, value: fn(&crate::pipeline::MetricSummary) -> f64) -> String {
    let rows: Vec<&StageReport> = ordered(reports).into_iter().filter(|r| r.dataset == dataset).collect();
    let models = first_seen(rows.iter().map(|r| r.model.as_str()));
    let (bar, gap, left, top, h) = (22.0, 26.0, 50.0, 30.0, 200.0);
    let group_w = 4.0 * bar + gap;
    let width = left + group_w * models.len().max(1) as f64 + 20.0;
    let height = top + h + 90.0;
    let ymax = rows
        .iter()
        .filter_map(|r| r.aggregate.as_ref().map(value))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let ymax = (ymax * 10.0).ceil() / 10.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-size="13">{} {}</text>"#, escape(dataset), escape(metric));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + h);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{0}" x2="{1:.0}" y2="{0}" stroke="black"/>"#, top + h, width - 10.0);
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let y = top + h - h * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, left - 4.0, y + 4.0);
    }
    for (gi, model) in models.iter().enumerate() {
        let x0 = left + gap / 2.0 + gi as f64 * group_w;
        for r in rows.iter().filter(|r| r.model == *model) {
            let Some(v) = r.aggregate.as_ref().map(value) else { continue };
            let i = (r.stage.number() - 1) as usize;
            let bh = h * v / ymax;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{bh:.1}" fill="{}" stroke="black"><title>{} {}: {v:.4}</title></rect>"#,
                x0 + i as f64 * bar,
                top + h - bh,
                STAGE_COLORS[i],
                escape(model),
                r.stage.label()
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x0 + 2.0 * bar, top + h + 16.0, escape(model));
    }
    for (i, stage) in crate::config::Stage::ALL.iter().enumerate() {
        let x = left + i as f64 * 110.0;
        let y = top + h + 40.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{}" stroke="black"/>"#, STAGE_COLORS[i]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 16.0, y + 10.0, stage.label());
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `table.csv`, `table.md` and, with `plots`, `plots/<dataset>_dp.svg`
/// and `plots/<dataset>_eqodds.svg`. Returns the written paths.
pub fn emit_report_table(reports: &[StageReport], out: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to tabulate".into()));
    }
    let mut written = Vec::new();
    let p = out.join("table.csv");
    write_file(&p, table_csv(reports)?.as_bytes())?;
    written.push(p);
    let p = out.join("table.md");
    write_file(&p, table_markdown(reports).as_bytes())?;
    written.push(p);
    if plots {
        for d in first_seen(reports.iter().map(|r| r.dataset.as_str())) {
            for (metric, f) in [
                ("DP", (|a: &crate::pipeline::MetricSummary| a.dp) as fn(&_) -> f64),
                ("EqOdds", |a: &crate::pipeline::MetricSummary| a.eqodds),
            ] {
                let p = out.join("plots").join(format!("{}_{}.svg", file_stem(d), metric.to_lowercase()));
                write_file(&p, bar_chart_svg(reports, d, metric, f).as_bytes())?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
