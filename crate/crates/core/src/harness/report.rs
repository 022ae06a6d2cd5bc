//! Report emission: JSON (canonical), long-form CSV, markdown tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalReport, PromptSource};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::ConfigInvalid(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Markdown => Ok(to_markdown(report)),
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn weights(text: f64, image: f64) -> String {
    format!("{text:.2} / {image:.2}")
}

/// One line of the long-form CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub section: String,
    pub key: String,
    pub index: Option<usize>,
    pub name: String,
    pub value: String,
}

fn row(section: &str, key: &str, index: Option<usize>, name: &str, value: impl ToString) -> CsvRow {
    CsvRow {
        section: section.into(),
        key: key.into(),
        index,
        name: name.into(),
        value: value.to_string(),
    }
}

/// Rows of the CSV form. Floats use shortest round-trip formatting, so every
/// value parses back to exactly the JSON number.
pub fn csv_rows(r: &EvalReport) -> Vec<CsvRow> {
    let mut rows = vec![
        row("meta", "schema_version", None, "", r.schema_version),
        row("meta", "method", None, "", &r.method),
        row("meta", "dataset", None, "", &r.dataset),
        row("meta", "prompt_source", None, "", r.config.prompt_source),
        row("meta", "fusion_mode", None, "", r.config.fusion_mode),
        row("meta", "weight_policy", None, "", r.config.weight_policy),
        row("meta", "metric", None, "", r.metric),
        row("meta", "store_sha256", None, "", &r.store_sha256),
        row("summary", "num_classes", None, "", r.num_classes),
        row("summary", "num_queries", None, "", r.num_queries),
        row("summary", "metric_value", None, "", r.metric_value),
        row("summary", "top1", None, "", r.top1),
        row("summary", "mean_per_class", None, "", r.mean_per_class),
        row("summary", "weight_text", None, "", r.weights.text),
        row("summary", "weight_image", None, "", r.weights.image),
    ];
    for c in &r.per_class {
        let acc = c.accuracy.map(|a| a.to_string()).unwrap_or_default();
        rows.push(row("per_class", "accuracy", Some(c.class_index), &c.class_name, acc));
        rows.push(row("per_class", "support", Some(c.class_index), &c.class_name, c.support));
        rows.push(row("per_class", "correct", Some(c.class_index), &c.class_name, c.correct));
    }
    for name in &r.excluded_classes {
        rows.push(row("excluded", "class", None, name, ""));
    }
    if let Some(scan) = &r.scan {
        rows.push(row("scan", "best_w", None, "", scan.best_w));
        rows.push(row("scan", "best_value", None, "", scan.best_value));
        for (k, (w, v)) in scan.grid.iter().zip(&scan.values).enumerate() {
            rows.push(row("scan", "value", Some(k), &w.to_string(), v));
        }
    }
    for (rank, p) in r.confused_pairs.iter().enumerate() {
        let name = format!("{} -> {}", p.true_name, p.predicted_name);
        rows.push(row("confused", "count", Some(rank), &name, p.count));
        if let Some((a, b)) = p.pair_accuracy {
            rows.push(row("confused", "pair_accuracy_true", Some(rank), &name, a));
            rows.push(row("confused", "pair_accuracy_predicted", Some(rank), &name, b));
        }
    }
    rows
}

fn to_csv(r: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in csv_rows(r) {
        w.serialize(rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::ConfigInvalid(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn source_label(r: &EvalReport) -> String {
    let cfg = &r.config;
    match (cfg.prompt_source, cfg.classify_axis, cfg.enrich_axis) {
        (PromptSource::D3gTemplates, Some(c), Some(e)) => format!("{} ({c} by {e})", cfg.prompt_source.label()),
        (src, _, _) => src.label().to_string(),
    }
}

fn weight_cell(r: &EvalReport) -> String {
    weights(r.weights.text, r.weights.image)
}

fn to_markdown(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}: {}\n", r.dataset, r.method);
    let _ = writeln!(s, "| Method | {} | Weights (text / image) |", source_label(r));
    let _ = writeln!(s, "|---|---:|---:|");
    let _ = writeln!(s, "| {} | {} | {} |\n", r.method, pct(r.metric_value), weight_cell(r));
    let _ = writeln!(
        s,
        "Metric: {} over {} queries and {} classes (top-1 {}%, mean per class {}%).\n",
        r.metric,
        r.num_queries,
        r.num_classes,
        pct(r.top1),
        pct(r.mean_per_class)
    );

    let _ = writeln!(s, "## Per-class accuracy\n");
    let _ = writeln!(s, "| Class | Support | Correct | Accuracy (%) |");
    let _ = writeln!(s, "|---|---:|---:|---:|");
    for c in &r.per_class {
        let acc = c.accuracy.map_or_else(|| "n/a".to_string(), pct);
        let _ = writeln!(s, "| {} | {} | {} | {} |", c.class_name, c.support, c.correct, acc);
    }
    if !r.excluded_classes.is_empty() {
        let _ = writeln!(s, "\nExcluded (no queries): {}", r.excluded_classes.join(", "));
    }

    if let Some(scan) = &r.scan {
        let on = match &scan.selected_on {
            Some(split) => format!("split `{split}` ({} queries)", scan.selection_queries),
            None => "the reported queries".to_string(),
        };
        let _ = writeln!(s, "\n## Weight scan\n");
        let _ = writeln!(
            s,
            "Best text weight {:.2} ({}%) chosen on {on}.\n",
            scan.best_w,
            pct(scan.best_value)
        );
        let _ = writeln!(s, "| Weights (text / image) | {} (%) |", r.metric);
        let _ = writeln!(s, "|---|---:|");
        for (k, (w, v)) in scan.grid.iter().zip(&scan.values).enumerate() {
            if k % 10 == 0 {
                let _ = writeln!(s, "| {} | {} |", weights(*w, 1.0 - w), pct(*v));
            }
        }
    }

    if !r.confused_pairs.is_empty() {
        let _ = writeln!(s, "\n## Most confused pairs\n");
        let _ = writeln!(s, "| True | Predicted | Count | Pair accuracy (%) |");
        let _ = writeln!(s, "|---|---|---:|---:|");
        for p in &r.confused_pairs {
            let pair = p
                .pair_accuracy
                .map_or_else(|| "n/a".into(), |(a, b)| format!("{} / {}", pct(a), pct(b)));
            let _ = writeln!(s, "| {} | {} | {} | {} |", p.true_name, p.predicted_name, p.count, pair);
        }
    }
    s
}

fn mode_rank(m: FusionMode) -> usize {
    [FusionMode::TextOnly, FusionMode::ImageOnly, FusionMode::Standard, FusionMode::Confidence]
        .iter()
        .position(|&x| x == m)
        .unwrap_or(usize::MAX)
}

/// Combined markdown over several reports: per dataset, methods as rows and
/// prompt strategies as columns, then a per-class table.
pub fn render_summary(reports: &[EvalReport]) -> String {
    let mut by_dataset: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_dataset.entry(r.dataset.as_str()).or_default().push(r);
    }
    let mut s = String::new();
    for (dataset, mut group) in by_dataset {
        group.sort_by(|a, b| {
            (mode_rank(a.config.fusion_mode), a.config.prompt_source, source_label(a))
                .cmp(&(mode_rank(b.config.fusion_mode), b.config.prompt_source, source_label(b)))
        });
        let mut columns: Vec<(PromptSource, String)> = group
            .iter()
            .map(|r| (r.config.prompt_source, source_label(r)))
            .collect();
        columns.sort();
        columns.dedup();
        let mut methods: Vec<FusionMode> = group.iter().map(|r| r.config.fusion_mode).collect();
        methods.dedup();

        let _ = writeln!(s, "# {dataset}\n");
        let heads: Vec<&str> = columns.iter().map(|(_, l)| l.as_str()).collect();
        let _ = writeln!(s, "| Method | {} |", heads.join(" | "));
        let _ = writeln!(s, "|---|{}", "---:|".repeat(columns.len()));
        for m in &methods {
            let cells: Vec<String> = columns
                .iter()
                .map(|(_, label)| {
                    group
                        .iter()
                        .find(|r| r.config.fusion_mode == *m && source_label(r) == *label)
                        .map_or_else(String::new, |r| {
                            if m.is_fused() {
                                format!("{} ({})", pct(r.metric_value), weight_cell(r))
                            } else {
                                pct(r.metric_value)
                            }
                        })
                })
                .collect();
            let _ = writeln!(s, "| {} | {} |", super::method_label(*m), cells.join(" | "));
        }

        let classes: Vec<&str> = group[0].per_class.iter().map(|c| c.class_name.as_str()).collect();
        let _ = writeln!(s, "\n## Per-class accuracy (%)\n");
        let _ = writeln!(s, "| Method | Prompts | {} |", classes.join(" | "));
        let _ = writeln!(s, "|---|---|{}", "---:|".repeat(classes.len()));
        for r in &group {
            let cells: Vec<String> = r
                .per_class
                .iter()
                .map(|c| c.accuracy.map_or_else(|| "n/a".into(), pct))
                .collect();
            let _ = writeln!(s, "| {} | {} | {} |", r.method, source_label(r), cells.join(" | "));
        }
        s.push('\n');
    }
    s
}
