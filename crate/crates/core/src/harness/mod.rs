//! Experiment runner: selects prototypes from a store, evaluates, reports.

mod config;
pub mod report;
mod synth;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{BuildOptions, ClassPrompts};
use crate::embedstore::{assemble_protos, EmbeddingRecord, EmbeddingStore, Manifest, Role};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionMode, PrototypeBank};
use crate::metrics::{
    mean_per_class, pair_subset_eval, per_class_table, top1, top_confused_pairs, Metric,
};
use crate::prompts::{
    clip_template_set, demographic_prompts, load_cupl, photo_template, AxisName, PromptSet,
};
use crate::scan::{weight_grid, EvalSet, Evaluator};

pub use config::{load_kv, parse_kv, ExperimentConfig, PromptSource, WeightPolicy, DEFAULT_CONFUSED_PAIRS};
pub use report::{csv_rows, emit_report, parse_csv, render_summary, CsvRow, ReportFormat};
pub use synth::{synth_fixture, synth_records, SynthSpec, SYNTH_IMAGE_SOURCE};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Row label for a fusion mode in reports.
pub fn method_label(mode: FusionMode) -> &'static str {
    match mode {
        FusionMode::TextOnly => "Text only",
        FusionMode::ImageOnly => "Images only",
        FusionMode::Standard => "Fused (standard)",
        FusionMode::Confidence => "Fused (confidence)",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPair {
    pub text: f64,
    pub image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassRow {
    pub class_index: usize,
    pub class_name: String,
    pub support: usize,
    pub correct: usize,
    /// None for classes without queries.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub best_w: f64,
    pub best_value: f64,
    /// Split the weight was chosen on; None when chosen on the reported queries.
    pub selected_on: Option<String>,
    pub selection_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusedPairRow {
    pub true_class: usize,
    pub true_name: String,
    pub predicted_class: usize,
    pub predicted_name: String,
    pub count: usize,
    /// Accuracy of (true, predicted) when only those two classes compete.
    pub pair_accuracy: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub method: String,
    pub dataset: String,
    pub store_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protos_sha256: Option<String>,
    pub num_classes: usize,
    pub num_queries: usize,
    pub text_records: usize,
    pub image_records: usize,
    pub metric: Metric,
    pub metric_value: f64,
    pub top1: f64,
    pub mean_per_class: f64,
    pub weights: WeightPair,
    pub per_class: Vec<PerClassRow>,
    pub excluded_classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanCurve>,
    pub confused_pairs: Vec<ConfusedPairRow>,
}

impl EvalReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::MalformedFile {
                path: path.to_path_buf(),
                reason: format!("unsupported report schema {}", report.schema_version),
            });
        }
        Ok(report)
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn tag_matches(rec: &EmbeddingRecord, key: &str, want: &str, required: bool) -> bool {
    match rec.tag(key) {
        Some(v) => v == want,
        None => !required,
    }
}

/// Class records the config asks for, in store order.
pub fn select_class_records<'a>(
    cfg: &ExperimentConfig,
    records: &'a [EmbeddingRecord],
    num_classes: usize,
) -> Result<Vec<&'a EmbeddingRecord>> {
    let source = cfg.prompt_source.record_tag();
    let axes = match cfg.prompt_source {
        PromptSource::D3gTemplates => vec![
            ("classify", cfg.classify_axis.map(|a| a.as_str())),
            ("enrich", cfg.enrich_axis.map(|a| a.as_str())),
        ],
        _ => Vec::new(),
    };
    let axes_ok = |r: &EmbeddingRecord, required: bool| {
        axes.iter()
            .all(|(k, v)| v.is_none_or(|v| tag_matches(r, k, v, required)))
    };

    let mut seen = vec![false; num_classes];
    let mut out = Vec::new();
    for rec in records {
        let keep = match rec.role {
            Role::Query => false,
            Role::ClassText => {
                let ok = rec.tag("source") == Some(source) && axes_ok(rec, true);
                if ok && cfg.prompt_source.single_prompt() {
                    match rec.label().and_then(|k| seen.get_mut(k)) {
                        Some(s) if !*s => {
                            *s = true;
                            true
                        }
                        _ => false,
                    }
                } else {
                    ok
                }
            }
            Role::ClassImage => {
                cfg.image_source
                    .as_deref()
                    .is_none_or(|s| rec.tag("source") == Some(s))
                    && axes_ok(rec, false)
            }
        };
        if keep {
            out.push(rec);
        }
    }
    Ok(out)
}

fn run_inner(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let store = EmbeddingStore::open(&cfg.store_path)?;
    let manifest = store.manifest();
    let num_classes = manifest.classes.len();
    let metric = cfg.metric.unwrap_or(manifest.metric);

    let protos_store = match &cfg.protos_path {
        Some(p) => {
            let ps = EmbeddingStore::open(p)?;
            if ps.manifest().classes != manifest.classes {
                return Err(Error::ConfigInvalid(format!(
                    "class list of {} differs from the query store",
                    p.display()
                )));
            }
            if ps.dim() != store.dim() {
                return Err(Error::DimMismatch {
                    expected: store.dim(),
                    found: ps.dim(),
                });
            }
            Some(ps)
        }
        None => None,
    };
    let class_records = select_class_records(
        cfg,
        protos_store.as_ref().unwrap_or(&store).records(),
        num_classes,
    )?;
    let text_records = class_records.iter().filter(|r| r.role == Role::ClassText).count();
    let image_records = class_records.len() - text_records;
    let protos = assemble_protos(num_classes, class_records.iter().copied())?;
    let bank = PrototypeBank::from_protos(&protos)?;
    bank.supports(cfg.fusion_mode)?;

    let (selection, reported) = match &cfg.select_on {
        Some(split) => {
            let (sel, rest): (Vec<_>, Vec<_>) = store
                .queries()
                .partition(|r| r.tag("split") == Some(split.as_str()));
            (Some(EvalSet::from_records(sel)), EvalSet::from_records(rest))
        }
        None => (None, EvalSet::from_records(store.queries())),
    };
    let eval = Evaluator::new(&reported, &bank, cfg.fusion_mode)?;

    let (fusion, scan) = match (cfg.fusion_mode.is_fused(), cfg.weight_policy) {
        (false, _) if cfg.fusion_mode == FusionMode::TextOnly => (FusionConfig::text_only(), None),
        (false, _) => (FusionConfig::image_only(), None),
        (true, WeightPolicy::Fixed(w)) => (FusionConfig::new(cfg.fusion_mode, w)?, None),
        (true, WeightPolicy::Scan) => {
            let result = match &selection {
                Some(sel) => Evaluator::new(sel, &bank, cfg.fusion_mode)?.scan(cfg.fusion_mode, metric)?,
                None => eval.scan(cfg.fusion_mode, metric)?,
            };
            let curve = ScanCurve {
                grid: weight_grid(),
                values: result.accuracy_at.clone(),
                best_w: result.best_w,
                best_value: result.best_accuracy,
                selected_on: cfg.select_on.clone(),
                selection_queries: selection.as_ref().map_or(reported.len(), EvalSet::len),
            };
            (FusionConfig::new(cfg.fusion_mode, result.best_w)?, Some(curve))
        }
    };

    let preds = eval.predict(&fusion)?;
    let labels = &reported.labels;
    let table = per_class_table(&preds, labels, num_classes)?;
    let per_class = (0..num_classes)
        .map(|k| PerClassRow {
            class_index: k,
            class_name: manifest.classes[k].clone(),
            support: table.support.get(&k).copied().unwrap_or(0),
            correct: table.correct.get(&k).copied().unwrap_or(0),
            accuracy: table.per_class_accuracy.get(&k).copied(),
        })
        .collect();
    let excluded_classes = table
        .excluded_classes()
        .into_iter()
        .map(|k| manifest.classes[k].clone())
        .collect();

    let confused_pairs = top_confused_pairs(&preds, labels, cfg.confused_pairs)
        .into_iter()
        .map(|p| {
            let pair_accuracy =
                match pair_subset_eval(&reported, &bank, &fusion, p.true_class, p.predicted_class) {
                    Ok(acc) => Some(acc),
                    Err(Error::EmptySubset(_)) => None,
                    Err(e) => return Err(e),
                };
            Ok(ConfusedPairRow {
                true_class: p.true_class,
                true_name: manifest.classes[p.true_class].clone(),
                predicted_class: p.predicted_class,
                predicted_name: manifest.classes[p.predicted_class].clone(),
                count: p.count,
                pair_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (text_w, image_w) = fusion.weight_pair();
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        method: method_label(cfg.fusion_mode).to_string(),
        dataset: manifest.dataset_name.clone(),
        store_sha256: file_sha256(&cfg.store_path)?,
        protos_sha256: cfg.protos_path.as_deref().map(file_sha256).transpose()?,
        num_classes,
        num_queries: reported.len(),
        text_records,
        image_records,
        metric,
        metric_value: metric.evaluate(&preds, labels, num_classes)?,
        top1: top1(&preds, labels)?,
        mean_per_class: mean_per_class(&preds, labels, num_classes)?,
        weights: WeightPair {
            text: text_w,
            image: image_w,
        },
        per_class,
        excluded_classes,
        scan,
        confused_pairs,
    })
}

/// Runs one experiment. Identical config and store bytes give identical
/// reports, whatever `threads` is.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("cannot build thread pool: {e}")))?
            .install(|| run_inner(cfg)),
        None => run_inner(cfg),
    }
}

/// Text and image prompts for every class of `manifest`, plus matching build
/// options, for the given prompt source.
///
/// Images are generated from the demographic prompts for `d3g_templates` and
/// from the photo template otherwise. `images_per_prompt` defaults to 1 for
/// `d3g_templates` and 5 otherwise.
pub fn plan_build(
    manifest: &Manifest,
    source: PromptSource,
    cupl_path: Option<&Path>,
    classify: Option<AxisName>,
    enrich: Option<AxisName>,
    images_per_prompt: Option<u32>,
) -> Result<(Vec<ClassPrompts>, BuildOptions)> {
    let classes = &manifest.classes;
    let texts: Vec<PromptSet> = match source {
        PromptSource::PhotoTemplate => classes.iter().map(|c| photo_template(c)).collect(),
        PromptSource::ClipTemplates => clip_template_set(&manifest.dataset_name, classes)?,
        PromptSource::CuplSingle | PromptSource::CuplAverage => {
            let path = cupl_path
                .or_else(|| manifest.prompt_files.get("cupl").map(|p| p.as_path()))
                .ok_or_else(|| Error::ConfigInvalid("CuPL sources need a prompt file".into()))?;
            let mut sets = load_cupl(path)?;
            classes
                .iter()
                .map(|c| {
                    sets.remove(c).ok_or_else(|| Error::MalformedFile {
                        path: path.to_path_buf(),
                        reason: format!("no prompts for class {c:?}"),
                    })
                })
                .collect::<Result<_>>()?
        }
        PromptSource::D3gTemplates => {
            let (Some(c), Some(e)) = (classify, enrich) else {
                return Err(Error::ConfigInvalid(
                    "d3g_templates needs both classify_axis and enrich_axis".into(),
                ));
            };
            classes
                .iter()
                .map(|k| demographic_prompts(c, e, k))
                .collect::<Result<_>>()?
        }
    };
    let d3g = source == PromptSource::D3gTemplates;
    let prompts = texts
        .into_iter()
        .zip(classes)
        .map(|(text, c)| {
            let image = if d3g { text.clone() } else { photo_template(c) };
            ClassPrompts { text, image }
        })
        .collect();
    let image_source = if d3g { "d3g" } else { "photo_template" };
    let per = images_per_prompt.unwrap_or(if d3g { 1 } else { 5 });
    let mut opts = BuildOptions::new(source.record_tag(), image_source, per);
    if d3g {
        opts.tags.insert("classify".into(), classify.map(|a| a.to_string()).unwrap_or_default());
        opts.tags.insert("enrich".into(), enrich.map(|a| a.to_string()).unwrap_or_default());
    }
    Ok((prompts, opts))
}
