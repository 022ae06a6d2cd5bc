//! Text-weight grid search and fixed-weight evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{ClassProto, Embedding, EmbeddingRecord, Role};
use crate::error::{Error, Result};
use crate::fusion::{check_weight, score, ConfidenceVector, FusionConfig, FusionMode, PrototypeBank};
use crate::metrics::Metric;

/// Number of points on the weight grid: 0.00, 0.01, ..., 1.00.
pub const GRID_POINTS: usize = 101;

/// The inclusive 0.01-step weight grid. Point `k` is exactly `k as f64 / 100.0`.
pub fn weight_grid() -> Vec<f64> {
    (0..GRID_POINTS).map(|k| k as f64 / 100.0).collect()
}

/// Labeled query embeddings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSet {
    pub ids: Vec<String>,
    pub embeddings: Vec<Embedding>,
    pub labels: Vec<usize>,
}

impl EvalSet {
    /// Collects labeled query records; unlabeled queries are skipped.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EmbeddingRecord>) -> Self {
        let mut set = EvalSet::default();
        for rec in records {
            if rec.role != Role::Query {
                continue;
            }
            if let Some(label) = rec.label() {
                set.push(rec.id.clone(), rec.embedding.clone(), label);
            }
        }
        set
    }

    pub fn push(&mut self, id: String, embedding: Embedding, label: usize) {
        self.ids.push(id);
        self.embeddings.push(embedding);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScanResult {
    pub grid: Vec<f64>,
    pub accuracy_at: Vec<f64>,
    pub best_w: f64,
    pub best_accuracy: f64,
    pub best_index: usize,
}

impl WeightScanResult {
    /// Builds the result from a curve; ties go to the smallest weight.
    pub fn from_curve(accuracy_at: Vec<f64>) -> Self {
        let grid = weight_grid();
        let mut best_index = 0;
        for (k, &a) in accuracy_at.iter().enumerate() {
            if a > accuracy_at[best_index] {
                best_index = k;
            }
        }
        Self {
            best_w: grid[best_index],
            best_accuracy: accuracy_at[best_index],
            grid,
            accuracy_at,
            best_index,
        }
    }
}

/// Evaluates queries against one prototype bank, caching per-query confidence.
pub struct Evaluator<'a> {
    evalset: &'a EvalSet,
    bank: &'a PrototypeBank,
    confidences: Option<Vec<ConfidenceVector>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(evalset: &'a EvalSet, bank: &'a PrototypeBank, mode: FusionMode) -> Result<Self> {
        if evalset.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        bank.supports(mode)?;
        for &l in &evalset.labels {
            if l >= bank.num_classes() {
                return Err(Error::ClassIndexOutOfRange {
                    index: l as i64,
                    classes: bank.num_classes(),
                });
            }
        }
        let confidences = match mode {
            FusionMode::Confidence => Some(
                evalset
                    .embeddings
                    .par_iter()
                    .map(|q| bank.confidence_for(q))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(Self {
            evalset,
            bank,
            confidences,
        })
    }

    /// Predicted class per query, in evalset order.
    pub fn predict(&self, cfg: &FusionConfig) -> Result<Vec<usize>> {
        check_weight(cfg.weight)?;
        let queries = &self.evalset.embeddings;
        match (&self.confidences, cfg.mode) {
            (Some(confs), FusionMode::Confidence) => queries
                .par_iter()
                .zip(confs.par_iter())
                .map(|(q, c)| {
                    let rows = self.bank.fused_rows(cfg, Some(c))?;
                    Ok(score(&rows, q)?.predicted)
                })
                .collect(),
            (None, FusionMode::Confidence) => {
                Err(Error::ConfigInvalid("evaluator was built without confidence".into()))
            }
            _ => {
                let rows = self.bank.fused_rows(cfg, None)?;
                queries
                    .par_iter()
                    .map(|q| Ok(score(&rows, q)?.predicted))
                    .collect()
            }
        }
    }

    pub fn metric_at(&self, cfg: &FusionConfig, metric: Metric) -> Result<f64> {
        let preds = self.predict(cfg)?;
        metric.evaluate(&preds, &self.evalset.labels, self.bank.num_classes())
    }

    pub fn scan(&self, mode: FusionMode, metric: Metric) -> Result<WeightScanResult> {
        if !mode.is_fused() {
            return Err(Error::ConfigInvalid(format!(
                "weight scan needs standard or confidence mode, got {mode}"
            )));
        }
        let curve = weight_grid()
            .into_par_iter()
            .map(|w| self.metric_at(&FusionConfig { mode, weight: w }, metric))
            .collect::<Result<Vec<_>>>()?;
        Ok(WeightScanResult::from_curve(curve))
    }
}

/// Metric at every grid weight, with the best (smallest on ties) weight.
pub fn scan_weights(
    evalset: &EvalSet,
    protos: &[ClassProto],
    mode: FusionMode,
    metric: Metric,
) -> Result<WeightScanResult> {
    let bank = PrototypeBank::from_protos(protos)?;
    Evaluator::new(evalset, &bank, mode)?.scan(mode, metric)
}

/// Metric at one fixed weight.
pub fn evaluate_fixed(
    evalset: &EvalSet,
    protos: &[ClassProto],
    mode: FusionMode,
    w: f64,
    metric: Metric,
) -> Result<f64> {
    let cfg = FusionConfig::new(mode, w)?;
    let bank = PrototypeBank::from_protos(protos)?;
    Evaluator::new(evalset, &bank, mode)?.metric_at(&cfg, metric)
}
