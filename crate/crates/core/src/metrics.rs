//! Accuracy metrics, per-class tables and confusion-pair extraction.
//!
//! All reductions count integers first, so results never depend on the
//! order queries were evaluated in.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, PrototypeBank};
use crate::scan::EvalSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "top1")]
    Top1,
    #[serde(rename = "mean_per_class")]
    MeanPerClass,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Top1 => "top1",
            Metric::MeanPerClass => "mean_per_class",
        }
    }

    pub fn evaluate(self, predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
        match self {
            Metric::Top1 => top1(predictions, labels),
            Metric::MeanPerClass => mean_per_class(predictions, labels, num_classes),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top1" => Ok(Metric::Top1),
            "mean_per_class" => Ok(Metric::MeanPerClass),
            other => Err(Error::ConfigInvalid(format!("unknown metric {other:?}"))),
        }
    }
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn top1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Unweighted mean of per-class recall over classes that have support.
pub fn mean_per_class(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let table = per_class_table(predictions, labels, num_classes)?;
    Ok(table.mean_accuracy())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassTable {
    pub num_classes: usize,
    /// Only classes with support > 0 appear here.
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub support: BTreeMap<usize, usize>,
    pub correct: BTreeMap<usize, usize>,
}

impl PerClassTable {
    pub fn mean_accuracy(&self) -> f64 {
        let sum: f64 = self.per_class_accuracy.values().sum();
        sum / self.per_class_accuracy.len() as f64
    }

    /// Classes with no queries, left out of the mean.
    pub fn excluded_classes(&self) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|k| !self.support.contains_key(k))
            .collect()
    }

    pub fn total(&self) -> usize {
        self.support.values().sum()
    }
}

pub fn per_class_table(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<PerClassTable> {
    check_lengths(predictions, labels)?;
    let mut support = BTreeMap::new();
    let mut correct = BTreeMap::new();
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::ClassIndexOutOfRange {
                index: l as i64,
                classes: num_classes,
            });
        }
        *support.entry(l).or_insert(0usize) += 1;
        let c = correct.entry(l).or_insert(0usize);
        if p == l {
            *c += 1;
        }
    }
    let per_class_accuracy = support
        .iter()
        .map(|(&k, &n)| (k, correct[&k] as f64 / n as f64))
        .collect();
    Ok(PerClassTable {
        num_classes,
        per_class_accuracy,
        support,
        correct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub true_class: usize,
    pub predicted_class: usize,
    pub count: usize,
    /// Per-class accuracy of (true, predicted) when only these two classes compete.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_binary_accuracy: Option<(f64, f64)>,
}

/// Most frequent (true, predicted) mistakes: count descending, then index ascending.
pub fn top_confused_pairs(predictions: &[usize], labels: &[usize], k: usize) -> Vec<ConfusionPair> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&p, &l) in predictions.iter().zip(labels) {
        if p != l {
            *counts.entry((l, p)).or_insert(0) += 1;
        }
    }
    let mut pairs: Vec<ConfusionPair> = counts
        .into_iter()
        .map(|((t, p), count)| ConfusionPair {
            true_class: t,
            predicted_class: p,
            count,
            pair_binary_accuracy: None,
        })
        .collect();
    // BTreeMap order already sorts by (true, predicted); stable sort keeps it within equal counts
    pairs.sort_by_key(|p| std::cmp::Reverse(p.count));
    pairs.truncate(k);
    pairs
}

/// Accuracy on classes `a` and `b` when only their two prototypes compete.
pub fn pair_subset_eval(
    evalset: &EvalSet,
    bank: &PrototypeBank,
    cfg: &FusionConfig,
    class_a: usize,
    class_b: usize,
) -> Result<(f64, f64)> {
    if class_a == class_b {
        return Err(Error::SameClass(class_a));
    }
    for k in [class_a, class_b] {
        if k >= bank.num_classes() {
            return Err(Error::ClassIndexOutOfRange {
                index: k as i64,
                classes: bank.num_classes(),
            });
        }
    }
    let pair = bank.subset(&[class_a, class_b]);
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (q, &label) in evalset.embeddings.iter().zip(&evalset.labels) {
        let slot = if label == class_a {
            0
        } else if label == class_b {
            1
        } else {
            continue;
        };
        totals[slot] += 1;
        if pair.score_query(q, cfg)?.predicted == slot {
            hits[slot] += 1;
        }
    }
    if totals[0] == 0 {
        return Err(Error::EmptySubset(class_a));
    }
    if totals[1] == 0 {
        return Err(Error::EmptySubset(class_b));
    }
    Ok((
        hits[0] as f64 / totals[0] as f64,
        hits[1] as f64 / totals[1] as f64,
    ))
}
