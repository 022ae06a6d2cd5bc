//! Weighted text/image prototype fusion and nearest-class scoring.
//!
//! For class `k` with text centroid `t_k` and generated-image centroid `i_k`,
//! the fused prototype at text weight `w` is
//!
//! ```text
//! standard:    w * t_k + (1 - w) * i_k
//! confidence:  w * t_k + (1 - w) * c_k * i_k,   c_k = 1 - softmax_k(q . t)
//! ```
//!
//! Fused rows are not renormalized; the query is scored by a plain dot
//! product and the lowest class index wins ties.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedstore::{check_dim, ClassProto, Embedding, EmbeddingRecord, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    TextOnly,
    ImageOnly,
    Standard,
    Confidence,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::TextOnly => "text_only",
            FusionMode::ImageOnly => "image_only",
            FusionMode::Standard => "standard",
            FusionMode::Confidence => "confidence",
        }
    }

    pub fn is_fused(self) -> bool {
        matches!(self, FusionMode::Standard | FusionMode::Confidence)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_only" | "text" => Ok(FusionMode::TextOnly),
            "image_only" | "image" => Ok(FusionMode::ImageOnly),
            "standard" => Ok(FusionMode::Standard),
            "confidence" => Ok(FusionMode::Confidence),
            other => Err(Error::ConfigInvalid(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Text weight; ignored by the single-modality modes.
    pub weight: f64,
}

impl FusionConfig {
    pub fn new(mode: FusionMode, weight: f64) -> Result<Self> {
        check_weight(weight)?;
        Ok(Self { mode, weight })
    }

    pub fn text_only() -> Self {
        Self {
            mode: FusionMode::TextOnly,
            weight: 1.0,
        }
    }

    pub fn image_only() -> Self {
        Self {
            mode: FusionMode::ImageOnly,
            weight: 0.0,
        }
    }

    pub fn standard(weight: f64) -> Result<Self> {
        Self::new(FusionMode::Standard, weight)
    }

    pub fn confidence(weight: f64) -> Result<Self> {
        Self::new(FusionMode::Confidence, weight)
    }

    /// Text weight actually applied.
    pub fn effective_weight(&self) -> f64 {
        match self.mode {
            FusionMode::TextOnly => 1.0,
            FusionMode::ImageOnly => 0.0,
            _ => self.weight,
        }
    }

    /// (text weight, image weight), summing to 1.
    pub fn weight_pair(&self) -> (f64, f64) {
        let w = self.effective_weight();
        (w, 1.0 - w)
    }
}

pub(crate) fn check_weight(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::WeightOutOfRange(w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceVector {
    pub values: Vec<f64>,
}

/// Index of the maximum, lowest index on ties. NaN never wins.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || scores[best].is_nan() {
            best = k;
        }
    }
    best
}

pub fn fuse_standard(t_row: &Embedding, i_row: &Embedding, w: f64) -> Result<Vec<f64>> {
    check_dim(t_row.dim(), i_row.dim())?;
    check_weight(w)?;
    let iw = 1.0 - w;
    Ok(t_row
        .values()
        .iter()
        .zip(i_row.values())
        .map(|(&t, &i)| w * f64::from(t) + iw * f64::from(i))
        .collect())
}

pub fn fuse_confidence(t_row: &Embedding, i_row: &Embedding, w: f64, c: f64) -> Result<Vec<f64>> {
    check_dim(t_row.dim(), i_row.dim())?;
    check_weight(w)?;
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::ConfidenceOutOfRange(c));
    }
    // (1 - w) * c first, so c == 1 reproduces fuse_standard bit for bit
    let iw = (1.0 - w) * c;
    Ok(t_row
        .values()
        .iter()
        .zip(i_row.values())
        .map(|(&t, &i)| w * f64::from(t) + iw * f64::from(i))
        .collect())
}

/// Inverse softmax confidence of `q` against each text row.
///
/// Logits are cosine similarities (the dot product divided by `|q|`), so the
/// result does not depend on the query's scale.
pub fn confidence(q: &Embedding, texts: &[Embedding]) -> Result<ConfidenceVector> {
    if texts.is_empty() {
        return Err(Error::EmptyList);
    }
    let qn = q.norm();
    if qn < crate::embedstore::ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    let logits = texts
        .iter()
        .map(|t| Ok(q.dot(t)? / qn))
        .collect::<Result<Vec<_>>>()?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ConfidenceVector {
        values: exps.iter().map(|e| 1.0 - e / total).collect(),
    })
}

pub fn score(fused_rows: &[Vec<f64>], q: &Embedding) -> Result<ScoreVector> {
    if fused_rows.is_empty() {
        return Err(Error::EmptyList);
    }
    let scores = fused_rows
        .iter()
        .map(|row| {
            check_dim(row.len(), q.dim())?;
            Ok(row
                .iter()
                .zip(q.values())
                .map(|(&r, &v)| r * f64::from(v))
                .sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    let predicted = argmax_lowest(&scores);
    Ok(ScoreVector { scores, predicted })
}

/// Per-class centroid rows, indexed by class.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    text: Vec<Option<Embedding>>,
    image: Vec<Option<Embedding>>,
    dim: usize,
}

impl PrototypeBank {
    /// `protos[k]` must describe class `k`.
    pub fn from_protos(protos: &[ClassProto]) -> Result<Self> {
        let first = protos.first().ok_or(Error::EmptyList)?;
        let dim = first.dim();
        for (position, p) in protos.iter().enumerate() {
            if p.class_index != position {
                return Err(Error::ProtoOrder {
                    expected: protos.len(),
                    found: p.class_index,
                    position,
                });
            }
            check_dim(dim, p.dim())?;
        }
        Ok(Self {
            text: protos.iter().map(|p| p.text_centroid.clone()).collect(),
            image: protos.iter().map(|p| p.image_centroid.clone()).collect(),
            dim,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.text.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bank over the given classes only, in the given order.
    pub fn subset(&self, classes: &[usize]) -> Self {
        Self {
            text: classes.iter().map(|&k| self.text[k].clone()).collect(),
            image: classes.iter().map(|&k| self.image[k].clone()).collect(),
            dim: self.dim,
        }
    }

    pub fn text_rows(&self) -> Result<Vec<&Embedding>> {
        rows(&self.text, "text")
    }

    pub fn image_rows(&self) -> Result<Vec<&Embedding>> {
        rows(&self.image, "image")
    }

    /// Checks that every row `mode` needs is present.
    pub fn supports(&self, mode: FusionMode) -> Result<()> {
        match mode {
            FusionMode::TextOnly => self.text_rows().map(drop),
            FusionMode::ImageOnly => self.image_rows().map(drop),
            _ => self.text_rows().and(self.image_rows()).map(drop),
        }
    }

    /// Confidence vector for `q`, needed only in confidence mode.
    pub fn confidence_for(&self, q: &Embedding) -> Result<ConfidenceVector> {
        let texts: Vec<Embedding> = self.text_rows()?.into_iter().cloned().collect();
        confidence(q, &texts)
    }

    /// Fused rows for `cfg`. Confidence mode needs the query's confidence vector.
    pub fn fused_rows(
        &self,
        cfg: &FusionConfig,
        conf: Option<&ConfidenceVector>,
    ) -> Result<Vec<Vec<f64>>> {
        match cfg.mode {
            FusionMode::TextOnly => Ok(self.text_rows()?.iter().map(|e| e.to_f64()).collect()),
            FusionMode::ImageOnly => Ok(self.image_rows()?.iter().map(|e| e.to_f64()).collect()),
            FusionMode::Standard => {
                let t = self.text_rows()?;
                let i = self.image_rows()?;
                t.iter()
                    .zip(&i)
                    .map(|(t, i)| fuse_standard(t, i, cfg.weight))
                    .collect()
            }
            FusionMode::Confidence => {
                let conf = conf.ok_or_else(|| {
                    Error::ConfigInvalid("confidence mode needs a confidence vector".into())
                })?;
                let t = self.text_rows()?;
                let i = self.image_rows()?;
                if conf.values.len() != t.len() {
                    return Err(Error::LengthMismatch(conf.values.len(), t.len()));
                }
                t.iter()
                    .zip(&i)
                    .zip(&conf.values)
                    .map(|((t, i), &c)| fuse_confidence(t, i, cfg.weight, c))
                    .collect()
            }
        }
    }

    pub fn score_query(&self, q: &Embedding, cfg: &FusionConfig) -> Result<ScoreVector> {
        check_dim(self.dim, q.dim())?;
        let conf = match cfg.mode {
            FusionMode::Confidence => Some(self.confidence_for(q)?),
            _ => None,
        };
        let rows = self.fused_rows(cfg, conf.as_ref())?;
        score(&rows, q)
    }
}

fn rows<'a>(rows: &'a [Option<Embedding>], modality: &'static str) -> Result<Vec<&'a Embedding>> {
    rows.iter()
        .enumerate()
        .map(|(class, r)| r.as_ref().ok_or(Error::MissingModality { class, modality }))
        .collect()
}

/// Scores one query record against all class prototypes.
pub fn classify(
    query: &EmbeddingRecord,
    protos: &[ClassProto],
    cfg: &FusionConfig,
) -> Result<ScoreVector> {
    if query.role != Role::Query {
        return Err(Error::NotAQuery(query.id.clone()));
    }
    check_weight(cfg.weight)?;
    PrototypeBank::from_protos(protos)?.score_query(&query.embedding, cfg)
}
