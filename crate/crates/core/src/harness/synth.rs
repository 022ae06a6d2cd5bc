//! Synthetic stores with controllable text/image prototype quality.
//!
//! Construction, all draws from one `ChaCha8Rng::seed_from_u64(seed)` in
//! this order:
//!
//! 1. For each class `k`: direction `d_k` = normalized standard-normal vector.
//! 2. For each class, `texts_per_class` text embeddings
//!    `normalize(text_bias * d_k + (1 - text_bias) * u)`, then
//!    `images_per_class` image embeddings with `image_bias`, where every `u`
//!    is a fresh normalized standard-normal vector.
//! 3. For each class, `queries_per_class` queries
//!    `normalize(d_k + query_noise * g / sqrt(dim))`, `g` standard normal.
//!
//! Bias 1 makes a prototype exactly `d_k`; bias 0 makes it pure noise.
//! The first `holdout_per_class` queries of each class get `split = select`,
//! the rest `split = test`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedstore::{normalize, write_store, Embedding, EmbeddingRecord, Manifest, Role};
use crate::error::{Error, Result};
use crate::metrics::Metric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub queries_per_class: usize,
    pub text_bias: f64,
    pub image_bias: f64,
    pub seed: u64,
    pub texts_per_class: usize,
    pub images_per_class: usize,
    pub query_noise: f64,
    pub holdout_per_class: usize,
    /// `source` tag on the text records.
    pub text_source: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            dim: 16,
            queries_per_class: 10,
            text_bias: 0.8,
            image_bias: 0.8,
            seed: 0,
            texts_per_class: 1,
            images_per_class: 5,
            query_noise: 1.0,
            holdout_per_class: 0,
            text_source: "photo_template".into(),
        }
    }
}

/// `source` tag on synthetic image records.
pub const SYNTH_IMAGE_SOURCE: &str = "synthetic";

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.dim < 2 {
            return bad(format!("need dim >= 2, got {}", self.dim));
        }
        if self.queries_per_class == 0 || self.texts_per_class == 0 || self.images_per_class == 0 {
            return bad("queries, texts and images per class must be at least 1".into());
        }
        for (name, b) in [("text_bias", self.text_bias), ("image_bias", self.image_bias)] {
            if !(0.0..=1.0).contains(&b) {
                return bad(format!("{name} {b} is outside [0, 1]"));
            }
        }
        if !(self.query_noise.is_finite() && self.query_noise >= 0.0) {
            return bad(format!("query_noise {} must be finite and >= 0", self.query_noise));
        }
        if self.holdout_per_class >= self.queries_per_class && self.holdout_per_class > 0 {
            return bad("holdout_per_class must leave at least one test query per class".into());
        }
        if i32::try_from(self.classes).is_err() {
            return bad("too many classes".into());
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Result<Embedding> {
    normalize(&gaussian(rng, dim))
}

fn mix(bias: f64, d: &Embedding, u: &Embedding) -> Result<Embedding> {
    let v: Vec<f64> = d
        .values()
        .iter()
        .zip(u.values())
        .map(|(&a, &b)| bias * f64::from(a) + (1.0 - bias) * f64::from(b))
        .collect();
    normalize(&v)
}

/// Builds the records and manifest described in the module docs.
pub fn synth_records(spec: &SynthSpec) -> Result<(Manifest, Vec<EmbeddingRecord>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = (0..spec.classes)
        .map(|_| unit(&mut rng, spec.dim))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (k, d) in dirs.iter().enumerate() {
        let class = k as i32;
        for j in 0..spec.texts_per_class {
            let u = unit(&mut rng, spec.dim)?;
            records.push(
                EmbeddingRecord::new(format!("t{k}:{j}"), Role::ClassText, class, mix(spec.text_bias, d, &u)?)
                    .with_tag("source", spec.text_source.clone()),
            );
        }
        for j in 0..spec.images_per_class {
            let u = unit(&mut rng, spec.dim)?;
            records.push(
                EmbeddingRecord::new(format!("i{k}:{j}"), Role::ClassImage, class, mix(spec.image_bias, d, &u)?)
                    .with_tag("source", SYNTH_IMAGE_SOURCE),
            );
        }
    }
    let scale = spec.query_noise / (spec.dim as f64).sqrt();
    for (k, d) in dirs.iter().enumerate() {
        for j in 0..spec.queries_per_class {
            let g = gaussian(&mut rng, spec.dim);
            let v: Vec<f64> = d
                .values()
                .iter()
                .zip(&g)
                .map(|(&a, &n)| f64::from(a) + scale * n)
                .collect();
            let split = if j < spec.holdout_per_class { "select" } else { "test" };
            records.push(
                EmbeddingRecord::new(format!("q{k}:{j}"), Role::Query, k as i32, normalize(&v)?)
                    .with_tag("split", split),
            );
        }
    }
    let width = (spec.classes - 1).to_string().len();
    let classes = (0..spec.classes).map(|k| format!("class_{k:0width$}")).collect();
    Ok((Manifest::new("synthetic", classes, Metric::Top1), records))
}

/// Writes the synthetic store (and its manifest) to `path`.
pub fn synth_fixture(spec: &SynthSpec, path: &Path) -> Result<()> {
    let (manifest, records) = synth_records(spec)?;
    write_store(&records, &manifest, path)
}
