//! Embedding data model and the on-disk embedding store.
//!
//! Every vector that enters the engine is an [`Embedding`]: a finite `f32`
//! vector, normally of unit L2 norm. Stores pair an `EMBS` binary file of
//! [`EmbeddingRecord`]s with a JSON [`Manifest`] that names the classes.

mod format;
mod manifest;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{decode_records, encode_records, FORMAT_VERSION, MAGIC};
pub use manifest::Manifest;

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Wraps raw values without normalizing. Rejects empty or non-finite input.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyList);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot_f32(&self.values, &other.values))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimMismatch { expected, found });
    }
    Ok(())
}

/// Dot product accumulated in f64, in index order.
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Scales `raw` to unit L2 norm.
pub fn normalize(raw: &[f64]) -> Result<Embedding> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Embedding::new(raw.iter().map(|v| (v / norm) as f32).collect())
}

pub fn normalize_f32(raw: &[f32]) -> Result<Embedding> {
    let wide: Vec<f64> = raw.iter().map(|&v| f64::from(v)).collect();
    normalize(&wide)
}

/// Renormalized component-wise mean of `members`.
pub fn centroid(members: &[Embedding]) -> Result<Embedding> {
    centroid_with_norm(members).map(|(c, _)| c)
}

/// Like [`centroid`], also returning the norm of the mean before renormalization.
///
/// A single member is returned unchanged.
pub fn centroid_with_norm(members: &[Embedding]) -> Result<(Embedding, f64)> {
    let first = members.first().ok_or(Error::EmptyList)?;
    let dim = first.dim();
    if members.len() == 1 {
        return Ok((first.clone(), first.norm()));
    }
    let mut sum = vec![0.0f64; dim];
    for m in members {
        check_dim(dim, m.dim())?;
        for (acc, &v) in sum.iter_mut().zip(&m.values) {
            *acc += f64::from(v);
        }
    }
    let count = members.len() as f64;
    for v in &mut sum {
        *v /= count;
    }
    let mean_norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((normalize(&sum)?, mean_norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ClassText,
    ClassImage,
    Query,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::ClassText => 0,
            Role::ClassImage => 1,
            Role::Query => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Role::ClassText),
            1 => Some(Role::ClassImage),
            2 => Some(Role::Query),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub role: Role,
    /// Index into the manifest class list, or -1 for an unlabeled query.
    pub class_index: i32,
    pub axis_tags: BTreeMap<String, String>,
    pub embedding: Embedding,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, role: Role, class_index: i32, embedding: Embedding) -> Self {
        Self {
            id: id.into(),
            role,
            class_index,
            axis_tags: BTreeMap::new(),
            embedding,
        }
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.axis_tags.insert(key.into(), value.into());
        self
    }

    pub fn label(&self) -> Option<usize> {
        usize::try_from(self.class_index).ok()
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.axis_tags.get(key).map(String::as_str)
    }
}

/// Text and generated-image embeddings for one class, with their centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProto {
    pub class_index: usize,
    pub text_embeddings: Vec<Embedding>,
    pub image_embeddings: Vec<Embedding>,
    pub text_centroid: Option<Embedding>,
    pub image_centroid: Option<Embedding>,
    /// Norm of the text mean before renormalization.
    pub text_mean_norm: Option<f64>,
    pub image_mean_norm: Option<f64>,
}

impl ClassProto {
    pub fn new(
        class_index: usize,
        text_embeddings: Vec<Embedding>,
        image_embeddings: Vec<Embedding>,
    ) -> Result<Self> {
        if text_embeddings.is_empty() && image_embeddings.is_empty() {
            return Err(Error::EmptyList);
        }
        let (text_centroid, text_mean_norm) = optional_centroid(&text_embeddings)?;
        let (image_centroid, image_mean_norm) = optional_centroid(&image_embeddings)?;
        if let (Some(t), Some(i)) = (&text_centroid, &image_centroid) {
            check_dim(t.dim(), i.dim())?;
        }
        Ok(Self {
            class_index,
            text_embeddings,
            image_embeddings,
            text_centroid,
            image_centroid,
            text_mean_norm,
            image_mean_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.text_centroid
            .as_ref()
            .or(self.image_centroid.as_ref())
            .map_or(0, Embedding::dim)
    }
}

fn optional_centroid(members: &[Embedding]) -> Result<(Option<Embedding>, Option<f64>)> {
    if members.is_empty() {
        return Ok((None, None));
    }
    let (c, n) = centroid_with_norm(members)?;
    Ok((Some(c), Some(n)))
}

/// Groups class_text / class_image records by class. Query records are ignored.
///
/// Every class in `0..num_classes` must end up with at least one embedding.
pub fn assemble_protos<'a>(
    num_classes: usize,
    records: impl IntoIterator<Item = &'a EmbeddingRecord>,
) -> Result<Vec<ClassProto>> {
    let mut texts = vec![Vec::new(); num_classes];
    let mut images = vec![Vec::new(); num_classes];
    for rec in records {
        let bucket = match rec.role {
            Role::ClassText => &mut texts,
            Role::ClassImage => &mut images,
            Role::Query => continue,
        };
        let idx = rec
            .label()
            .filter(|&i| i < num_classes)
            .ok_or(Error::ClassIndexOutOfRange {
                index: i64::from(rec.class_index),
                classes: num_classes,
            })?;
        bucket[idx].push(rec.embedding.clone());
    }
    texts
        .into_iter()
        .zip(images)
        .enumerate()
        .map(|(k, (t, i))| ClassProto::new(k, t, i))
        .collect()
}

/// Manifest path paired with a store path: `x.embs` -> `x.manifest.json`.
pub fn manifest_path(store_path: &Path) -> PathBuf {
    store_path.with_extension("manifest.json")
}

/// An immutable, validated store: manifest plus records of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    manifest: Manifest,
    dim: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingStore {
    pub fn new(manifest: Manifest, records: Vec<EmbeddingRecord>) -> Result<Self> {
        manifest.validate()?;
        let dim = records.first().ok_or(Error::EmptyList)?.embedding.dim();
        validate_records(dim, manifest.classes.len(), &records)?;
        Ok(Self {
            manifest,
            dim,
            records,
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let (manifest, records) = read_store(path)?;
        Self::new(manifest, records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_store(&self.records, &self.manifest, path)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    pub fn queries(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(|r| r.role == Role::Query)
    }

    pub fn class_protos(&self) -> Result<Vec<ClassProto>> {
        assemble_protos(self.num_classes(), &self.records)
    }
}

fn validate_records(dim: usize, num_classes: usize, records: &[EmbeddingRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for rec in records {
        check_dim(dim, rec.embedding.dim())?;
        if !seen.insert(rec.id.as_str()) {
            return Err(Error::DuplicateId(rec.id.clone()));
        }
        let in_range = match rec.label() {
            Some(i) => i < num_classes,
            None => rec.class_index == -1 && rec.role == Role::Query,
        };
        if !in_range {
            return Err(Error::ClassIndexOutOfRange {
                index: i64::from(rec.class_index),
                classes: num_classes,
            });
        }
    }
    Ok(())
}

/// Writes `records` to `path` (EMBS binary) and the manifest next to it.
pub fn write_store(records: &[EmbeddingRecord], manifest: &Manifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let dim = records.first().ok_or(Error::EmptyList)?.embedding.dim();
    validate_records(dim, manifest.classes.len(), records)?;
    let bytes = encode_records(dim, records)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    manifest.save(&manifest_path(path))
}

/// Reads an EMBS file and its manifest.
pub fn read_store(path: &Path) -> Result<(Manifest, Vec<EmbeddingRecord>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, records) = decode_records(&bytes)?;
    let manifest = Manifest::load(&manifest_path(path))?;
    validate_records(
        records.first().map_or(0, |r| r.embedding.dim()),
        manifest.classes.len(),
        &records,
    )?;
    Ok((manifest, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let e = normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(e.values(), &[0.6f32, 0.8f32]);
    }

    #[test]
    fn normalize_rejects_zero_and_nan() {
        assert!(matches!(normalize(&[0.0; 8]), Err(Error::ZeroVector)));
        assert!(matches!(normalize(&[1.0, f64::NAN]), Err(Error::NonFinite)));
        assert!(matches!(normalize(&[f64::INFINITY, 0.0]), Err(Error::NonFinite)));
    }

    #[test]
    fn normalize_unit_vector_is_identity() {
        let e = normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(e.values(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn centroid_examples() {
        let e1 = emb(&[1.0, 0.0]);
        assert_eq!(centroid(std::slice::from_ref(&e1)).unwrap(), e1);

        let c = centroid(&[emb(&[1.0, 0.0]), emb(&[0.0, 1.0])]).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((c.values()[0] - h).abs() < 1e-7 && (c.values()[1] - h).abs() < 1e-7);

        let err = centroid(&[emb(&[1.0, 0.0]), emb(&[-1.0, 0.0])]);
        assert!(matches!(err, Err(Error::ZeroVector)));
        assert!(matches!(centroid(&[]), Err(Error::EmptyList)));
        assert!(matches!(
            centroid(&[emb(&[1.0, 0.0]), emb(&[1.0, 0.0, 0.0])]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn centroid_reports_pre_normalization_norm() {
        let (_, n) = centroid_with_norm(&[emb(&[1.0, 0.0]), emb(&[0.0, 1.0])]).unwrap();
        assert!((n - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn proto_needs_some_embedding() {
        assert!(matches!(ClassProto::new(0, vec![], vec![]), Err(Error::EmptyList)));
        let p = ClassProto::new(0, vec![emb(&[1.0, 0.0])], vec![]).unwrap();
        assert!(p.image_centroid.is_none());
        assert_eq!(p.dim(), 2);
    }

    #[test]
    fn assemble_skips_queries() {
        let recs = vec![
            EmbeddingRecord::new("t0", Role::ClassText, 0, emb(&[1.0, 0.0])),
            EmbeddingRecord::new("t1", Role::ClassText, 1, emb(&[0.0, 1.0])),
            EmbeddingRecord::new("q", Role::Query, 1, emb(&[0.6, 0.8])),
        ];
        let protos = assemble_protos(2, &recs).unwrap();
        assert_eq!(protos.len(), 2);
        assert_eq!(protos[1].text_embeddings.len(), 1);
        assert!(protos.iter().all(|p| p.image_embeddings.is_empty()));
    }

    #[test]
    fn manifest_path_replaces_extension() {
        assert_eq!(
            manifest_path(Path::new("a/b.embs")),
            PathBuf::from("a/b.manifest.json")
        );
    }
}
