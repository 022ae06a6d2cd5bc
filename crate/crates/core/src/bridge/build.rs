//! Builds class prototypes through the bridge, persisting everything to a cache.
//!
//! Cache layout under the cache root:
//!
//! ```text
//! index.json                                   list of CacheIndexEntry
//! <dataset>__<text>__<image>__<key16>.embs     one store per build config
//! <dataset>__<text>__<image>__<key16>.manifest.json
//! ```
//!
//! The store is rewritten after every class, so an interrupted build resumes
//! from the last finished class.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BridgeClient, GenerateParams};
use crate::embedstore::{
    assemble_protos, read_store, write_store, ClassProto, EmbeddingRecord, Manifest, Role,
};
use crate::error::{Error, Result};
use crate::prompts::{dataset_key, PromptSet};

/// Environment variable naming the cache root.
pub const CACHE_ENV: &str = "FUSIONKIT_CACHE_DIR";

const INDEX_FILE: &str = "index.json";
const QUERY_BATCH: usize = 32;

/// `$FUSIONKIT_CACHE_DIR`, or `.fusionkit-cache` in the working directory.
pub fn cache_root() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".fusionkit-cache"))
}

/// Prompts for one class: `text` is embedded directly, `image` drives generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrompts {
    pub text: PromptSet,
    pub image: PromptSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Value of the `source` tag on text records.
    pub text_source: String,
    /// Value of the `source` tag on image records.
    pub image_source: String,
    /// 0 builds text-only prototypes.
    pub images_per_prompt: u32,
    pub params: GenerateParams,
    /// Extra tags copied onto every class record (e.g. `classify`, `enrich`).
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl BuildOptions {
    pub fn new(text_source: &str, image_source: &str, images_per_prompt: u32) -> Self {
        Self {
            text_source: text_source.to_string(),
            image_source: image_source.to_string(),
            images_per_prompt,
            params: GenerateParams::default(),
            tags: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub protos: Vec<ClassProto>,
    pub store_path: PathBuf,
    pub records: Vec<EmbeddingRecord>,
    /// True when the store was complete and no bridge request was needed.
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheIndexEntry {
    pub key: String,
    /// Store file name, relative to the cache root.
    pub file: String,
    pub dataset: String,
    pub text_source: String,
    pub image_source: String,
    pub images_per_prompt: u32,
    pub params: GenerateParams,
    pub complete: bool,
    /// Whatever the bridge reported about itself (encoder, image size, scheduler).
    #[serde(default)]
    pub bridge_info: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub entries: Vec<CacheIndexEntry>,
}

impl CacheIndex {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path,
            reason: e.to_string(),
        })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(INDEX_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn get(&self, key: &str) -> Option<&CacheIndexEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Inserts or replaces the entry with the same key; entries stay sorted by key.
    pub fn upsert(&mut self, entry: CacheIndexEntry) {
        self.entries.retain(|e| e.key != entry.key);
        self.entries.push(entry);
        self.entries.sort_by(|a, b| a.key.cmp(&b.key));
    }
}

fn hash12(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..12].to_string()
}

fn params_key(p: &GenerateParams) -> String {
    format!("{}/{}/{}", p.steps, p.guidance, p.seed)
}

fn build_key(manifest: &Manifest, prompts: &[ClassPrompts], opts: &BuildOptions) -> Result<String> {
    let material = serde_json::json!({
        "dataset": manifest.dataset_name,
        "classes": manifest.classes,
        "prompts": prompts,
        "options": opts,
    });
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&material)?)))
}

fn file_stem_part(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "none".into()
    } else {
        cleaned
    }
}

/// Embeds every prompt and generated image for every class, reusing cached records.
///
/// `prompts[k]` belongs to class `k` of `manifest`.
pub fn build_class_protos(
    client: &BridgeClient,
    manifest: &Manifest,
    prompts: &[ClassPrompts],
    opts: &BuildOptions,
    cache_root: &Path,
) -> Result<BuildOutput> {
    manifest.validate()?;
    if prompts.len() != manifest.classes.len() {
        return Err(Error::LengthMismatch(prompts.len(), manifest.classes.len()));
    }
    let key = build_key(manifest, prompts, opts)?;
    let file = format!(
        "{}__{}__{}__{}.embs",
        dataset_key(&manifest.dataset_name),
        file_stem_part(&opts.text_source),
        file_stem_part(&opts.image_source),
        &key[..16]
    );
    let store_path = cache_root.join(&file);
    let mut index = CacheIndex::load(cache_root)?;
    let complete = index.get(&key).is_some_and(|e| e.complete);

    let existing = if store_path.exists() {
        read_store(&store_path)?.1
    } else {
        Vec::new()
    };
    if complete {
        log::info!("cache hit: {}", store_path.display());
        let protos = assemble_protos(manifest.classes.len(), &existing)?;
        return Ok(BuildOutput {
            protos,
            store_path,
            records: existing,
            cache_hit: true,
        });
    }
    if !existing.is_empty() {
        log::info!("resuming from {} cached records", existing.len());
    }
    let mut cached: HashMap<String, EmbeddingRecord> =
        existing.into_iter().map(|r| (r.id.clone(), r)).collect();

    let mut entry = CacheIndexEntry {
        key: key.clone(),
        file,
        dataset: manifest.dataset_name.clone(),
        text_source: opts.text_source.clone(),
        image_source: opts.image_source.clone(),
        images_per_prompt: opts.images_per_prompt,
        params: opts.params,
        complete: false,
        bridge_info: BTreeMap::new(),
    };

    let mut records: Vec<EmbeddingRecord> = Vec::new();
    for (k, class_prompts) in prompts.iter().enumerate() {
        let before = client.calls();
        let class_records = build_class(client, k, class_prompts, opts, &mut cached)?;
        records.extend(class_records);
        if client.calls() != before {
            let mut checkpoint = records.clone();
            // keep not-yet-reached cached records so a crash loses nothing
            let mut rest: Vec<_> = cached.values().cloned().collect();
            rest.sort_by(|a, b| a.id.cmp(&b.id));
            checkpoint.extend(rest);
            write_store(&checkpoint, manifest, &store_path)?;
            if let Some(info) = client.last_info() {
                entry.bridge_info = info;
            }
            index.upsert(entry.clone());
            index.save(cache_root)?;
        }
        log::debug!("class {k} ({}) done", manifest.classes[k]);
    }

    write_store(&records, manifest, &store_path)?;
    if let Some(info) = client.last_info() {
        entry.bridge_info = info;
    } else if let Some(prev) = index.get(&key) {
        entry.bridge_info = prev.bridge_info.clone();
    }
    entry.complete = true;
    index.upsert(entry);
    index.save(cache_root)?;

    let protos = assemble_protos(manifest.classes.len(), &records)?;
    Ok(BuildOutput {
        protos,
        store_path,
        records,
        cache_hit: false,
    })
}

fn build_class(
    client: &BridgeClient,
    k: usize,
    prompts: &ClassPrompts,
    opts: &BuildOptions,
    cached: &mut HashMap<String, EmbeddingRecord>,
) -> Result<Vec<EmbeddingRecord>> {
    let class_index = i32::try_from(k).map_err(|_| Error::ClassIndexOutOfRange {
        index: k as i64,
        classes: k,
    })?;
    let tag = |rec: EmbeddingRecord, source: &str, prompt: &str| {
        opts.tags
            .iter()
            .fold(rec, |r, (key, v)| r.with_tag(key.clone(), v.clone()))
            .with_tag("source", source)
            .with_tag("prompt", prompt)
    };

    let text_ids: Vec<String> = prompts
        .text
        .prompts
        .iter()
        .map(|p| format!("t{k}:{}", hash12(&[&opts.text_source, p])))
        .collect();
    let missing: Vec<String> = prompts
        .text
        .prompts
        .iter()
        .zip(&text_ids)
        .filter(|(_, id)| !cached.contains_key(*id))
        .map(|(p, _)| p.clone())
        .collect();
    let mut fresh = if missing.is_empty() {
        Vec::new()
    } else {
        client.embed_text(&missing)?
    }
    .into_iter();

    let mut out = Vec::new();
    for (prompt, id) in prompts.text.prompts.iter().zip(text_ids) {
        let rec = match cached.remove(&id) {
            Some(r) => r,
            None => {
                let emb = fresh.next().ok_or_else(|| {
                    Error::ProtocolError("bridge returned too few text embeddings".into())
                })?;
                tag(
                    EmbeddingRecord::new(id, Role::ClassText, class_index, emb),
                    &opts.text_source,
                    prompt,
                )
            }
        };
        out.push(rec);
    }

    let per = opts.images_per_prompt as usize;
    if per == 0 {
        return Ok(out);
    }
    let pk = params_key(&opts.params);
    for prompt in &prompts.image.prompts {
        let stem = format!("i{k}:{}", hash12(&[&opts.image_source, prompt, &pk]));
        let ids: Vec<String> = (0..per).map(|m| format!("{stem}:{m}")).collect();
        if ids.iter().all(|id| cached.contains_key(id)) {
            out.extend(ids.iter().filter_map(|id| cached.remove(id)));
            continue;
        }
        let paths = client.generate(prompt, opts.images_per_prompt, opts.params)?;
        let embs = client.embed_image(&paths)?;
        for ((id, path), emb) in ids.into_iter().zip(&paths).zip(embs) {
            cached.remove(&id);
            let rec = tag(
                EmbeddingRecord::new(id, Role::ClassImage, class_index, emb),
                &opts.image_source,
                prompt,
            )
            .with_tag("path", path.clone());
            out.push(rec);
        }
    }
    Ok(out)
}

/// Embeds query images. Labels of `None` become unlabeled queries (class -1).
pub fn embed_queries(client: &BridgeClient, items: &[(String, Option<usize>)]) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(QUERY_BATCH) {
        let paths: Vec<String> = chunk.iter().map(|(p, _)| p.clone()).collect();
        let embs = client.embed_image(&paths)?;
        for ((path, label), emb) in chunk.iter().zip(embs) {
            let class_index = match label {
                Some(l) => i32::try_from(*l).map_err(|_| Error::ClassIndexOutOfRange {
                    index: *l as i64,
                    classes: 0,
                })?,
                None => -1,
            };
            out.push(
                EmbeddingRecord::new(format!("q:{path}"), Role::Query, class_index, emb)
                    .with_tag("path", path.clone()),
            );
        }
    }
    Ok(out)
}
