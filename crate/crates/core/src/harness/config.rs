use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fusion::{check_weight, FusionMode};
use crate::metrics::Metric;
use crate::prompts::AxisName;

/// Where the class text embeddings came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    PhotoTemplate,
    ClipTemplates,
    CuplSingle,
    CuplAverage,
    D3gTemplates,
}

impl PromptSource {
    pub const ALL: [PromptSource; 5] = [
        PromptSource::PhotoTemplate,
        PromptSource::ClipTemplates,
        PromptSource::CuplSingle,
        PromptSource::CuplAverage,
        PromptSource::D3gTemplates,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptSource::PhotoTemplate => "photo_template",
            PromptSource::ClipTemplates => "clip_templates",
            PromptSource::CuplSingle => "cupl_single",
            PromptSource::CuplAverage => "cupl_average",
            PromptSource::D3gTemplates => "d3g_templates",
        }
    }

    /// `source` tag carried by the store records this source reads.
    /// Both CuPL variants read the same records.
    pub fn record_tag(self) -> &'static str {
        match self {
            PromptSource::PhotoTemplate => "photo_template",
            PromptSource::ClipTemplates => "clip_templates",
            PromptSource::CuplSingle | PromptSource::CuplAverage => "cupl",
            PromptSource::D3gTemplates => "d3g",
        }
    }

    /// Sources that use only the first prompt of each class.
    pub fn single_prompt(self) -> bool {
        matches!(self, PromptSource::PhotoTemplate | PromptSource::CuplSingle)
    }

    /// Column heading in markdown reports.
    pub fn label(self) -> &'static str {
        match self {
            PromptSource::PhotoTemplate => "Photo template",
            PromptSource::ClipTemplates => "CLIP templates",
            PromptSource::CuplSingle => "CuPL (single)",
            PromptSource::CuplAverage => "CuPL (average)",
            PromptSource::D3gTemplates => "Demographic templates",
        }
    }
}

impl fmt::Display for PromptSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptSource::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown prompt source {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightPolicy {
    Scan,
    Fixed(f64),
}

impl fmt::Display for WeightPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightPolicy::Scan => f.write_str("scan"),
            WeightPolicy::Fixed(w) => write!(f, "fixed({w})"),
        }
    }
}

impl FromStr for WeightPolicy {
    type Err = Error;

    /// Accepts `scan`, `fixed(0.85)` or a bare number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "scan" {
            return Ok(WeightPolicy::Scan);
        }
        let inner = s
            .strip_prefix("fixed(")
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(s);
        let w: f64 = inner
            .trim()
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("weight policy must be scan or fixed(w), got {s:?}")))?;
        check_weight(w).map_err(|_| Error::ConfigInvalid(format!("fixed weight {w} is outside [0, 1]")))?;
        Ok(WeightPolicy::Fixed(w))
    }
}

impl Serialize for WeightPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub const DEFAULT_CONFUSED_PAIRS: usize = 5;

/// One evaluation run. Serialized as the report's config echo; `threads` is
/// left out because it never changes results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub store_path: PathBuf,
    /// Separate store holding the class records; defaults to `store_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protos_path: Option<PathBuf>,
    pub prompt_source: PromptSource,
    /// `source` tag of the image records to use; all image records when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_source: Option<String>,
    pub fusion_mode: FusionMode,
    pub weight_policy: WeightPolicy,
    /// Defaults to the manifest's metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classify_axis: Option<AxisName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enrich_axis: Option<AxisName>,
    /// Query `split` tag whose queries choose the weight; the rest are reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select_on: Option<String>,
    pub confused_pairs: usize,
    #[serde(skip)]
    pub threads: Option<usize>,
}

const KEYS: &[&str] = &[
    "store",
    "protos",
    "prompt_source",
    "image_source",
    "fusion_mode",
    "weight",
    "metric",
    "classify_axis",
    "enrich_axis",
    "select_on",
    "confused_pairs",
    "threads",
];

/// Parses `key = value` lines. `#` starts a comment; values may be quoted.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected key = value", n + 1)))?;
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        out.insert(k.trim().to_string(), v.to_string());
    }
    Ok(out)
}

pub fn load_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text)
}

impl ExperimentConfig {
    pub fn new(store_path: impl Into<PathBuf>, prompt_source: PromptSource, fusion_mode: FusionMode) -> Self {
        Self {
            store_path: store_path.into(),
            protos_path: None,
            prompt_source,
            image_source: None,
            fusion_mode,
            weight_policy: WeightPolicy::Scan,
            metric: None,
            classify_axis: None,
            enrich_axis: None,
            select_on: None,
            confused_pairs: DEFAULT_CONFUSED_PAIRS,
            threads: None,
        }
    }

    /// Builds a config from key/value pairs (config file merged with flags).
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::ConfigInvalid(format!("unknown config key {k:?}")));
        }
        let need = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::ConfigInvalid(format!("missing required key {k:?}")))
        };
        let opt_parse = |k: &str| -> Result<Option<String>> { Ok(kv.get(k).filter(|v| !v.is_empty()).cloned()) };
        let axis = |k: &str| -> Result<Option<AxisName>> {
            opt_parse(k)?
                .map(|v| v.parse().map_err(|_| Error::ConfigInvalid(format!("{k}: unknown axis {v:?}"))))
                .transpose()
        };
        let count = |k: &str| -> Result<Option<usize>> {
            opt_parse(k)?
                .map(|v| {
                    v.parse::<usize>()
                        .map_err(|_| Error::ConfigInvalid(format!("{k} must be a non-negative integer")))
                })
                .transpose()
        };
        let cfg = Self {
            store_path: PathBuf::from(need("store")?),
            protos_path: opt_parse("protos")?.map(PathBuf::from),
            prompt_source: need("prompt_source")?.parse()?,
            image_source: opt_parse("image_source")?,
            fusion_mode: need("fusion_mode")?.parse()?,
            weight_policy: match opt_parse("weight")? {
                Some(v) => v.parse()?,
                None => WeightPolicy::Scan,
            },
            metric: opt_parse("metric")?.map(|v| v.parse()).transpose()?,
            classify_axis: axis("classify_axis")?,
            enrich_axis: axis("enrich_axis")?,
            select_on: opt_parse("select_on")?,
            confused_pairs: count("confused_pairs")?.unwrap_or(DEFAULT_CONFUSED_PAIRS),
            threads: count("threads")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverse of `from_kv` (without `threads`).
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        kv.insert("store".into(), self.store_path.display().to_string());
        if let Some(p) = &self.protos_path {
            kv.insert("protos".into(), p.display().to_string());
        }
        kv.insert("prompt_source".into(), self.prompt_source.to_string());
        if let Some(s) = &self.image_source {
            kv.insert("image_source".into(), s.clone());
        }
        kv.insert("fusion_mode".into(), self.fusion_mode.to_string());
        kv.insert("weight".into(), self.weight_policy.to_string());
        if let Some(m) = self.metric {
            kv.insert("metric".into(), m.to_string());
        }
        if let Some(a) = self.classify_axis {
            kv.insert("classify_axis".into(), a.to_string());
        }
        if let Some(a) = self.enrich_axis {
            kv.insert("enrich_axis".into(), a.to_string());
        }
        if let Some(s) = &self.select_on {
            kv.insert("select_on".into(), s.clone());
        }
        kv.insert("confused_pairs".into(), self.confused_pairs.to_string());
        kv
    }

    pub fn to_config_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_source == PromptSource::D3gTemplates
            && (self.classify_axis.is_none() || self.enrich_axis.is_none())
        {
            return Err(Error::ConfigInvalid(
                "d3g_templates needs both classify_axis and enrich_axis".into(),
            ));
        }
        if let WeightPolicy::Fixed(w) = self.weight_policy {
            check_weight(w).map_err(|_| Error::ConfigInvalid(format!("fixed weight {w} is outside [0, 1]")))?;
        }
        if self.select_on.is_some() && self.weight_policy != WeightPolicy::Scan {
            return Err(Error::ConfigInvalid("select_on only applies to weight = scan".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::ConfigInvalid("threads must be at least 1".into()));
        }
        Ok(())
    }
}
