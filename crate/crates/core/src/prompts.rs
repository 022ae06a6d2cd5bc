//! Prompt sets: demographic template expansion, per-dataset classifier
//! templates, and externally authored descriptive prompt files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    Profession,
    Race7,
    Race4,
    Gender,
    Age,
}

impl AxisName {
    pub const ALL: [AxisName; 5] = [
        AxisName::Profession,
        AxisName::Race7,
        AxisName::Race4,
        AxisName::Gender,
        AxisName::Age,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::Profession => "profession",
            AxisName::Race7 => "race7",
            AxisName::Race4 => "race4",
            AxisName::Gender => "gender",
            AxisName::Age => "age",
        }
    }

    pub fn cardinality(self) -> usize {
        match self {
            AxisName::Profession => 10,
            AxisName::Race7 => 7,
            AxisName::Race4 => 4,
            AxisName::Gender => 2,
            AxisName::Age => 9,
        }
    }

    pub fn is_race(self) -> bool {
        matches!(self, AxisName::Race7 | AxisName::Race4)
    }

    /// Whether a template placeholder name refers to this axis.
    fn matches_placeholder(self, placeholder: &str) -> bool {
        match placeholder {
            "prof" | "profession" => self == AxisName::Profession,
            "race" => self.is_race(),
            other => other == self.as_str(),
        }
    }
}

impl fmt::Display for AxisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AxisName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "profession" | "prof" => Ok(AxisName::Profession),
            "race7" => Ok(AxisName::Race7),
            "race4" => Ok(AxisName::Race4),
            "gender" => Ok(AxisName::Gender),
            "age" => Ok(AxisName::Age),
            _ => Err(Error::UnknownAxis(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicAxis {
    pub name: AxisName,
    pub values: Vec<String>,
}

impl DemographicAxis {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::EmptyAxis(self.name.to_string()));
        }
        if self.values.len() != self.name.cardinality() {
            return Err(Error::ManifestInvalid(format!(
                "axis {} must have {} values, found {}",
                self.name,
                self.name.cardinality(),
                self.values.len()
            )));
        }
        Ok(())
    }
}

fn axis_registry() -> &'static [DemographicAxis] {
    static AXES: OnceLock<Vec<DemographicAxis>> = OnceLock::new();
    AXES.get_or_init(|| {
        serde_json::from_str(include_str!("../data/axes.json")).expect("bundled axes.json is valid")
    })
}

/// The registered values for `name`.
pub fn axis(name: AxisName) -> DemographicAxis {
    axis_registry()
        .iter()
        .find(|a| a.name == name)
        .cloned()
        .expect("every axis is registered")
}

pub fn all_axes() -> Vec<DemographicAxis> {
    axis_registry().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Template,
    CuplFile,
    ClipTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub class_name: String,
    pub prompts: Vec<String>,
    pub provenance: Provenance,
}

impl PromptSet {
    /// Drops duplicate prompts (keeping the first) and rejects an empty list.
    pub fn new(class_name: impl Into<String>, prompts: Vec<String>, provenance: Provenance) -> Result<Self> {
        let class_name = class_name.into();
        let before = prompts.len();
        let prompts = dedup(prompts);
        if prompts.is_empty() {
            return Err(Error::EmptyClassEntry(class_name));
        }
        if prompts.len() != before {
            log::warn!(
                "class {class_name:?}: dropped {} duplicate prompt(s)",
                before - prompts.len()
            );
        }
        Ok(Self {
            class_name,
            prompts,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

fn dedup(prompts: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    prompts.into_iter().filter(|p| seen.insert(p.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub pattern: String,
    /// Placeholder (without brackets) that receives the target class name.
    pub target_slot: String,
    /// Axis bound to each other placeholder, in order of first appearance.
    pub bindings: Vec<(String, AxisName)>,
}

impl PromptTemplate {
    /// Parses `<name>` placeholders in `pattern`. Every placeholder other than
    /// `target_slot` must refer to one of `axes` (`prof` and `race` are accepted
    /// as short names).
    pub fn new(pattern: impl Into<String>, target_slot: impl Into<String>, axes: &[AxisName]) -> Result<Self> {
        let pattern = pattern.into();
        let target_slot = target_slot.into();
        let mut bindings: Vec<(String, AxisName)> = Vec::new();
        for name in placeholders(&pattern) {
            if name == target_slot || bindings.iter().any(|(p, _)| *p == name) {
                continue;
            }
            let axis = axes
                .iter()
                .copied()
                .find(|a| a.matches_placeholder(&name))
                .ok_or_else(|| Error::UnknownPlaceholder(name.clone()))?;
            bindings.push((name, axis));
        }
        Ok(Self {
            pattern,
            target_slot,
            bindings,
        })
    }

    pub fn axes_used(&self) -> Vec<AxisName> {
        self.bindings.iter().map(|(_, a)| *a).collect()
    }

    fn render(&self, target_class: &str, values: &BTreeMap<&str, &str>) -> String {
        let mut out = String::with_capacity(self.pattern.len() + 16);
        let mut rest = self.pattern.as_str();
        while let Some(start) = rest.find('<') {
            out.push_str(&rest[..start]);
            let after = &rest[start + 1..];
            match after.find('>').map(|end| &after[..end]).filter(|n| is_placeholder_name(n)) {
                Some(name) => {
                    if name == self.target_slot {
                        out.push_str(target_class);
                    } else {
                        out.push_str(values[name]);
                    }
                    rest = &after[name.len() + 1..];
                }
                None => {
                    out.push('<');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Placeholder names in order of appearance (duplicates kept).
fn placeholders(pattern: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(start) = rest.find('<') {
        let after = &rest[start + 1..];
        match after.find('>').map(|end| &after[..end]).filter(|n| is_placeholder_name(n)) {
            Some(name) => {
                out.push(name.to_string());
                rest = &after[name.len() + 1..];
            }
            None => rest = after,
        }
    }
    out
}

/// Cartesian expansion of `template` over the values of its bound axes.
///
/// Axis values are lowercased; the class name is inserted verbatim. The first
/// bound axis varies slowest.
pub fn expand(template: &PromptTemplate, target_class: &str, axes: &[DemographicAxis]) -> Result<PromptSet> {
    let mut value_lists: Vec<(&str, Vec<String>)> = Vec::new();
    for (placeholder, name) in &template.bindings {
        let axis = axes
            .iter()
            .find(|a| a.name == *name)
            .ok_or_else(|| Error::UnknownAxis(name.to_string()))?;
        if axis.values.is_empty() {
            return Err(Error::EmptyAxis(name.to_string()));
        }
        let lowered = axis.values.iter().map(|v| v.to_lowercase()).collect();
        value_lists.push((placeholder.as_str(), lowered));
    }

    let total: usize = value_lists.iter().map(|(_, v)| v.len()).product();
    let mut prompts = Vec::with_capacity(total);
    let mut counters = vec![0usize; value_lists.len()];
    for _ in 0..total {
        let values: BTreeMap<&str, &str> = value_lists
            .iter()
            .zip(&counters)
            .map(|((p, vals), &i)| (*p, vals[i].as_str()))
            .collect();
        prompts.push(template.render(target_class, &values));
        // odometer increment, last axis fastest
        for pos in (0..counters.len()).rev() {
            counters[pos] += 1;
            if counters[pos] < value_lists[pos].1.len() {
                break;
            }
            counters[pos] = 0;
        }
    }
    PromptSet::new(target_class, prompts, Provenance::Template)
}

/// Template for classifying `classify` while enriching prompts with `enrich`.
///
/// `enrich == classify` gives the plain single-prompt template. Pairing the
/// two race granularities is rejected.
pub fn demographic_template(classify: AxisName, enrich: AxisName) -> Result<PromptTemplate> {
    use AxisName::*;
    let unknown = || Error::UnknownTemplate {
        classify: classify.to_string(),
        enrich: enrich.to_string(),
    };
    let (pattern, slot) = match classify {
        Profession => (
            match enrich {
                Profession => "A photo of a <prof>",
                Race7 | Race4 => "A photo of a <race> <prof>",
                Gender => "A photo of a <gender> <prof>",
                Age => "A photo of a <age> year old <prof>",
            },
            "prof",
        ),
        Race7 | Race4 => (
            match enrich {
                e if e == classify => "A photo of a <race> person",
                Race7 | Race4 => return Err(unknown()),
                Profession => "A photo of a <race> <prof>",
                Gender => "A photo of a <race> <gender>",
                Age => "A photo of a <age> year old <race> person",
            },
            "race",
        ),
        Gender => (
            match enrich {
                Gender => "A photo of a <gender>",
                Profession => "A photo of a <gender> <prof>",
                Race7 | Race4 => "A photo of a <race> <gender>",
                Age => "A photo of a <age> year old <gender>",
            },
            "gender",
        ),
        Age => (
            match enrich {
                Age => "A photo of a <age> year old",
                Profession => "A photo of a <age> year old <prof>",
                Race7 | Race4 => "A photo of a <age> year old <race> person",
                Gender => "A photo of a <age> year old <gender>",
            },
            "age",
        ),
    };
    let enrich_axes: &[AxisName] = if enrich == classify { &[] } else { &[enrich] };
    PromptTemplate::new(pattern, slot, enrich_axes)
}

/// Expands the demographic template for one target class using the registry axes.
pub fn demographic_prompts(classify: AxisName, enrich: AxisName, target_class: &str) -> Result<PromptSet> {
    let template = demographic_template(classify, enrich)?;
    expand(&template, target_class, &all_axes())
}

/// Single "A photo of a <class>" prompt.
pub fn photo_template(class_name: &str) -> PromptSet {
    PromptSet {
        class_name: class_name.to_string(),
        prompts: vec![format!("A photo of a {class_name}")],
        provenance: Provenance::Template,
    }
}

/// Lowercase alphanumeric key used to match dataset names ("Flowers 102" -> "flowers102").
pub fn dataset_key(name: &str) -> String {
    name.chars()
        .filter(char::is_ascii_alphanumeric)
        .collect::<String>()
        .to_ascii_lowercase()
}

#[derive(Debug, Deserialize)]
struct ClipEntry {
    dataset: String,
    templates: Vec<String>,
}

fn clip_registry() -> &'static [ClipEntry] {
    static ENTRIES: OnceLock<Vec<ClipEntry>> = OnceLock::new();
    ENTRIES.get_or_init(|| {
        serde_json::from_str(include_str!("../data/clip_templates.json"))
            .expect("bundled clip_templates.json is valid")
    })
}

/// Registered `{}` templates for a benchmark dataset.
pub fn clip_templates(dataset_name: &str) -> Result<&'static [String]> {
    let key = dataset_key(dataset_name);
    clip_registry()
        .iter()
        .find(|e| dataset_key(&e.dataset) == key)
        .map(|e| e.templates.as_slice())
        .ok_or_else(|| Error::UnknownDataset(dataset_name.to_string()))
}

/// One prompt set per class, filling each registered template with the class name.
pub fn clip_template_set(dataset_name: &str, classes: &[String]) -> Result<Vec<PromptSet>> {
    let templates = clip_templates(dataset_name)?;
    classes
        .iter()
        .map(|c| {
            let prompts = templates.iter().map(|t| t.replace("{}", c)).collect();
            PromptSet::new(c.clone(), prompts, Provenance::ClipTemplate)
        })
        .collect()
}

/// Reads a `{"class": ["prompt", ...]}` JSON file.
pub fn load_cupl(path: &Path) -> Result<BTreeMap<String, PromptSet>> {
    let malformed = |reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let obj = raw
        .as_object()
        .ok_or_else(|| malformed("top level must be an object".into()))?;
    let mut out = BTreeMap::new();
    for (class, list) in obj {
        let items = list
            .as_array()
            .ok_or_else(|| malformed(format!("entry for {class:?} is not a list")))?;
        let prompts = items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(|s| s.trim().to_string())
                    .ok_or_else(|| malformed(format!("non-string prompt for {class:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(class.clone(), PromptSet::new(class.clone(), prompts, Provenance::CuplFile)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_cardinalities() {
        for name in AxisName::ALL {
            let a = axis(name);
            assert_eq!(a.values.len(), name.cardinality(), "{name}");
            a.validate().unwrap();
        }
        assert_eq!(axis(AxisName::Race4).values, vec!["White", "Black", "Indian", "Asian"]);
    }

    #[test]
    fn race7_profession_expansion() {
        let t = PromptTemplate::new("A photo of a <race7> <prof>", "prof", &[AxisName::Race7]).unwrap();
        let set = expand(&t, "doctor", &all_axes()).unwrap();
        assert_eq!(set.len(), 7);
        assert_eq!(set.prompts[0], "A photo of a white doctor");
        assert!(set.prompts.contains(&"A photo of a middle eastern doctor".to_string()));
    }

    #[test]
    fn class_only_template_gives_one_prompt() {
        let t = PromptTemplate::new("A photo of a <prof>", "prof", &[]).unwrap();
        let set = expand(&t, "doctor", &[]).unwrap();
        assert_eq!(set.prompts, vec!["A photo of a doctor"]);
    }

    #[test]
    fn age_expansion() {
        let set = demographic_prompts(AxisName::Profession, AxisName::Age, "doctor").unwrap();
        assert_eq!(set.len(), 9);
        assert_eq!(set.prompts[4], "A photo of a 30-39 year old doctor");
        assert_eq!(set.prompts[8], "A photo of a 70+ year old doctor");
    }

    #[test]
    fn unknown_placeholder_and_empty_axis() {
        assert!(matches!(
            PromptTemplate::new("A photo of a <hat> <prof>", "prof", &[AxisName::Age]),
            Err(Error::UnknownPlaceholder(p)) if p == "hat"
        ));
        let t = PromptTemplate::new("A photo of a <gender> <prof>", "prof", &[AxisName::Gender]).unwrap();
        let empty = DemographicAxis {
            name: AxisName::Gender,
            values: vec![],
        };
        assert!(matches!(expand(&t, "doctor", &[empty]), Err(Error::EmptyAxis(_))));
        assert!(matches!(expand(&t, "doctor", &[]), Err(Error::UnknownAxis(_))));
    }

    #[test]
    fn two_axis_expansion_is_odometer_ordered() {
        let t = PromptTemplate::new(
            "A photo of a <age> year old <race4> <gender> <prof>",
            "prof",
            &[AxisName::Age, AxisName::Race4, AxisName::Gender],
        )
        .unwrap();
        let set = expand(&t, "chef", &all_axes()).unwrap();
        assert_eq!(set.len(), 9 * 4 * 2);
        assert_eq!(set.prompts[0], "A photo of a 0-2 year old white male chef");
        assert_eq!(set.prompts[1], "A photo of a 0-2 year old white female chef");
        assert_eq!(set.prompts[2], "A photo of a 0-2 year old black male chef");
    }

    #[test]
    fn literal_angle_brackets_survive() {
        let t = PromptTemplate::new("a < b <prof>", "prof", &[]).unwrap();
        assert_eq!(expand(&t, "x", &[]).unwrap().prompts, vec!["a < b x"]);
    }

    #[test]
    fn demographic_templates_match_rendered_examples() {
        use AxisName::*;
        let first = |c, e, class: &str| demographic_prompts(c, e, class).unwrap().prompts;
        assert_eq!(first(Profession, Profession, "doctor"), vec!["A photo of a doctor"]);
        assert_eq!(first(Profession, Race4, "doctor")[0], "A photo of a white doctor");
        assert_eq!(first(Profession, Gender, "doctor")[0], "A photo of a male doctor");
        assert_eq!(first(Race7, Race7, "black"), vec!["A photo of a black person"]);
        assert!(first(Race7, Profession, "black").contains(&"A photo of a black doctor".into()));
        assert!(first(Race7, Gender, "black").contains(&"A photo of a black male".into()));
        assert!(first(Race7, Age, "black").contains(&"A photo of a 30-39 year old black person".into()));
        assert_eq!(first(Gender, Gender, "female"), vec!["A photo of a female"]);
        assert!(first(Gender, Profession, "female").contains(&"A photo of a female doctor".into()));
        assert!(first(Gender, Race7, "female").contains(&"A photo of a black female".into()));
        assert!(first(Gender, Age, "female").contains(&"A photo of a 30-39 year old female".into()));
        assert_eq!(first(Age, Age, "30-39"), vec!["A photo of a 30-39 year old"]);
        assert!(first(Age, Profession, "30-39").contains(&"A photo of a 30-39 year old doctor".into()));
        assert!(first(Age, Race4, "30-39").contains(&"A photo of a 30-39 year old black person".into()));
        assert!(first(Age, Gender, "30-39").contains(&"A photo of a 30-39 year old female".into()));
        assert!(matches!(
            demographic_template(Race7, Race4),
            Err(Error::UnknownTemplate { .. })
        ));
    }

    #[test]
    fn clip_templates_per_dataset() {
        let classes = vec!["pink primrose".to_string(), "globe thistle".to_string()];
        let sets = clip_template_set("Flowers 102", &classes).unwrap();
        assert_eq!(sets[0].prompts, vec!["a photo of a pink primrose, a type of flower."]);
        assert_eq!(clip_templates("DTD").unwrap().len(), 8);
        assert_eq!(clip_templates("fgvc_aircraft").unwrap().len(), 2);
        assert_eq!(clip_templates("RESISC45").unwrap().len(), 18);
        assert!(matches!(clip_templates("imagenet"), Err(Error::UnknownDataset(_))));
    }

    #[test]
    fn axis_name_parsing() {
        assert_eq!("race 7".parse::<AxisName>().unwrap(), AxisName::Race7);
        assert_eq!("prof".parse::<AxisName>().unwrap(), AxisName::Profession);
        assert!("height".parse::<AxisName>().is_err());
    }
}
