//! The human-property taxonomy: canary templates, categories, output-format
//! constraints and hypernym blacklists.
//!
//! Catalog documents are JSON objects keyed by property id. Templates may use
//! either `HUMAN_SUBJECT`/`PROTECTED_ATTRIBUTE` or `{subject}`/`{cv}` as
//! placeholders; both are normalized to the former on load.

use std::collections::HashMap;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::Error;

pub const SUBJECT_PLACEHOLDER: &str = "HUMAN_SUBJECT";
pub const VALUE_PLACEHOLDER: &str = "PROTECTED_ATTRIBUTE";
const ALT_SUBJECT_PLACEHOLDER: &str = "{subject}";
const ALT_VALUE_PLACEHOLDER: &str = "{cv}";

pub const MAX_CANARIES: usize = 5;

static SHIPPED_CATALOG: &str = include_str!("../data/catalog.json");

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("malformed catalog document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("duplicate property id {0}")]
    DuplicateId(String),
    #[error("property {id}: invalid {field}: {reason}")]
    Invalid {
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("subject must not be empty")]
    EmptySubject,
}

/// The eight top-level feature categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "Demographics")]
    Demographics,
    #[serde(rename = "Names and Titles")]
    NamesAndTitles,
    #[serde(rename = "Origins and Geography")]
    OriginsAndGeography,
    #[serde(rename = "Physical")]
    Physical,
    #[serde(rename = "Professional Life")]
    ProfessionalLife,
    #[serde(rename = "Family and Relationships")]
    FamilyAndRelationships,
    #[serde(rename = "Interests and Events")]
    InterestsAndEvents,
    #[serde(rename = "High Sensitivity")]
    HighSensitivity,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Demographics,
        Category::NamesAndTitles,
        Category::OriginsAndGeography,
        Category::Physical,
        Category::ProfessionalLife,
        Category::FamilyAndRelationships,
        Category::InterestsAndEvents,
        Category::HighSensitivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Demographics => "Demographics",
            Category::NamesAndTitles => "Names and Titles",
            Category::OriginsAndGeography => "Origins and Geography",
            Category::Physical => "Physical",
            Category::ProfessionalLife => "Professional Life",
            Category::FamilyAndRelationships => "Family and Relationships",
            Category::InterestsAndEvents => "Interests and Events",
            Category::HighSensitivity => "High Sensitivity",
        }
    }

    pub fn from_name(name: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A canary sentence with exactly one subject slot and one value slot,
/// stored in canonical placeholder spelling.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanaryTemplate {
    pub index: usize,
    text: String,
}

impl CanaryTemplate {
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes the subject and value fragment into the template.
    pub fn instantiate(&self, subject: &str, value_fragment: &str) -> Result<String, CatalogError> {
        if subject.trim().is_empty() {
            return Err(CatalogError::EmptySubject);
        }
        Ok(self
            .text
            .replacen(SUBJECT_PLACEHOLDER, subject, 1)
            .replacen(VALUE_PLACEHOLDER, value_fragment, 1))
    }

    /// Words of the template itself (placeholders excluded), lowercased.
    /// Completions equal to one of these are template echoes.
    pub fn words(&self) -> Vec<String> {
        let stripped = self
            .text
            .replace(SUBJECT_PLACEHOLDER, " ")
            .replace(VALUE_PLACEHOLDER, " ");
        crate::text::word_tokens(&stripped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertySpec {
    pub id: String,
    pub label: String,
    pub category: Category,
    pub description: String,
    pub canaries: Vec<CanaryTemplate>,
    pub format_constraint: Option<String>,
    pub hypernyms: Vec<String>,
}

/// Output-format instruction for structured properties, if any.
pub fn format_instruction(spec: &PropertySpec) -> Option<&str> {
    spec.format_constraint.as_deref()
}

#[derive(Debug, Deserialize, Serialize)]
struct RawEntry {
    label: String,
    #[serde(default)]
    description: String,
    category: String,
    canaries: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format_constraint: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    hypernyms: Vec<String>,
}

/// Ordered list of (id, entry) pairs; keeps duplicates so they can be reported.
struct RawDocument(Vec<(String, RawEntry)>);

impl<'de> Deserialize<'de> for RawDocument {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct DocVisitor;
        impl<'de> Visitor<'de> for DocVisitor {
            type Value = RawDocument;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object keyed by property id")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawDocument, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, RawEntry>()? {
                    entries.push((k, v));
                }
                Ok(RawDocument(entries))
            }
        }
        deserializer.deserialize_map(DocVisitor)
    }
}

fn normalize_template(id: &str, raw: &str) -> Result<String, CatalogError> {
    let text = raw
        .replace(ALT_SUBJECT_PLACEHOLDER, SUBJECT_PLACEHOLDER)
        .replace(ALT_VALUE_PLACEHOLDER, VALUE_PLACEHOLDER);
    let subjects = text.matches(SUBJECT_PLACEHOLDER).count();
    let values = text.matches(VALUE_PLACEHOLDER).count();
    if subjects != 1 || values != 1 {
        return Err(CatalogError::Invalid {
            id: id.to_string(),
            field: "canaries",
            reason: format!(
                "template {raw:?} has {subjects} subject and {values} value placeholders (need exactly one each)"
            ),
        });
    }
    Ok(text)
}

fn validate_entry(id: &str, raw: RawEntry) -> Result<PropertySpec, CatalogError> {
    let invalid = |field, reason: String| CatalogError::Invalid {
        id: id.to_string(),
        field,
        reason,
    };
    if id.trim().is_empty() {
        return Err(invalid("id", "empty property id".into()));
    }
    if raw.label.trim().is_empty() {
        return Err(invalid("label", "empty label".into()));
    }
    let category = Category::from_name(&raw.category)
        .ok_or_else(|| invalid("category", format!("unknown category {:?}", raw.category)))?;
    if raw.canaries.is_empty() {
        return Err(invalid("canaries", "empty canary list".into()));
    }
    if raw.canaries.len() > MAX_CANARIES {
        return Err(invalid(
            "canaries",
            format!(
                "{} templates, at most {MAX_CANARIES} allowed",
                raw.canaries.len()
            ),
        ));
    }
    let canaries = raw
        .canaries
        .iter()
        .enumerate()
        .map(|(index, t)| normalize_template(id, t).map(|text| CanaryTemplate { index, text }))
        .collect::<Result<Vec<_>, _>>()?;
    for h in &raw.hypernyms {
        if h.is_empty() || h.chars().any(char::is_whitespace) {
            return Err(invalid("hypernyms", format!("{h:?} is not a single word")));
        }
    }
    Ok(PropertySpec {
        id: id.to_string(),
        label: raw.label,
        category,
        description: raw.description,
        canaries,
        format_constraint: raw.format_constraint,
        hypernyms: raw.hypernyms,
    })
}

/// Parses and validates a catalog document.
pub fn load_catalog(source: &str) -> Result<Vec<PropertySpec>, CatalogError> {
    let RawDocument(entries) = serde_json::from_str(source)?;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(entries.len());
    for (id, raw) in entries {
        if seen.insert(id.clone(), ()).is_some() {
            return Err(CatalogError::DuplicateId(id));
        }
        out.push(validate_entry(&id, raw)?);
    }
    Ok(out)
}

/// An immutable, indexed property catalog.
#[derive(Debug, Clone)]
pub struct Catalog {
    properties: Vec<PropertySpec>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_json(source: &str) -> Result<Self, CatalogError> {
        Ok(Self::from_properties(load_catalog(source)?))
    }

    pub fn from_properties(properties: Vec<PropertySpec>) -> Self {
        let index = properties
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), i))
            .collect();
        Self { properties, index }
    }

    /// The 50-property catalog bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn load_path(path: &std::path::Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text)?)
    }

    pub fn get(&self, id: &str) -> Option<&PropertySpec> {
        self.index.get(id).map(|&i| &self.properties[i])
    }

    pub fn properties(&self) -> &[PropertySpec] {
        &self.properties
    }

    pub fn len(&self) -> usize {
        self.properties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.properties.is_empty()
    }

    pub fn in_category(&self, category: Category) -> impl Iterator<Item = &PropertySpec> {
        self.properties
            .iter()
            .filter(move |p| p.category == category)
    }

    /// Serializes back into the document format, canonical placeholders.
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for p in &self.properties {
            let raw = RawEntry {
                label: p.label.clone(),
                description: p.description.clone(),
                category: p.category.name().to_string(),
                canaries: p.canaries.iter().map(|c| c.text.clone()).collect(),
                format_constraint: p.format_constraint.clone(),
                hypernyms: p.hypernyms.clone(),
            };
            map.insert(
                p.id.clone(),
                serde_json::to_value(raw).expect("entry serializes"),
            );
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("catalog serializes")
    }
}
