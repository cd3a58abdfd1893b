//! Classification dimensions, label vocabularies and versioned prompt templates.
//!
//! The built-in option-pricing taxonomy lives in `taxonomy/option_pricing.toml`
//! and is compiled into the crate, so prompt text is reviewable as data.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PaperRecord;
use crate::LabelSet;

const BUILTIN_TOML: &str = include_str!("../taxonomy/option_pricing.toml");

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("dimension `{0}` is text-mapped and has no prompt template")]
    TextMapped(String),
    #[error("paper `{0}` has an empty abstract")]
    EmptyAbstract(String),
    #[error("unknown subclass index `{0}`")]
    UnknownSubclass(String),
    #[error("invalid taxonomy: {0}")]
    Invalid(String),
    #[error("cannot parse taxonomy file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    Binary,
    LabeledMulti,
    SubclassIndexed,
    TextMapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDef {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subclass_index: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_class: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Substring triggers for text-mapped dimensions, matched lowercase.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
    /// Alternative spellings accepted from model responses.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    /// Marks the "not specified" label assigned when nothing else applies.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sentinel: bool,
}

impl LabelDef {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            subclass_index: None,
            parent_class: None,
            description: None,
            keywords: Vec::new(),
            aliases: Vec::new(),
            sentinel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub index: u8,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: u32,
    pub preamble: String,
    pub constraints: Vec<String>,
    pub output_format_instruction: String,
    pub abstract_placeholder: String,
}

impl PromptTemplate {
    /// Renders the prompt with `abstract_text` substituted at the placeholder.
    ///
    /// Layout: preamble, one `- ` line per constraint in order, a blank line,
    /// then the output-format instruction.
    pub fn render(&self, abstract_text: &str) -> String {
        let mut body = String::with_capacity(
            self.preamble.len() + self.output_format_instruction.len() + abstract_text.len() + 64 * self.constraints.len(),
        );
        body.push_str(&self.preamble);
        body.push('\n');
        for line in &self.constraints {
            body.push_str("- ");
            body.push_str(line);
            body.push('\n');
        }
        body.push('\n');
        let head_len = body.len();
        body.push_str(&self.output_format_instruction);
        // Substitute once, after the fixed text, so an abstract can never inject
        // a second placeholder.
        match body[head_len..].find(&self.abstract_placeholder) {
            Some(pos) => {
                let at = head_len + pos;
                body.replace_range(at..at + self.abstract_placeholder.len(), abstract_text);
            }
            None => {
                body.push_str("\n\n");
                body.push_str(abstract_text);
            }
        }
        body
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyDimension {
    pub dimension_id: String,
    pub name: String,
    pub answer_mode: AnswerMode,
    pub labels: Vec<LabelDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<ClassDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<PromptTemplate>,
}

impl TaxonomyDimension {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        let invalid = |msg: String| Err(TaxonomyError::Invalid(format!("{}: {msg}", self.dimension_id)));
        let mut seen = BTreeSet::new();
        for l in &self.labels {
            if !seen.insert(l.label.to_lowercase()) {
                return invalid(format!("duplicate label `{}`", l.label));
            }
        }
        let sentinels = self.labels.iter().filter(|l| l.sentinel).count();
        if sentinels > 1 {
            return invalid("more than one sentinel label".into());
        }
        match self.answer_mode {
            AnswerMode::Binary => {
                if self.labels.len() != 2 || sentinels != 0 {
                    return invalid("binary dimensions carry exactly two labels (positive first)".into());
                }
            }
            AnswerMode::LabeledMulti | AnswerMode::TextMapped if sentinels != 1 => {
                return invalid("a sentinel label is required".into());
            }
            AnswerMode::SubclassIndexed => {
                if sentinels != 1 {
                    return invalid("a sentinel label is required".into());
                }
                for l in &self.labels {
                    let (Some(idx), Some(parent)) = (&l.subclass_index, l.parent_class) else {
                        return invalid(format!("label `{}` lacks subclass_index/parent_class", l.label));
                    };
                    if class_prefix(idx) != Some(parent) {
                        return invalid(format!("subclass `{idx}` does not roll up to class {parent}"));
                    }
                    if l.label != *idx {
                        return invalid(format!("subclass label `{}` must equal its index", l.label));
                    }
                }
            }
            _ => {}
        }
        match (self.answer_mode, &self.prompt_template) {
            (AnswerMode::TextMapped, Some(_)) => invalid("text-mapped dimensions carry no prompt".into()),
            (AnswerMode::TextMapped, None) => Ok(()),
            (_, None) => invalid("prompt template missing".into()),
            (_, Some(t)) if t.abstract_placeholder.is_empty() => invalid("empty abstract placeholder".into()),
            _ => Ok(()),
        }
    }

    pub fn label_names(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.label.as_str())
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l.label == label)
    }

    pub fn sentinel(&self) -> Option<&LabelDef> {
        self.labels.iter().find(|l| l.sentinel)
    }

    pub fn sentinel_set(&self) -> LabelSet {
        self.sentinel().map(|l| l.label.clone()).into_iter().collect()
    }

    /// Positive label of a binary dimension (the first one, e.g. `Yes`).
    pub fn positive_label(&self) -> &str {
        &self.labels[0].label
    }

    /// Negative label of a binary dimension (the second one, e.g. `No`).
    pub fn negative_label(&self) -> &str {
        &self.labels[1].label
    }

    /// Case-insensitive lookup by label name or alias.
    pub fn resolve_label(&self, name: &str) -> Option<&LabelDef> {
        let name = name.trim();
        self.labels.iter().find(|l| {
            l.label.eq_ignore_ascii_case(name) || l.aliases.iter().any(|a| a.eq_ignore_ascii_case(name))
        })
    }

    /// Top-level class of a subclass index, e.g. `"6.2" -> 6`.
    pub fn rollup(&self, subclass_index: &str) -> Result<u8, TaxonomyError> {
        self.labels
            .iter()
            .find(|l| l.subclass_index.as_deref() == Some(subclass_index))
            .and_then(|l| l.parent_class)
            .ok_or_else(|| TaxonomyError::UnknownSubclass(subclass_index.to_string()))
    }

    /// Rolled-up class set of a subclass label set. Unknown labels are skipped.
    pub fn class_set(&self, labels: &LabelSet) -> BTreeSet<u8> {
        labels.iter().filter_map(|l| self.rollup(l).ok()).collect()
    }

    pub fn template(&self) -> Result<&PromptTemplate, TaxonomyError> {
        self.prompt_template
            .as_ref()
            .ok_or_else(|| TaxonomyError::TextMapped(self.dimension_id.clone()))
    }

    /// Whether `query` names a valid label, or a class when subclass-indexed.
    pub fn knows_label(&self, query: &str) -> bool {
        self.contains_label(query)
            || (self.answer_mode == AnswerMode::SubclassIndexed
                && query.parse::<u8>().is_ok_and(|c| self.labels.iter().any(|l| l.parent_class == Some(c))))
    }
}

fn class_prefix(subclass_index: &str) -> Option<u8> {
    let (class, sub) = subclass_index.split_once('.')?;
    sub.parse::<u8>().ok()?;
    class.parse().ok()
}

/// True when `labels` contains `query`, or when `query` is a bare class number
/// and some label is a subclass of it (`"6"` matches `"6.2"`).
pub fn label_matches(labels: &LabelSet, query: &str) -> bool {
    if labels.contains(query) {
        return true;
    }
    match query.parse::<u8>() {
        Ok(class) => labels.iter().any(|l| class_prefix(l) == Some(class)),
        Err(_) => false,
    }
}

/// Renders the classification prompt for one paper.
pub fn render_prompt(dimension: &TaxonomyDimension, paper: &PaperRecord) -> Result<String, TaxonomyError> {
    let template = dimension.template()?;
    if paper.abstract_text.trim().is_empty() {
        return Err(TaxonomyError::EmptyAbstract(paper.paper_id.to_string()));
    }
    Ok(template.render(&paper.abstract_text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEdit {
    pub version: u32,
    pub editor: String,
    pub edited_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEntry {
    pub dimension: TaxonomyDimension,
    /// Every template version, oldest first; the last one is active.
    pub history: Vec<PromptTemplate>,
    pub edits: Vec<ConstraintEdit>,
}

#[derive(Deserialize)]
struct TaxonomyFile {
    dimensions: Vec<TaxonomyDimension>,
}

#[derive(Serialize)]
struct TaxonomyFileRef<'a> {
    dimensions: Vec<&'a TaxonomyDimension>,
}

/// Parses a taxonomy file (`[[dimensions]]` tables).
pub fn parse_taxonomy_toml(text: &str) -> Result<Vec<TaxonomyDimension>, TaxonomyError> {
    let file: TaxonomyFile = toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
    for d in &file.dimensions {
        d.validate()?;
    }
    Ok(file.dimensions)
}

/// The four option-pricing dimensions: pricing-model gate, underlying assets,
/// option types and model types.
pub fn builtin_option_pricing_taxonomy() -> Vec<TaxonomyDimension> {
    parse_taxonomy_toml(BUILTIN_TOML).expect("built-in taxonomy is valid")
}

/// Dimensions with their prompt-version history. Edits append, never rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyRegistry {
    entries: Vec<DimensionEntry>,
}

impl TaxonomyRegistry {
    pub fn new(dimensions: Vec<TaxonomyDimension>) -> Result<Self, TaxonomyError> {
        let mut ids = BTreeSet::new();
        let mut entries = Vec::with_capacity(dimensions.len());
        for d in dimensions {
            d.validate()?;
            if !ids.insert(d.dimension_id.clone()) {
                return Err(TaxonomyError::Invalid(format!("duplicate dimension `{}`", d.dimension_id)));
            }
            entries.push(DimensionEntry {
                history: d.prompt_template.iter().cloned().collect(),
                dimension: d,
                edits: Vec::new(),
            });
        }
        for e in &entries {
            if let Some(dep) = &e.dimension.depends_on {
                if !ids.contains(dep) {
                    return Err(TaxonomyError::Invalid(format!(
                        "{} depends on unknown dimension `{dep}`",
                        e.dimension.dimension_id
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn builtin() -> Self {
        Self::new(builtin_option_pricing_taxonomy()).expect("built-in taxonomy is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, TaxonomyError> {
        Self::new(parse_taxonomy_toml(text)?)
    }

    /// Serializes the active dimensions back to the taxonomy file format.
    pub fn to_toml(&self) -> String {
        let file = TaxonomyFileRef {
            dimensions: self.entries.iter().map(|e| &e.dimension).collect(),
        };
        toml::to_string_pretty(&file).expect("taxonomy serializes")
    }

    pub fn dimensions(&self) -> impl Iterator<Item = &TaxonomyDimension> {
        self.entries.iter().map(|e| &e.dimension)
    }

    pub fn get(&self, dimension_id: &str) -> Result<&TaxonomyDimension, TaxonomyError> {
        self.entry(dimension_id).map(|e| &e.dimension)
    }

    pub fn entry(&self, dimension_id: &str) -> Result<&DimensionEntry, TaxonomyError> {
        self.entries
            .iter()
            .find(|e| e.dimension.dimension_id == dimension_id)
            .ok_or_else(|| TaxonomyError::UnknownDimension(dimension_id.to_string()))
    }

    /// A specific template version of a dimension, if it was ever active.
    pub fn template_version(&self, dimension_id: &str, version: u32) -> Result<Option<&PromptTemplate>, TaxonomyError> {
        Ok(self.entry(dimension_id)?.history.iter().find(|t| t.version == version))
    }

    /// Replaces the constraint lines, creating a new template version even when
    /// the list is unchanged.
    pub fn edit_constraints(
        &mut self,
        dimension_id: &str,
        new_constraints: Vec<String>,
        editor: &str,
        at: DateTime<Utc>,
    ) -> Result<&PromptTemplate, TaxonomyError> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.dimension.dimension_id == dimension_id)
            .ok_or_else(|| TaxonomyError::UnknownDimension(dimension_id.to_string()))?;
        let current = entry
            .dimension
            .prompt_template
            .as_ref()
            .ok_or_else(|| TaxonomyError::TextMapped(dimension_id.to_string()))?;
        let next_version = entry.history.iter().map(|t| t.version).max().unwrap_or(current.version) + 1;
        let next = PromptTemplate {
            version: next_version,
            constraints: new_constraints,
            ..current.clone()
        };
        entry.history.push(next.clone());
        entry.edits.push(ConstraintEdit {
            version: next_version,
            editor: editor.to_string(),
            edited_at: at,
        });
        entry.dimension.prompt_template = Some(next);
        Ok(entry.dimension.prompt_template.as_ref().expect("just set"))
    }

    /// Replaces a dimension definition wholesale (labels, mode, template text).
    /// A changed template is appended to the history under a fresh version.
    pub fn replace_dimension(&mut self, mut dimension: TaxonomyDimension) -> Result<(), TaxonomyError> {
        dimension.validate()?;
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.dimension.dimension_id == dimension.dimension_id)
            .ok_or_else(|| TaxonomyError::UnknownDimension(dimension.dimension_id.clone()))?;
        if let Some(t) = dimension.prompt_template.as_mut() {
            let latest = entry.history.last();
            let same_text = latest.is_some_and(|l| PromptTemplate { version: l.version, ..t.clone() } == *l);
            if same_text {
                t.version = latest.expect("checked").version;
            } else {
                t.version = entry.history.iter().map(|h| h.version).max().unwrap_or(0) + 1;
                entry.history.push(t.clone());
            }
        }
        entry.dimension = dimension;
        Ok(())
    }

    /// Active template version per dimension (text-mapped dimensions report 0).
    pub fn active_versions(&self) -> BTreeMap<String, u32> {
        self.entries
            .iter()
            .map(|e| {
                let v = e.dimension.prompt_template.as_ref().map_or(0, |t| t.version);
                (e.dimension.dimension_id.clone(), v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocType;
    use crate::{Clock, FixedClock, PaperId};

    fn paper(abstract_text: &str) -> PaperRecord {
        PaperRecord {
            paper_id: PaperId::new("p1"),
            external_id: None,
            doi: None,
            title: "A paper".into(),
            authors: vec![],
            year: 2000,
            source_title: String::new(),
            doc_type: DocType::Article,
            abstract_text: abstract_text.into(),
            reference_strings: vec![],
            ingested_at: FixedClock::ymd(2025, 1, 1).now(),
        }
    }

    #[test]
    fn builtin_shape() {
        let dims = builtin_option_pricing_taxonomy();
        assert_eq!(dims.len(), 4);
        let gate = &dims[0];
        assert_eq!(gate.answer_mode, AnswerMode::Binary);
        assert_eq!(gate.label_names().collect::<Vec<_>>(), vec!["Yes", "No"]);
        assert_eq!(gate.template().unwrap().constraints.len(), 23);

        let underlying = &dims[1];
        assert_eq!(underlying.labels.len(), 7);
        assert_eq!(underlying.sentinel().unwrap().label, "Not Specified");
        assert_eq!(underlying.resolve_label("indexes").unwrap().label, "Indices");

        assert_eq!(dims[2].answer_mode, AnswerMode::TextMapped);
        assert!(dims[2].prompt_template.is_none());

        let model = &dims[3];
        assert_eq!(model.labels.len(), 34);
        for d in &dims[1..] {
            assert_eq!(d.depends_on.as_deref(), Some("pricing_model"));
        }
    }

    #[test]
    fn rollup_examples() {
        let model = &builtin_option_pricing_taxonomy()[3];
        assert_eq!(model.rollup("6.2"), Ok(6));
        assert_eq!(model.rollup("1.3"), Ok(1));
        assert_eq!(model.rollup("8.3"), Ok(8));
        assert_eq!(model.rollup("9.1"), Err(TaxonomyError::UnknownSubclass("9.1".into())));
        let classes: BTreeSet<u8> = model.labels.iter().map(|l| model.rollup(&l.label).unwrap()).collect();
        assert_eq!(classes, (1..=8).collect());
    }

    #[test]
    fn render_contains_constraints_in_order() {
        let dims = builtin_option_pricing_taxonomy();
        let text = render_prompt(&dims[0], &paper("We price options.")).unwrap();
        assert!(text.contains("You should answer No if the abstract contains the phrase 'The proceedings contain'"));
        let mut cursor = 0;
        for line in &dims[0].template().unwrap().constraints {
            let pos = text[cursor..].find(line.as_str()).expect("constraint present");
            cursor += pos + line.len();
        }
        assert!(text.ends_with("We price options."));

        let text = render_prompt(&dims[1], &paper("x")).unwrap();
        assert!(text.contains("Does this abstract specify Stocks as underlying assets?"));
    }

    #[test]
    fn render_errors() {
        let dims = builtin_option_pricing_taxonomy();
        assert_eq!(
            render_prompt(&dims[2], &paper("x")),
            Err(TaxonomyError::TextMapped("option_type".into()))
        );
        assert_eq!(render_prompt(&dims[0], &paper("  ")), Err(TaxonomyError::EmptyAbstract("p1".into())));
    }

    #[test]
    fn placeholder_in_abstract_is_not_expanded_twice() {
        let dims = builtin_option_pricing_taxonomy();
        let text = render_prompt(&dims[0], &paper("see {{abstract}} here")).unwrap();
        assert!(text.ends_with("see {{abstract}} here"));
    }

    #[test]
    fn edit_constraints_appends_version() {
        let mut reg = TaxonomyRegistry::builtin();
        let at = FixedClock::ymd(2025, 5, 1).now();
        let mut lines = reg.get("pricing_model").unwrap().template().unwrap().constraints.clone();
        lines.push("You should answer No if the abstract is an erratum.".into());
        let t = reg.edit_constraints("pricing_model", lines.clone(), "alice", at).unwrap();
        assert_eq!(t.version, 2);
        assert_eq!(t.constraints.len(), 24);

        let t = reg.edit_constraints("pricing_model", lines, "alice", at).unwrap();
        assert_eq!(t.version, 3);
        assert_eq!(reg.template_version("pricing_model", 1).unwrap().unwrap().constraints.len(), 23);
        assert_eq!(reg.entry("pricing_model").unwrap().edits.len(), 2);

        assert_eq!(
            reg.edit_constraints("dim9", vec![], "bob", at).unwrap_err(),
            TaxonomyError::UnknownDimension("dim9".into())
        );
        assert_eq!(
            reg.edit_constraints("option_type", vec![], "bob", at).unwrap_err(),
            TaxonomyError::TextMapped("option_type".into())
        );
    }

    #[test]
    fn toml_round_trip() {
        let reg = TaxonomyRegistry::builtin();
        let again = TaxonomyRegistry::from_toml(&reg.to_toml()).unwrap();
        assert_eq!(
            reg.dimensions().collect::<Vec<_>>(),
            again.dimensions().collect::<Vec<_>>()
        );
    }

    #[test]
    fn label_matching_by_class() {
        let set: LabelSet = ["6.2".to_string(), "1.1".to_string()].into();
        assert!(label_matches(&set, "6"));
        assert!(label_matches(&set, "6.2"));
        assert!(!label_matches(&set, "2"));
        assert!(!label_matches(&set, "6.1"));
    }
}
