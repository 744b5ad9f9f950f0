//! Attribute and rule authoring through a text-generation backend.
//!
//! Attributes are produced once per CPT and kept in an [`AttributeStore`];
//! rules are produced per subsection from the CPTs grouped under it. Every
//! completion is parsed and checked, and malformed output is re-prompted
//! with its diagnostics a bounded number of times.

mod client;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::Subsection;
use crate::retrieval::RetrievalRow;
use crate::rulelang::{self, parse_rules, serialize_rules, Rule, RuleBase, VocabularyWarning};

pub use client::{
    prompt_hash, ClientError, FixtureClient, GenerationClient, RemoteLlmClient, RemoteLlmConfig,
};
pub use store::{AttributeRecord, AttributeStore, Clock};

/// Re-prompts after the first attempt.
pub const MAX_RETRIES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthoringError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("attribute store {path}: {message}")]
    Store { path: String, message: String },
    #[error("template {path}: {message}")]
    Template { path: String, message: String },
    #[error("no attributes supplied for rule generation on `{0}`")]
    NoAttributes(String),
}

/// Prompt templates with `{cpt}`, `{description}`, `{subsections}` and
/// `{attributes}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub attributes: String,
    pub rules: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            attributes: include_str!("../../templates/attributes.txt").to_string(),
            rules: include_str!("../../templates/rules.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Reads `attributes.txt` and `rules.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, AuthoringError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| AuthoringError::Template {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        Ok(PromptTemplates {
            attributes: read("attributes.txt")?,
            rules: read("rules.txt")?,
        })
    }
}

fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

fn render_subsections(subsections: &[&Subsection]) -> String {
    let mut out = String::new();
    for s in subsections {
        let _ = writeln!(out, "[{}] {} ({})", s.id, s.title, s.section_name);
        let _ = writeln!(out, "{}", s.text);
    }
    out
}

pub fn attribute_prompt(templates: &PromptTemplates, cpt: &str, description: &str, subsections: &[&Subsection]) -> String {
    render(
        &templates.attributes,
        &[
            ("cpt", cpt),
            ("description", description),
            ("subsections", render_subsections(subsections).trim_end()),
            ("attributes", ""),
        ],
    )
}

pub fn rule_prompt(
    templates: &PromptTemplates,
    subsection: &Subsection,
    cpt_attributes: &BTreeMap<String, Vec<AttributeRecord>>,
) -> String {
    let cpts: Vec<&str> = cpt_attributes.keys().map(String::as_str).collect();
    let mut attrs = String::new();
    for (cpt, recs) in cpt_attributes {
        let _ = write!(attrs, "{cpt}:");
        for r in recs {
            let _ = write!(attrs, " {}={}", r.attribute, r.default_value);
        }
        attrs.push('\n');
    }
    render(
        &templates.rules,
        &[
            ("cpt", &cpts.join(", ")),
            ("description", ""),
            ("subsections", render_subsections(&[subsection]).trim_end()),
            ("attributes", attrs.trim_end()),
        ],
    )
}

fn retry_prompt(base: &str, attempt: usize, diagnostics: &[String]) -> String {
    let mut out = base.to_string();
    let _ = write!(
        out,
        "\n\nAttempt {} of {}. Your previous answer could not be used:\n",
        attempt,
        MAX_RETRIES + 1
    );
    for d in diagnostics {
        let _ = writeln!(out, "- {d}");
    }
    out.push_str("Correct these problems and answer again in the required format only.\n");
    out
}

/// Maps free-form model output to a valid attribute name: lowercase,
/// non-alphanumerics to `_`, repeats collapsed, outer underscores removed,
/// `is_` prepended when the result starts with a digit.
pub fn normalize_attribute_name(raw: &str) -> Option<String> {
    let mut out = String::new();
    for c in raw.trim().chars().flat_map(char::to_lowercase) {
        let c = if c.is_ascii_lowercase() || c.is_ascii_digit() { c } else { '_' };
        if c == '_' && out.ends_with('_') {
            continue;
        }
        out.push(c);
    }
    let out = out.trim_matches('_');
    if out.is_empty() {
        return None;
    }
    let name = if out.starts_with(|c: char| c.is_ascii_digit()) {
        format!("is_{out}")
    } else {
        out.to_string()
    };
    debug_assert!(rulelang::is_valid_name(&name));
    Some(name)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().trim_matches(|c| c == '.' || c == '"' || c == '\'').to_ascii_lowercase().as_str() {
        "true" | "yes" | "y" => Some(true),
        "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Parses `name: value` lines. Bullet markers are tolerated; anything else
/// that does not fit produces a diagnostic.
pub fn parse_attribute_completion(text: &str) -> Result<Vec<(String, bool)>, Vec<String>> {
    let mut out: Vec<(String, bool)> = Vec::new();
    let mut diags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        if line.is_empty() {
            continue;
        }
        let Some((name, value)) = line.rsplit_once(':') else {
            diags.push(format!("line {}: expected `name: true|false`, got `{line}`", i + 1));
            continue;
        };
        let (Some(name), Some(value)) = (normalize_attribute_name(name), parse_bool(value)) else {
            diags.push(format!("line {}: cannot read attribute from `{line}`", i + 1));
            continue;
        };
        match out.iter().find(|(n, _)| *n == name) {
            Some((_, v)) if *v != value => {
                diags.push(format!("line {}: attribute `{name}` given conflicting values", i + 1))
            }
            Some(_) => {}
            None => out.push((name, value)),
        }
    }
    if out.is_empty() && diags.is_empty() {
        diags.push("completion contains no attributes".into());
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(diags)
    }
}

/// Maps each retained subsection to the CPTs that retrieved it, in first-seen order.
pub fn group_cpts_by_subsection(rows: &[RetrievalRow]) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for row in rows.iter().filter(|r| !r.is_placeholder) {
        if let Some(id) = &row.subsection_id {
            let cpts = groups.entry(id.clone()).or_default();
            if !cpts.contains(&row.cpt) {
                cpts.push(row.cpt.clone());
            }
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub item_id: String,
    pub attempts: usize,
    /// One entry per attempt; empty for the accepted attempt.
    pub diagnostics: Vec<Vec<String>>,
    pub outcome: Outcome,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Attributes or rules produced by the accepted attempt.
    #[serde(default)]
    pub item_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttributeGeneration {
    /// The store already held this CPT.
    Skipped { cpt: String },
    Generated {
        records: Vec<AttributeRecord>,
        report: GenerationReport,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleFragment {
    pub subsection_id: String,
    pub rules: Vec<Rule>,
    pub vocabulary_warnings: Vec<VocabularyWarning>,
    pub report: GenerationReport,
}

/// Drives a [`GenerationClient`] with the prompt templates.
pub struct Author<'a> {
    pub client: &'a dyn GenerationClient,
    pub templates: &'a PromptTemplates,
    pub clock: Clock,
}

impl<'a> Author<'a> {
    pub fn new(client: &'a dyn GenerationClient, templates: &'a PromptTemplates, clock: Clock) -> Self {
        Author {
            client,
            templates,
            clock,
        }
    }

    /// Runs the prompt/parse loop: one attempt plus up to [`MAX_RETRIES`]
    /// re-prompts carrying the previous attempt's diagnostics.
    fn attempt_loop<T>(
        &self,
        item_id: &str,
        base_prompt: &str,
        parse: impl Fn(&str) -> Result<T, Vec<String>>,
    ) -> Result<(Option<T>, GenerationReport), AuthoringError> {
        let mut diagnostics: Vec<Vec<String>> = Vec::new();
        let mut prompt = base_prompt.to_string();
        for attempt in 1..=MAX_RETRIES + 1 {
            let completion = self.client.complete(&prompt)?;
            match parse(&completion) {
                Ok(value) => {
                    diagnostics.push(Vec::new());
                    let report = GenerationReport {
                        item_id: item_id.to_string(),
                        attempts: attempt,
                        diagnostics,
                        outcome: Outcome::Accepted,
                        warnings: Vec::new(),
                        item_count: 0,
                    };
                    return Ok((Some(value), report));
                }
                Err(diags) => {
                    prompt = retry_prompt(base_prompt, attempt + 1, &diags);
                    diagnostics.push(diags);
                }
            }
        }
        Ok((
            None,
            GenerationReport {
                item_id: item_id.to_string(),
                attempts: MAX_RETRIES + 1,
                diagnostics,
                outcome: Outcome::Rejected,
                warnings: Vec::new(),
                item_count: 0,
            },
        ))
    }

    /// Generates the attribute set for one CPT. Nothing is written here; see
    /// [`Author::ensure_attributes`] for the store-aware variant.
    pub fn generate_attributes(
        &self,
        cpt: &str,
        description: &str,
        grouped_subsections: &[&Subsection],
    ) -> Result<(Vec<AttributeRecord>, GenerationReport), AuthoringError> {
        let prompt = attribute_prompt(self.templates, cpt, description, grouped_subsections);
        let (parsed, mut report) = self.attempt_loop(cpt, &prompt, parse_attribute_completion)?;
        let created_at = self.clock.now();
        let provenance = self.client.provenance();
        let records: Vec<AttributeRecord> = parsed
            .unwrap_or_default()
            .into_iter()
            .map(|(attribute, default_value)| AttributeRecord {
                cpt: cpt.to_string(),
                attribute,
                default_value,
                provenance: provenance.clone(),
                created_at: created_at.clone(),
            })
            .collect();
        report.item_count = records.len();
        Ok((records, report))
    }

    /// Generates and stores attributes unless the CPT is already present
    /// (or `force` is set).
    pub fn ensure_attributes(
        &self,
        store: &mut AttributeStore,
        cpt: &str,
        description: &str,
        grouped_subsections: &[&Subsection],
        force: bool,
    ) -> Result<AttributeGeneration, AuthoringError> {
        if store.contains(cpt) && !force {
            return Ok(AttributeGeneration::Skipped { cpt: cpt.to_string() });
        }
        let (records, report) = self.generate_attributes(cpt, description, grouped_subsections)?;
        if report.outcome == Outcome::Accepted {
            store.put(cpt, records.clone(), force)?;
        }
        Ok(AttributeGeneration::Generated { records, report })
    }

    /// Generates rules for one subsection from the attributes of its CPTs.
    /// Unknown attributes are reported, not rejected.
    pub fn generate_rules(
        &self,
        subsection: &Subsection,
        cpt_attributes: &BTreeMap<String, Vec<AttributeRecord>>,
    ) -> Result<RuleFragment, AuthoringError> {
        if cpt_attributes.values().all(Vec::is_empty) {
            return Err(AuthoringError::NoAttributes(subsection.id.clone()));
        }
        let prompt = rule_prompt(self.templates, subsection, cpt_attributes);
        let parse = |text: &str| {
            parse_rules(text).map_err(|ds| ds.iter().map(|d| d.to_string()).collect::<Vec<_>>())
        };
        let (parsed, mut report) = self.attempt_loop(&subsection.id, &prompt, parse)?;
        let rules = parsed.map(|b| b.rules).unwrap_or_default();
        let known: BTreeSet<&str> = cpt_attributes
            .values()
            .flatten()
            .map(|r| r.attribute.as_str())
            .collect();
        let fragment_base = RuleBase {
            plan_id: String::new(),
            rules,
        };
        let vocabulary_warnings = rulelang::validate_vocabulary(&fragment_base, &known);
        report.warnings = vocabulary_warnings.iter().map(|w| w.to_string()).collect();
        report.item_count = fragment_base.rules.len();
        debug_assert!(parse_rules(&serialize_rules(&fragment_base)).is_ok());
        Ok(RuleFragment {
            subsection_id: subsection.id.clone(),
            rules: fragment_base.rules,
            vocabulary_warnings,
            report,
        })
    }
}
