//! Coverage documents: plans, sections and subsections.
//!
//! The text format is line oriented:
//!
//! ```text
//! = PLAN synthetic-A | Synthetic Plan A
//! == SECTION Covered Services
//! === SUB maternity-1 | Maternity Services
//! Body text of the subsection...
//! ```
//!
//! A JSON mirror of the same structure is accepted by [`parse_plan`] as well.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const COVERED_SERVICES: &str = "Covered Services";
pub const EXCLUSIONS_AND_LIMITATIONS: &str = "Exclusions & Limitations";

const PLAN_MARKER: &str = "= PLAN ";
const SECTION_MARKER: &str = "== SECTION ";
const SUB_MARKER: &str = "=== SUB ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {second_line}: duplicate subsection id `{id}` (first defined on line {first_line})")]
    DuplicateSubsection {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: subsection `{id}` has an empty body")]
    EmptyBody { id: String, line: usize },
    #[error("plan `{0}` has no sections")]
    NoSections(String),
    #[error("invalid plan JSON: {0}")]
    Json(String),
    #[error("duplicate plan id `{0}` in corpus")]
    DuplicatePlan(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Which of the two canonical coverage categories a section belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SectionKind {
    Covered,
    Exclusions,
    Other,
}

impl SectionKind {
    /// Case-insensitive, whitespace-trimmed match against the canonical names.
    pub fn classify(name: &str) -> Self {
        let name = name.trim();
        if name.eq_ignore_ascii_case(COVERED_SERVICES) {
            SectionKind::Covered
        } else if name.eq_ignore_ascii_case(EXCLUSIONS_AND_LIMITATIONS) {
            SectionKind::Exclusions
        } else {
            SectionKind::Other
        }
    }

    pub fn is_relevant(self) -> bool {
        !matches!(self, SectionKind::Other)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsection {
    pub id: String,
    pub title: String,
    pub text: String,
    /// Name of the enclosing section.
    #[serde(default, skip_serializing)]
    pub section_name: String,
}

impl Subsection {
    pub fn kind(&self) -> SectionKind {
        SectionKind::classify(&self.section_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub subsections: Vec<Subsection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub plan_id: String,
    #[serde(default)]
    pub title: String,
    pub sections: Vec<Section>,
}

impl PlanDocument {
    pub fn subsections(&self) -> impl Iterator<Item = &Subsection> {
        self.sections.iter().flat_map(|s| s.subsections.iter())
    }

    pub fn subsection(&self, id: &str) -> Option<&Subsection> {
        self.subsections().find(|s| s.id == id)
    }

    /// Map from subsection id to the name of its section.
    pub fn section_index(&self) -> HashMap<String, String> {
        self.subsections()
            .map(|s| (s.id.clone(), s.section_name.clone()))
            .collect()
    }

    /// Checks the structural invariants; used after JSON decoding, where the
    /// text parser's line-level checks do not apply.
    fn validate(&self) -> Result<(), PlanError> {
        let syntax = |message: String| PlanError::Syntax { line: 0, message };
        if self.plan_id.trim().is_empty() || self.plan_id.chars().any(char::is_whitespace) {
            return Err(syntax(format!("invalid plan id `{}`", self.plan_id)));
        }
        if self.sections.is_empty() {
            return Err(PlanError::NoSections(self.plan_id.clone()));
        }
        let mut seen = HashMap::new();
        for section in &self.sections {
            if section.name.trim().is_empty() {
                return Err(syntax("empty section name".into()));
            }
            for sub in &section.subsections {
                if sub.id.is_empty() || sub.id.chars().any(|c| c.is_whitespace() || c == '|') {
                    return Err(syntax(format!("invalid subsection id `{}`", sub.id)));
                }
                if sub.text.trim().is_empty() {
                    return Err(PlanError::EmptyBody {
                        id: sub.id.clone(),
                        line: 0,
                    });
                }
                if seen.insert(sub.id.clone(), ()).is_some() {
                    return Err(PlanError::DuplicateSubsection {
                        id: sub.id.clone(),
                        first_line: 0,
                        second_line: 0,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Parses a plan from either the sectioned-text format or its JSON mirror.
pub fn parse_plan(source: &str) -> Result<PlanDocument, PlanError> {
    if source.trim_start().starts_with('{') {
        parse_plan_json(source)
    } else {
        parse_plan_text(source)
    }
}

pub fn parse_plan_json(source: &str) -> Result<PlanDocument, PlanError> {
    let mut plan: PlanDocument =
        serde_json::from_str(source).map_err(|e| PlanError::Json(e.to_string()))?;
    for section in &mut plan.sections {
        for sub in &mut section.subsections {
            sub.section_name = section.name.clone();
            sub.text = normalize_body(sub.text.lines());
        }
    }
    plan.validate()?;
    Ok(plan)
}

struct OpenSub {
    id: String,
    title: String,
    line: usize,
    body: Vec<String>,
}

pub fn parse_plan_text(source: &str) -> Result<PlanDocument, PlanError> {
    let mut plan: Option<PlanDocument> = None;
    let mut current: Option<OpenSub> = None;
    let mut seen: HashMap<String, usize> = HashMap::new();

    fn close(plan: &mut PlanDocument, sub: OpenSub) -> Result<(), PlanError> {
        let text = normalize_body(sub.body.iter().map(String::as_str));
        if text.is_empty() {
            return Err(PlanError::EmptyBody {
                id: sub.id,
                line: sub.line,
            });
        }
        let section = plan.sections.last_mut().expect("subsection opened inside a section");
        section.subsections.push(Subsection {
            id: sub.id,
            title: sub.title,
            text,
            section_name: section.name.clone(),
        });
        Ok(())
    }

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        let syntax = |message: String| PlanError::Syntax {
            line: line_no,
            message,
        };

        if let Some(rest) = line.strip_prefix(SUB_MARKER) {
            let plan = match plan.as_mut() {
                Some(p) if !p.sections.is_empty() => p,
                _ => return Err(syntax("subsection outside of a section".into())),
            };
            if let Some(sub) = current.take() {
                close(plan, sub)?;
            }
            let (id, title) = split_id_title(rest);
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(syntax(format!("malformed subsection header `{line}`")));
            }
            if let Some(&first) = seen.get(id) {
                return Err(PlanError::DuplicateSubsection {
                    id: id.to_string(),
                    first_line: first,
                    second_line: line_no,
                });
            }
            seen.insert(id.to_string(), line_no);
            current = Some(OpenSub {
                id: id.to_string(),
                title: title.to_string(),
                line: line_no,
                body: Vec::new(),
            });
        } else if let Some(rest) = line.strip_prefix(SECTION_MARKER) {
            let plan = plan
                .as_mut()
                .ok_or_else(|| syntax("section before plan header".into()))?;
            if let Some(sub) = current.take() {
                close(plan, sub)?;
            }
            let name = rest.trim();
            if name.is_empty() {
                return Err(syntax("empty section name".into()));
            }
            plan.sections.push(Section {
                name: name.to_string(),
                subsections: Vec::new(),
            });
        } else if let Some(rest) = line.strip_prefix(PLAN_MARKER) {
            if plan.is_some() {
                return Err(syntax("second plan header in one document".into()));
            }
            let (id, title) = split_id_title(rest);
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(syntax(format!("malformed plan header `{line}`")));
            }
            plan = Some(PlanDocument {
                plan_id: id.to_string(),
                title: title.to_string(),
                sections: Vec::new(),
            });
        } else if line.starts_with('=') && is_marker_like(line) {
            return Err(syntax(format!("malformed header `{line}`")));
        } else if let Some(sub) = current.as_mut() {
            sub.body.push(line.to_string());
        } else if !line.trim().is_empty() {
            return Err(syntax("text outside of a subsection".into()));
        }
    }

    let mut plan = plan.ok_or(PlanError::Syntax {
        line: 1,
        message: "missing `= PLAN <id>` header".into(),
    })?;
    if let Some(sub) = current.take() {
        close(&mut plan, sub)?;
    }
    if plan.sections.is_empty() {
        return Err(PlanError::NoSections(plan.plan_id));
    }
    Ok(plan)
}

fn is_marker_like(line: &str) -> bool {
    let eqs = line.chars().take_while(|&c| c == '=').count();
    let rest = line[eqs..].trim_start();
    (1..=3).contains(&eqs)
        && ["PLAN", "SECTION", "SUB"]
            .iter()
            .any(|kw| rest.starts_with(kw))
}

fn split_id_title(rest: &str) -> (&str, &str) {
    match rest.split_once('|') {
        Some((id, title)) => (id.trim(), title.trim()),
        None => (rest.trim(), ""),
    }
}

/// Trims trailing whitespace per line and drops leading/trailing blank lines.
fn normalize_body<'a>(lines: impl Iterator<Item = &'a str>) -> String {
    let lines: Vec<&str> = lines.map(str::trim_end).collect();
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

/// Renders a plan in the sectioned-text format.
pub fn serialize_plan(plan: &PlanDocument) -> String {
    let mut out = String::new();
    if plan.title.is_empty() {
        let _ = writeln!(out, "{PLAN_MARKER}{}", plan.plan_id);
    } else {
        let _ = writeln!(out, "{PLAN_MARKER}{} | {}", plan.plan_id, plan.title);
    }
    for section in &plan.sections {
        let _ = writeln!(out, "{SECTION_MARKER}{}", section.name);
        for sub in &section.subsections {
            if sub.title.is_empty() {
                let _ = writeln!(out, "{SUB_MARKER}{}", sub.id);
            } else {
                let _ = writeln!(out, "{SUB_MARKER}{} | {}", sub.id, sub.title);
            }
            let _ = writeln!(out, "{}", sub.text);
        }
    }
    out
}

pub fn plan_to_json(plan: &PlanDocument) -> String {
    serde_json::to_string_pretty(plan).expect("plan serializes")
}

/// Candidate subsections for retrieval, with a diagnostic when the plan has
/// no relevant section.
#[derive(Debug, Clone)]
pub struct CandidatePool<'a> {
    pub candidates: Vec<&'a Subsection>,
    pub diagnostic: Option<String>,
}

/// Subsections under "Covered Services" and "Exclusions & Limitations", in
/// document order.
pub fn candidate_pool(plan: &PlanDocument) -> CandidatePool<'_> {
    let has_relevant = plan
        .sections
        .iter()
        .any(|s| SectionKind::classify(&s.name).is_relevant());
    let candidates: Vec<&Subsection> = plan
        .sections
        .iter()
        .filter(|s| SectionKind::classify(&s.name).is_relevant())
        .flat_map(|s| s.subsections.iter())
        .collect();
    let diagnostic = if !has_relevant {
        Some(format!(
            "plan `{}` has neither a \"{COVERED_SERVICES}\" nor an \"{EXCLUSIONS_AND_LIMITATIONS}\" section",
            plan.plan_id
        ))
    } else if candidates.is_empty() {
        Some(format!("plan `{}` has no subsections in its coverage sections", plan.plan_id))
    } else {
        None
    };
    CandidatePool {
        candidates,
        diagnostic,
    }
}

/// A set of plans with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    plans: Vec<PlanDocument>,
}

impl Corpus {
    pub fn new(plans: Vec<PlanDocument>) -> Result<Self, PlanError> {
        let mut corpus = Corpus::default();
        for plan in plans {
            corpus.insert(plan)?;
        }
        Ok(corpus)
    }

    pub fn insert(&mut self, plan: PlanDocument) -> Result<(), PlanError> {
        if self.get(&plan.plan_id).is_some() {
            return Err(PlanError::DuplicatePlan(plan.plan_id));
        }
        self.plans.push(plan);
        Ok(())
    }

    pub fn get(&self, plan_id: &str) -> Option<&PlanDocument> {
        self.plans.iter().find(|p| p.plan_id == plan_id)
    }

    pub fn plans(&self) -> &[PlanDocument] {
        &self.plans
    }

    /// Loads every `*.plan` and `*.plan.json` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Self, PlanError> {
        let io_err = |path: &Path, e: std::io::Error| PlanError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.ends_with(".plan") || name.ends_with(".plan.json")
            })
            .collect();
        paths.sort();
        let mut corpus = Corpus::default();
        for path in paths {
            let source = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let plan = parse_plan(&source).map_err(|e| PlanError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            corpus.insert(plan)?;
        }
        Ok(corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BY_THREE: &str = "\
= PLAN demo | Demo Plan
== SECTION Covered Services
=== SUB cov-1 | Office visits
Office visits are covered.
=== SUB cov-2 | Labs
Laboratory tests are covered.
=== SUB cov-3 | Imaging
Imaging is covered when medically necessary.
== SECTION Exclusions & Limitations
=== SUB exc-1 | Cosmetic
Cosmetic procedures are not covered.
=== SUB exc-2 | Experimental
Experimental treatment is not covered.
=== SUB exc-3 | Travel

Travel immunizations are excluded.

";

    #[test]
    fn parses_two_sections_of_three() {
        let plan = parse_plan(TWO_BY_THREE).unwrap();
        assert_eq!(plan.plan_id, "demo");
        assert_eq!(plan.title, "Demo Plan");
        let ids: Vec<_> = plan.subsections().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["cov-1", "cov-2", "cov-3", "exc-1", "exc-2", "exc-3"]);
        assert_eq!(
            plan.subsection("exc-3").unwrap().text,
            "Travel immunizations are excluded."
        );
        assert_eq!(plan.subsection("cov-2").unwrap().section_name, COVERED_SERVICES);
    }

    #[test]
    fn duplicate_id_reports_both_lines() {
        let src = "= PLAN p\n== SECTION Covered Services\n=== SUB a | A\ntext\n=== SUB a | again\nmore\n";
        let err = parse_plan(src).unwrap_err();
        assert_eq!(
            err,
            PlanError::DuplicateSubsection {
                id: "a".into(),
                first_line: 3,
                second_line: 5
            }
        );
        assert!(err.to_string().contains("`a`"));
    }

    #[test]
    fn empty_body_is_rejected_with_line() {
        let src = "= PLAN p\n== SECTION Covered Services\n=== SUB a | A\n   \n=== SUB b\nx\n";
        assert_eq!(
            parse_plan(src).unwrap_err(),
            PlanError::EmptyBody {
                id: "a".into(),
                line: 3
            }
        );
    }

    #[test]
    fn malformed_headers() {
        let err = parse_plan("== SECTION Covered Services\n").unwrap_err();
        assert!(matches!(err, PlanError::Syntax { line: 1, .. }));
        let err = parse_plan("= PLAN p\n== SECTION X\n=== SUB  | t\nbody\n").unwrap_err();
        assert!(matches!(err, PlanError::Syntax { line: 3, .. }));
        let err = parse_plan("= PLAN p\n==SECTION X\n").unwrap_err();
        assert!(matches!(err, PlanError::Syntax { line: 2, .. }));
        let err = parse_plan("= PLAN p\n== SECTION X\nstray text\n").unwrap_err();
        assert!(matches!(err, PlanError::Syntax { line: 3, .. }));
        assert_eq!(parse_plan("= PLAN p\n").unwrap_err(), PlanError::NoSections("p".into()));
    }

    #[test]
    fn json_mirror_equals_text() {
        let plan = parse_plan(TWO_BY_THREE).unwrap();
        let json = plan_to_json(&plan);
        assert_eq!(parse_plan(&json).unwrap(), plan);
        assert!(json.contains("\"plan_id\""));
        assert!(!json.contains("section_name"));
    }

    #[test]
    fn section_names_match_case_insensitively() {
        assert_eq!(SectionKind::classify("  covered services "), SectionKind::Covered);
        assert_eq!(
            SectionKind::classify("EXCLUSIONS & LIMITATIONS"),
            SectionKind::Exclusions
        );
        assert_eq!(SectionKind::classify("Introduction"), SectionKind::Other);
    }

    #[test]
    fn pool_only_from_canonical_sections() {
        let src = "= PLAN p\n== SECTION Introduction\n=== SUB intro | Intro\nWelcome.\n\
                   == SECTION covered services\n=== SUB c1\nCovered.\n\
                   == SECTION Eligibility\n=== SUB el\nWho is eligible.\n\
                   == SECTION Exclusions & Limitations\n=== SUB e1\nExcluded.\n";
        let plan = parse_plan(src).unwrap();
        let pool = candidate_pool(&plan);
        let ids: Vec<_> = pool.candidates.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["c1", "e1"]);
        assert!(pool.diagnostic.is_none());
    }

    #[test]
    fn pool_empty_without_canonical_sections() {
        let plan = parse_plan("= PLAN p\n== SECTION Introduction\n=== SUB i\nhello\n").unwrap();
        let pool = candidate_pool(&plan);
        assert!(pool.candidates.is_empty());
        assert!(pool.diagnostic.unwrap().contains("neither"));
    }

    #[test]
    fn pool_of_sixty() {
        let mut src = String::from("= PLAN big\n== SECTION Covered Services\n");
        for i in 0..30 {
            src.push_str(&format!("=== SUB c{i}\ncovered item {i}\n"));
        }
        src.push_str("== SECTION Exclusions & Limitations\n");
        for i in 0..30 {
            src.push_str(&format!("=== SUB e{i}\nexcluded item {i}\n"));
        }
        let plan = parse_plan(&src).unwrap();
        assert_eq!(candidate_pool(&plan).candidates.len(), 60);
    }

    #[test]
    fn corpus_rejects_duplicate_plan_ids() {
        let plan = parse_plan(TWO_BY_THREE).unwrap();
        let err = Corpus::new(vec![plan.clone(), plan]).unwrap_err();
        assert_eq!(err, PlanError::DuplicatePlan("demo".into()));
    }
}
