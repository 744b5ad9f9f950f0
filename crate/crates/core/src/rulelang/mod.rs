//! The rule language: conjunctions of boolean attribute tests that conclude
//! a coverage status with a reason and a cited subsection.
//!
//! ```text
//! plan synthetic-A
//!
//! # one rule per block
//! rule pregnancy_maternity_services salience 10 {
//!   when is_pregnancy=true and is_maternity=true
//!   then covered "Maternity care is a covered service" cite maternity-1
//! }
//! ```

mod parse;

use std::collections::{BTreeSet, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_rules, DiagCode, Diagnostic};

/// Valid attribute and rule names match `^[a-z][a-z0-9_]*$`.
pub fn is_valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Subsection references: non-empty, `[A-Za-z0-9_.-]+`.
pub fn is_valid_ref(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("invalid subsection reference `{0}`")]
    InvalidRef(String),
    #[error("rule `{0}` has no conditions")]
    NoConditions(String),
    #[error("rule `{rule}` tests `{attribute}` as both true and false")]
    Contradiction { rule: String, attribute: String },
    #[error("rule `{rule}` repeats condition `{attribute}`")]
    DuplicateCondition { rule: String, attribute: String },
    #[error("rule `{0}` has an empty reason")]
    EmptyReason(String),
    #[error("duplicate rule name `{0}`")]
    DuplicateRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Covered,
    Excluded,
    NeedsReview,
}

impl Status {
    pub const ALL: [Status; 3] = [Status::Covered, Status::Excluded, Status::NeedsReview];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Covered => "covered",
            Status::Excluded => "excluded",
            Status::NeedsReview => "needs_review",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Status::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub attribute: String,
    pub expected: bool,
}

impl Condition {
    pub fn new(attribute: impl Into<String>, expected: bool) -> Result<Self, RuleError> {
        let attribute = attribute.into();
        if !is_valid_name(&attribute) {
            return Err(RuleError::InvalidName(attribute));
        }
        Ok(Condition {
            attribute,
            expected,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conclusion {
    pub status: Status,
    pub reason: String,
    pub subsection_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    pub conditions: Vec<Condition>,
    pub conclusion: Conclusion,
    #[serde(default)]
    pub salience: i64,
}

impl Rule {
    /// Builds a rule, checking every structural invariant.
    pub fn new(
        name: impl Into<String>,
        conditions: Vec<Condition>,
        conclusion: Conclusion,
        salience: i64,
    ) -> Result<Self, RuleError> {
        let rule = Rule {
            name: name.into(),
            conditions,
            conclusion,
            salience,
        };
        rule.check()?;
        Ok(rule)
    }

    pub fn check(&self) -> Result<(), RuleError> {
        if !is_valid_name(&self.name) {
            return Err(RuleError::InvalidName(self.name.clone()));
        }
        if self.conditions.is_empty() {
            return Err(RuleError::NoConditions(self.name.clone()));
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if !is_valid_name(&c.attribute) {
                return Err(RuleError::InvalidName(c.attribute.clone()));
            }
            for earlier in &self.conditions[..i] {
                if earlier.attribute == c.attribute {
                    let rule = self.name.clone();
                    let attribute = c.attribute.clone();
                    return Err(if earlier.expected == c.expected {
                        RuleError::DuplicateCondition { rule, attribute }
                    } else {
                        RuleError::Contradiction { rule, attribute }
                    });
                }
            }
        }
        if self.conclusion.reason.trim().is_empty() {
            return Err(RuleError::EmptyReason(self.name.clone()));
        }
        if !is_valid_ref(&self.conclusion.subsection_ref) {
            return Err(RuleError::InvalidRef(self.conclusion.subsection_ref.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleBase {
    pub plan_id: String,
    pub rules: Vec<Rule>,
}

impl RuleBase {
    pub fn new(plan_id: impl Into<String>, rules: Vec<Rule>) -> Result<Self, RuleError> {
        let base = RuleBase {
            plan_id: plan_id.into(),
            rules,
        };
        base.check()?;
        Ok(base)
    }

    pub fn check(&self) -> Result<(), RuleError> {
        let mut names = HashSet::new();
        for rule in &self.rules {
            rule.check()?;
            if !names.insert(rule.name.as_str()) {
                return Err(RuleError::DuplicateRule(rule.name.clone()));
            }
        }
        Ok(())
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    /// Appends rules from another base, rejecting name clashes.
    pub fn extend(&mut self, rules: impl IntoIterator<Item = Rule>) -> Result<(), RuleError> {
        for rule in rules {
            if self.rule(&rule.name).is_some() {
                return Err(RuleError::DuplicateRule(rule.name));
            }
            self.rules.push(rule);
        }
        Ok(())
    }

    /// Every attribute any rule tests.
    pub fn attributes(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .flat_map(|r| r.conditions.iter().map(|c| c.attribute.as_str()))
            .collect()
    }
}

fn escape(reason: &str) -> String {
    let mut out = String::with_capacity(reason.len());
    for c in reason.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Canonical text form. Stable for a given base.
pub fn serialize_rules(base: &RuleBase) -> String {
    let mut out = String::new();
    if !base.plan_id.is_empty() {
        let _ = writeln!(out, "plan {}", base.plan_id);
    }
    for rule in &base.rules {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = write!(out, "rule {}", rule.name);
        if rule.salience != 0 {
            let _ = write!(out, " salience {}", rule.salience);
        }
        out.push_str(" {\n  when ");
        for (i, c) in rule.conditions.iter().enumerate() {
            if i > 0 {
                out.push_str(" and ");
            }
            let _ = write!(out, "{}={}", c.attribute, c.expected);
        }
        let _ = write!(
            out,
            "\n  then {} \"{}\" cite {}\n}}\n",
            rule.conclusion.status,
            escape(&rule.conclusion.reason),
            rule.conclusion.subsection_ref
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyWarning {
    pub rule: String,
    pub attribute: String,
}

impl fmt::Display for VocabularyWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rule `{}` tests unknown attribute `{}`",
            self.rule, self.attribute
        )
    }
}

/// One warning per condition whose attribute is outside `known`.
pub fn validate_vocabulary<S>(
    base: &RuleBase,
    known: &BTreeSet<S>,
) -> Vec<VocabularyWarning>
where
    S: AsRef<str> + Ord + std::borrow::Borrow<str>,
{
    base.rules
        .iter()
        .flat_map(|r| {
            r.conditions
                .iter()
                .filter(|c| !known.contains(c.attribute.as_str()))
                .map(|c| VocabularyWarning {
                    rule: r.name.clone(),
                    attribute: c.attribute.clone(),
                })
        })
        .collect()
}
