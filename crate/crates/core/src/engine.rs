//! Forward-chaining evaluation of a rule base against one procedure's facts.
//!
//! Every rule whose conditions all hold fires; there is no conflict
//! resolution beyond ordering. Rules conclude statuses, never new facts, so a
//! single pass reaches the fixpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::PlanDocument;
use crate::rulelang::{is_valid_name, Conclusion, Rule, RuleBase, Status};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("invalid attribute name `{0}`")]
    InvalidAttribute(String),
    #[error("trace cites subsection `{0}`, which is not in the plan")]
    DanglingSubsection(String),
}

/// The working-memory unit: one procedure code and its boolean attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub cpt: String,
    pub attributes: BTreeMap<String, bool>,
}

impl Fact {
    pub fn new(
        cpt: impl Into<String>,
        attributes: impl IntoIterator<Item = (String, bool)>,
    ) -> Result<Self, EngineError> {
        let mut map = BTreeMap::new();
        for (name, value) in attributes {
            if !is_valid_name(&name) {
                return Err(EngineError::InvalidAttribute(name));
            }
            map.insert(name, value);
        }
        Ok(Fact {
            cpt: cpt.into(),
            attributes: map,
        })
    }

    /// Returns a copy with `overrides` applied on top of the stored values.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, bool>) -> Result<Fact, EngineError> {
        let mut fact = self.clone();
        for (name, &value) in overrides {
            if !is_valid_name(name) {
                return Err(EngineError::InvalidAttribute(name.clone()));
            }
            fact.attributes.insert(name.clone(), value);
        }
        Ok(fact)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedCondition {
    pub attribute: String,
    pub expected: bool,
    pub actual: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Firing {
    pub rule_name: String,
    pub matched_conditions: Vec<MatchedCondition>,
    pub conclusion: Conclusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub cpt: String,
    pub firings: Vec<Firing>,
    pub final_status: Status,
    pub cited_subsections: Vec<String>,
    pub unmatched_attributes: Vec<String>,
}

impl Trace {
    pub fn fired(&self, rule_name: &str) -> bool {
        self.firings.iter().any(|f| f.rule_name == rule_name)
    }
}

/// A trace plus the attributes the fact lacks among rules that otherwise
/// apply to it (rules testing at least one attribute the fact has).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub trace: Trace,
    pub missing_attributes: Vec<String>,
}

/// Fixed precedence: excluded > covered > needs_review. No firings means
/// needs_review.
pub fn final_status<I: IntoIterator<Item = Status>>(statuses: I) -> Status {
    let mut covered = false;
    for s in statuses {
        match s {
            Status::Excluded => return Status::Excluded,
            Status::Covered => covered = true,
            Status::NeedsReview => {}
        }
    }
    if covered {
        Status::Covered
    } else {
        Status::NeedsReview
    }
}

/// Whether every condition of `rule` holds in `fact`. An absent attribute
/// fails its condition.
pub fn rule_matches(rule: &Rule, fact: &Fact) -> bool {
    rule.conditions
        .iter()
        .all(|c| fact.attributes.get(&c.attribute) == Some(&c.expected))
}

pub fn evaluate(base: &RuleBase, fact: &Fact) -> Evaluation {
    let mut fired: Vec<&Rule> = base.rules.iter().filter(|r| rule_matches(r, fact)).collect();
    fired.sort_by(|a, b| b.salience.cmp(&a.salience).then_with(|| a.name.cmp(&b.name)));

    let firings: Vec<Firing> = fired
        .iter()
        .map(|r| Firing {
            rule_name: r.name.clone(),
            matched_conditions: r
                .conditions
                .iter()
                .map(|c| MatchedCondition {
                    attribute: c.attribute.clone(),
                    expected: c.expected,
                    actual: fact.attributes[&c.attribute],
                })
                .collect(),
            conclusion: r.conclusion.clone(),
        })
        .collect();

    let mut cited_subsections: Vec<String> = Vec::new();
    for f in &firings {
        if !cited_subsections.contains(&f.conclusion.subsection_ref) {
            cited_subsections.push(f.conclusion.subsection_ref.clone());
        }
    }
    let tested: BTreeSet<&str> = fired
        .iter()
        .flat_map(|r| r.conditions.iter().map(|c| c.attribute.as_str()))
        .collect();
    let unmatched_attributes = fact
        .attributes
        .keys()
        .filter(|k| !tested.contains(k.as_str()))
        .cloned()
        .collect();
    let missing_attributes: BTreeSet<&str> = base
        .rules
        .iter()
        .filter(|r| r.conditions.iter().any(|c| fact.attributes.contains_key(&c.attribute)))
        .flat_map(|r| r.conditions.iter().map(|c| c.attribute.as_str()))
        .filter(|a| !fact.attributes.contains_key(*a))
        .collect();
    let missing_attributes = missing_attributes.into_iter().map(str::to_string).collect();

    Evaluation {
        trace: Trace {
            cpt: fact.cpt.clone(),
            final_status: final_status(firings.iter().map(|f| f.conclusion.status)),
            firings,
            cited_subsections,
            unmatched_attributes,
        },
        missing_attributes,
    }
}

/// Fires every rule whose conditions hold, ordered by salience (descending)
/// then rule name.
pub fn run(base: &RuleBase, fact: &Fact) -> Trace {
    evaluate(base, fact).trace
}

/// Renders a reviewer-facing report, including the full text of each cited
/// subsection.
pub fn explain(trace: &Trace, plan: &PlanDocument) -> Result<String, EngineError> {
    for id in &trace.cited_subsections {
        if plan.subsection(id).is_none() {
            return Err(EngineError::DanglingSubsection(id.clone()));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "CPT {} under plan {}: {}", trace.cpt, plan.plan_id, trace.final_status);
    if trace.firings.is_empty() {
        let _ = writeln!(out, "No rule fired. Human review is recommended.");
    }
    for (i, firing) in trace.firings.iter().enumerate() {
        let sub = plan
            .subsection(&firing.conclusion.subsection_ref)
            .ok_or_else(|| EngineError::DanglingSubsection(firing.conclusion.subsection_ref.clone()))?;
        let _ = writeln!(out, "\n[{}] rule {} -> {}", i + 1, firing.rule_name, firing.conclusion.status);
        for m in &firing.matched_conditions {
            let _ = writeln!(out, "    {} = {} (required {})", m.attribute, m.actual, m.expected);
        }
        let _ = writeln!(out, "    reason: {}", firing.conclusion.reason);
        let title = if sub.title.is_empty() { &sub.id } else { &sub.title };
        let _ = writeln!(out, "    governing text [{}] {} / {}:", sub.id, sub.section_name, title);
        for line in sub.text.lines() {
            let _ = writeln!(out, "      {line}");
        }
    }
    if !trace.unmatched_attributes.is_empty() {
        let _ = writeln!(
            out,
            "\nAttributes not tested by any fired rule: {}",
            trace.unmatched_attributes.join(", ")
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_plan;
    use crate::rulelang::parse_rules;

    const RULES: &str = r#"
plan synthetic-A
rule pregnancy_maternity_services {
  when is_pregnancy=true and is_maternity=true
  then covered "Pregnancy and maternity care are covered" cite maternity-1
}
rule surrogacy_exclusion salience 5 {
  when is_maternity=true and is_surrogacy=true
  then excluded "Surrogacy arrangements are excluded" cite surrogacy-1
}
"#;

    fn fact(pairs: &[(&str, bool)]) -> Fact {
        Fact::new("S9212", pairs.iter().map(|&(a, v)| (a.to_string(), v))).unwrap()
    }

    #[test]
    fn pregnancy_rule_fires() {
        let base = parse_rules(RULES).unwrap();
        let trace = run(&base, &fact(&[("is_pregnancy", true), ("is_maternity", true)]));
        assert_eq!(trace.firings.len(), 1);
        assert_eq!(trace.firings[0].rule_name, "pregnancy_maternity_services");
        assert_eq!(trace.final_status, Status::Covered);
        assert_eq!(trace.cited_subsections, ["maternity-1"]);
        assert!(trace.unmatched_attributes.is_empty());
        assert!(trace.firings[0].matched_conditions.iter().all(|m| m.actual == m.expected));
    }

    #[test]
    fn all_false_fires_nothing() {
        let base = parse_rules(RULES).unwrap();
        let trace = run(&base, &fact(&[("is_pregnancy", false), ("is_maternity", false), ("is_surrogacy", false)]));
        assert!(trace.firings.is_empty());
        assert_eq!(trace.final_status, Status::NeedsReview);
        assert_eq!(trace.unmatched_attributes.len(), 3);
    }

    #[test]
    fn exclusion_overrides_coverage_and_salience_orders() {
        let base = parse_rules(RULES).unwrap();
        let trace = run(&base, &fact(&[("is_pregnancy", true), ("is_maternity", true), ("is_surrogacy", true)]));
        let names: Vec<_> = trace.firings.iter().map(|f| f.rule_name.as_str()).collect();
        assert_eq!(names, ["surrogacy_exclusion", "pregnancy_maternity_services"]);
        assert_eq!(trace.final_status, Status::Excluded);
        assert_eq!(trace.cited_subsections, ["surrogacy-1", "maternity-1"]);
    }

    #[test]
    fn precedence_table() {
        use Status::*;
        assert_eq!(final_status([]), NeedsReview);
        assert_eq!(final_status([Covered]), Covered);
        assert_eq!(final_status([Excluded]), Excluded);
        assert_eq!(final_status([NeedsReview]), NeedsReview);
        assert_eq!(final_status([Covered, Excluded]), Excluded);
        assert_eq!(final_status([Covered, NeedsReview]), Covered);
        assert_eq!(final_status([Excluded, NeedsReview]), Excluded);
        assert_eq!(final_status([NeedsReview, Covered, Excluded]), Excluded);
    }

    #[test]
    fn absent_attribute_is_not_false() {
        let base = parse_rules(
            "rule no_implant { when is_maternity=true and is_implant=false then covered \"r\" cite s }\n\
             rule dental { when is_dental=true then excluded \"r\" cite s }",
        )
        .unwrap();
        let ev = evaluate(&base, &fact(&[("is_maternity", true)]));
        assert!(ev.trace.firings.is_empty());
        assert_eq!(ev.missing_attributes, ["is_implant"]);
        let ev = evaluate(&base, &fact(&[("is_maternity", true), ("is_implant", false)]));
        assert_eq!(ev.trace.firings.len(), 1);
        assert!(ev.missing_attributes.is_empty());
    }

    #[test]
    fn explain_includes_attributes_and_text() {
        let plan = parse_plan(
            "= PLAN synthetic-A\n== SECTION Covered Services\n=== SUB maternity-1 | Maternity\nPrenatal and postnatal care for pregnancy.\n",
        )
        .unwrap();
        let base = parse_rules(RULES).unwrap();
        let trace = run(&base, &fact(&[("is_pregnancy", true), ("is_maternity", true)]));
        let report = explain(&trace, &plan).unwrap();
        assert!(report.contains("is_pregnancy"));
        assert!(report.contains("is_maternity"));
        assert!(report.contains("Prenatal and postnatal care for pregnancy."));

        let empty = run(&base, &fact(&[]));
        let report = explain(&empty, &plan).unwrap();
        assert!(report.contains("No rule fired"));
        assert!(report.contains("review"));

        let dangling = run(&base, &fact(&[("is_maternity", true), ("is_surrogacy", true)]));
        assert_eq!(
            explain(&dangling, &plan),
            Err(EngineError::DanglingSubsection("surrogacy-1".into()))
        );
    }

    #[test]
    fn overrides_leave_original_untouched() {
        let f = fact(&[("is_pregnancy", true)]);
        let g = f.with_overrides(&BTreeMap::from([("is_pregnancy".to_string(), false)])).unwrap();
        assert!(f.attributes["is_pregnancy"]);
        assert!(!g.attributes["is_pregnancy"]);
        assert!(f.with_overrides(&BTreeMap::from([("Bad".to_string(), true)])).is_err());
    }
}
