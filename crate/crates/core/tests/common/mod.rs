#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use proptest::collection::{btree_map, vec};
use proptest::prelude::*;

use policytrace::engine::Fact;
use policytrace::plan::{Subsection, COVERED_SERVICES, EXCLUSIONS_AND_LIMITATIONS};
use policytrace::retrieval::ScoredPassage;
use policytrace::rulelang::{Condition, Conclusion, Rule, RuleBase, Status};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures"))
}

pub fn attr_name() -> impl Strategy<Value = String> {
    (0..12usize).prop_map(|i| format!("attr_{i}"))
}

pub fn arb_status() -> impl Strategy<Value = Status> {
    prop_oneof![Just(Status::Covered), Just(Status::Excluded), Just(Status::NeedsReview)]
}

pub fn arb_reason() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.\"\\\\()é\t-]{0,24}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

pub fn arb_ref() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9._-]{0,10}"
}

/// Conditions on distinct attributes.
pub fn arb_conditions() -> impl Strategy<Value = Vec<Condition>> {
    btree_map(attr_name(), any::<bool>(), 1..5).prop_map(|m| {
        m.into_iter()
            .map(|(attribute, expected)| Condition { attribute, expected })
            .collect()
    })
}

pub fn arb_rule(name: String) -> impl Strategy<Value = Rule> {
    (arb_conditions(), arb_status(), arb_reason(), arb_ref(), prop_oneof![Just(0i64), -20i64..20]).prop_map(
        move |(conditions, status, reason, subsection_ref, salience)| Rule {
            name: name.clone(),
            conditions,
            conclusion: Conclusion {
                status,
                reason,
                subsection_ref,
            },
            salience,
        },
    )
}

pub fn arb_rulebase(max_rules: usize) -> impl Strategy<Value = RuleBase> {
    (0..=max_rules, prop_oneof![Just(String::new()), "[a-z][a-z0-9-]{0,8}"]).prop_flat_map(|(n, plan_id)| {
        let rules: Vec<_> = (0..n).map(|i| arb_rule(format!("rule_{i}"))).collect();
        (rules, Just(plan_id)).prop_map(|(rules, plan_id)| RuleBase { plan_id, rules })
    })
}

pub fn arb_fact() -> impl Strategy<Value = Fact> {
    btree_map(attr_name(), any::<bool>(), 0..12).prop_map(|attributes| Fact {
        cpt: "X0001".into(),
        attributes,
    })
}

/// Brute-force match, written independently of the engine.
pub fn oracle_matches(rule: &Rule, attributes: &BTreeMap<String, bool>) -> bool {
    for c in &rule.conditions {
        match attributes.get(&c.attribute) {
            Some(v) if *v == c.expected => {}
            _ => return false,
        }
    }
    true
}

/// A scored pool: (probability, section) per candidate, probabilities summing
/// to one.
pub fn arb_scored_pool() -> impl Strategy<Value = (Vec<ScoredPassage>, HashMap<String, String>)> {
    vec((0.0f64..1.0, prop_oneof![Just(COVERED_SERVICES), Just(EXCLUSIONS_AND_LIMITATIONS)]), 1..60).prop_map(|raw| {
        let total: f64 = raw.iter().map(|(w, _)| w + 1e-3).sum();
        let mut scored = Vec::new();
        let mut sections = HashMap::new();
        for (i, (w, section)) in raw.into_iter().enumerate() {
            let id = format!("s{i}");
            sections.insert(id.clone(), section.to_string());
            scored.push(ScoredPassage {
                subsection_id: id,
                logit: 0.0,
                probability: (w + 1e-3) / total,
            });
        }
        (scored, sections)
    })
}

pub fn subsection(id: &str, section: &str, text: &str) -> Subsection {
    Subsection {
        id: id.into(),
        title: id.into(),
        text: text.into(),
        section_name: section.into(),
    }
}

pub fn attrs_of(base: &RuleBase) -> BTreeSet<String> {
    base.rules
        .iter()
        .flat_map(|r| r.conditions.iter().map(|c| c.attribute.clone()))
        .collect()
}
