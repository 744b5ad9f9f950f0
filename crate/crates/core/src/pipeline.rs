//! End-to-end orchestration: retrieval, attribute and rule authoring over a
//! corpus, and per-CPT adjudication.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authoring::{
    group_cpts_by_subsection, AttributeGeneration, AttributeRecord, AttributeStore, Author, AuthoringError,
    GenerationReport, Outcome,
};
use crate::engine::{self, Trace};
use crate::plan::{Corpus, PlanDocument};
use crate::retrieval::{retrieve, Query, RetrievalConfig, RetrievalError, RetrievalRow, Scorer};
use crate::rulelang::{RuleBase, Status};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Authoring(#[from] AuthoringError),
    #[error("CPT list: {0}")]
    CptList(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CptEntry {
    pub cpt: String,
    pub description: String,
}

/// Reads a `cpt,description` CSV.
pub fn read_cpts_csv<R: Read>(reader: R) -> Result<Vec<CptEntry>, PipelineError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let e: CptEntry = rec.map_err(|e| PipelineError::CptList(e.to_string()))?;
        if !seen.insert(e.cpt.clone()) {
            return Err(PipelineError::CptList(format!("duplicate CPT {}", e.cpt)));
        }
        out.push(e);
    }
    Ok(out)
}

pub fn write_cpts_csv(cpts: &[CptEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cpts {
        w.serialize(c).expect("cpt row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

/// The outcome of adjudicating one CPT under one plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub plan_id: String,
    pub trace: Trace,
    pub retrieval: Vec<RetrievalRow>,
    /// No governing passage was found; the case goes to a human reviewer.
    pub escalate: bool,
    pub diagnostics: Vec<String>,
}

fn review_trace(cpt: &str) -> Trace {
    Trace {
        cpt: cpt.to_string(),
        firings: Vec::new(),
        final_status: Status::NeedsReview,
        cited_subsections: Vec::new(),
        unmatched_attributes: Vec::new(),
    }
}

/// Runs retrieval for the audit record, then the engine over the stored
/// fact. Missing attributes or a placeholder-only retrieval yield a
/// needs_review trace with no firings.
pub fn adjudicate(
    plan: &PlanDocument,
    cpt: &str,
    description: &str,
    store: &AttributeStore,
    base: &RuleBase,
    config: &RetrievalConfig,
    scorer: &dyn Scorer,
) -> Result<Adjudication, PipelineError> {
    if !base.plan_id.is_empty() && base.plan_id != plan.plan_id {
        return Err(PipelineError::Config(format!(
            "rule base is for plan {}, not {}",
            base.plan_id, plan.plan_id
        )));
    }
    let query = Query::new(cpt, description)?;
    let out = retrieve(plan, &query, scorer, config, &plan.plan_id)?;
    let mut diagnostics: Vec<String> = out.diagnostic.iter().cloned().collect();
    let escalate = out.is_placeholder();

    let trace = match store.fact(cpt) {
        None => {
            diagnostics.push(format!("no stored attributes for {cpt}; needs human review"));
            review_trace(cpt)
        }
        Some(_) if escalate => review_trace(cpt),
        Some(fact) => {
            let eval = engine::evaluate(base, &fact);
            if !eval.missing_attributes.is_empty() {
                diagnostics.push(format!(
                    "rules test attributes absent for {cpt}: {}",
                    eval.missing_attributes.join(", ")
                ));
            }
            eval.trace
        }
    };
    Ok(Adjudication {
        plan_id: plan.plan_id.clone(),
        trace,
        retrieval: out.rows,
        escalate,
        diagnostics,
    })
}

/// Everything one authoring pass produced.
#[derive(Debug, Clone, Default)]
pub struct AuthoringSummary {
    pub rulebases: BTreeMap<String, RuleBase>,
    pub retrieval: BTreeMap<String, Vec<RetrievalRow>>,
    pub attribute_reports: Vec<GenerationReport>,
    pub rule_reports: BTreeMap<String, Vec<GenerationReport>>,
    pub warnings: Vec<String>,
}

/// Retrieval for every (plan, CPT), attributes once per CPT (the first plan
/// that retains a passage for it), then rules per retained subsection.
/// Plans are processed in corpus order and subsections in document order,
/// so fixture-mode output is reproducible.
pub fn author_corpus(
    corpus: &Corpus,
    cpts: &[CptEntry],
    scorer: &dyn Scorer,
    config: &RetrievalConfig,
    author: &Author<'_>,
    store: &mut AttributeStore,
    force: bool,
) -> Result<AuthoringSummary, PipelineError> {
    let mut summary = AuthoringSummary::default();
    let mut regenerated = BTreeSet::new();
    for plan in corpus.plans() {
        let mut rows = Vec::new();
        let mut retained: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for entry in cpts {
            let out = retrieve(plan, &Query::new(&entry.cpt, &entry.description)?, scorer, config, &plan.plan_id)?;
            if let Some(d) = &out.diagnostic {
                summary.warnings.push(format!("{}: {d}", plan.plan_id));
            }
            retained.insert(&entry.cpt, out.retained_ids().map(str::to_string).collect());
            rows.extend(out.rows);
        }

        for entry in cpts {
            let ids = &retained[entry.cpt.as_str()];
            if ids.is_empty() {
                continue;
            }
            let subs: Vec<_> = ids.iter().filter_map(|id| plan.subsection(id)).collect();
            // Forced regeneration happens once per CPT, not once per plan.
            let force_this = force && regenerated.insert(entry.cpt.clone());
            match author.ensure_attributes(store, &entry.cpt, &entry.description, &subs, force_this)? {
                AttributeGeneration::Skipped { .. } => {}
                AttributeGeneration::Generated { report, .. } => {
                    if report.outcome == Outcome::Rejected {
                        summary
                            .warnings
                            .push(format!("attributes for {} rejected after {} attempts", entry.cpt, report.attempts));
                    }
                    summary.attribute_reports.push(report);
                }
            }
        }

        let groups = group_cpts_by_subsection(&rows);
        let mut base = RuleBase {
            plan_id: plan.plan_id.clone(),
            rules: Vec::new(),
        };
        let mut reports = Vec::new();
        for sub in plan.subsections() {
            let Some(group) = groups.get(&sub.id) else {
                continue;
            };
            let cpt_attributes: BTreeMap<String, Vec<AttributeRecord>> = group
                .iter()
                .filter_map(|c| store.records(c).map(|r| (c.clone(), r.to_vec())))
                .collect();
            if cpt_attributes.values().all(Vec::is_empty) {
                summary
                    .warnings
                    .push(format!("{}: no attributes for the CPTs of {}; no rules generated", plan.plan_id, sub.id));
                continue;
            }
            let fragment = author.generate_rules(sub, &cpt_attributes)?;
            for rule in fragment.rules {
                if base.rule(&rule.name).is_some() {
                    summary.warnings.push(format!(
                        "{}: rule `{}` from {} duplicates an earlier rule and was dropped",
                        plan.plan_id, rule.name, sub.id
                    ));
                    continue;
                }
                base.rules.push(rule);
            }
            reports.push(fragment.report);
        }
        summary.rulebases.insert(plan.plan_id.clone(), base);
        summary.rule_reports.insert(plan.plan_id.clone(), reports);
        summary.retrieval.insert(plan.plan_id.clone(), rows);
    }
    Ok(summary)
}

/// Adjudicates every CPT under every plan that has a rule base.
pub fn adjudicate_corpus(
    corpus: &Corpus,
    cpts: &[CptEntry],
    store: &AttributeStore,
    rulebases: &BTreeMap<String, RuleBase>,
    config: &RetrievalConfig,
    scorer: &dyn Scorer,
) -> Result<BTreeMap<(String, String), Adjudication>, PipelineError> {
    let mut out = BTreeMap::new();
    for plan in corpus.plans() {
        let base = rulebases
            .get(&plan.plan_id)
            .ok_or_else(|| PipelineError::Config(format!("no rule base for plan {}", plan.plan_id)))?;
        for entry in cpts {
            let adj = adjudicate(plan, &entry.cpt, &entry.description, store, base, config, scorer)?;
            out.insert((plan.plan_id.clone(), entry.cpt.clone()), adj);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authoring::Clock;
    use crate::plan::parse_plan_text;
    use crate::retrieval::LexicalScorer;
    use crate::rulelang::parse_rules;

    const PLAN: &str = "= PLAN p\n== SECTION Covered Services\n=== SUB maternity-1 | Maternity\n\
        Pregnancy and maternity care including preeclampsia management.\n\
        == SECTION Exclusions & Limitations\n=== SUB dental-1 | Dental\nDental cleaning and crowns.\n";

    fn rec(cpt: &str, a: &str, v: bool) -> AttributeRecord {
        AttributeRecord {
            cpt: cpt.into(),
            attribute: a.into(),
            default_value: v,
            provenance: "fixture".into(),
            created_at: Clock::fixture().now(),
        }
    }

    fn base() -> RuleBase {
        parse_rules(
            "plan p\nrule pregnancy_maternity_services {\n  when is_pregnancy=true and is_maternity=true\n  \
             then covered \"maternity\" cite maternity-1\n}\n",
        )
        .unwrap()
    }

    #[test]
    fn covered_trace() {
        let plan = parse_plan_text(PLAN).unwrap();
        let mut store = AttributeStore::in_memory();
        store
            .put("S9212", vec![rec("S9212", "is_pregnancy", true), rec("S9212", "is_maternity", true)], false)
            .unwrap();
        let adj = adjudicate(
            &plan,
            "S9212",
            "home management of preeclampsia in pregnancy",
            &store,
            &base(),
            &RetrievalConfig::default(),
            &LexicalScorer,
        )
        .unwrap();
        assert_eq!(adj.trace.final_status, Status::Covered);
        assert_eq!(adj.trace.cited_subsections, vec!["maternity-1"]);
        assert!(!adj.escalate);
    }

    #[test]
    fn missing_attributes_need_review() {
        let plan = parse_plan_text(PLAN).unwrap();
        let adj = adjudicate(
            &plan,
            "X1",
            "pregnancy care",
            &AttributeStore::in_memory(),
            &base(),
            &RetrievalConfig::default(),
            &LexicalScorer,
        )
        .unwrap();
        assert_eq!(adj.trace.final_status, Status::NeedsReview);
        assert!(adj.diagnostics.iter().any(|d| d.contains("no stored attributes")));
    }

    #[test]
    fn placeholder_escalates() {
        let plan = parse_plan_text(PLAN).unwrap();
        let mut store = AttributeStore::in_memory();
        store
            .put("S9212", vec![rec("S9212", "is_pregnancy", true), rec("S9212", "is_maternity", true)], false)
            .unwrap();
        let config = RetrievalConfig::new(0.999, 5, 5).unwrap();
        let adj = adjudicate(&plan, "S9212", "pregnancy", &store, &base(), &config, &LexicalScorer).unwrap();
        assert!(adj.escalate);
        assert_eq!(adj.trace.final_status, Status::NeedsReview);
        assert!(adj.trace.firings.is_empty());
        assert!(adj.retrieval[0].is_placeholder);
    }

    #[test]
    fn plan_mismatch_is_config_error() {
        let plan = parse_plan_text(PLAN).unwrap();
        let mut b = base();
        b.plan_id = "other".into();
        let err = adjudicate(
            &plan,
            "S9212",
            "x",
            &AttributeStore::in_memory(),
            &b,
            &RetrievalConfig::default(),
            &LexicalScorer,
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)));
    }

    #[test]
    fn cpt_csv() {
        let cpts = vec![CptEntry {
            cpt: "S9212".into(),
            description: "home management, preeclampsia".into(),
        }];
        assert_eq!(read_cpts_csv(write_cpts_csv(&cpts).as_bytes()).unwrap(), cpts);
        assert!(read_cpts_csv("cpt,description\nA,x\nA,y\n".as_bytes()).is_err());
    }
}
