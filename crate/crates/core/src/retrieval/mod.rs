//! Passage retrieval: score every candidate subsection for a procedure-code
//! query, softmax-normalize, keep what clears the threshold subject to
//! per-section caps, and emit output rows (or a placeholder row).

mod loss;
mod scorer;
mod separable;
mod train;

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{self, PlanDocument, SectionKind, Subsection};

pub use loss::{mc_loss, mc_loss_grad, softmax_normalize};
pub use scorer::{
    tokenize, FeatureExtractor, LexicalScorer, LinearFeatureScorer, RemoteCrossEncoderClient,
    Scorer, ScorerError, FEATURE_DIM,
};
pub use separable::{examples, separable_items, ChoiceItem};
pub use train::{train_linear_scorer, TrainingExample, TrainingRun};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("scoring candidate `{candidate_id}` failed: {source}")]
    Scorer {
        candidate_id: String,
        #[source]
        source: ScorerError,
    },
    #[error("subsection `{0}` has no known section")]
    UnknownSubsection(String),
}

/// A procedure-code query; renders as `<cpt> : <description>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub cpt: String,
    pub description: String,
}

impl Query {
    pub fn new(cpt: impl Into<String>, description: impl Into<String>) -> Result<Self, RetrievalError> {
        let cpt = cpt.into();
        if cpt.trim().is_empty() {
            return Err(RetrievalError::Argument("empty CPT code".into()));
        }
        Ok(Query {
            cpt,
            description: description.into(),
        })
    }

    pub fn text(&self) -> String {
        format!("{} : {}", self.cpt, self.description)
    }
}

pub fn build_query(cpt: &str, description: &str) -> Result<String, RetrievalError> {
    Ok(Query::new(cpt, description)?.text())
}

/// A query together with its fixed, non-empty list of candidates.
#[derive(Debug, Clone)]
pub struct CandidateSet<'a> {
    pub query: Query,
    candidates: Vec<&'a Subsection>,
}

impl<'a> CandidateSet<'a> {
    pub fn new(query: Query, candidates: Vec<&'a Subsection>) -> Result<Self, RetrievalError> {
        if candidates.is_empty() {
            return Err(RetrievalError::Argument("candidate set is empty".into()));
        }
        Ok(CandidateSet { query, candidates })
    }

    pub fn candidates(&self) -> &[&'a Subsection] {
        &self.candidates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub subsection_id: String,
    pub logit: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub tau: f64,
    pub max_covered: usize,
    pub max_exclusions: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            tau: 0.25,
            max_covered: 5,
            max_exclusions: 5,
        }
    }
}

impl RetrievalConfig {
    pub fn new(tau: f64, max_covered: usize, max_exclusions: usize) -> Result<Self, RetrievalError> {
        let cfg = RetrievalConfig {
            tau,
            max_covered,
            max_exclusions,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(RetrievalError::Argument(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if self.max_covered == 0 || self.max_exclusions == 0 {
            return Err(RetrievalError::Argument("caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One output row. A placeholder row carries no passage fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub project_id: String,
    pub cpt: String,
    pub probability: Option<f64>,
    pub section: Option<String>,
    pub subsection_id: Option<String>,
    pub text: Option<String>,
    pub is_placeholder: bool,
}

impl RetrievalRow {
    pub fn placeholder(project_id: &str, cpt: &str) -> Self {
        RetrievalRow {
            project_id: project_id.to_string(),
            cpt: cpt.to_string(),
            probability: None,
            section: None,
            subsection_id: None,
            text: None,
            is_placeholder: true,
        }
    }
}

/// Scores every candidate and normalizes over this set only. Fails on the
/// first candidate the scorer cannot handle; no partial result is returned.
pub fn score_candidates(
    scorer: &dyn Scorer,
    set: &CandidateSet<'_>,
) -> Result<Vec<ScoredPassage>, RetrievalError> {
    let query = set.query.text();
    let logits = match scorer.score_all(&query, set.candidates()) {
        Ok(l) => l,
        Err(_) => {
            // Rescore one at a time to name the failing candidate.
            let mut logits = Vec::with_capacity(set.candidates().len());
            for cand in set.candidates() {
                let logit = scorer.score(&query, cand).map_err(|source| RetrievalError::Scorer {
                    candidate_id: cand.id.clone(),
                    source,
                })?;
                logits.push(logit);
            }
            logits
        }
    };
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(RetrievalError::Scorer {
            candidate_id: set.candidates()[i].id.clone(),
            source: ScorerError::NonFinite,
        });
    }
    let probs = softmax_normalize(&logits)?;
    Ok(set
        .candidates()
        .iter()
        .zip(logits.into_iter().zip(probs))
        .map(|(c, (logit, probability))| ScoredPassage {
            subsection_id: c.id.clone(),
            logit,
            probability,
        })
        .collect())
}

/// A passage that survived filtering, with its section name.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedPassage {
    pub passage: ScoredPassage,
    pub section: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    /// Descending probability; ties keep document order.
    pub retained: Vec<RetainedPassage>,
    /// Set exactly when nothing was retained.
    pub placeholder: bool,
}

impl Filtered {
    pub fn into_rows(
        self,
        project_id: &str,
        cpt: &str,
        text_of: impl Fn(&str) -> Option<String>,
    ) -> Vec<RetrievalRow> {
        if self.placeholder {
            return vec![RetrievalRow::placeholder(project_id, cpt)];
        }
        self.retained
            .into_iter()
            .map(|r| RetrievalRow {
                project_id: project_id.to_string(),
                cpt: cpt.to_string(),
                probability: Some(r.passage.probability),
                section: Some(r.section),
                text: text_of(&r.passage.subsection_id),
                subsection_id: Some(r.passage.subsection_id),
                is_placeholder: false,
            })
            .collect()
    }
}

/// Keeps passages with probability strictly above `tau`, at most
/// `max_covered` from "Covered Services" and `max_exclusions` from
/// "Exclusions & Limitations". Caps are applied per section, then the
/// survivors are merged by probability.
pub fn filter_and_cap(
    scored: &[ScoredPassage],
    config: &RetrievalConfig,
    section_of: &HashMap<String, String>,
) -> Result<Filtered, RetrievalError> {
    config.validate()?;
    let mut ranked: Vec<(usize, &ScoredPassage, &String)> = Vec::with_capacity(scored.len());
    for (i, p) in scored.iter().enumerate() {
        let section = section_of
            .get(&p.subsection_id)
            .ok_or_else(|| RetrievalError::UnknownSubsection(p.subsection_id.clone()))?;
        ranked.push((i, p, section));
    }
    ranked.sort_by(|a, b| {
        b.1.probability
            .total_cmp(&a.1.probability)
            .then(a.0.cmp(&b.0))
    });

    let (mut covered, mut excluded) = (0usize, 0usize);
    let mut retained = Vec::new();
    for (_, p, section) in ranked {
        if p.probability <= config.tau {
            break;
        }
        let slot = match SectionKind::classify(section) {
            SectionKind::Covered => Some((&mut covered, config.max_covered)),
            SectionKind::Exclusions => Some((&mut excluded, config.max_exclusions)),
            SectionKind::Other => None,
        };
        if let Some((count, cap)) = slot {
            if *count >= cap {
                continue;
            }
            *count += 1;
        }
        retained.push(RetainedPassage {
            passage: p.clone(),
            section: section.clone(),
        });
    }
    let placeholder = retained.is_empty();
    Ok(Filtered {
        retained,
        placeholder,
    })
}

/// Rows for one (project, CPT) plus the diagnostic raised along the way, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutput {
    pub rows: Vec<RetrievalRow>,
    pub scored: Vec<ScoredPassage>,
    pub diagnostic: Option<String>,
}

impl RetrievalOutput {
    pub fn is_placeholder(&self) -> bool {
        self.rows.iter().all(|r| r.is_placeholder)
    }

    /// Ids of retained subsections, in row order.
    pub fn retained_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().filter_map(|r| r.subsection_id.as_deref())
    }
}

/// candidate pool → scoring → filtering, rendered as rows. Always yields at
/// least one row.
pub fn retrieve(
    plan: &PlanDocument,
    query: &Query,
    scorer: &dyn Scorer,
    config: &RetrievalConfig,
    project_id: &str,
) -> Result<RetrievalOutput, RetrievalError> {
    config.validate()?;
    let pool = plan::candidate_pool(plan);
    if pool.candidates.is_empty() {
        return Ok(RetrievalOutput {
            rows: vec![RetrievalRow::placeholder(project_id, &query.cpt)],
            scored: Vec::new(),
            diagnostic: pool.diagnostic,
        });
    }
    let set = CandidateSet::new(query.clone(), pool.candidates)?;
    let scored = score_candidates(scorer, &set)?;
    let filtered = filter_and_cap(&scored, config, &plan.section_index())?;
    let diagnostic = filtered.placeholder.then(|| {
        format!(
            "no passage cleared tau = {} for {}; escalate for human review",
            config.tau, query.cpt
        )
    });
    let rows = filtered.into_rows(project_id, &query.cpt, |id| {
        plan.subsection(id).map(|s| s.text.clone())
    });
    Ok(RetrievalOutput {
        rows,
        scored,
        diagnostic,
    })
}

/// Writes rows as JSON Lines.
pub fn write_jsonl<W: Write>(mut out: W, rows: &[RetrievalRow]) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub const CSV_HEADER: [&str; 7] = [
    "project_id",
    "cpt",
    "probability",
    "section",
    "subsection_id",
    "text",
    "is_placeholder",
];

/// Writes rows as CSV with the same column order as the JSON Lines output.
pub fn write_csv<W: Write>(out: W, rows: &[RetrievalRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.project_id.clone(),
            r.cpt.clone(),
            r.probability.map(|p| p.to_string()).unwrap_or_default(),
            r.section.clone().unwrap_or_default(),
            r.subsection_id.clone().unwrap_or_default(),
            r.text.clone().unwrap_or_default(),
            r.is_placeholder.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{COVERED_SERVICES, EXCLUSIONS_AND_LIMITATIONS};

    fn passage(id: &str, p: f64) -> ScoredPassage {
        ScoredPassage {
            subsection_id: id.into(),
            logit: p.ln(),
            probability: p,
        }
    }

    fn sections(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn query_format() {
        assert_eq!(
            build_query("S9212", "home management of preeclampsia").unwrap(),
            "S9212 : home management of preeclampsia"
        );
        assert_eq!(build_query("99213", "").unwrap(), "99213 : ");
        assert!(build_query("", "x").is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let scored = [passage("a", 0.6), passage("b", 0.3), passage("c", 0.1)];
        let map = sections(&[("a", COVERED_SERVICES), ("b", COVERED_SERVICES), ("c", COVERED_SERVICES)]);
        let out = filter_and_cap(&scored, &RetrievalConfig::default(), &map).unwrap();
        let ids: Vec<_> = out.retained.iter().map(|r| r.passage.subsection_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(!out.placeholder);

        let at_tau = [passage("a", 0.25), passage("b", 0.25), passage("c", 0.25), passage("d", 0.25)];
        let map = sections(&[("a", COVERED_SERVICES), ("b", COVERED_SERVICES), ("c", COVERED_SERVICES), ("d", COVERED_SERVICES)]);
        let out = filter_and_cap(&at_tau, &RetrievalConfig::default(), &map).unwrap();
        assert!(out.retained.is_empty());
        assert!(out.placeholder);
    }

    #[test]
    fn caps_apply_per_section() {
        let cfg = RetrievalConfig::new(0.01, 5, 5).unwrap();
        let scored: Vec<_> = (0..7).map(|i| passage(&format!("c{i}"), 0.1 + 0.01 * i as f64)).collect();
        let map: HashMap<_, _> = (0..7).map(|i| (format!("c{i}"), COVERED_SERVICES.to_string())).collect();
        let out = filter_and_cap(&scored, &cfg, &map).unwrap();
        let ids: Vec<_> = out.retained.iter().map(|r| r.passage.subsection_id.as_str()).collect();
        assert_eq!(ids, ["c6", "c5", "c4", "c3", "c2"]);

        let cfg = RetrievalConfig::new(0.01, 1, 2).unwrap();
        let scored = [passage("c1", 0.3), passage("e1", 0.25), passage("c2", 0.2), passage("e2", 0.15), passage("e3", 0.1)];
        let map = sections(&[
            ("c1", COVERED_SERVICES),
            ("c2", COVERED_SERVICES),
            ("e1", EXCLUSIONS_AND_LIMITATIONS),
            ("e2", EXCLUSIONS_AND_LIMITATIONS),
            ("e3", EXCLUSIONS_AND_LIMITATIONS),
        ]);
        let out = filter_and_cap(&scored, &cfg, &map).unwrap();
        let ids: Vec<_> = out.retained.iter().map(|r| r.passage.subsection_id.as_str()).collect();
        assert_eq!(ids, ["c1", "e1", "e2"]);
    }

    #[test]
    fn ties_at_cap_keep_document_order() {
        let cfg = RetrievalConfig::new(0.01, 1, 1).unwrap();
        let scored = [passage("x", 0.2), passage("y", 0.2)];
        let map = sections(&[("x", COVERED_SERVICES), ("y", COVERED_SERVICES)]);
        let out = filter_and_cap(&scored, &cfg, &map).unwrap();
        assert_eq!(out.retained[0].passage.subsection_id, "x");
    }

    #[test]
    fn unknown_subsection_is_an_error() {
        let err = filter_and_cap(&[passage("zz", 0.9)], &RetrievalConfig::default(), &HashMap::new()).unwrap_err();
        assert_eq!(err, RetrievalError::UnknownSubsection("zz".into()));
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::new(0.0, 5, 5).is_err());
        assert!(RetrievalConfig::new(1.0, 5, 5).is_err());
        assert!(RetrievalConfig::new(0.5, 0, 5).is_err());
        assert!(RetrievalConfig::new(0.5, 1, 1).is_ok());
    }

    fn sub(id: &str, text: &str) -> Subsection {
        Subsection {
            id: id.into(),
            title: String::new(),
            text: text.into(),
            section_name: COVERED_SERVICES.into(),
        }
    }

    #[test]
    fn singleton_and_symmetric_sets() {
        let a = sub("a", "maternity care");
        let set = CandidateSet::new(Query::new("X1", "care").unwrap(), vec![&a]).unwrap();
        let scored = score_candidates(&LexicalScorer, &set).unwrap();
        assert_eq!(scored[0].probability, 1.0);

        let b = sub("b", "maternity care");
        let set = CandidateSet::new(Query::new("X1", "maternity").unwrap(), vec![&a, &b]).unwrap();
        let scored = score_candidates(&LexicalScorer, &set).unwrap();
        assert_eq!(scored[0].probability, 0.5);
        assert_eq!(scored[1].probability, 0.5);
        assert!(CandidateSet::new(Query::new("X1", "").unwrap(), vec![]).is_err());
    }

    struct FailsOn(&'static str);
    impl Scorer for FailsOn {
        fn score(&self, _q: &str, p: &Subsection) -> Result<f64, ScorerError> {
            if p.id == self.0 {
                Err(ScorerError::Remote("boom".into()))
            } else {
                Ok(1.0)
            }
        }
    }

    #[test]
    fn scorer_failure_names_candidate() {
        let (a, b, c) = (sub("a", "x"), sub("b", "y"), sub("c", "z"));
        let set = CandidateSet::new(Query::new("Q", "").unwrap(), vec![&a, &b, &c]).unwrap();
        match score_candidates(&FailsOn("b"), &set).unwrap_err() {
            RetrievalError::Scorer { candidate_id, .. } => assert_eq!(candidate_id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rows_serialize_with_exact_field_names() {
        let rows = vec![
            RetrievalRow {
                project_id: "p".into(),
                cpt: "S9212".into(),
                probability: Some(0.5),
                section: Some(COVERED_SERVICES.into()),
                subsection_id: Some("m-1".into()),
                text: Some("text, with comma".into()),
                is_placeholder: false,
            },
            RetrievalRow::placeholder("p", "99999"),
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(s.lines().next().unwrap()).unwrap();
        let keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 7);
        for k in CSV_HEADER {
            assert!(first.get(k).is_some(), "{k}");
        }
        assert!(s.lines().nth(1).unwrap().contains("\"probability\":null"));

        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("project_id,cpt,probability,section,subsection_id,text,is_placeholder\n"));
        assert!(s.contains("\"text, with comma\""));
        assert!(s.ends_with("p,99999,,,,,true\n"));
    }
}
