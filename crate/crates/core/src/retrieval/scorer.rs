//! Query/passage scorers.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net;
use crate::plan::Subsection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("remote scorer: {0}")]
    Remote(String),
    #[error("remote scorer returned no logit for `{0}`")]
    MissingLogit(String),
    #[error("scorer produced a non-finite logit")]
    NonFinite,
    #[error(transparent)]
    Denied(#[from] net::OutboundDenied),
}

/// Produces a logit for a (query, passage) pair.
///
/// Implementations must be deterministic for fixed inputs and callable from
/// several threads.
pub trait Scorer: Send + Sync {
    fn score(&self, query: &str, passage: &Subsection) -> Result<f64, ScorerError>;

    /// Scores a batch. The default scores one passage at a time; the remote
    /// client overrides it to send one request per query.
    fn score_all(&self, query: &str, passages: &[&Subsection]) -> Result<Vec<f64>, ScorerError> {
        passages.iter().map(|p| self.score(query, p)).collect()
    }
}

/// Lowercased alphanumeric tokens, punctuation stripped, as a set.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// The number of distinct tokens shared by query and passage, used directly
/// as the logit.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl LexicalScorer {
    pub fn logit(query: &str, passage_text: &str) -> f64 {
        let q = tokenize(query);
        let p = tokenize(passage_text);
        q.intersection(&p).count() as f64
    }
}

impl Scorer for LexicalScorer {
    fn score(&self, query: &str, passage: &Subsection) -> Result<f64, ScorerError> {
        Ok(Self::logit(query, &passage.text))
    }
}

pub const FEATURE_DIM: usize = 4;

/// Fixed lexical feature extractor: overlap count, IDF-weighted overlap,
/// log passage length and a title-overlap flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    idf: HashMap<String, f64>,
    /// IDF used for tokens never seen when the table was built.
    unseen_idf: f64,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor {
            idf: HashMap::new(),
            unseen_idf: 1.0,
        }
    }
}

impl FeatureExtractor {
    /// Builds a smoothed IDF table, `ln((N + 1) / (df + 1)) + 1`.
    pub fn from_passages<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n = 0usize;
        for text in texts {
            n += 1;
            for tok in tokenize(text) {
                *df.entry(tok).or_default() += 1;
            }
        }
        let idf_of = |d: usize| ((n as f64 + 1.0) / (d as f64 + 1.0)).ln() + 1.0;
        FeatureExtractor {
            idf: df.into_iter().map(|(t, d)| (t, idf_of(d))).collect(),
            unseen_idf: idf_of(0),
        }
    }

    pub fn idf(&self, token: &str) -> f64 {
        self.idf.get(token).copied().unwrap_or(self.unseen_idf)
    }

    pub fn features(&self, query: &str, passage: &Subsection) -> [f64; FEATURE_DIM] {
        let q = tokenize(query);
        let p = tokenize(&passage.text);
        let shared: Vec<&String> = q.intersection(&p).collect();
        let title = tokenize(&passage.title);
        let title_hit = q.intersection(&title).next().is_some();
        [
            shared.len() as f64,
            shared.iter().map(|t| self.idf(t)).sum(),
            (1.0 + p.len() as f64).ln(),
            if title_hit { 1.0 } else { 0.0 },
        ]
    }
}

/// Linear model over [`FeatureExtractor`] features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFeatureScorer {
    pub weights: [f64; FEATURE_DIM],
    pub extractor: FeatureExtractor,
}

impl LinearFeatureScorer {
    pub fn new(extractor: FeatureExtractor) -> Self {
        LinearFeatureScorer {
            weights: [0.0; FEATURE_DIM],
            extractor,
        }
    }

    pub fn logit_of(&self, features: &[f64; FEATURE_DIM]) -> f64 {
        self.weights.iter().zip(features).map(|(w, f)| w * f).sum()
    }
}

impl Scorer for LinearFeatureScorer {
    fn score(&self, query: &str, passage: &Subsection) -> Result<f64, ScorerError> {
        let logit = self.logit_of(&self.extractor.features(query, passage));
        if logit.is_finite() {
            Ok(logit)
        } else {
            Err(ScorerError::NonFinite)
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    query: &'a str,
    passages: Vec<PassageBody<'a>>,
}

#[derive(Serialize)]
struct PassageBody<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    logits: Vec<IdLogit>,
}

#[derive(Deserialize)]
struct IdLogit {
    id: String,
    logit: f64,
}

/// HTTP client for an external cross-encoder: `POST {base}/score`.
///
/// Logits are cached per (query, subsection id) for the lifetime of the
/// client so repeated scoring within a run is deterministic.
pub struct RemoteCrossEncoderClient {
    base_url: String,
    timeout: Duration,
    http: OnceLock<reqwest::blocking::Client>,
    cache: Mutex<HashMap<(String, String), f64>>,
}

impl RemoteCrossEncoderClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        RemoteCrossEncoderClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout,
            http: OnceLock::new(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/score", self.base_url)
    }

    fn fetch(&self, query: &str, passages: &[&Subsection]) -> Result<HashMap<String, f64>, ScorerError> {
        let url = self.endpoint();
        net::authorize(&url)?;
        let http = match self.http.get() {
            Some(c) => c,
            None => {
                let client = reqwest::blocking::Client::builder()
                    .timeout(self.timeout)
                    .build()
                    .map_err(|e| ScorerError::Remote(e.to_string()))?;
                self.http.get_or_init(|| client)
            }
        };
        let body = ScoreRequest {
            query,
            passages: passages
                .iter()
                .map(|p| PassageBody {
                    id: &p.id,
                    text: &p.text,
                })
                .collect(),
        };
        let resp = http
            .post(&url)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| ScorerError::Remote(e.to_string()))?;
        let parsed: ScoreResponse = resp.json().map_err(|e| ScorerError::Remote(e.to_string()))?;
        Ok(parsed.logits.into_iter().map(|l| (l.id, l.logit)).collect())
    }
}

impl Scorer for RemoteCrossEncoderClient {
    fn score(&self, query: &str, passage: &Subsection) -> Result<f64, ScorerError> {
        Ok(self.score_all(query, &[passage])?[0])
    }

    fn score_all(&self, query: &str, passages: &[&Subsection]) -> Result<Vec<f64>, ScorerError> {
        let missing: Vec<&Subsection> = {
            let cache = self.cache.lock().expect("scorer cache poisoned");
            passages
                .iter()
                .copied()
                .filter(|p| !cache.contains_key(&(query.to_string(), p.id.clone())))
                .collect()
        };
        if !missing.is_empty() {
            let fetched = self.fetch(query, &missing)?;
            let mut cache = self.cache.lock().expect("scorer cache poisoned");
            for p in &missing {
                let logit = *fetched
                    .get(&p.id)
                    .ok_or_else(|| ScorerError::MissingLogit(p.id.clone()))?;
                if !logit.is_finite() {
                    return Err(ScorerError::NonFinite);
                }
                cache.insert((query.to_string(), p.id.clone()), logit);
            }
        }
        let cache = self.cache.lock().expect("scorer cache poisoned");
        Ok(passages
            .iter()
            .map(|p| cache[&(query.to_string(), p.id.clone())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(id: &str, title: &str, text: &str) -> Subsection {
        Subsection {
            id: id.into(),
            title: title.into(),
            text: text.into(),
            section_name: crate::plan::COVERED_SERVICES.into(),
        }
    }

    #[test]
    fn tokenizer_lowercases_and_strips_punctuation() {
        let toks: Vec<_> = tokenize("S9212 : Home-management, of PREECLAMPSIA!").into_iter().collect();
        assert_eq!(toks, ["home", "management", "of", "preeclampsia", "s9212"]);
    }

    #[test]
    fn lexical_logit() {
        // shared tokens {home, care}
        let l = LexicalScorer::logit("home care visit", "Home nursing care services.");
        assert_eq!(l, 2.0);
        assert_eq!(LexicalScorer::logit("anything", "..."), 0.0);
    }

    #[test]
    fn features_are_fixed() {
        let ex = FeatureExtractor::from_passages(["a b c", "a d"]);
        // df(a) = 2 -> ln(3/3) + 1 = 1; df(b) = 1 -> ln(3/2) + 1
        assert!((ex.idf("a") - 1.0).abs() < 1e-15);
        assert!((ex.idf("b") - (1.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!((ex.idf("zzz") - (3f64.ln() + 1.0)).abs() < 1e-15);
        let f = ex.features("a b x", &sub("s", "X ray", "a b c"));
        assert_eq!(f[0], 2.0);
        assert!((f[1] - (2.0 + 1.5f64.ln())).abs() < 1e-15);
        assert!((f[2] - 4f64.ln()).abs() < 1e-15);
        assert_eq!(f[3], 1.0);
    }

    #[test]
    fn remote_client_refuses_when_denied() {
        // Runs in its own test process slot; the guard is restored afterwards.
        let was = net::is_denied();
        net::deny_outbound();
        let client = RemoteCrossEncoderClient::new("http://scorer.invalid", Duration::from_secs(1));
        let s = sub("a", "", "text");
        let err = client.score("q", &s).unwrap_err();
        assert!(matches!(err, ScorerError::Denied(_)));
        if !was {
            net::allow_outbound();
        }
    }
}
