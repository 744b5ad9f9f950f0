//! Full-batch gradient descent for [`LinearFeatureScorer`] on the
//! multiple-choice objective.

use super::loss::{mc_loss, mc_loss_grad};
use super::scorer::{FeatureExtractor, LinearFeatureScorer, FEATURE_DIM};
use super::{CandidateSet, RetrievalError};

#[derive(Debug, Clone)]
pub struct TrainingExample<'a> {
    pub set: CandidateSet<'a>,
    pub positive: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub scorer: LinearFeatureScorer,
    /// Mean loss before each epoch, followed by the loss after the last one.
    pub losses: Vec<f64>,
}

struct Featurized {
    features: Vec<[f64; FEATURE_DIM]>,
    positive: usize,
}

fn mean_loss_and_grad(
    scorer: &LinearFeatureScorer,
    data: &[Featurized],
) -> Result<(f64, [f64; FEATURE_DIM]), RetrievalError> {
    let mut total = 0.0;
    let mut grad = [0.0; FEATURE_DIM];
    for ex in data {
        let logits: Vec<f64> = ex.features.iter().map(|f| scorer.logit_of(f)).collect();
        total += mc_loss(&logits, ex.positive)?;
        let dlogits = mc_loss_grad(&logits, ex.positive)?;
        for (d, f) in dlogits.iter().zip(&ex.features) {
            for k in 0..FEATURE_DIM {
                grad[k] += d * f[k];
            }
        }
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Trains from zero weights. `extractor` is fixed for the whole run.
pub fn train_linear_scorer(
    dataset: &[TrainingExample<'_>],
    extractor: FeatureExtractor,
    epochs: usize,
    learning_rate: f64,
) -> Result<TrainingRun, RetrievalError> {
    if dataset.is_empty() {
        return Err(RetrievalError::Argument("empty training set".into()));
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(RetrievalError::Argument(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    let query_texts: Vec<String> = dataset.iter().map(|ex| ex.set.query.text()).collect();
    let mut data = Vec::with_capacity(dataset.len());
    for (ex, query) in dataset.iter().zip(&query_texts) {
        let n = ex.set.candidates().len();
        if ex.positive >= n {
            return Err(RetrievalError::Argument(format!(
                "positive index {} out of range for {n} candidates",
                ex.positive
            )));
        }
        data.push(Featurized {
            features: ex
                .set
                .candidates()
                .iter()
                .map(|c| extractor.features(query, c))
                .collect(),
            positive: ex.positive,
        });
    }

    let mut scorer = LinearFeatureScorer::new(extractor);
    let mut losses = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let (loss, grad) = mean_loss_and_grad(&scorer, &data)?;
        losses.push(loss);
        for (w, g) in scorer.weights.iter_mut().zip(grad) {
            *w -= learning_rate * g;
        }
    }
    losses.push(mean_loss_and_grad(&scorer, &data)?.0);
    Ok(TrainingRun { scorer, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{Subsection, COVERED_SERVICES};
    use crate::retrieval::Query;

    fn sub(id: &str, text: &str) -> Subsection {
        Subsection {
            id: id.into(),
            title: String::new(),
            text: text.into(),
            section_name: COVERED_SERVICES.into(),
        }
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let a = sub("a", "alpha beta");
        let b = sub("b", "gamma");
        let ex = TrainingExample {
            set: CandidateSet::new(Query::new("C1", "alpha beta").unwrap(), vec![&a, &b]).unwrap(),
            positive: 0,
        };
        let run = train_linear_scorer(&[ex], FeatureExtractor::default(), 0, 0.1).unwrap();
        assert_eq!(run.scorer.weights, [0.0; FEATURE_DIM]);
        assert_eq!(run.losses.len(), 1);
        assert!((run.losses[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn singleton_loss_is_zero() {
        let a = sub("a", "alpha");
        let ex = TrainingExample {
            set: CandidateSet::new(Query::new("C1", "zeta").unwrap(), vec![&a]).unwrap(),
            positive: 0,
        };
        let run = train_linear_scorer(&[ex], FeatureExtractor::default(), 5, 1.0).unwrap();
        assert!(run.losses.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(train_linear_scorer(&[], FeatureExtractor::default(), 1, 0.1).is_err());
        let a = sub("a", "alpha");
        let ex = TrainingExample {
            set: CandidateSet::new(Query::new("C1", "").unwrap(), vec![&a]).unwrap(),
            positive: 3,
        };
        assert!(train_linear_scorer(std::slice::from_ref(&ex), FeatureExtractor::default(), 1, 0.1).is_err());
        let ok = TrainingExample { positive: 0, ..ex };
        assert!(train_linear_scorer(&[ok], FeatureExtractor::default(), 1, 0.0).is_err());
    }
}
