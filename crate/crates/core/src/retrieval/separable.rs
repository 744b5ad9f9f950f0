//! Seeded multiple-choice datasets that are separable by construction: the
//! positive passage shares at least three tokens with its query and every
//! negative shares none.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::TrainingExample;
use super::{CandidateSet, Query, RetrievalError};
use crate::plan::{Subsection, COVERED_SERVICES};

#[derive(Debug, Clone)]
pub struct ChoiceItem {
    pub query: Query,
    pub candidates: Vec<Subsection>,
    pub positive: usize,
}

impl ChoiceItem {
    pub fn example(&self) -> Result<TrainingExample<'_>, RetrievalError> {
        Ok(TrainingExample {
            set: CandidateSet::new(self.query.clone(), self.candidates.iter().collect())?,
            positive: self.positive,
        })
    }
}

pub fn examples(items: &[ChoiceItem]) -> Result<Vec<TrainingExample<'_>>, RetrievalError> {
    items.iter().map(ChoiceItem::example).collect()
}

fn words(prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
    range.map(|k| format!("{prefix}{k}")).collect()
}

/// `n` items with 2 to 8 candidates each. Token namespaces are per item, so
/// distinct seeds or offsets never leak vocabulary between items.
pub fn separable_items(n: usize, seed: u64) -> Vec<ChoiceItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let ns = format!("s{seed}i{i}");
            let query_words = words(&format!("{ns}q"), 0..rng.gen_range(4..9));
            let n_cands = rng.gen_range(2..=8);
            let positive = rng.gen_range(0..n_cands);
            let mut filler = 0usize;
            let mut fill = |k: usize| {
                let w = words(&format!("{ns}f"), filler..filler + k);
                filler += k;
                w
            };
            let candidates = (0..n_cands)
                .map(|c| {
                    let len = rng.gen_range(3..20);
                    let mut text = fill(len);
                    if c == positive {
                        let shared = rng.gen_range(3..=query_words.len());
                        let mut picked: Vec<String> =
                            query_words.choose_multiple(&mut rng, shared).cloned().collect();
                        text.append(&mut picked);
                        text.shuffle(&mut rng);
                    }
                    let title = fill(2).join(" ");
                    Subsection {
                        id: format!("{ns}c{c}"),
                        title,
                        text: text.join(" "),
                        section_name: COVERED_SERVICES.to_string(),
                    }
                })
                .collect();
            ChoiceItem {
                query: Query {
                    cpt: format!("{ns}code"),
                    description: query_words.join(" "),
                },
                candidates,
                positive,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::tokenize;

    #[test]
    fn separable_by_construction() {
        for item in separable_items(50, 3) {
            let q = tokenize(&item.query.text());
            for (c, cand) in item.candidates.iter().enumerate() {
                let shared = q.intersection(&tokenize(&cand.text)).count();
                if c == item.positive {
                    assert!(shared >= 3);
                } else {
                    assert_eq!(shared, 0);
                }
                assert_eq!(q.intersection(&tokenize(&cand.title)).count(), 0);
            }
        }
    }

    #[test]
    fn seeded() {
        let a = separable_items(5, 11);
        let b = separable_items(5, 11);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.candidates, y.candidates);
            assert_eq!(x.positive, y.positive);
        }
    }
}
