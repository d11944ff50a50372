//! Per-pair relative optimum: selection over a candidate set, monotone
//! evolution when new methods arrive, and the on-disk cache.

mod store;

pub use store::{cache_load, cache_load_expecting, cache_store, INDEX_FILE, INDEX_MAGIC};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::fusion::FusionMethodId;
use crate::image::{GrayImage, ImageError, ImagePair};
use crate::metrics::{Evaluator, MetricError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("pair '{0}' is not in the cache")]
    UnknownPair(String),
    #[error("method '{method}' was already evaluated for pair '{pair}'")]
    DuplicateMethodForPair { pair: String, method: String },
    #[error("evaluator tag mismatch: cache has '{cached}', evaluator is '{current}'")]
    TagMismatch { cached: String, current: String },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("invalid pair id '{0}'")]
    InvalidPairId(String),
    #[error("evaluation failed for method '{method}': {source}")]
    Evaluation {
        method: String,
        #[source]
        source: MetricError,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o failure on {0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// The best candidate seen so far for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalSolution {
    pub pair_id: String,
    pub fused: GrayImage,
    pub method: FusionMethodId,
    pub score: f64,
    pub evaluator_tag: String,
}

/// Whether `(score, name)` beats the incumbent: strictly higher score, or an
/// equal score with a lexicographically smaller method name.
fn beats(score: f64, name: &str, best_score: f64, best_name: &str) -> bool {
    match score.total_cmp(&best_score) {
        Ordering::Greater => true,
        Ordering::Equal => name < best_name,
        Ordering::Less => false,
    }
}

/// Scores every candidate and returns them alongside their images.
pub fn score_candidates(
    pair: &ImagePair,
    candidates: Vec<(FusionMethodId, GrayImage)>,
    evaluator: &Evaluator,
) -> Result<Vec<(FusionMethodId, GrayImage, f64)>, OracleError> {
    candidates
        .into_par_iter()
        .map(|(id, img)| {
            let s = evaluator
                .score(pair, &img)
                .map_err(|source| OracleError::Evaluation {
                    method: id.name.clone(),
                    source,
                })?;
            Ok((id, img, s))
        })
        .collect()
}

/// Argmax over pre-scored candidates; ties go to the smallest method name.
pub fn select_scored(
    pair_id: &str,
    scored: &[(FusionMethodId, GrayImage, f64)],
    evaluator_tag: &str,
) -> Result<OptimalSolution, OracleError> {
    let mut best: Option<&(FusionMethodId, GrayImage, f64)> = None;
    for c in scored {
        best = match best {
            Some(b) if !beats(c.2, &c.0.name, b.2, &b.0.name) => Some(b),
            _ => Some(c),
        };
    }
    let (id, img, score) = best.ok_or(OracleError::EmptyCandidates)?;
    Ok(OptimalSolution {
        pair_id: pair_id.to_string(),
        fused: img.clone(),
        method: id.clone(),
        score: *score,
        evaluator_tag: evaluator_tag.to_string(),
    })
}

/// The candidate maximizing the evaluator for `pair`.
pub fn select_optimal(
    pair: &ImagePair,
    candidates: Vec<(FusionMethodId, GrayImage)>,
    evaluator: &Evaluator,
) -> Result<OptimalSolution, OracleError> {
    if candidates.is_empty() {
        return Err(OracleError::EmptyCandidates);
    }
    let scored = score_candidates(pair, candidates, evaluator)?;
    select_scored(&pair.id, &scored, &evaluator.tag())
}

/// Outcome of folding one new candidate into the cache.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolveOutcome {
    pub pair_id: String,
    pub previous_method: FusionMethodId,
    pub previous_score: f64,
    pub candidate_score: f64,
    pub replaced: bool,
}

impl EvolveOutcome {
    /// Change of the cached score; never negative.
    pub fn delta(&self) -> f64 {
        if self.replaced {
            self.candidate_score - self.previous_score
        } else {
            0.0
        }
    }
}

/// Cached optima plus the score of every candidate ever evaluated, bound to
/// one evaluator configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCache {
    evaluator_tag: String,
    optima: BTreeMap<String, OptimalSolution>,
    candidates: BTreeMap<String, Vec<(FusionMethodId, f64)>>,
}

/// Pair ids become file names, so path separators, tabs, control characters
/// and leading dots are rejected.
pub fn validate_pair_id(id: &str) -> Result<(), OracleError> {
    let bad = id.is_empty()
        || id.starts_with('.')
        || id
            .chars()
            .any(|c| c.is_control() || c == '/' || c == '\\' || c == '\t');
    if bad {
        return Err(OracleError::InvalidPairId(id.to_string()));
    }
    Ok(())
}

impl OracleCache {
    pub fn new(evaluator_tag: impl Into<String>) -> Self {
        Self {
            evaluator_tag: evaluator_tag.into(),
            optima: BTreeMap::new(),
            candidates: BTreeMap::new(),
        }
    }

    pub fn evaluator_tag(&self) -> &str {
        &self.evaluator_tag
    }

    pub fn len(&self) -> usize {
        self.optima.len()
    }

    pub fn is_empty(&self) -> bool {
        self.optima.is_empty()
    }

    pub fn get(&self, pair_id: &str) -> Option<&OptimalSolution> {
        self.optima.get(pair_id)
    }

    pub fn optima(&self) -> impl Iterator<Item = &OptimalSolution> {
        self.optima.values()
    }

    /// Every candidate scored for `pair_id`, sorted by method name.
    pub fn candidate_scores(&self, pair_id: &str) -> Option<&[(FusionMethodId, f64)]> {
        self.candidates.get(pair_id).map(Vec::as_slice)
    }

    fn check_tag(&self, evaluator: &Evaluator) -> Result<(), OracleError> {
        let current = evaluator.tag();
        if current != self.evaluator_tag {
            return Err(OracleError::TagMismatch {
                cached: self.evaluator_tag.clone(),
                current,
            });
        }
        Ok(())
    }

    /// Installs a first optimum from scored candidates, replacing any prior
    /// record of the pair.
    pub fn insert_scored(
        &mut self,
        pair_id: &str,
        scored: &[(FusionMethodId, GrayImage, f64)],
    ) -> Result<&OptimalSolution, OracleError> {
        validate_pair_id(pair_id)?;
        let best = select_scored(pair_id, scored, &self.evaluator_tag)?;
        let mut list: Vec<(FusionMethodId, f64)> =
            scored.iter().map(|(id, _, s)| (id.clone(), *s)).collect();
        list.sort_by(|a, b| a.0.name.cmp(&b.0.name));
        if list.windows(2).any(|w| w[0].0.name == w[1].0.name) {
            return Err(OracleError::CorruptIndex(format!(
                "duplicate method names for pair '{pair_id}'"
            )));
        }
        self.candidates.insert(pair_id.to_string(), list);
        self.optima.insert(pair_id.to_string(), best);
        Ok(&self.optima[pair_id])
    }

    /// Scores `candidates` and installs the pair's optimum.
    pub fn populate(
        &mut self,
        pair: &ImagePair,
        candidates: Vec<(FusionMethodId, GrayImage)>,
        evaluator: &Evaluator,
    ) -> Result<&OptimalSolution, OracleError> {
        self.check_tag(evaluator)?;
        if candidates.is_empty() {
            return Err(OracleError::EmptyCandidates);
        }
        let scored = score_candidates(pair, candidates, evaluator)?;
        self.insert_scored(&pair.id, &scored)
    }

    /// Folds a pre-scored candidate into the pair's record.
    pub fn evolve_scored(
        &mut self,
        pair_id: &str,
        method: FusionMethodId,
        fused: GrayImage,
        score: f64,
    ) -> Result<EvolveOutcome, OracleError> {
        let list = self
            .candidates
            .get_mut(pair_id)
            .ok_or_else(|| OracleError::UnknownPair(pair_id.to_string()))?;
        let pos = match list.binary_search_by(|(id, _)| id.name.as_str().cmp(&method.name)) {
            Ok(_) => {
                return Err(OracleError::DuplicateMethodForPair {
                    pair: pair_id.to_string(),
                    method: method.name,
                })
            }
            Err(pos) => pos,
        };
        list.insert(pos, (method.clone(), score));
        let current = self
            .optima
            .get_mut(pair_id)
            .expect("optimum per listed pair");
        let outcome = EvolveOutcome {
            pair_id: pair_id.to_string(),
            previous_method: current.method.clone(),
            previous_score: current.score,
            candidate_score: score,
            replaced: beats(score, &method.name, current.score, &current.method.name),
        };
        if outcome.replaced {
            current.fused = fused;
            current.method = method;
            current.score = score;
        }
        Ok(outcome)
    }

    /// Scores a new method's output for `pair` and keeps the better of it and
    /// the cached optimum.
    pub fn evolve(
        &mut self,
        pair: &ImagePair,
        method: FusionMethodId,
        candidate: GrayImage,
        evaluator: &Evaluator,
    ) -> Result<EvolveOutcome, OracleError> {
        self.check_tag(evaluator)?;
        let list = self
            .candidates
            .get(&pair.id)
            .ok_or_else(|| OracleError::UnknownPair(pair.id.clone()))?;
        if list.iter().any(|(id, _)| id.name == method.name) {
            return Err(OracleError::DuplicateMethodForPair {
                pair: pair.id.clone(),
                method: method.name,
            });
        }
        let score =
            evaluator
                .score(pair, &candidate)
                .map_err(|source| OracleError::Evaluation {
                    method: method.name.clone(),
                    source,
                })?;
        self.evolve_scored(&pair.id, method, candidate, score)
    }

    pub(crate) fn insert_raw(
        &mut self,
        solution: OptimalSolution,
        list: Vec<(FusionMethodId, f64)>,
    ) {
        self.candidates.insert(solution.pair_id.clone(), list);
        self.optima.insert(solution.pair_id.clone(), solution);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(name: &str) -> FusionMethodId {
        FusionMethodId::new(name, 1)
    }

    fn img(v: f64) -> GrayImage {
        GrayImage::constant(4, 4, v)
    }

    #[test]
    fn argmax_with_name_ties() {
        let scored = vec![(id("avg"), img(0.1), 0.40), (id("lp"), img(0.2), 0.70)];
        assert_eq!(select_scored("p", &scored, "t").unwrap().method.name, "lp");
        let tied = vec![(id("rp"), img(0.1), 0.5), (id("lp"), img(0.2), 0.5)];
        assert_eq!(select_scored("p", &tied, "t").unwrap().method.name, "lp");
        let single = vec![(id("tsal"), img(0.3), -4.0)];
        assert_eq!(
            select_scored("p", &single, "t").unwrap().method.name,
            "tsal"
        );
        assert!(matches!(
            select_scored("p", &[], "t"),
            Err(OracleError::EmptyCandidates)
        ));
    }

    #[test]
    fn evolve_max_semantics() {
        let mut cache = OracleCache::new("t");
        cache
            .insert_scored("p", &[(id("lp"), img(0.2), 0.70)])
            .unwrap();
        let o = cache.evolve_scored("p", id("avg"), img(0.1), 0.65).unwrap();
        assert!(!o.replaced);
        assert_eq!(o.delta(), 0.0);
        assert_eq!(cache.get("p").unwrap().score, 0.70);
        assert_eq!(cache.candidate_scores("p").unwrap().len(), 2);
        let o = cache
            .evolve_scored("p", id("tsal"), img(0.4), 0.90)
            .unwrap();
        assert!(o.replaced);
        assert!((o.delta() - 0.2).abs() < 1e-12);
        let best = cache.get("p").unwrap();
        assert_eq!((best.method.name.as_str(), best.score), ("tsal", 0.90));
        assert_eq!(best.fused, img(0.4));
    }

    #[test]
    fn evolve_errors() {
        let mut cache = OracleCache::new("t");
        cache
            .insert_scored("p", &[(id("lp"), img(0.2), 0.7)])
            .unwrap();
        assert!(matches!(
            cache.evolve_scored("q", id("avg"), img(0.1), 0.1),
            Err(OracleError::UnknownPair(_))
        ));
        assert!(matches!(
            cache.evolve_scored("p", id("lp"), img(0.1), 0.9),
            Err(OracleError::DuplicateMethodForPair { .. })
        ));
        assert_eq!(cache.get("p").unwrap().score, 0.7);
    }

    #[test]
    fn pair_id_validation() {
        let mut cache = OracleCache::new("t");
        for bad in ["", "a/b", "x\ty", ".hidden"] {
            assert!(cache
                .insert_scored(bad, &[(id("lp"), img(0.2), 0.7)])
                .is_err());
        }
    }
}
