//! Sentence-based weighted label ensemble.
//!
//! Every sentence votes for its cosine-nearest class; the vote weight is the
//! sentence's top-1/top-2 similarity gap normalized within the document, so
//! vague sentences contribute little. A document's class distribution is the
//! sum of its sentences' weighted votes.

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{cosine, cosine_or_zero};
use crate::ClassId;

/// One sentence's vote: nearest class and its confidence gap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceVote {
    pub doc_id: String,
    pub sent_index: usize,
    /// Argmax-cosine class; ties break toward the lowest class id.
    pub top_class: ClassId,
    /// Top-1 minus top-2 cosine similarity; always >= 0.
    pub gap: f64,
    /// Normalized vote weight within the document.
    pub weight: f64,
}

/// Per-document probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub doc_id: String,
    /// Nonnegative, sums to 1.
    pub probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn argmax(&self) -> ClassId {
        // ties toward the lowest class id
        let mut best = 0;
        for (k, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

/// Sentence-weight mechanism for the initial label ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Every sentence weighs 1/|d|.
    Equal,
    /// Mean cosine similarity to all later sentences (lead-biased).
    Centrality,
    /// Top-1/top-2 similarity gap (the default mechanism).
    Discriminative,
    /// Elementwise product of centrality and discriminativeness.
    Both,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WeightMode::Equal => "equal",
            WeightMode::Centrality => "centrality",
            WeightMode::Discriminative => "discriminative",
            WeightMode::Both => "both",
        };
        f.write_str(s)
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(WeightMode::Equal),
            "centrality" => Ok(WeightMode::Centrality),
            "discriminative" => Ok(WeightMode::Discriminative),
            "both" => Ok(WeightMode::Both),
            other => Err(Error::Config(format!(
                "unknown weight mode {other:?} (expected equal|centrality|discriminative|both)"
            ))),
        }
    }
}

/// Nearest class and top-1/top-2 cosine gap for one sentence vector.
pub fn vote(sent_vector: &Array1<f64>, class_vectors: &[Array1<f64>]) -> Result<(ClassId, f64)> {
    if class_vectors.len() < 2 {
        return Err(Error::Invalid("vote needs at least 2 classes".into()));
    }
    let mut sims = Vec::with_capacity(class_vectors.len());
    for (k, c) in class_vectors.iter().enumerate() {
        let s = cosine(sent_vector.view(), c.view()).ok_or_else(|| {
            Error::Numeric(format!("zero-norm vector in vote (class {k} or sentence)"))
        })?;
        sims.push(s);
    }
    let mut top = 0;
    for (k, s) in sims.iter().enumerate() {
        if *s > sims[top] {
            top = k;
        }
    }
    let mut sorted = sims.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite cosine"));
    Ok((top, sorted[0] - sorted[1]))
}

/// Normalize raw nonnegative weights to sum to 1; uniform when all zero.
pub fn normalize_weights(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

/// Vote every sentence of one document and fill in gap-normalized weights.
pub fn sentence_votes(
    doc_id: &str,
    sent_vectors: &[Array1<f64>],
    class_vectors: &[Array1<f64>],
) -> Result<Vec<SentenceVote>> {
    if sent_vectors.is_empty() {
        return Err(Error::Invalid(format!("document {doc_id} has no sentences")));
    }
    let mut tops = Vec::with_capacity(sent_vectors.len());
    let mut gaps = Vec::with_capacity(sent_vectors.len());
    for v in sent_vectors {
        let (top, gap) = vote(v, class_vectors)?;
        tops.push(top);
        gaps.push(gap);
    }
    let weights = normalize_weights(&gaps);
    Ok(tops
        .into_iter()
        .zip(gaps)
        .zip(weights)
        .enumerate()
        .map(|(j, ((top_class, gap), weight))| SentenceVote {
            doc_id: doc_id.to_string(),
            sent_index: j,
            top_class,
            gap,
            weight,
        })
        .collect())
}

/// Class distribution from explicit per-sentence weights (must sum to 1).
pub fn document_distribution_with_weights(
    votes: &[SentenceVote],
    weights: &[f64],
    n_classes: usize,
) -> ClassDistribution {
    debug_assert_eq!(votes.len(), weights.len());
    let mut probs = vec![0.0; n_classes];
    for (v, w) in votes.iter().zip(weights) {
        probs[v.top_class] += w;
    }
    ClassDistribution {
        doc_id: votes.first().map(|v| v.doc_id.clone()).unwrap_or_default(),
        probs,
    }
}

/// Class distribution of one document from its gap-weighted votes.
pub fn document_distribution(votes: &[SentenceVote], n_classes: usize) -> Result<ClassDistribution> {
    if votes.is_empty() {
        return Err(Error::Invalid("document_distribution needs >= 1 vote".into()));
    }
    let weights: Vec<f64> = votes.iter().map(|v| v.weight).collect();
    Ok(document_distribution_with_weights(votes, &weights, n_classes))
}

/// Recomputed class distribution for the feedback loop: vote weights are
/// proportional to `alpha_j * gap_j`, where the votes come from the learned
/// contextualized sentence vectors and `alpha` from attentive pooling.
pub fn document_distribution_weighted(
    votes: &[SentenceVote],
    alphas: &[f64],
    n_classes: usize,
) -> Result<ClassDistribution> {
    if votes.is_empty() {
        return Err(Error::Invalid("document_distribution needs >= 1 vote".into()));
    }
    if votes.len() != alphas.len() {
        return Err(Error::Invalid(format!(
            "{} votes but {} attention weights",
            votes.len(),
            alphas.len()
        )));
    }
    let raw: Vec<f64> = votes
        .iter()
        .zip(alphas)
        .map(|(v, a)| a * v.gap)
        .collect();
    let weights = normalize_weights(&raw);
    Ok(document_distribution_with_weights(votes, &weights, n_classes))
}

/// Per-sentence weights for the weight-mode ablation.
///
/// `centrality` of sentence `j` is its mean cosine similarity to all
/// sentences after it (the final sentence gets 0 before normalization);
/// negative means are clamped to 0 so the weights stay a distribution.
pub fn ablation_weights(
    mode: WeightMode,
    sent_vectors: &[Array1<f64>],
    votes: &[SentenceVote],
) -> Vec<f64> {
    let n = sent_vectors.len();
    match mode {
        WeightMode::Equal => vec![1.0 / n as f64; n],
        WeightMode::Discriminative => {
            let gaps: Vec<f64> = votes.iter().map(|v| v.gap).collect();
            normalize_weights(&gaps)
        }
        WeightMode::Centrality => normalize_weights(&raw_centrality(sent_vectors)),
        WeightMode::Both => {
            let c = normalize_weights(&raw_centrality(sent_vectors));
            let d = {
                let gaps: Vec<f64> = votes.iter().map(|v| v.gap).collect();
                normalize_weights(&gaps)
            };
            let prod: Vec<f64> = c.iter().zip(&d).map(|(a, b)| a * b).collect();
            normalize_weights(&prod)
        }
    }
}

fn raw_centrality(sent_vectors: &[Array1<f64>]) -> Vec<f64> {
    let n = sent_vectors.len();
    (0..n)
        .map(|j| {
            if j + 1 >= n {
                return 0.0;
            }
            let mean: f64 = (j + 1..n)
                .map(|i| cosine_or_zero(sent_vectors[j].view(), sent_vectors[i].view()))
                .sum::<f64>()
                / (n - j - 1) as f64;
            mean.max(0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn classes2() -> Vec<Array1<f64>> {
        vec![array![1.0, 0.0], array![0.0, 1.0]]
    }

    #[test]
    fn colinear_sentence_gets_full_gap() {
        let (top, gap) = vote(&array![2.0, 0.0], &classes2()).unwrap();
        assert_eq!(top, 0);
        assert_abs_diff_eq!(gap, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equidistant_sentence_ties_to_lowest_id_with_zero_gap() {
        let (top, gap) = vote(&array![1.0, 1.0], &classes2()).unwrap();
        assert_eq!(top, 0);
        assert_abs_diff_eq!(gap, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gap_is_top1_minus_top2_of_three() {
        // cosines to the three axis classes are exactly (0.9, 0.6, 0.1)
        // after normalizing the sentence vector appropriately: use a direct
        // construction instead — vector whose dot with orthonormal classes
        // gives those cosines.
        let classes = vec![
            array![1.0, 0.0, 0.0],
            array![0.0, 1.0, 0.0],
            array![0.0, 0.0, 1.0],
        ];
        // unit-norm trick: v has components (0.9, 0.6, 0.1)/|v| toward each
        // axis, so cos(v, e_k) = v_k/|v|. Scale so cosines are (0.9,0.6,0.1):
        // impossible exactly on 3 axes unless |v|=1 and components match.
        let v = array![0.9, 0.6, 0.1];
        let n = (0.81f64 + 0.36 + 0.01).sqrt();
        let sims: Vec<f64> = (0..3).map(|k| v[k] / n).collect();
        let (top, gap) = vote(&v, &classes).unwrap();
        assert_eq!(top, 0);
        assert_abs_diff_eq!(gap, sims[0] - sims[1], epsilon = 1e-12);
    }

    #[test]
    fn zero_norm_vector_errors() {
        assert!(vote(&array![0.0, 0.0], &classes2()).is_err());
    }

    fn mk_votes(tops: &[ClassId], gaps: &[f64]) -> Vec<SentenceVote> {
        let weights = normalize_weights(gaps);
        tops.iter()
            .zip(gaps)
            .zip(weights)
            .enumerate()
            .map(|(j, ((t, g), w))| SentenceVote {
                doc_id: "d".into(),
                sent_index: j,
                top_class: *t,
                gap: *g,
                weight: w,
            })
            .collect()
    }

    #[test]
    fn worked_ensemble_example_gives_90_10() {
        // gaps (0.8, 0.1, 0.1) voting (science, science, politics)
        let votes = mk_votes(&[0, 0, 1], &[0.8, 0.1, 0.1]);
        let dist = document_distribution(&votes, 2).unwrap();
        assert_abs_diff_eq!(dist.probs[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(dist.probs[1], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn single_sentence_document_is_one_hot() {
        let votes = mk_votes(&[1], &[0.3]);
        let dist = document_distribution(&votes, 3).unwrap();
        assert_eq!(dist.probs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn all_zero_gaps_fall_back_to_vote_frequencies() {
        let votes = mk_votes(&[0, 1, 1, 1], &[0.0, 0.0, 0.0, 0.0]);
        let dist = document_distribution(&votes, 2).unwrap();
        assert_abs_diff_eq!(dist.probs[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(dist.probs[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn uniform_alpha_reduces_to_plain_distribution() {
        let votes = mk_votes(&[0, 1, 0], &[0.5, 0.2, 0.3]);
        let plain = document_distribution(&votes, 2).unwrap();
        let weighted = document_distribution_weighted(&votes, &[1.0 / 3.0; 3], 2).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(plain.probs[k], weighted.probs[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn one_hot_alpha_selects_that_sentence() {
        let votes = mk_votes(&[0, 1], &[0.5, 0.2]);
        let dist = document_distribution_weighted(&votes, &[1.0, 0.0], 2).unwrap();
        assert_eq!(dist.probs, vec![1.0, 0.0]);
    }

    #[test]
    fn alpha_gap_product_rule() {
        // alpha (0.5, 0.5), gaps (0.3, 0.1), votes (A, B) -> (0.75, 0.25)
        let votes = mk_votes(&[0, 1], &[0.3, 0.1]);
        let dist = document_distribution_weighted(&votes, &[0.5, 0.5], 2).unwrap();
        assert_abs_diff_eq!(dist.probs[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(dist.probs[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn equal_mode_gives_uniform_weights() {
        let vecs = vec![array![1.0, 0.0]; 4];
        let votes = mk_votes(&[0, 0, 0, 0], &[0.1, 0.2, 0.3, 0.4]);
        let w = ablation_weights(WeightMode::Equal, &vecs, &votes);
        assert_eq!(w, vec![0.25; 4]);
    }

    #[test]
    fn final_sentence_centrality_is_zero_before_normalization() {
        let vecs = vec![array![1.0, 0.0], array![1.0, 0.1], array![0.9, 0.2]];
        let raw = raw_centrality(&vecs);
        assert_eq!(raw[2], 0.0);
    }

    #[test]
    fn centrality_matches_brute_force_pairwise_cosines() {
        let vecs = vec![
            array![1.0, 0.0, 0.2],
            array![0.4, 0.9, 0.0],
            array![0.1, 0.2, 0.9],
        ];
        let raw = raw_centrality(&vecs);
        // brute force
        fn cos(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
            a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
        }
        let c0 = (cos(&vecs[0], &vecs[1]) + cos(&vecs[0], &vecs[2])) / 2.0;
        let c1 = cos(&vecs[1], &vecs[2]);
        assert_abs_diff_eq!(raw[0], c0.max(0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(raw[1], c1.max(0.0), epsilon = 1e-12);
        assert_eq!(raw[2], 0.0);

        let votes = mk_votes(&[0, 1, 2], &[0.1, 0.1, 0.1]);
        let w = ablation_weights(WeightMode::Centrality, &vecs, &votes);
        let total = c0.max(0.0) + c1.max(0.0);
        assert_abs_diff_eq!(w[0], c0.max(0.0) / total, epsilon = 1e-12);
    }

    proptest! {
        /// Every distribution sums to 1 within 1e-6.
        #[test]
        fn distribution_normalizes(
            gaps in proptest::collection::vec(0.0f64..1.0, 1..12),
            tops_seed in proptest::collection::vec(0usize..4, 1..12),
        ) {
            let n = gaps.len().min(tops_seed.len());
            let votes = mk_votes(&tops_seed[..n], &gaps[..n]);
            let dist = document_distribution(&votes, 4).unwrap();
            let sum: f64 = dist.probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(dist.probs.iter().all(|p| *p >= 0.0));
        }

        /// Scaling every sentence vector by a positive constant changes nothing.
        #[test]
        fn votes_are_scale_invariant(
            scale in 0.01f64..100.0,
            coords in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let v: Array1<f64> = Array1::from_vec(coords.clone());
            prop_assume!(v.dot(&v).sqrt() > 1e-6);
            let classes = vec![array![1.0, 0.0, 0.0], array![0.0, 1.0, 0.0]];
            let (t1, g1) = vote(&v, &classes).unwrap();
            let scaled: Array1<f64> = &v * scale;
            let (t2, g2) = vote(&scaled, &classes).unwrap();
            prop_assert_eq!(t1, t2);
            prop_assert!((g1 - g2).abs() < 1e-9);
        }

        /// Raising one sentence's gap weakly raises its top class's mass.
        #[test]
        fn gap_monotonicity(
            gaps in proptest::collection::vec(0.001f64..1.0, 2..8),
            bump in 0.01f64..2.0,
            idx_seed in 0usize..8,
        ) {
            let n = gaps.len();
            let idx = idx_seed % n;
            let tops: Vec<ClassId> = (0..n).map(|j| j % 3).collect();
            let before = document_distribution(&mk_votes(&tops, &gaps), 3).unwrap();
            let mut bumped = gaps.clone();
            bumped[idx] += bump;
            let after = document_distribution(&mk_votes(&tops, &bumped), 3).unwrap();
            let k = tops[idx];
            prop_assert!(after.probs[k] >= before.probs[k] - 1e-12);
        }
    }
}
