//! Micro/macro F1 metrics, ablation stages, and top-k subset accuracy.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ensemble::ClassDistribution;
use crate::error::{Error, Result};
use crate::feedback::{select_top_k, ScoredDoc};
use crate::ClassId;

/// Pipeline stage an [`EvalReport`] refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalStage {
    MegInit,
    MegCx,
    Iteration(usize),
    TopKSubset,
    FinalClassifier,
    WeightMode(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences of this class.
    pub support: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub stage: EvalStage,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassReport>,
    pub n_docs: usize,
}

/// Standard micro/macro F1 over single-label predictions.
///
/// Classes absent from both gold and predictions are excluded from the macro
/// average unless `include_empty` is set (benchmark-parity mode, which counts
/// them as F1 = 0). Micro F1 equals accuracy in this single-label setting;
/// that identity is asserted on every report.
pub fn f1_scores(
    gold: &BTreeMap<String, ClassId>,
    predicted: &BTreeMap<String, ClassId>,
    n_classes: usize,
    stage: EvalStage,
    include_empty: bool,
) -> Result<EvalReport> {
    if gold.len() != predicted.len() || gold.keys().any(|k| !predicted.contains_key(k)) {
        return Err(Error::Invalid(format!(
            "gold and predicted key sets differ ({} vs {} docs)",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty document set".into()));
    }

    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut correct = 0usize;
    for (id, g) in gold {
        let p = predicted[id];
        if p >= n_classes || *g >= n_classes {
            return Err(Error::Invalid(format!(
                "label out of range for doc {id}: gold {g}, predicted {p}"
            )));
        }
        if p == *g {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[*g] += 1;
        }
    }

    let per_class: Vec<ClassReport> = (0..n_classes)
        .map(|k| {
            let precision = if tp[k] + fp[k] > 0 {
                tp[k] as f64 / (tp[k] + fp[k]) as f64
            } else {
                0.0
            };
            let recall = if tp[k] + fn_[k] > 0 {
                tp[k] as f64 / (tp[k] + fn_[k]) as f64
            } else {
                0.0
            };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassReport {
                precision,
                recall,
                f1,
                support: tp[k] + fn_[k],
            }
        })
        .collect();

    let micro_f1 = correct as f64 / gold.len() as f64;
    let included: Vec<usize> = (0..n_classes)
        .filter(|&k| include_empty || tp[k] + fp[k] + fn_[k] > 0)
        .collect();
    let macro_f1 = if included.is_empty() {
        0.0
    } else {
        included.iter().map(|&k| per_class[k].f1).sum::<f64>() / included.len() as f64
    };

    // micro F1 == accuracy for single-label multi-class
    let sum_tp: usize = tp.iter().sum();
    debug_assert!(
        (micro_f1 - sum_tp as f64 / gold.len() as f64).abs() < 1e-12,
        "micro F1 must equal accuracy"
    );

    Ok(EvalReport {
        stage,
        micro_f1,
        macro_f1,
        per_class,
        n_docs: gold.len(),
    })
}

/// Restrict `gold` to the given ids.
fn subset(
    gold: &BTreeMap<String, ClassId>,
    ids: impl Iterator<Item = String>,
) -> BTreeMap<String, ClassId> {
    ids.filter_map(|id| gold.get(&id).map(|g| (id, *g)))
        .collect()
}

/// Labels from the initial ensemble distribution (argmax).
pub fn ablation_meg_init(
    distributions: &[ClassDistribution],
    gold: &BTreeMap<String, ClassId>,
    n_classes: usize,
) -> Result<EvalReport> {
    let predicted: BTreeMap<String, ClassId> = distributions
        .iter()
        .map(|d| (d.doc_id.clone(), d.argmax()))
        .collect();
    let gold = subset(gold, predicted.keys().cloned());
    f1_scores(&gold, &predicted, n_classes, EvalStage::MegInit, false)
}

/// Labels from the first iteration's scored documents.
pub fn ablation_meg_cx(
    first_iteration: &[ScoredDoc],
    gold: &BTreeMap<String, ClassId>,
    n_classes: usize,
) -> Result<EvalReport> {
    let predicted: BTreeMap<String, ClassId> = first_iteration
        .iter()
        .map(|s| (s.doc_id.clone(), s.pseudo_label))
        .collect();
    let gold = subset(gold, predicted.keys().cloned());
    f1_scores(&gold, &predicted, n_classes, EvalStage::MegCx, false)
}

/// F1 over the most confident top-k fraction per class.
pub fn topk_accuracy(
    scored: &[ScoredDoc],
    gold: &BTreeMap<String, ClassId>,
    n_classes: usize,
    k: f64,
) -> Result<EvalReport> {
    let selections = select_top_k(scored, n_classes, k)?;
    let by_id: BTreeMap<&str, &ScoredDoc> =
        scored.iter().map(|s| (s.doc_id.as_str(), s)).collect();
    let mut predicted = BTreeMap::new();
    for ids in selections.values() {
        for id in ids {
            predicted.insert(id.clone(), by_id[id.as_str()].pseudo_label);
        }
    }
    if predicted.is_empty() {
        return Err(Error::Invalid("top-k selection is empty".into()));
    }
    let gold = subset(gold, predicted.keys().cloned());
    f1_scores(&gold, &predicted, n_classes, EvalStage::TopKSubset, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn labels(pairs: &[(&str, ClassId)]) -> BTreeMap<String, ClassId> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold = labels(&[("a", 0), ("b", 1), ("c", 2)]);
        let r = f1_scores(&gold, &gold, 3, EvalStage::MegInit, false).unwrap();
        assert_eq!(r.micro_f1, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn hand_computed_confusion_matrix() {
        // gold (A,A,A,B), predicted (A,A,B,B) -> micro 0.75, macro ~ 0.7333
        let gold = labels(&[("d0", 0), ("d1", 0), ("d2", 0), ("d3", 1)]);
        let pred = labels(&[("d0", 0), ("d1", 0), ("d2", 1), ("d3", 1)]);
        let r = f1_scores(&gold, &pred, 2, EvalStage::MegInit, false).unwrap();
        assert_abs_diff_eq!(r.micro_f1, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.macro_f1, (0.8 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.per_class[0].precision, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.per_class[0].recall, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn all_one_class_on_balanced_two_class_set() {
        let gold = labels(&[("a", 0), ("b", 0), ("c", 1), ("d", 1)]);
        let pred = labels(&[("a", 0), ("b", 0), ("c", 0), ("d", 0)]);
        let r = f1_scores(&gold, &pred, 2, EvalStage::MegInit, false).unwrap();
        assert_abs_diff_eq!(r.micro_f1, 0.5, epsilon = 1e-12);
        // class 0: P = 0.5, R = 1 -> F1 = 2/3; class 1 in gold -> included as 0
        assert_abs_diff_eq!(r.macro_f1, (2.0 / 3.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_class_exclusion_vs_inclusion() {
        // class 2 never appears anywhere
        let gold = labels(&[("a", 0), ("b", 1)]);
        let pred = labels(&[("a", 0), ("b", 1)]);
        let excl = f1_scores(&gold, &pred, 3, EvalStage::MegInit, false).unwrap();
        assert_eq!(excl.macro_f1, 1.0);
        let incl = f1_scores(&gold, &pred, 3, EvalStage::MegInit, true).unwrap();
        assert_abs_diff_eq!(incl.macro_f1, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn key_mismatch_errors() {
        let gold = labels(&[("a", 0), ("b", 1)]);
        let pred = labels(&[("a", 0), ("c", 1)]);
        assert!(f1_scores(&gold, &pred, 2, EvalStage::MegInit, false).is_err());
    }

    #[test]
    fn meg_init_uses_distribution_argmax() {
        let dists = vec![
            ClassDistribution {
                doc_id: "a".into(),
                probs: vec![0.9, 0.1],
            },
            ClassDistribution {
                doc_id: "b".into(),
                probs: vec![0.3, 0.7],
            },
        ];
        let gold = labels(&[("a", 0), ("b", 0)]);
        let r = ablation_meg_init(&dists, &gold, 2).unwrap();
        assert_abs_diff_eq!(r.micro_f1, 0.5, epsilon = 1e-12);
        assert_eq!(r.stage, EvalStage::MegInit);
    }

    fn scored(docs: &[(&str, ClassId, f64)]) -> Vec<ScoredDoc> {
        docs.iter()
            .map(|(id, label, conf)| ScoredDoc {
                doc_id: id.to_string(),
                pseudo_label: *label,
                confidence: *conf,
            })
            .collect()
    }

    #[test]
    fn topk_one_equals_full_corpus() {
        let s = scored(&[("a", 0, 0.9), ("b", 1, 0.8), ("c", 0, 0.2), ("d", 1, 0.4)]);
        let gold = labels(&[("a", 0), ("b", 0), ("c", 1), ("d", 1)]);
        let full = topk_accuracy(&s, &gold, 2, 1.0).unwrap();
        let pred: BTreeMap<String, ClassId> = s
            .iter()
            .map(|x| (x.doc_id.clone(), x.pseudo_label))
            .collect();
        let direct = f1_scores(&gold, &pred, 2, EvalStage::TopKSubset, false).unwrap();
        assert_eq!(full.micro_f1, direct.micro_f1);
        assert_eq!(full.n_docs, 4);
    }

    #[test]
    fn confidence_correlated_with_correctness_gives_perfect_topk() {
        // high-confidence docs are correct, low-confidence ones wrong
        let s = scored(&[
            ("a", 0, 0.95),
            ("b", 0, 0.90),
            ("c", 1, 0.93),
            ("d", 1, 0.91),
            ("e", 0, 0.10), // wrong
            ("f", 1, 0.05), // wrong
        ]);
        let gold = labels(&[("a", 0), ("b", 0), ("c", 1), ("d", 1), ("e", 1), ("f", 0)]);
        let r = topk_accuracy(&s, &gold, 2, 0.5).unwrap();
        assert_eq!(r.micro_f1, 1.0);
    }
}
