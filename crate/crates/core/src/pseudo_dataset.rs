//! Pseudo-training dataset export and the pluggable final classifier.
//!
//! The top delta-fraction most confident documents per class become labeled
//! training examples. The built-in reference trainer is a multinomial
//! logistic classifier over mean-pooled frozen embeddings: cheap and fully
//! deterministic. Heavier trainers (transformer fine-tuning) plug in behind
//! [`ClassifierTrainer`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::feedback::ScoredDoc;
use crate::ClassId;

/// One exported pseudo-training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoExample {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub text: String,
    pub pseudo_label: ClassId,
    pub confidence: f64,
}

/// Per class, keep the top `ceil(delta * count_k)` documents by confidence.
/// Output is ordered by confidence descending, then doc id.
pub fn build_pseudo_dataset(
    final_scores: &[ScoredDoc],
    corpus: &[Document],
    delta: f64,
) -> Result<Vec<PseudoExample>> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Invalid(format!("delta must be in (0, 1], got {delta}")));
    }
    let texts: BTreeMap<&str, &str> = corpus
        .iter()
        .map(|d| (d.doc_id.as_str(), d.raw_text.as_str()))
        .collect();

    let mut pools: BTreeMap<ClassId, Vec<&ScoredDoc>> = BTreeMap::new();
    for s in final_scores {
        pools.entry(s.pseudo_label).or_default().push(s);
    }

    let mut examples = Vec::new();
    for (class_id, mut pool) in pools {
        if pool.is_empty() {
            log::warn!("class {class_id} has no documents; omitted from pseudo dataset");
            continue;
        }
        pool.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .expect("finite confidence")
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        let take = ((delta * pool.len() as f64).ceil() as usize).min(pool.len());
        for s in pool.into_iter().take(take) {
            let text = texts.get(s.doc_id.as_str()).ok_or_else(|| {
                Error::Invalid(format!("scored doc {} not in corpus", s.doc_id))
            })?;
            examples.push(PseudoExample {
                doc_id: s.doc_id.clone(),
                text: text.to_string(),
                pseudo_label: s.pseudo_label,
                confidence: s.confidence,
            });
        }
    }
    examples.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("finite confidence")
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });

    let mut seen = BTreeSet::new();
    for e in &examples {
        if !seen.insert(&e.doc_id) {
            return Err(Error::Invalid(format!(
                "doc {} appears twice in pseudo dataset",
                e.doc_id
            )));
        }
    }
    Ok(examples)
}

/// Write `pseudo_dataset.jsonl` (fields id/text/pseudo_label/confidence).
pub fn export_pseudo_dataset(path: &Path, examples: &[PseudoExample]) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("serializable"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write `predictions.jsonl` (fields id/label).
pub fn export_predictions(path: &Path, predictions: &BTreeMap<String, ClassId>) -> Result<()> {
    let mut out = String::new();
    for (id, label) in predictions {
        out.push_str(&serde_json::json!({ "id": id, "label": label }).to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A trained classifier covering every corpus document.
pub trait DocumentClassifier: Send + Sync {
    /// Predict a class for each doc id, using the shared feature table.
    fn predict(
        &self,
        doc_ids: &[String],
        features: &BTreeMap<String, Array1<f64>>,
    ) -> Result<Vec<ClassId>>;
}

/// Trains a classifier from pseudo-labeled examples only.
pub trait ClassifierTrainer {
    fn train(
        &self,
        examples: &[PseudoExample],
        features: &BTreeMap<String, Array1<f64>>,
        n_classes: usize,
    ) -> Result<Box<dyn DocumentClassifier>>;
}

/// Train on the pseudo dataset, then label the whole corpus. The returned
/// predictions are the system's final labels.
pub fn train_and_label(
    trainer: &dyn ClassifierTrainer,
    examples: &[PseudoExample],
    corpus: &[Document],
    features: &BTreeMap<String, Array1<f64>>,
    n_classes: usize,
) -> Result<BTreeMap<String, ClassId>> {
    if examples.is_empty() {
        return Err(Error::Invalid("pseudo dataset is empty".into()));
    }
    let classifier = trainer.train(examples, features, n_classes)?;
    let doc_ids: Vec<String> = corpus.iter().map(|d| d.doc_id.clone()).collect();
    let labels = classifier.predict(&doc_ids, features)?;
    Ok(doc_ids.into_iter().zip(labels).collect())
}

// ---------------------------------------------------------------------------
// Reference trainer: multinomial logistic regression on frozen features
// ---------------------------------------------------------------------------

/// Deterministic softmax-regression trainer (full-batch gradient descent,
/// zero init).
#[derive(Debug, Clone)]
pub struct LogisticTrainer {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticTrainer {
    fn default() -> Self {
        LogisticTrainer {
            lr: 0.5,
            epochs: 300,
            l2: 1e-4,
        }
    }
}

struct LogisticModel {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LogisticModel {
    fn logits(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weights.dot(x) + &self.bias
    }
}

impl DocumentClassifier for LogisticModel {
    fn predict(
        &self,
        doc_ids: &[String],
        features: &BTreeMap<String, Array1<f64>>,
    ) -> Result<Vec<ClassId>> {
        doc_ids
            .iter()
            .map(|id| {
                let x = features.get(id).ok_or_else(|| {
                    Error::Invalid(format!("no feature vector for doc {id}"))
                })?;
                let z = self.logits(x);
                let mut best = 0;
                for (k, v) in z.iter().enumerate() {
                    if *v > z[best] {
                        best = k;
                    }
                }
                Ok(best)
            })
            .collect()
    }
}

impl ClassifierTrainer for LogisticTrainer {
    fn train(
        &self,
        examples: &[PseudoExample],
        features: &BTreeMap<String, Array1<f64>>,
        n_classes: usize,
    ) -> Result<Box<dyn DocumentClassifier>> {
        if examples.is_empty() {
            return Err(Error::Invalid("cannot train on an empty pseudo dataset".into()));
        }
        let dim = features
            .values()
            .next()
            .ok_or_else(|| Error::Invalid("empty feature table".into()))?
            .len();

        let xs: Vec<&Array1<f64>> = examples
            .iter()
            .map(|e| {
                features.get(&e.doc_id).ok_or_else(|| {
                    Error::Invalid(format!("no feature vector for pseudo doc {}", e.doc_id))
                })
            })
            .collect::<Result<_>>()?;
        let ys: Vec<ClassId> = examples.iter().map(|e| e.pseudo_label).collect();

        let mut w = Array2::<f64>::zeros((n_classes, dim));
        let mut b = Array1::<f64>::zeros(n_classes);
        let n = examples.len() as f64;

        for _ in 0..self.epochs {
            let mut gw = Array2::<f64>::zeros((n_classes, dim));
            let mut gb = Array1::<f64>::zeros(n_classes);
            for (x, y) in xs.iter().zip(&ys) {
                let z = w.dot(*x) + &b;
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Array1<f64> = z.mapv(|v| (v - max).exp());
                let p = &exp / exp.sum();
                for k in 0..n_classes {
                    let err = p[k] - if k == *y { 1.0 } else { 0.0 };
                    gb[k] += err;
                    for d in 0..dim {
                        gw[(k, d)] += err * x[d];
                    }
                }
            }
            gw /= n;
            gb /= n;
            gw.scaled_add(self.l2, &w);
            w.scaled_add(-self.lr, &gw);
            b.scaled_add(-self.lr, &gb);
        }

        Ok(Box::new(LogisticModel { weights: w, bias: b }))
    }
}
