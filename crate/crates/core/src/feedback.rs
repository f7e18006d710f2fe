//! Confidence scoring, top-k class-set selection, class-vector updates, and
//! the iterative feedback loop.
//!
//! Each iteration retrains the attention network from the original
//! class-oriented sentence representations with freshly seeded parameters
//! (`base seed + iteration`), scores documents by cosine in a PCA-reduced
//! space, replaces each class set with the initial class vector plus the
//! top-k most confident documents, and recomputes the target distributions
//! from the learned sentence vectors and attention weights for the next
//! round. Failures inside an iteration leave earlier iterations' artifacts
//! on disk untouched.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::attention::{save_checkpoint, train, ContextualizedDoc, DocExample, TrainConfig};
use crate::class_repr::ClassModel;
use crate::config::RunConfig;
use crate::ensemble::{
    ablation_weights, document_distribution_with_weights,
    sentence_votes, ClassDistribution, SentenceVote, WeightMode,
};
use crate::error::{Error, Result};
use crate::eval::{f1_scores, EvalReport, EvalStage};
use crate::numeric::cosine;
use crate::pca::{fit_pca, transform_one, PcaModel};
use crate::ClassId;

/// One scored document: pseudo-label and reduced-space cosine confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub pseudo_label: ClassId,
    /// Cosine similarity in the scoring space, in [-1, 1].
    pub confidence: f64,
}

/// Score documents by cosine between (optionally PCA-reduced) document
/// vectors and class vectors transformed with the same model. Ties break
/// toward the lowest class id.
pub fn score_documents(
    docs: &[ContextualizedDoc],
    class_models: &[ClassModel],
    pca: Option<&PcaModel>,
) -> Result<Vec<ScoredDoc>> {
    let reduce = |v: &Array1<f64>| -> Array1<f64> {
        match pca {
            Some(m) => transform_one(m, v.view()),
            None => v.clone(),
        }
    };
    let reduced_classes: Vec<Array1<f64>> = class_models
        .iter()
        .map(|m| reduce(&m.class_vector))
        .collect();

    docs.iter()
        .map(|doc| {
            let rv = reduce(&doc.cd);
            let mut best: Option<(ClassId, f64)> = None;
            for (k, c) in reduced_classes.iter().enumerate() {
                let sim = cosine(rv.view(), c.view()).ok_or_else(|| {
                    Error::Numeric(format!(
                        "zero-norm vector scoring {} against class {k}",
                        doc.doc_id
                    ))
                })?;
                if best.map(|(_, s)| sim > s).unwrap_or(true) {
                    best = Some((k, sim));
                }
            }
            let (pseudo_label, confidence) = best.expect(">= 1 class");
            Ok(ScoredDoc {
                doc_id: doc.doc_id.clone(),
                pseudo_label,
                confidence,
            })
        })
        .collect()
}

/// Per class, the top `ceil(k * count_k)` documents by confidence
/// (ties broken by doc id). Classes with no documents get an empty list.
pub fn select_top_k(
    scored: &[ScoredDoc],
    n_classes: usize,
    k: f64,
) -> Result<BTreeMap<ClassId, Vec<String>>> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::Invalid(format!("k must be in (0, 1], got {k}")));
    }
    let mut pools: BTreeMap<ClassId, Vec<&ScoredDoc>> =
        (0..n_classes).map(|k| (k, Vec::new())).collect();
    for s in scored {
        pools
            .get_mut(&s.pseudo_label)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "pseudo label {} out of range (|C| = {n_classes})",
                    s.pseudo_label
                ))
            })?
            .push(s);
    }
    let mut out = BTreeMap::new();
    for (class_id, mut pool) in pools {
        if pool.is_empty() {
            log::warn!("class {class_id} has no pseudo-labeled documents");
            out.insert(class_id, Vec::new());
            continue;
        }
        pool.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .expect("finite confidence")
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        let take = ((k * pool.len() as f64).ceil() as usize).min(pool.len());
        out.insert(
            class_id,
            pool.into_iter().take(take).map(|s| s.doc_id.clone()).collect(),
        );
    }
    Ok(out)
}

/// Replace each class set with {initial keyword-based vector} and the
/// selected documents' vectors; the class vector becomes the set mean (full
/// dimensionality). Classes with empty selections keep their initial vector.
pub fn update_class_vectors(
    class_models: &mut [ClassModel],
    selections: &BTreeMap<ClassId, Vec<String>>,
    doc_vectors: &BTreeMap<String, Array1<f64>>,
) -> Result<()> {
    for model in class_models.iter_mut() {
        let ids = selections
            .get(&model.class_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        let mut acc = model.initial_vector.clone();
        for id in ids {
            let v = doc_vectors.get(id).ok_or_else(|| {
                Error::Invalid(format!("selected doc {id} has no document vector"))
            })?;
            acc += v;
        }
        model.class_vector = acc / (ids.len() as f64 + 1.0);
        model.class_set = ids.to_vec();
    }
    Ok(())
}

/// Everything produced by one feedback iteration.
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    pub epoch_losses: Vec<f64>,
    pub scored: Vec<ScoredDoc>,
    pub selections: BTreeMap<ClassId, Vec<String>>,
    pub report: Option<EvalReport>,
}

/// Output of the whole loop.
pub struct PipelineOutcome {
    /// Iteration-0 ensemble distributions (the MEG-Init stage).
    pub initial_distributions: Vec<ClassDistribution>,
    /// Per-sentence votes backing those distributions, per document.
    pub initial_votes: Vec<Vec<SentenceVote>>,
    pub iterations: Vec<IterationRecord>,
    /// Class models after the final update.
    pub class_models: Vec<ClassModel>,
    /// Contextualized documents from the final iteration.
    pub final_docs: Vec<ContextualizedDoc>,
}

impl PipelineOutcome {
    /// Final pseudo-labels with confidences (last iteration's scores).
    pub fn final_scored(&self) -> &[ScoredDoc] {
        &self
            .iterations
            .last()
            .expect("at least one iteration")
            .scored
    }
}

fn class_vectors(models: &[ClassModel]) -> Vec<Array1<f64>> {
    models.iter().map(|m| m.class_vector.clone()).collect()
}

/// Run the full iterative loop.
///
/// `sentence_reprs[i]` is document i's `|d| x h` class-oriented matrix, row
/// order matching `doc_ids`. Iteration 0 builds target distributions from
/// the initial class vectors with the configured weight mode; iteration
/// `t >= 2` rebuilds them from iteration `t-1`'s contextualized sentences and
/// attention weights against the updated class vectors. When `out_dir` is
/// given, per-iteration artifacts (distributions, scores, class sets,
/// checkpoints, training curves, metrics) are written as each iteration
/// completes.
pub fn run_iterations(
    doc_ids: &[String],
    sentence_reprs: &[Array2<f64>],
    mut models: Vec<ClassModel>,
    cfg: &RunConfig,
    gold: Option<&BTreeMap<String, ClassId>>,
    out_dir: Option<&Path>,
) -> Result<PipelineOutcome> {
    if doc_ids.len() != sentence_reprs.len() {
        return Err(Error::Invalid(format!(
            "{} doc ids but {} representation matrices",
            doc_ids.len(),
            sentence_reprs.len()
        )));
    }
    if doc_ids.is_empty() {
        return Err(Error::Invalid("no documents to iterate over".into()));
    }
    let n_classes = models.len();
    let n_docs = doc_ids.len();
    let hidden_dim = sentence_reprs[0].ncols();

    // iteration 0: initial ensemble from class-oriented representations
    let initial_vectors = class_vectors(&models);
    let mut initial_votes = Vec::with_capacity(n_docs);
    let mut initial_distributions = Vec::with_capacity(n_docs);
    for (id, reprs) in doc_ids.iter().zip(sentence_reprs) {
        let rows: Vec<Array1<f64>> = reprs.rows().into_iter().map(|r| r.to_owned()).collect();
        let votes = sentence_votes(id, &rows, &initial_vectors)?;
        let dist = match cfg.weight_mode {
            WeightMode::Discriminative => {
                let weights: Vec<f64> = votes.iter().map(|v| v.weight).collect();
                document_distribution_with_weights(&votes, &weights, n_classes)
            }
            mode => {
                let weights = ablation_weights(mode, &rows, &votes);
                document_distribution_with_weights(&votes, &weights, n_classes)
            }
        };
        initial_votes.push(votes);
        initial_distributions.push(dist);
    }
    if let Some(dir) = out_dir {
        write_distributions(dir, 0, &initial_distributions, Some(&initial_votes))?;
    }

    let mut targets: Vec<Vec<f64>> = initial_distributions
        .iter()
        .map(|d| d.probs.clone())
        .collect();

    let mut iterations = Vec::with_capacity(cfg.iterations);
    let mut final_docs: Vec<ContextualizedDoc> = Vec::new();
    for t in 1..=cfg.iterations {
        // fresh seed-derived parameters each iteration: no error propagation
        // through network weights, only through class vectors and targets
        let train_cfg = TrainConfig {
            heads: cfg.heads,
            tau: cfg.tau,
            lr: cfg.lr,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed.wrapping_add(t as u64),
        };
        let examples: Vec<DocExample> = doc_ids
            .iter()
            .zip(sentence_reprs)
            .zip(&targets)
            .map(|((id, reprs), target)| DocExample {
                doc_id: id.clone(),
                reprs: reprs.clone(),
                target: target.clone(),
            })
            .collect();
        let current_vectors = class_vectors(&models);
        let outcome = train(&examples, &current_vectors, &train_cfg)?;

        // score in the reduced space; PCA fits on document vectors only.
        // layer norm constrains document vectors to an affine hyperplane, so
        // their centered rank is at most h-1; clamp p accordingly
        let pca = if cfg.use_pca {
            let p = cfg
                .pca_dims
                .min(n_docs - 1)
                .min(hidden_dim.saturating_sub(1))
                .max(1);
            if p < cfg.pca_dims {
                log::info!("iteration {t}: clamping pca_dims {} -> {p}", cfg.pca_dims);
            }
            let mut cds = Array2::<f64>::zeros((n_docs, hidden_dim));
            for (i, doc) in outcome.docs.iter().enumerate() {
                cds.row_mut(i).assign(&doc.cd);
            }
            Some(fit_pca(cds.view(), p)?)
        } else {
            None
        };
        let scored = score_documents(&outcome.docs, &models, pca.as_ref())?;
        let selections = select_top_k(&scored, n_classes, cfg.k)?;

        let doc_vectors: BTreeMap<String, Array1<f64>> = outcome
            .docs
            .iter()
            .map(|d| (d.doc_id.clone(), d.cd.clone()))
            .collect();
        update_class_vectors(&mut models, &selections, &doc_vectors)?;

        let report = match gold {
            Some(gold) => {
                let predicted: BTreeMap<String, ClassId> = scored
                    .iter()
                    .map(|s| (s.doc_id.clone(), s.pseudo_label))
                    .collect();
                let gold_subset: BTreeMap<String, ClassId> = predicted
                    .keys()
                    .filter_map(|id| gold.get(id).map(|g| (id.clone(), *g)))
                    .collect();
                if gold_subset.len() == predicted.len() {
                    Some(f1_scores(
                        &gold_subset,
                        &predicted,
                        n_classes,
                        EvalStage::Iteration(t),
                        false,
                    )?)
                } else {
                    None
                }
            }
            None => None,
        };

        // next-iteration targets: each contextualized sentence votes for its
        // nearest updated class vector, weighted by its learned attention
        // weight. The alpha-times-gap product over-concentrates on
        // individually confident sentences and degrades target quality, so
        // the learned weights are used alone here; the product rule remains
        // available as `ensemble::document_distribution_weighted`.
        if t < cfg.iterations {
            let updated_vectors = class_vectors(&models);
            let mut next = Vec::with_capacity(n_docs);
            for doc in &outcome.docs {
                let rows: Vec<Array1<f64>> =
                    doc.cs.rows().into_iter().map(|r| r.to_owned()).collect();
                let votes = sentence_votes(&doc.doc_id, &rows, &updated_vectors)?;
                let dist = document_distribution_with_weights(&votes, &doc.alphas, n_classes);
                next.push(dist);
            }
            if let Some(dir) = out_dir {
                write_distributions(dir, t, &next, None)?;
            }
            targets = next.iter().map(|d| d.probs.clone()).collect();
        }

        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join(format!("attn_iter{t}.ckpt")), &outcome.params)?;
            write_training_curve(dir, t, &outcome.epoch_losses)?;
            write_scores(dir, t, &scored)?;
            write_class_sets(dir, t, &models)?;
            append_metrics(dir, t, report.as_ref(), &outcome.epoch_losses)?;
        }

        final_docs = outcome.docs;
        iterations.push(IterationRecord {
            iteration: t,
            epoch_losses: outcome.epoch_losses,
            scored,
            selections,
            report,
        });
    }

    Ok(PipelineOutcome {
        initial_distributions,
        initial_votes,
        iterations,
        class_models: models,
        final_docs,
    })
}

// ---------------------------------------------------------------------------
// per-iteration artifacts
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DistRecord<'a> {
    id: &'a str,
    probs: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    votes: Option<&'a [SentenceVote]>,
}

fn write_distributions(
    dir: &Path,
    t: usize,
    dists: &[ClassDistribution],
    votes: Option<&[Vec<SentenceVote>]>,
) -> Result<()> {
    let path = dir.join(format!("distributions_iter{t}.jsonl"));
    let mut out = String::new();
    for (i, d) in dists.iter().enumerate() {
        let rec = DistRecord {
            id: &d.doc_id,
            probs: &d.probs,
            votes: votes.map(|v| v[i].as_slice()),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

fn write_scores(dir: &Path, t: usize, scored: &[ScoredDoc]) -> Result<()> {
    let path = dir.join(format!("scores_iter{t}.jsonl"));
    let mut out = String::new();
    for s in scored {
        out.push_str(&serde_json::to_string(s).expect("serializable"));
        out.push('\n');
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

fn write_class_sets(dir: &Path, t: usize, models: &[ClassModel]) -> Result<()> {
    #[derive(Serialize)]
    struct SetRecord<'a> {
        class_id: ClassId,
        members: &'a [String],
    }
    let path = dir.join(format!("class_sets_iter{t}.json"));
    let records: Vec<SetRecord> = models
        .iter()
        .map(|m| SetRecord {
            class_id: m.class_id,
            members: &m.class_set,
        })
        .collect();
    let json = serde_json::to_string_pretty(&records).expect("serializable");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn write_training_curve(dir: &Path, t: usize, losses: &[f64]) -> Result<()> {
    let path = dir.join(format!("train_curve_iter{t}.csv"));
    let mut out = String::from("epoch,mean_loss\n");
    for (e, l) in losses.iter().enumerate() {
        out.push_str(&format!("{e},{l}\n"));
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

fn append_metrics(
    dir: &Path,
    t: usize,
    report: Option<&EvalReport>,
    losses: &[f64],
) -> Result<()> {
    let path = dir.join("metrics.csv");
    let mut file = if path.exists() {
        fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?
    } else {
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(b"iteration,micro_f1,macro_f1,final_epoch_loss\n")
            .map_err(|e| Error::io(&path, e))?;
        f
    };
    let (micro, macro_) = report
        .map(|r| (r.micro_f1.to_string(), r.macro_f1.to_string()))
        .unwrap_or_else(|| (String::new(), String::new()));
    let loss = losses.last().map(|l| l.to_string()).unwrap_or_default();
    writeln!(file, "{t},{micro},{macro_},{loss}").map_err(|e| Error::io(&path, e))
}
