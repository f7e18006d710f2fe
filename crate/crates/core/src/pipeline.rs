//! End-to-end in-memory pipeline: class representations, the initial
//! ensemble, the iterative feedback loop, and pseudo-dataset export.
//!
//! The CLI wraps this with staged, resumable artifacts; tests and the
//! acceptance suite drive it directly.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::class_repr::{
    corpus_sentence_representations, expand_keywords, export_keywords, ClassModel, SentenceRepr,
};
use crate::config::RunConfig;
use crate::corpus::{ClassSpec, Document};
use crate::embeddings::{mean_pooled_doc_vectors, StaticWordTable, TokenMatrix};
use crate::error::{Error, Result};
use crate::feedback::{run_iterations, PipelineOutcome};
use crate::pseudo_dataset::{
    build_pseudo_dataset, export_predictions, export_pseudo_dataset, train_and_label,
    ClassifierTrainer, LogisticTrainer, PseudoExample,
};
use crate::ClassId;

/// Prepared pipeline inputs: a segmented corpus with its embeddings.
pub struct PipelineData {
    pub documents: Vec<Document>,
    pub classes: Vec<ClassSpec>,
    pub gold: Option<BTreeMap<String, ClassId>>,
    pub matrices: Vec<Vec<TokenMatrix>>,
    pub static_table: StaticWordTable,
}

/// Result of the representation + feedback stages.
pub struct PipelineResult {
    pub class_models: Vec<ClassModel>,
    pub sentence_reprs: Vec<Vec<SentenceRepr>>,
    pub outcome: PipelineOutcome,
}

/// Exported artifacts of the final stage.
pub struct ExportResult {
    pub pseudo_examples: Vec<PseudoExample>,
    pub predictions: BTreeMap<String, ClassId>,
}

/// Stack each document's sentence representations into a `|d| x h` matrix.
pub fn repr_matrices(reprs: &[Vec<SentenceRepr>]) -> Vec<Array2<f64>> {
    reprs
        .iter()
        .map(|doc| {
            let n = doc.len();
            let h = doc.first().map(|r| r.vector.len()).unwrap_or(0);
            let mut m = Array2::<f64>::zeros((n, h));
            for (j, r) in doc.iter().enumerate() {
                m.row_mut(j).assign(&r.vector);
            }
            m
        })
        .collect()
}

/// Run class_repr -> ensemble -> attention -> feedback. When `out_dir` is
/// set, stage artifacts (keyword lists, per-iteration files) are written
/// there as they are produced.
pub fn run_pipeline(
    data: &PipelineData,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineResult> {
    let class_models = expand_keywords(&data.classes, &data.static_table, cfg.expand_t)?;
    if let Some(dir) = out_dir {
        export_keywords(&dir.join("keywords.json"), &data.classes, &class_models)?;
    }

    let sentence_reprs = corpus_sentence_representations(&data.matrices, &class_models)?;
    let matrices = repr_matrices(&sentence_reprs);
    let doc_ids: Vec<String> = data.documents.iter().map(|d| d.doc_id.clone()).collect();

    let outcome = run_iterations(
        &doc_ids,
        &matrices,
        class_models.clone(),
        cfg,
        data.gold.as_ref(),
        out_dir,
    )?;

    Ok(PipelineResult {
        class_models,
        sentence_reprs,
        outcome,
    })
}

/// Resolve the configured classifier trainer. The `transformer` trainer is
/// provided by the CLI (it shells out to an external fine-tuning stack), so
/// the core only knows the reference trainer.
pub fn reference_trainer(id: &str) -> Result<Box<dyn ClassifierTrainer>> {
    match id {
        "logistic" => Ok(Box::new(LogisticTrainer::default())),
        other => Err(Error::Config(format!(
            "unknown classifier trainer {other:?} (core provides: logistic)"
        ))),
    }
}

/// Build the pseudo dataset from the final scores, train the classifier, and
/// label the whole corpus. Files go to `out_dir` when given; the pseudo set
/// is exported even if the trainer fails.
pub fn export_outputs(
    data: &PipelineData,
    result: &PipelineResult,
    cfg: &RunConfig,
    trainer: &dyn ClassifierTrainer,
    out_dir: Option<&Path>,
) -> Result<ExportResult> {
    let pseudo = build_pseudo_dataset(result.outcome.final_scored(), &data.documents, cfg.delta)?;
    if let Some(dir) = out_dir {
        export_pseudo_dataset(&dir.join("pseudo_dataset.jsonl"), &pseudo)?;
    }

    let features = mean_pooled_doc_vectors(&data.matrices);
    let predictions = train_and_label(
        trainer,
        &pseudo,
        &data.documents,
        &features,
        data.classes.len(),
    )?;
    if let Some(dir) = out_dir {
        export_predictions(&dir.join("predictions.jsonl"), &predictions)?;
    }

    Ok(ExportResult {
        pseudo_examples: pseudo,
        predictions,
    })
}

/// Convenience: build [`PipelineData`] straight from a generated synthetic
/// corpus (used by tests and the acceptance suite).
pub fn data_from_synthetic(corpus: &crate::synthetic::SyntheticCorpus) -> Result<PipelineData> {
    let matrices: Vec<Vec<TokenMatrix>> = corpus
        .documents
        .iter()
        .zip(&corpus.embeddings)
        .map(|(doc, mats)| {
            doc.sentences
                .iter()
                .zip(mats)
                .map(|(s, m)| TokenMatrix {
                    doc_id: doc.doc_id.clone(),
                    sent_index: s.sent_index,
                    vectors: m.clone(),
                    token_to_word: (0..m.nrows()).collect(),
                })
                .collect()
        })
        .collect();
    let static_table = crate::embeddings::build_static_table(&corpus.documents, &matrices, 1)?;
    let classes: Vec<ClassSpec> = corpus
        .class_names
        .iter()
        .enumerate()
        .map(|(class_id, surface_name)| ClassSpec {
            class_id,
            surface_name: surface_name.clone(),
        })
        .collect();
    Ok(PipelineData {
        documents: corpus.documents.clone(),
        classes,
        gold: Some(corpus.gold.clone()),
        matrices,
        static_table,
    })
}

/// Initial-ensemble predictions (argmax of the iteration-0 distributions).
pub fn meg_init_labels(result: &PipelineResult) -> BTreeMap<String, ClassId> {
    result
        .outcome
        .initial_distributions
        .iter()
        .map(|d| (d.doc_id.clone(), d.argmax()))
        .collect()
}
