//! External-process helpers for live transformer encoders and fine-tuned
//! classifiers. These paths need a working Python environment with
//! `transformers` and `torch`; everything else in the pipeline runs without
//! them (the precomputed provider and the logistic trainer are native).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ndarray::Array1;

use weakclass::pseudo_dataset::{ClassifierTrainer, DocumentClassifier, PseudoExample};
use weakclass::{ClassId, Document, Error, Result, RunConfig};

const ENCODE_SCRIPT: &str = include_str!("../py/encode_corpus.py");
const FINETUNE_SCRIPT: &str = include_str!("../py/finetune_classifier.py");

fn write_script(run_dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let dir = run_dir.join("scripts");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn run_python(script: &Path, args: &[&str]) -> Result<()> {
    let status = Command::new("python3")
        .arg(script)
        .args(args)
        .status()
        .map_err(|e| {
            Error::Invalid(format!(
                "cannot launch python3 for {}: {e}; install Python with the \
                 `transformers` and `torch` packages, or use a precomputed provider",
                script.display()
            ))
        })?;
    if !status.success() {
        return Err(Error::Invalid(format!(
            "{} failed with status {status}; see its stderr above",
            script.display()
        )));
    }
    Ok(())
}

/// Encode the corpus with a transformer checkpoint into the precomputed
/// layout under `<run_dir>/encoded`, returning that directory.
pub fn encode_corpus(cfg: &RunConfig, documents: &[Document], checkpoint: &str) -> Result<PathBuf> {
    let out_dir = cfg.run_dir.join("encoded");
    let input = cfg.run_dir.join("corpus.json");
    if !input.exists() {
        save_documents(&input, documents)?;
    }
    let script = write_script(&cfg.run_dir, "encode_corpus.py", ENCODE_SCRIPT)?;
    log::info!("embed: encoding with {checkpoint} via {}", script.display());
    run_python(
        &script,
        &[
            "--input",
            input.to_str().ok_or_else(|| Error::Invalid("non-utf8 path".into()))?,
            "--output",
            out_dir.to_str().ok_or_else(|| Error::Invalid("non-utf8 path".into()))?,
            "--model",
            checkpoint,
            "--max-length",
            &cfg.max_sentence_len.to_string(),
        ],
    )?;
    Ok(out_dir)
}

fn save_documents(path: &Path, documents: &[Document]) -> Result<()> {
    let json = serde_json::to_string(documents).expect("serializable");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Fine-tunes a pretrained sequence classifier on the pseudo dataset and
/// labels the whole corpus, via the bundled script.
pub struct TransformerTrainer {
    run_dir: PathBuf,
    checkpoint: String,
    seed: u64,
}

impl TransformerTrainer {
    pub fn new(cfg: &RunConfig) -> Self {
        // reuse the embedding checkpoint when it is a transformer id
        let checkpoint = if cfg.provider.starts_with("precomputed:") {
            "bert-base-uncased".to_string()
        } else {
            cfg.provider.clone()
        };
        TransformerTrainer {
            run_dir: cfg.run_dir.clone(),
            checkpoint,
            seed: cfg.seed,
        }
    }
}

struct FilePredictions {
    labels: BTreeMap<String, ClassId>,
}

impl DocumentClassifier for FilePredictions {
    fn predict(
        &self,
        doc_ids: &[String],
        _features: &BTreeMap<String, Array1<f64>>,
    ) -> Result<Vec<ClassId>> {
        doc_ids
            .iter()
            .map(|id| {
                self.labels.get(id).copied().ok_or_else(|| {
                    Error::Invalid(format!("fine-tuned classifier returned no label for {id}"))
                })
            })
            .collect()
    }
}

impl ClassifierTrainer for TransformerTrainer {
    fn train(
        &self,
        examples: &[PseudoExample],
        _features: &BTreeMap<String, Array1<f64>>,
        n_classes: usize,
    ) -> Result<Box<dyn DocumentClassifier>> {
        if examples.is_empty() {
            return Err(Error::Invalid("cannot fine-tune on an empty pseudo dataset".into()));
        }
        let pseudo_path = self.run_dir.join("pseudo_dataset.jsonl");
        let corpus_path = self.run_dir.join("corpus.json");
        let out_path = self.run_dir.join("finetuned_predictions.jsonl");
        let script = write_script(&self.run_dir, "finetune_classifier.py", FINETUNE_SCRIPT)?;
        run_python(
            &script,
            &[
                "--pseudo",
                pseudo_path.to_str().ok_or_else(|| Error::Invalid("non-utf8 path".into()))?,
                "--corpus",
                corpus_path.to_str().ok_or_else(|| Error::Invalid("non-utf8 path".into()))?,
                "--output",
                out_path.to_str().ok_or_else(|| Error::Invalid("non-utf8 path".into()))?,
                "--model",
                &self.checkpoint,
                "--num-classes",
                &n_classes.to_string(),
                "--seed",
                &self.seed.to_string(),
            ],
        )?;

        let text = fs::read_to_string(&out_path).map_err(|e| Error::io(&out_path, e))?;
        let mut labels = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            #[derive(serde::Deserialize)]
            struct Rec {
                id: String,
                label: ClassId,
            }
            let rec: Rec = serde_json::from_str(line)
                .map_err(|e| Error::Cache(format!("{}: {e}", out_path.display())))?;
            labels.insert(rec.id, rec.label);
        }
        Ok(Box::new(FilePredictions { labels }))
    }
}
