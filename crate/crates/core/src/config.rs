//! Run configuration: paths, provider selection, and every pipeline
//! hyperparameter with its default.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusFormat;
use crate::ensemble::WeightMode;
use crate::error::{Error, Result};
use crate::synthetic::SyntheticConfig;

/// Full pipeline configuration. Field defaults are the published
/// hyperparameters; everything is overridable from the config file or
/// `--set key=value`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus file (JSONL or one document per line).
    pub corpus: PathBuf,
    pub corpus_format: CorpusFormat,
    /// Classes file: one surface name per line.
    pub classes: PathBuf,
    /// Optional gold labels (evaluation only; never feeds the pipeline).
    pub labels: Option<PathBuf>,
    /// All stage artifacts live here.
    pub run_dir: PathBuf,
    /// Embedding provider id: `precomputed:<dir>` or a transformer
    /// checkpoint name handled by the embed stage.
    pub provider: String,
    /// Embedding width h.
    pub hidden_dim: usize,
    /// Minimum occurrences for a word to enter the static vocabulary.
    pub min_count: u64,
    /// T: keyword ranks per class, seed included.
    pub expand_t: usize,
    pub max_sentence_len: usize,
    /// Self-attention heads.
    pub heads: usize,
    /// Contrastive-loss temperature.
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Top fraction of documents per class fed back each iteration.
    pub k: f64,
    /// Top fraction of documents per class exported as pseudo-training data.
    pub delta: f64,
    /// Feedback iterations (4 for single-word label names, 2 for phrases).
    pub iterations: usize,
    pub pca_dims: usize,
    /// Score documents in the PCA-reduced space (disable for ablation).
    pub use_pca: bool,
    pub seed: u64,
    /// Sentence-weight mechanism for the initial label ensemble.
    pub weight_mode: WeightMode,
    /// Final classifier trainer: `logistic` (built in) or `transformer`.
    pub classifier: String,
    /// When present, `prepare` generates a planted synthetic corpus instead
    /// of reading `corpus`/`classes`.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::new(),
            corpus_format: CorpusFormat::Jsonl,
            classes: PathBuf::new(),
            labels: None,
            run_dir: PathBuf::new(),
            provider: "bert-base-uncased".into(),
            hidden_dim: 768,
            min_count: 1,
            expand_t: 100,
            max_sentence_len: 150,
            heads: 2,
            tau: 0.2,
            lr: 1e-3,
            epochs: 4,
            batch_size: 32,
            k: 0.075,
            delta: 0.5,
            iterations: 4,
            pca_dims: 64,
            use_pca: true,
            seed: 42,
            weight_mode: WeightMode::Discriminative,
            classifier: "logistic".into(),
            synthetic: None,
        }
    }
}

impl RunConfig {
    /// Validate numeric ranges. Path presence is checked per stage.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        }
        check(self.hidden_dim >= 1, "hidden_dim must be >= 1")?;
        check(
            self.hidden_dim % self.heads == 0,
            "heads must divide hidden_dim",
        )?;
        check(self.expand_t >= 1, "expand_t must be >= 1")?;
        check(self.max_sentence_len >= 1, "max_sentence_len must be >= 1")?;
        check(self.heads >= 1, "heads must be >= 1")?;
        check(self.tau > 0.0, "tau must be > 0")?;
        check(self.lr > 0.0, "lr must be > 0")?;
        check(self.epochs >= 1, "epochs must be >= 1")?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(self.k > 0.0 && self.k <= 1.0, "k must be in (0, 1]")?;
        check(
            self.delta > 0.0 && self.delta <= 1.0,
            "delta must be in (0, 1]",
        )?;
        check(self.iterations >= 1, "iterations must be >= 1")?;
        check(self.pca_dims >= 1, "pca_dims must be >= 1")?;
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        Ok(())
    }

    /// Run directory fully determines reproducibility; each stage's outputs
    /// are addressed by a hash of the fields that stage depends on, so a
    /// changed hyperparameter never silently reuses stale artifacts.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        let mut put = |key: &str, value: String| {
            h.update(key.as_bytes());
            h.update(b"=");
            h.update(value.as_bytes());
            h.update(b"\n");
        };
        // prepare-level inputs feed every stage
        put("corpus", self.corpus.display().to_string());
        put("corpus_format", format!("{:?}", self.corpus_format));
        put("classes", self.classes.display().to_string());
        put("max_sentence_len", self.max_sentence_len.to_string());
        if let Some(s) = &self.synthetic {
            put("synthetic", serde_json::to_string(s).expect("serializable"));
        }
        if stage >= Stage::Embed {
            put("provider", self.provider.clone());
            put("hidden_dim", self.hidden_dim.to_string());
            put("min_count", self.min_count.to_string());
        }
        if stage >= Stage::Run {
            put("expand_t", self.expand_t.to_string());
            put("heads", self.heads.to_string());
            put("tau", format!("{:e}", self.tau));
            put("lr", format!("{:e}", self.lr));
            put("epochs", self.epochs.to_string());
            put("batch_size", self.batch_size.to_string());
            put("k", format!("{:e}", self.k));
            put("iterations", self.iterations.to_string());
            put("pca_dims", self.pca_dims.to_string());
            put("use_pca", self.use_pca.to_string());
            put("seed", self.seed.to_string());
            put("weight_mode", format!("{:?}", self.weight_mode));
        }
        if stage >= Stage::Export {
            put("delta", format!("{:e}", self.delta));
            put("classifier", self.classifier.clone());
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Prepare,
    Embed,
    Run,
    Export,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Embed => "embed",
            Stage::Run => "run",
            Stage::Export => "export",
        }
    }
}
