//! Stage orchestration: resumable, idempotent, content-addressed by config
//! hash so changed hyperparameters never silently reuse stale artifacts.
//!
//! Each completed stage leaves a `stage_<name>.json` marker carrying the
//! hash of the config fields that stage depends on, plus the effective input
//! paths it resolved (synthetic corpora rewrite them). A dependent stage
//! refuses to start unless its prerequisite marker matches the current
//! config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use weakclass::config::Stage;
use weakclass::corpus::{load_classes, load_corpus, load_gold_labels, SegmentOptions};
use weakclass::embeddings::cache::{
    corpus_fingerprint, read_static_cache, read_token_cache, write_static_cache,
    write_token_cache,
};
use weakclass::embeddings::{
    build_static_table, embed_corpus, mean_pooled_doc_vectors, EmbeddingProvider,
    PrecomputedProvider,
};
use weakclass::feedback::ScoredDoc;
use weakclass::pipeline::{self, PipelineData};
use weakclass::pseudo_dataset::{
    build_pseudo_dataset, export_predictions, export_pseudo_dataset, train_and_label,
    ClassifierTrainer,
};
use weakclass::synthetic::make_synthetic_corpus;
use weakclass::{ClassId, Document, Error, Result, RunConfig};

use crate::sidecar;

/// Holds the run-directory lock for the lifetime of a stage.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Invalid(format!(
                "{} exists: another process holds this run directory (remove the file if stale)",
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Serialize, Deserialize, Default, Clone)]
pub struct StageMarker {
    pub stage: String,
    pub config_hash: String,
    /// Effective inputs after synthetic-corpus rewiring.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub classes: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub provider: Option<String>,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
}

fn marker_path(run_dir: &Path, stage: Stage) -> PathBuf {
    run_dir.join(format!("stage_{}.json", stage.name()))
}

fn write_marker(run_dir: &Path, marker: &StageMarker) -> Result<()> {
    let path = run_dir.join(format!("stage_{}.json", marker.stage));
    let json = serde_json::to_string_pretty(marker).expect("marker serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn read_marker(run_dir: &Path, stage: Stage) -> Result<Option<StageMarker>> {
    let path = marker_path(run_dir, stage);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let marker = serde_json::from_str(&text)
        .map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
    Ok(Some(marker))
}

/// Load a prerequisite stage's marker, failing with an actionable message
/// when it is missing or was produced under different settings.
fn require_marker(cfg: &RunConfig, stage: Stage) -> Result<StageMarker> {
    let marker = read_marker(&cfg.run_dir, stage)?.ok_or_else(|| {
        Error::MissingStage(format!(
            "stage `{}` has not run in {}; run `{}` first",
            stage.name(),
            cfg.run_dir.display(),
            stage.name()
        ))
    })?;
    let expected = cfg.stage_hash(stage);
    if marker.config_hash != expected {
        return Err(Error::MissingStage(format!(
            "stage `{}` artifacts in {} were built with a different configuration; \
             re-run `{}` first",
            stage.name(),
            cfg.run_dir.display(),
            stage.name()
        )));
    }
    Ok(marker)
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string(value).expect("serializable");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingStage(format!("{} not found; run `prepare` first", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Cache(format!("{}: {e}", path.display())))
}

fn snapshot_config(cfg: &RunConfig) -> Result<()> {
    let path = cfg.run_dir.join("config.snapshot.toml");
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("cannot snapshot config: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

pub fn prepare(cfg: &RunConfig) -> Result<StageMarker> {
    if cfg.run_dir.as_os_str().is_empty() {
        return Err(Error::Config("run_dir must be set".into()));
    }
    let _lock = RunLock::acquire(&cfg.run_dir)?;
    let hash = cfg.stage_hash(Stage::Prepare);

    if let Some(marker) = read_marker(&cfg.run_dir, Stage::Prepare)? {
        if marker.config_hash == hash && cfg.run_dir.join("corpus.json").exists() {
            log::info!("prepare: up to date, skipping");
            return Ok(marker);
        }
    }
    snapshot_config(cfg)?;

    // resolve inputs: either user files or a generated synthetic corpus
    let (corpus_path, classes_path, labels_path, provider, hidden_dim) = match &cfg.synthetic {
        Some(syn) => {
            log::info!("prepare: generating synthetic corpus (seed {})", syn.seed);
            let corpus = make_synthetic_corpus(syn)?;
            let paths = corpus.write_files(&cfg.run_dir.join("synthetic"))?;
            (
                paths.corpus,
                paths.classes,
                Some(paths.labels),
                Some(format!("precomputed:{}", paths.provider_dir.display())),
                Some(syn.hidden_dim),
            )
        }
        None => {
            if cfg.corpus.as_os_str().is_empty() || cfg.classes.as_os_str().is_empty() {
                return Err(Error::Config(
                    "corpus and classes paths must be set (or configure [synthetic])".into(),
                ));
            }
            (
                cfg.corpus.clone(),
                cfg.classes.clone(),
                cfg.labels.clone(),
                None,
                None,
            )
        }
    };

    let seg = SegmentOptions {
        max_sentence_len: cfg.max_sentence_len,
    };
    let documents = load_corpus(&corpus_path, cfg.corpus_format, &seg)?;
    let classes = load_classes(&classes_path)?;
    let gold = match &labels_path {
        Some(p) => Some(load_gold_labels(p, &documents, &classes)?),
        None => None,
    };
    log::info!(
        "prepare: {} documents, {} classes{}",
        documents.len(),
        classes.len(),
        gold.as_ref()
            .map(|g| format!(", {} gold labels", g.len()))
            .unwrap_or_default()
    );

    save_json(&cfg.run_dir.join("corpus.json"), &documents)?;
    save_json(&cfg.run_dir.join("classes.json"), &classes)?;
    if let Some(g) = &gold {
        save_json(&cfg.run_dir.join("labels.json"), g)?;
    }

    let marker = StageMarker {
        stage: Stage::Prepare.name().into(),
        config_hash: hash,
        corpus: Some(corpus_path),
        classes: Some(classes_path),
        labels: labels_path,
        provider,
        hidden_dim,
    };
    write_marker(&cfg.run_dir, &marker)?;
    Ok(marker)
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

pub fn embed(cfg: &RunConfig) -> Result<StageMarker> {
    let prep = require_marker(cfg, Stage::Prepare)?;
    let _lock = RunLock::acquire(&cfg.run_dir)?;
    let hash = cfg.stage_hash(Stage::Embed);

    if let Some(marker) = read_marker(&cfg.run_dir, Stage::Embed)? {
        if marker.config_hash == hash && cfg.run_dir.join("tokens.bin").exists() {
            log::info!("embed: up to date, skipping");
            return Ok(marker);
        }
    }

    let documents: Vec<Document> = load_json(&cfg.run_dir.join("corpus.json"))?;
    let provider_id = prep.provider.clone().unwrap_or_else(|| cfg.provider.clone());
    let provider: Box<dyn EmbeddingProvider> = if let Some(dir) =
        provider_id.strip_prefix("precomputed:")
    {
        Box::new(PrecomputedProvider::open(Path::new(dir))?)
    } else {
        // treat any other id as a transformer checkpoint; encode through the
        // sidecar into the precomputed layout, then read it back
        let dir = sidecar::encode_corpus(cfg, &documents, &provider_id)?;
        Box::new(PrecomputedProvider::open(&dir)?)
    };
    log::info!(
        "embed: provider {} (h = {})",
        provider.id(),
        provider.hidden_dim()
    );

    let matrices = embed_corpus(&documents, provider.as_ref())?;
    let table = build_static_table(&documents, &matrices, cfg.min_count)?;
    log::info!("embed: static vocabulary of {} words", table.len());

    let fp = corpus_fingerprint(&documents);
    write_token_cache(
        &cfg.run_dir.join("tokens.bin"),
        provider.id(),
        &fp,
        provider.hidden_dim(),
        &matrices,
    )?;
    write_static_cache(&cfg.run_dir.join("static.bin"), provider.id(), &fp, &table)?;

    let marker = StageMarker {
        stage: Stage::Embed.name().into(),
        config_hash: hash,
        provider: Some(provider.id().to_string()),
        hidden_dim: Some(provider.hidden_dim()),
        ..prep
    };
    write_marker(&cfg.run_dir, &marker)?;
    Ok(marker)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Load everything the pipeline needs from the run directory.
pub fn load_pipeline_data(cfg: &RunConfig, embed_marker: &StageMarker) -> Result<PipelineData> {
    let documents: Vec<Document> = load_json(&cfg.run_dir.join("corpus.json"))?;
    let classes = load_json(&cfg.run_dir.join("classes.json"))?;
    let gold: Option<BTreeMap<String, ClassId>> = if cfg.run_dir.join("labels.json").exists() {
        Some(load_json(&cfg.run_dir.join("labels.json"))?)
    } else {
        None
    };
    let provider_id = embed_marker
        .provider
        .clone()
        .unwrap_or_else(|| cfg.provider.clone());
    let fp = corpus_fingerprint(&documents);
    let (_, matrices) = read_token_cache(&cfg.run_dir.join("tokens.bin"), &provider_id, &fp)?;
    let static_table = read_static_cache(&cfg.run_dir.join("static.bin"), &provider_id, &fp)?;
    Ok(PipelineData {
        documents,
        classes,
        gold,
        matrices,
        static_table,
    })
}

fn resolve_trainer(cfg: &RunConfig) -> Result<Box<dyn ClassifierTrainer>> {
    match cfg.classifier.as_str() {
        "transformer" => Ok(Box::new(sidecar::TransformerTrainer::new(cfg))),
        other => pipeline::reference_trainer(other),
    }
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let embed_marker = require_marker(cfg, Stage::Embed)?;
    let _lock = RunLock::acquire(&cfg.run_dir)?;
    let hash = cfg.stage_hash(Stage::Run);
    let export_hash = cfg.stage_hash(Stage::Export);

    if let Some(marker) = read_marker(&cfg.run_dir, Stage::Run)? {
        if marker.config_hash == hash && cfg.run_dir.join("predictions.jsonl").exists() {
            if read_marker(&cfg.run_dir, Stage::Export)?
                .map(|m| m.config_hash == export_hash)
                .unwrap_or(false)
            {
                log::info!("run: up to date, skipping");
                return Ok(());
            }
        }
    }

    let data = load_pipeline_data(cfg, &embed_marker)?;
    let result = pipeline::run_pipeline(&data, cfg, Some(&cfg.run_dir))?;
    for it in &result.outcome.iterations {
        if let Some(r) = &it.report {
            log::info!(
                "iteration {}: micro-F1 {:.4}, macro-F1 {:.4}",
                it.iteration,
                r.micro_f1,
                r.macro_f1
            );
        }
    }
    write_marker(
        &cfg.run_dir,
        &StageMarker {
            stage: Stage::Run.name().into(),
            config_hash: hash,
            ..embed_marker.clone()
        },
    )?;

    // run continues through pseudo-dataset export and final labeling
    let trainer = resolve_trainer(cfg)?;
    let export = pipeline::export_outputs(&data, &result, cfg, trainer.as_ref(), Some(&cfg.run_dir))?;
    log::info!(
        "run: exported {} pseudo examples and {} predictions",
        export.pseudo_examples.len(),
        export.predictions.len()
    );
    write_marker(
        &cfg.run_dir,
        &StageMarker {
            stage: Stage::Export.name().into(),
            config_hash: export_hash,
            ..embed_marker
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

/// Read back the final iteration's scores written by `run`.
pub fn load_final_scores(cfg: &RunConfig) -> Result<Vec<ScoredDoc>> {
    let path = cfg
        .run_dir
        .join(format!("scores_iter{}.jsonl", cfg.iterations));
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingStage(format!("{} not found; run `run` first", path.display()))
        } else {
            Error::io(&path, e)
        }
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Cache(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn export(cfg: &RunConfig) -> Result<()> {
    require_marker(cfg, Stage::Run)?;
    let embed_marker = require_marker(cfg, Stage::Embed)?;
    let _lock = RunLock::acquire(&cfg.run_dir)?;
    let hash = cfg.stage_hash(Stage::Export);

    if let Some(marker) = read_marker(&cfg.run_dir, Stage::Export)? {
        if marker.config_hash == hash && cfg.run_dir.join("predictions.jsonl").exists() {
            log::info!("export: up to date, skipping");
            return Ok(());
        }
    }

    let data = load_pipeline_data(cfg, &embed_marker)?;
    let scores = load_final_scores(cfg)?;
    let pseudo = build_pseudo_dataset(&scores, &data.documents, cfg.delta)?;
    export_pseudo_dataset(&cfg.run_dir.join("pseudo_dataset.jsonl"), &pseudo)?;

    let trainer = resolve_trainer(cfg)?;
    let features = mean_pooled_doc_vectors(&data.matrices);
    let predictions = train_and_label(
        trainer.as_ref(),
        &pseudo,
        &data.documents,
        &features,
        data.classes.len(),
    )?;
    export_predictions(&cfg.run_dir.join("predictions.jsonl"), &predictions)?;
    log::info!(
        "export: {} pseudo examples, {} predictions",
        pseudo.len(),
        predictions.len()
    );

    write_marker(
        &cfg.run_dir,
        &StageMarker {
            stage: Stage::Export.name().into(),
            config_hash: hash,
            ..embed_marker
        },
    )?;
    Ok(())
}
