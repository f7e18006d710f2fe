//! Contextualized token embeddings behind a provider interface.
//!
//! Providers expose raw subword vectors plus a subword-to-word alignment;
//! [`embed_sentence`] mean-pools subwords into one vector per word. The
//! `precomputed` provider reads per-document float32 matrices from a
//! directory with a manifest, which is how synthetic and externally encoded
//! corpora enter the pipeline.

pub mod cache;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Sentence};
use crate::error::{Error, Result};

/// Raw per-sentence provider output: one row per subword.
pub struct RawEncoding {
    /// `n_subwords x h`.
    pub vectors: Array2<f32>,
    /// Maps each subword row to a 0-based word position. Non-decreasing;
    /// every word position must occur at least once.
    pub word_index: Vec<usize>,
}

/// Source of contextualized token vectors.
pub trait EmbeddingProvider: Send + Sync {
    /// Opaque identifier recorded in caches (e.g. `precomputed:dir`).
    fn id(&self) -> &str;
    fn hidden_dim(&self) -> usize;
    /// Encode one sentence of a document.
    fn encode(&self, doc_id: &str, sentence: &Sentence) -> Result<RawEncoding>;
}

/// Contextualized vectors for one sentence, one row per word.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub doc_id: String,
    pub sent_index: usize,
    /// `|words| x h`, float32. Subword vectors are mean-pooled per word.
    pub vectors: Array2<f32>,
    /// Subword-to-word alignment as produced by the provider.
    pub token_to_word: Vec<usize>,
}

/// Embed one sentence: encode, validate, and mean-pool subwords per word.
pub fn embed_sentence(
    doc_id: &str,
    sentence: &Sentence,
    provider: &dyn EmbeddingProvider,
) -> Result<TokenMatrix> {
    let raw = provider.encode(doc_id, sentence)?;
    pool_encoding(doc_id, sentence, raw, provider.hidden_dim())
}

fn pool_encoding(
    doc_id: &str,
    sentence: &Sentence,
    raw: RawEncoding,
    hidden_dim: usize,
) -> Result<TokenMatrix> {
    let n_words = sentence.words.len();
    let n_sub = raw.vectors.nrows();
    if raw.vectors.ncols() != hidden_dim {
        return Err(Error::Provider {
            doc_id: doc_id.to_string(),
            sent_index: sentence.sent_index,
            msg: format!(
                "expected hidden dim {hidden_dim}, got {}",
                raw.vectors.ncols()
            ),
        });
    }
    if raw.word_index.len() != n_sub {
        return Err(Error::Provider {
            doc_id: doc_id.to_string(),
            sent_index: sentence.sent_index,
            msg: format!(
                "alignment length {} does not match {n_sub} subwords",
                raw.word_index.len()
            ),
        });
    }

    // mean-pool in f64, store as f32
    let mut sums = vec![vec![0f64; hidden_dim]; n_words];
    let mut counts = vec![0usize; n_words];
    for (row, &w) in raw.word_index.iter().enumerate() {
        if w >= n_words {
            return Err(Error::Provider {
                doc_id: doc_id.to_string(),
                sent_index: sentence.sent_index,
                msg: format!("alignment points at word {w}, sentence has {n_words} words"),
            });
        }
        for (d, s) in sums[w].iter_mut().enumerate() {
            *s += raw.vectors[(row, d)] as f64;
        }
        counts[w] += 1;
    }

    let mut pooled = Array2::<f32>::zeros((n_words, hidden_dim));
    for (w, count) in counts.iter().enumerate() {
        if *count == 0 {
            return Err(Error::Provider {
                doc_id: doc_id.to_string(),
                sent_index: sentence.sent_index,
                msg: format!("word {w} ({:?}) has no subwords", sentence.words[w]),
            });
        }
        for d in 0..hidden_dim {
            let v = (sums[w][d] / *count as f64) as f32;
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite embedding in {doc_id}[{}] word {w}",
                    sentence.sent_index
                )));
            }
            pooled[(w, d)] = v;
        }
    }

    Ok(TokenMatrix {
        doc_id: doc_id.to_string(),
        sent_index: sentence.sent_index,
        vectors: pooled,
        token_to_word: raw.word_index,
    })
}

/// Embed every sentence of every document, in parallel per document.
/// Transient provider failures are retried twice before giving up.
pub fn embed_corpus(
    corpus: &[Document],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Vec<TokenMatrix>>> {
    corpus
        .par_iter()
        .map(|doc| {
            doc.sentences
                .iter()
                .map(|s| {
                    let mut last_err = None;
                    for _ in 0..3 {
                        match embed_sentence(&doc.doc_id, s, provider) {
                            Ok(m) => return Ok(m),
                            Err(e @ Error::Provider { .. }) => last_err = Some(e),
                            Err(e) => return Err(e),
                        }
                    }
                    Err(last_err.expect("retry loop ran"))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Corpus-level static word vectors: the mean of each word's contextualized
/// occurrence vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticWordTable {
    pub hidden_dim: usize,
    /// word -> (occurrence count, mean vector). Ordered for determinism.
    entries: BTreeMap<String, (u64, Vec<f32>)>,
}

impl StaticWordTable {
    pub fn vector(&self, word: &str) -> Option<ArrayView1<'_, f32>> {
        self.entries
            .get(word)
            .map(|(_, v)| ArrayView1::from(v.as_slice()))
    }

    pub fn count(&self, word: &str) -> u64 {
        self.entries.get(word).map(|(c, _)| *c).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Words in lexicographic order with counts and vectors.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64, &[f32])> {
        self.entries
            .iter()
            .map(|(w, (c, v))| (w.as_str(), *c, v.as_slice()))
    }

    pub(crate) fn from_entries(hidden_dim: usize, entries: BTreeMap<String, (u64, Vec<f32>)>) -> Self {
        StaticWordTable {
            hidden_dim,
            entries,
        }
    }
}

/// Accumulate the static word table from embedded sentences.
///
/// `min_count` filters rare words out of the vocabulary (default 1 keeps
/// everything).
pub fn build_static_table(
    corpus: &[Document],
    matrices: &[Vec<TokenMatrix>],
    min_count: u64,
) -> Result<StaticWordTable> {
    if corpus.is_empty() || matrices.is_empty() {
        return Err(Error::Corpus("cannot build static table from empty corpus".into()));
    }
    let hidden_dim = matrices
        .iter()
        .flat_map(|d| d.iter())
        .map(|m| m.vectors.ncols())
        .next()
        .ok_or_else(|| Error::Corpus("corpus has no embedded sentences".into()))?;

    let mut acc: BTreeMap<String, (u64, Vec<f64>)> = BTreeMap::new();
    for (doc, mats) in corpus.iter().zip(matrices) {
        for (sent, mat) in doc.sentences.iter().zip(mats) {
            debug_assert_eq!(sent.words.len(), mat.vectors.nrows());
            for (w, word) in sent.words.iter().enumerate() {
                let entry = acc
                    .entry(word.clone())
                    .or_insert_with(|| (0, vec![0f64; hidden_dim]));
                entry.0 += 1;
                for d in 0..hidden_dim {
                    entry.1[d] += mat.vectors[(w, d)] as f64;
                }
            }
        }
    }

    let entries = acc
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_count)
        .map(|(w, (c, sums))| {
            let mean: Vec<f32> = sums.iter().map(|s| (s / c as f64) as f32).collect();
            (w, (c, mean))
        })
        .collect();
    Ok(StaticWordTable::from_entries(hidden_dim, entries))
}

/// Mean-pooled document vectors over all word embeddings, keyed by doc id.
/// These are the frozen features for the reference classifier.
pub fn mean_pooled_doc_vectors(
    matrices: &[Vec<TokenMatrix>],
) -> BTreeMap<String, ndarray::Array1<f64>> {
    let mut out = BTreeMap::new();
    for doc in matrices {
        let Some(first) = doc.first() else { continue };
        let dim = first.vectors.ncols();
        let mut acc = ndarray::Array1::<f64>::zeros(dim);
        let mut count = 0usize;
        for m in doc {
            for row in m.vectors.rows() {
                for (d, x) in row.iter().enumerate() {
                    acc[d] += *x as f64;
                }
            }
            count += m.vectors.nrows();
        }
        if count > 0 {
            acc /= count as f64;
            out.insert(first.doc_id.clone(), acc);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Precomputed provider
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    hidden_dim: usize,
    docs: Vec<ManifestDoc>,
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    id: String,
    file: String,
    /// Word count per sentence, in order.
    sentence_word_counts: Vec<usize>,
}

/// Reads per-document float32 matrices written by [`PrecomputedWriter`].
pub struct PrecomputedProvider {
    id: String,
    dir: PathBuf,
    hidden_dim: usize,
    docs: BTreeMap<String, ManifestDoc>,
    // one document's matrix stays resident; sentences of a document are
    // encoded consecutively
    loaded: Mutex<Option<(String, Vec<f32>)>>,
}

impl PrecomputedProvider {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let content =
            fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&content)
            .map_err(|e| Error::Cache(format!("{}: {e}", manifest_path.display())))?;
        if manifest.version != 1 {
            return Err(Error::Cache(format!(
                "unsupported precomputed manifest version {}",
                manifest.version
            )));
        }
        Ok(PrecomputedProvider {
            id: format!("precomputed:{}", dir.display()),
            dir: dir.to_path_buf(),
            hidden_dim: manifest.hidden_dim,
            docs: manifest.docs.into_iter().map(|d| (d.id.clone(), d)).collect(),
            loaded: Mutex::new(None),
        })
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn encode(&self, doc_id: &str, sentence: &Sentence) -> Result<RawEncoding> {
        let meta = self.docs.get(doc_id).ok_or_else(|| Error::Provider {
            doc_id: doc_id.to_string(),
            sent_index: sentence.sent_index,
            msg: "document not in precomputed manifest".into(),
        })?;
        if sentence.sent_index >= meta.sentence_word_counts.len() {
            return Err(Error::Provider {
                doc_id: doc_id.to_string(),
                sent_index: sentence.sent_index,
                msg: format!(
                    "manifest lists {} sentences for this document",
                    meta.sentence_word_counts.len()
                ),
            });
        }
        let expected = meta.sentence_word_counts[sentence.sent_index];
        if expected != sentence.words.len() {
            return Err(Error::Provider {
                doc_id: doc_id.to_string(),
                sent_index: sentence.sent_index,
                msg: format!(
                    "manifest expects {expected} words, sentence has {}",
                    sentence.words.len()
                ),
            });
        }

        let mut guard = self.loaded.lock().expect("provider mutex poisoned");
        let reload = guard.as_ref().map(|(id, _)| id != doc_id).unwrap_or(true);
        if reload {
            let path = self.dir.join(&meta.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let total: usize = meta.sentence_word_counts.iter().sum::<usize>() * self.hidden_dim;
            if bytes.len() != total * 4 {
                return Err(Error::Cache(format!(
                    "{}: expected {} bytes, found {}",
                    path.display(),
                    total * 4,
                    bytes.len()
                )));
            }
            let floats: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            *guard = Some((doc_id.to_string(), floats));
        }
        let (_, floats) = guard.as_ref().expect("just loaded");

        let row_offset: usize = meta.sentence_word_counts[..sentence.sent_index].iter().sum();
        let n = expected;
        let start = row_offset * self.hidden_dim;
        let slice = &floats[start..start + n * self.hidden_dim];
        let vectors = Array2::from_shape_vec((n, self.hidden_dim), slice.to_vec())
            .expect("shape checked above");
        Ok(RawEncoding {
            vectors,
            word_index: (0..n).collect(),
        })
    }
}

/// Writes the on-disk layout consumed by [`PrecomputedProvider`].
pub struct PrecomputedWriter {
    dir: PathBuf,
    hidden_dim: usize,
    docs: Vec<ManifestDoc>,
}

impl PrecomputedWriter {
    pub fn create(dir: &Path, hidden_dim: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(PrecomputedWriter {
            dir: dir.to_path_buf(),
            hidden_dim,
            docs: Vec::new(),
        })
    }

    /// Append one document's sentence matrices (each `|words| x h`).
    pub fn write_doc(&mut self, doc_id: &str, sentences: &[Array2<f32>]) -> Result<()> {
        let file = format!("doc_{:06}.bin", self.docs.len());
        let mut bytes = Vec::new();
        let mut counts = Vec::with_capacity(sentences.len());
        for m in sentences {
            assert_eq!(m.ncols(), self.hidden_dim, "matrix width mismatch");
            counts.push(m.nrows());
            for v in m.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = self.dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.docs.push(ManifestDoc {
            id: doc_id.to_string(),
            file,
            sentence_word_counts: counts,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let manifest = Manifest {
            version: 1,
            hidden_dim: self.hidden_dim,
            docs: self.docs,
        };
        let path = self.dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}
