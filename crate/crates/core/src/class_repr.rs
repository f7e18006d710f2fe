//! Class representations from surface names, and class-oriented sentence
//! representations.
//!
//! Each class name is expanded into up to `T` class-indicative keywords by a
//! greedy round-robin walk over the static vocabulary; the class vector is
//! the harmonic-rank-weighted average of its keyword vectors (weight `1/rank`,
//! rank 1 being the seed name). Sentence vectors are similarity-weighted
//! averages of word vectors, using sentence-level context only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::ClassSpec;
use crate::embeddings::{StaticWordTable, TokenMatrix};
use crate::error::{Error, Result};
use crate::numeric::{cosine, cosine_or_zero, norm};
use crate::ClassId;

/// Words excluded from keyword candidacy. They still receive sentence-level
/// word weights like any other token.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "then", "of", "in", "on", "at", "to", "for",
    "from", "by", "with", "about", "as", "into", "is", "are", "was", "were", "be", "been",
    "being", "it", "its", "this", "that", "these", "those", "he", "she", "they", "we", "you",
    "i", "his", "her", "their", "our", "not", "no", "so", "do", "does", "did", "will", "would",
    "can", "could", "has", "have", "had", "s", "t",
];

/// One class: expanded keywords, the class vector, and the confident
/// document set maintained by the feedback loop.
#[derive(Debug, Clone)]
pub struct ClassModel {
    pub class_id: ClassId,
    /// `(word, rank)`; rank 1 is the seed. Multi-word surface names place
    /// every member word at rank 1 (they jointly form the seed), so `T`
    /// bounds the number of ranks.
    pub keywords: Vec<(String, usize)>,
    /// Current class vector `c_k` (full h dims). Replaced by the feedback
    /// loop with the mean of the class set.
    pub class_vector: Array1<f64>,
    /// Keyword-based vector from expansion. Fixed across iterations; always
    /// a member of the class set.
    pub initial_vector: Array1<f64>,
    /// Doc ids of the confident documents currently defining the class.
    /// Starts empty; replaced (not appended to) each iteration.
    pub class_set: Vec<String>,
}

/// Class-oriented representation of one sentence.
#[derive(Debug, Clone)]
pub struct SentenceRepr {
    pub doc_id: String,
    pub sent_index: usize,
    /// Weighted mean of the sentence's word vectors.
    pub vector: Array1<f64>,
    /// Per-word nonnegative weights summing to 1.
    pub word_weights: Vec<f64>,
}

fn widen(v: ArrayView1<'_, f32>) -> Array1<f64> {
    v.iter().map(|x| *x as f64).collect()
}

/// Rank-weighted (1/rank) average of keyword vectors. Entries sharing a rank
/// split that rank's weight evenly (multi-word seeds).
fn harmonic_vector(entries: &[(usize, Array1<f64>)], dim: usize) -> Array1<f64> {
    let mut by_rank: BTreeMap<usize, Vec<&Array1<f64>>> = BTreeMap::new();
    for (rank, v) in entries {
        by_rank.entry(*rank).or_default().push(v);
    }
    let mut acc = Array1::<f64>::zeros(dim);
    let mut total = 0.0;
    for (rank, vecs) in &by_rank {
        let w = 1.0 / *rank as f64;
        let share = w / vecs.len() as f64;
        for v in vecs {
            acc.scaled_add(share, *v);
        }
        total += w;
    }
    acc / total
}

/// Expand each class name into keywords and build class vectors.
///
/// Greedy round-robin: every class starts from its seed (the mean static
/// vector of its surface words, all claimed up front); in class-id order each
/// active class recomputes its harmonic class vector and looks up the nearest
/// vocabulary word outside its own list (stopwords excluded). A word already
/// claimed by another class stops the expansion of the class that reached it
/// second; an unclaimed word is claimed at the next rank. Expansion ends at
/// `T` ranks. Cosine ties break toward the lexicographically smaller word.
pub fn expand_keywords(
    class_specs: &[ClassSpec],
    table: &StaticWordTable,
    t: usize,
) -> Result<Vec<ClassModel>> {
    if class_specs.len() < 2 {
        return Err(Error::Invalid("need at least 2 classes".into()));
    }
    if t < 1 {
        return Err(Error::Invalid("T must be >= 1".into()));
    }
    let dim = table.hidden_dim;

    // widen vocabulary once; skip zero-norm vectors (cosine undefined)
    let vocab: Vec<(&str, Array1<f64>)> = table
        .iter()
        .filter(|(w, _, _)| !STOPWORDS.contains(w))
        .map(|(w, _, v)| (w, v.iter().map(|x| *x as f64).collect::<Array1<f64>>()))
        .filter(|(_, v)| norm(v.view()) > 0.0)
        .collect();

    let mut claimed: BTreeMap<String, ClassId> = BTreeMap::new();
    struct State {
        keywords: Vec<(String, usize)>,
        entries: Vec<(usize, Array1<f64>)>,
        active: bool,
    }
    let mut states = Vec::with_capacity(class_specs.len());

    for spec in class_specs {
        let words = spec.words();
        let mut entries = Vec::new();
        let mut keywords = Vec::new();
        for w in &words {
            let v = table.vector(w).ok_or_else(|| {
                Error::Invalid(format!(
                    "class {:?}: surface word {w:?} not in corpus vocabulary",
                    spec.surface_name
                ))
            })?;
            if let Some(owner) = claimed.get(w) {
                return Err(Error::Invalid(format!(
                    "class {:?}: surface word {w:?} already claimed by class {owner}",
                    spec.surface_name
                )));
            }
            claimed.insert(w.clone(), spec.class_id);
            entries.push((1usize, widen(v)));
            keywords.push((w.clone(), 1usize));
        }
        let seed = harmonic_vector(&entries, dim);
        if norm(seed.view()) == 0.0 {
            return Err(Error::Numeric(format!(
                "class {:?}: seed vector has zero norm",
                spec.surface_name
            )));
        }
        states.push(State {
            keywords,
            entries,
            active: t > 1,
        });
    }

    for rank in 2..=t {
        for (k, state) in states.iter_mut().enumerate() {
            if !state.active {
                continue;
            }
            let class_vec = harmonic_vector(&state.entries, dim);
            // nearest vocabulary word outside this class's own list
            let own: Vec<&str> = state.keywords.iter().map(|(w, _)| w.as_str()).collect();
            let mut best: Option<(&str, &Array1<f64>, f64)> = None;
            for (w, v) in &vocab {
                if own.contains(w) {
                    continue;
                }
                let c = cosine_or_zero(class_vec.view(), v.view());
                let better = match best {
                    None => true,
                    Some((_, _, bc)) => c > bc,
                };
                if better {
                    best = Some((w, v, c));
                }
            }
            match best {
                None => state.active = false,
                Some((w, v, _)) => match claimed.get(w) {
                    Some(owner) if *owner != k => state.active = false,
                    _ => {
                        claimed.insert(w.to_string(), k);
                        state.keywords.push((w.to_string(), rank));
                        state.entries.push((rank, v.clone()));
                    }
                },
            }
        }
    }

    Ok(states
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            let vector = harmonic_vector(&s.entries, dim);
            ClassModel {
                class_id: k,
                keywords: s.keywords,
                class_vector: vector.clone(),
                initial_vector: vector,
                class_set: Vec::new(),
            }
        })
        .collect())
}

/// Class-oriented sentence representation from one token matrix.
///
/// Word `t` with vector `v` gets raw weight
/// `max(0, max_k cos(v, c_k) - cos(v, c_avg))` where `c_avg` is the mean of
/// all class vectors; weights are normalized to sum to 1, falling back to
/// uniform when every raw weight is 0. The sentence vector is the weighted
/// mean of the word vectors.
pub fn sentence_representation(
    token_matrix: &TokenMatrix,
    class_models: &[ClassModel],
) -> Result<SentenceRepr> {
    let n = token_matrix.vectors.nrows();
    if n == 0 {
        return Err(Error::Invalid(format!(
            "empty token matrix for {}[{}]",
            token_matrix.doc_id, token_matrix.sent_index
        )));
    }
    let dim = token_matrix.vectors.ncols();
    let mut c_avg = Array1::<f64>::zeros(dim);
    for m in class_models {
        c_avg += &m.class_vector;
    }
    c_avg /= class_models.len() as f64;

    let mut raw = Vec::with_capacity(n);
    for row in token_matrix.vectors.rows() {
        let v = widen(row);
        let best = class_models
            .iter()
            .map(|m| cosine_or_zero(v.view(), m.class_vector.view()))
            .fold(f64::NEG_INFINITY, f64::max);
        let avg_sim = cosine_or_zero(v.view(), c_avg.view());
        raw.push((best - avg_sim).max(0.0));
    }
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        raw.iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };

    let mut vector = Array1::<f64>::zeros(dim);
    for (w, row) in weights.iter().zip(token_matrix.vectors.rows()) {
        for (d, x) in row.iter().enumerate() {
            vector[d] += w * *x as f64;
        }
    }
    Ok(SentenceRepr {
        doc_id: token_matrix.doc_id.clone(),
        sent_index: token_matrix.sent_index,
        vector,
        word_weights: weights,
    })
}

/// Sentence representations for a whole corpus, parallel per document.
pub fn corpus_sentence_representations(
    matrices: &[Vec<TokenMatrix>],
    class_models: &[ClassModel],
) -> Result<Vec<Vec<SentenceRepr>>> {
    matrices
        .par_iter()
        .map(|doc| {
            doc.iter()
                .map(|m| sentence_representation(m, class_models))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

#[derive(Serialize)]
struct KeywordExport<'a> {
    class_id: ClassId,
    surface_name: &'a str,
    keywords: Vec<KeywordEntry<'a>>,
}

#[derive(Serialize)]
struct KeywordEntry<'a> {
    word: &'a str,
    rank: usize,
}

/// Write per-class keyword lists to `keywords.json` for inspection.
pub fn export_keywords(
    path: &Path,
    class_specs: &[ClassSpec],
    class_models: &[ClassModel],
) -> Result<()> {
    let export: Vec<KeywordExport> = class_specs
        .iter()
        .zip(class_models)
        .map(|(spec, model)| KeywordExport {
            class_id: model.class_id,
            surface_name: &spec.surface_name,
            keywords: model
                .keywords
                .iter()
                .map(|(w, r)| KeywordEntry { word: w, rank: *r })
                .collect(),
        })
        .collect();
    let json = serde_json::to_string_pretty(&export).expect("keyword export serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Cosine similarity of a sentence/document vector to each class vector,
/// in class-id order.
pub fn class_similarities(vector: ArrayView1<'_, f64>, class_models: &[ClassModel]) -> Result<Vec<f64>> {
    class_models
        .iter()
        .map(|m| {
            cosine(vector, m.class_vector.view()).ok_or_else(|| {
                Error::Numeric("zero-norm vector in class similarity".into())
            })
        })
        .collect()
}
