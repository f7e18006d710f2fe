//! Planted-topic synthetic corpora with precomputed embeddings.
//!
//! Each class gets an orthonormal ground-truth direction in a low-dimensional
//! space. Every document draws a purity-controlled number of sentences whose
//! words embed near its gold class direction; the remaining sentences embed
//! near other class directions, so multi-topic documents exist by
//! construction whenever `purity < 1`. Regeneration from the same seed is
//! bit-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{segment, Document, SegmentOptions};
use crate::embeddings::PrecomputedWriter;
use crate::error::{Error, Result};
use crate::ClassId;

/// Surface names for generated classes.
const CLASS_NAMES: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
    "uniform", "victor", "whiskey", "xray", "yankee", "zulu",
];

const TOPIC_WORDS_PER_CLASS: usize = 30;
const FILLER_WORDS: usize = 30;
/// Filler-word probability in sentences aligned with the gold class: the
/// document's own topic is told in diluted, casual language.
const ALIGNED_FILLER_PROB: f64 = 0.45;
/// Off-topic sentences mention their foreign topic in concentrated terms,
/// which makes them look deceptively class-indicative in isolation.
const OFF_TOPIC_FILLER_PROB: f64 = 0.05;
/// Among non-aligned sentences, the fraction that are off-topic rather than
/// vague; the first non-aligned sentence of a document is always off-topic
/// so multi-topic documents exist by construction.
const OFF_TOPIC_SHARE: f64 = 0.4;
/// Spread of topic-word base vectors around their class direction.
const TOPIC_SPREAD: f64 = 0.25;
/// Pull of fringe topic words toward the neighboring class.
const FRINGE_PULL: f64 = 0.5;
/// Fraction of documents whose gold topic is present but not the sentence
/// majority (hard, genuinely multi-topic documents).
const HARD_DOC_PROB: f64 = 0.10;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub docs_per_class: usize,
    pub sents_per_doc: usize,
    /// Expected fraction of sentences aligned with the gold class, in (0.5, 1].
    pub purity: f64,
    /// Per-dimension Gaussian noise added to every word occurrence.
    pub noise_std: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub words_per_sentence: usize,
    /// How far each class-name word sits off its class centroid, skewed
    /// toward the next class. Models label names that are imperfect anchors
    /// for their topic; 0 puts every name exactly on its class direction.
    pub name_offset: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 4,
            docs_per_class: 200,
            sents_per_doc: 8,
            purity: 0.7,
            noise_std: 0.6,
            seed: 99,
            hidden_dim: 32,
            words_per_sentence: 6,
            name_offset: 0.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > CLASS_NAMES.len() {
            return Err(Error::Config(format!(
                "synthetic.classes must be in 2..={}",
                CLASS_NAMES.len()
            )));
        }
        if self.hidden_dim < self.classes {
            return Err(Error::Config(
                "synthetic.hidden_dim must be >= synthetic.classes".into(),
            ));
        }
        if !(self.purity > 0.5 && self.purity <= 1.0) {
            return Err(Error::Config("synthetic.purity must be in (0.5, 1]".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("synthetic.noise_std must be >= 0".into()));
        }
        if self.docs_per_class == 0 || self.sents_per_doc == 0 || self.words_per_sentence == 0 {
            return Err(Error::Config("synthetic sizes must all be >= 1".into()));
        }
        if self.name_offset < 0.0 {
            return Err(Error::Config("synthetic.name_offset must be >= 0".into()));
        }
        Ok(())
    }
}

/// A generated corpus with its gold labels and per-sentence embeddings.
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub class_names: Vec<String>,
    pub gold: BTreeMap<String, ClassId>,
    /// Per document, per sentence: `|words| x h` float32 matrices aligned
    /// with `documents[i].sentences`.
    pub embeddings: Vec<Vec<Array2<f32>>>,
    pub hidden_dim: usize,
}

/// File layout produced by [`SyntheticCorpus::write_files`].
pub struct SyntheticPaths {
    pub corpus: PathBuf,
    pub classes: PathBuf,
    pub labels: PathBuf,
    pub provider_dir: PathBuf,
}

struct Vocab {
    /// word -> unit base vector
    base: BTreeMap<String, Array1<f64>>,
    topic_words: Vec<Vec<String>>,
    fillers: Vec<String>,
}

fn orthonormal_directions(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Array1<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut dirs: Vec<Array1<f64>> = Vec::with_capacity(k);
    while dirs.len() < k {
        let mut v: Array1<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for d in &dirs {
            let proj = v.dot(d);
            v.scaled_add(-proj, d);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            dirs.push(v / n);
        }
    }
    dirs
}

fn build_vocab(cfg: &SyntheticConfig, dirs: &[Array1<f64>], rng: &mut ChaCha8Rng) -> Vocab {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut base = BTreeMap::new();
    let mut topic_words = Vec::with_capacity(cfg.classes);
    for (k, dir) in dirs.iter().enumerate() {
        let name = CLASS_NAMES[k].to_string();
        // the name word anchors the class imperfectly: its vector leans
        // toward the next class plus a random component
        let name_vec = if cfg.name_offset > 0.0 {
            let neighbor = &dirs[(k + 1) % cfg.classes];
            let mut g: Array1<f64> = (0..cfg.hidden_dim).map(|_| normal.sample(rng)).collect();
            g /= g.dot(&g).sqrt();
            let mut skew = neighbor + &g;
            skew /= skew.dot(&skew).sqrt();
            let mut v = dir + &(skew * cfg.name_offset);
            let n = v.dot(&v).sqrt();
            v /= n;
            v
        } else {
            dir.clone()
        };
        base.insert(name.clone(), name_vec);
        let mut words = vec![name];
        // a class's vocabulary is part core (tight around the class
        // direction) and part fringe (leaning toward the next class, the way
        // real topics shade into related ones). Keyword expansion reaches
        // fringe words late, so keyword-based class vectors underrepresent
        // them relative to the documents; the feedback loop closes that gap.
        let neighbor = &dirs[(k + 1) % cfg.classes];
        for i in 0..TOPIC_WORDS_PER_CLASS {
            let word = format!("{}{}", CLASS_NAMES[k], i);
            let fringe = i % 5 >= 3;
            let mut v: Array1<f64> = (0..cfg.hidden_dim).map(|_| normal.sample(rng)).collect();
            v /= v.dot(&v).sqrt();
            let mut w = dir + &(v * TOPIC_SPREAD);
            if fringe {
                w += &(neighbor * FRINGE_PULL);
            }
            let n = w.dot(&w).sqrt();
            w /= n;
            base.insert(word.clone(), w);
            words.push(word);
        }
        topic_words.push(words);
    }
    // filler words sit near the center of all class directions: generic
    // topical vocabulary that is almost equidistant from every class, so a
    // sentence of fillers is vague (small top-1/top-2 gap). The center leans
    // slightly toward class 0, the way generic corpus language correlates
    // with a dominant topic; naive per-sentence counting pays for that.
    let mut center = Array1::<f64>::zeros(cfg.hidden_dim);
    for dir in dirs {
        center += dir;
    }
    center /= center.dot(&center).sqrt();
    center += &(&dirs[0] * 0.45);
    center /= center.dot(&center).sqrt();
    let mut fillers = Vec::with_capacity(FILLER_WORDS);
    for i in 0..FILLER_WORDS {
        let word = format!("filler{i}");
        let mut v: Array1<f64> = (0..cfg.hidden_dim).map(|_| normal.sample(rng)).collect();
        v /= v.dot(&v).sqrt();
        let mut w = &center + &(v * 0.25);
        let n = w.dot(&w).sqrt();
        w /= n;
        base.insert(word.clone(), w);
        fillers.push(word);
    }
    Vocab {
        base,
        topic_words,
        fillers,
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Generate a corpus per `cfg`. Deterministic in the seed.
pub fn make_synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dirs = orthonormal_directions(cfg.classes, cfg.hidden_dim, &mut rng);
    let vocab = build_vocab(cfg, &dirs, &mut rng);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");

    let n_docs = cfg.classes * cfg.docs_per_class;
    let mut documents = Vec::with_capacity(n_docs);
    let mut gold = BTreeMap::new();
    let mut embeddings = Vec::with_capacity(n_docs);
    let seg_opts = SegmentOptions::default();

    let mut doc_counter = 0usize;
    for gold_class in 0..cfg.classes {
        for _ in 0..cfg.docs_per_class {
            let doc_id = format!("{doc_counter:05}");
            doc_counter += 1;

            let n = cfg.sents_per_doc;
            let hard = cfg.purity < 1.0 && n >= 4 && rng.random_bool(HARD_DOC_PROB);
            let aligned = if cfg.purity >= 1.0 || n == 1 {
                n
            } else if hard {
                // a small tail of genuinely ambiguous documents: the gold
                // topic is present but no longer the sentence majority
                ((n as f64 * 0.5).round() as usize).max(1)
            } else {
                // ordinary documents keep the gold class as the strict
                // sentence-level majority; at least one sentence does not align
                let floor = ((n as f64 * 0.55).ceil() as usize).max(1).min(n - 1);
                let b = Binomial::new(n as u64, cfg.purity).expect("valid binomial");
                (b.sample(&mut rng) as usize).clamp(floor, n - 1)
            };
            // sentence flavors: aligned / off-topic / vague, positions
            // shuffled so there is no leading-sentence bias
            #[derive(Clone, Copy)]
            enum Flavor {
                Aligned,
                OffTopic,
                Vague,
            }
            // hard documents drift toward one competing topic, told in the
            // same diluted register as the gold content: they end up narrowly
            // mislabeled rather than confidently foreign
            let hard_off_class = {
                let mut c = rng.random_range(0..cfg.classes - 1);
                if c >= gold_class {
                    c += 1;
                }
                c
            };
            let off_share = if hard { 0.8 } else { OFF_TOPIC_SHARE };
            let mut flavors = Vec::with_capacity(n);
            for slot in 0..n {
                if slot < aligned {
                    flavors.push(Flavor::Aligned);
                } else if slot == aligned || rng.random_bool(off_share) {
                    flavors.push(Flavor::OffTopic);
                } else {
                    flavors.push(Flavor::Vague);
                }
            }
            flavors.shuffle(&mut rng);

            let mut sentence_words: Vec<Vec<String>> = Vec::with_capacity(n);
            for flavor in &flavors {
                let (class, filler_prob) = match flavor {
                    Flavor::Aligned => (Some(gold_class), ALIGNED_FILLER_PROB),
                    Flavor::OffTopic if hard => (Some(hard_off_class), ALIGNED_FILLER_PROB),
                    Flavor::OffTopic => {
                        // uniform over the other classes
                        let mut c = rng.random_range(0..cfg.classes - 1);
                        if c >= gold_class {
                            c += 1;
                        }
                        (Some(c), OFF_TOPIC_FILLER_PROB)
                    }
                    Flavor::Vague => (None, 1.0),
                };
                let words: Vec<String> = (0..cfg.words_per_sentence)
                    .map(|_| {
                        if class.is_none() || rng.random_bool(filler_prob) {
                            vocab.fillers[rng.random_range(0..vocab.fillers.len())].clone()
                        } else {
                            let pool = &vocab.topic_words[class.expect("topic sentence")];
                            pool[rng.random_range(0..pool.len())].clone()
                        }
                    })
                    .collect();
                sentence_words.push(words);
            }

            let raw_text = sentence_words
                .iter()
                .map(|ws| capitalize(&ws.join(" ")) + ".")
                .collect::<Vec<_>>()
                .join(" ");
            let sentences = segment(&raw_text, &seg_opts);
            debug_assert_eq!(sentences.len(), n, "segmentation must recover sentences");
            for (s, planned) in sentences.iter().zip(&sentence_words) {
                debug_assert_eq!(&s.words, planned, "segmentation must recover words");
            }

            // token vectors: word base + iid Gaussian noise, stored as f32
            let doc_embeddings: Vec<Array2<f32>> = sentences
                .iter()
                .map(|s| {
                    let mut m = Array2::<f32>::zeros((s.words.len(), cfg.hidden_dim));
                    for (w, word) in s.words.iter().enumerate() {
                        let b = &vocab.base[word];
                        for d in 0..cfg.hidden_dim {
                            let noise = if cfg.noise_std > 0.0 {
                                cfg.noise_std * normal.sample(&mut rng)
                            } else {
                                0.0
                            };
                            m[(w, d)] = (b[d] + noise) as f32;
                        }
                    }
                    m
                })
                .collect();

            gold.insert(doc_id.clone(), gold_class);
            documents.push(Document {
                doc_id,
                raw_text,
                sentences,
            });
            embeddings.push(doc_embeddings);
        }
    }

    Ok(SyntheticCorpus {
        documents,
        class_names: (0..cfg.classes)
            .map(|k| CLASS_NAMES[k].to_string())
            .collect(),
        gold,
        embeddings,
        hidden_dim: cfg.hidden_dim,
    })
}

impl SyntheticCorpus {
    /// Write corpus/classes/labels files plus a precomputed-provider
    /// directory under `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<SyntheticPaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let corpus = dir.join("corpus.jsonl");
        let mut lines = String::new();
        for doc in &self.documents {
            let rec = serde_json::json!({ "id": doc.doc_id, "text": doc.raw_text });
            lines.push_str(&rec.to_string());
            lines.push('\n');
        }
        fs::write(&corpus, lines).map_err(|e| Error::io(&corpus, e))?;

        let classes = dir.join("classes.txt");
        fs::write(&classes, self.class_names.join("\n") + "\n")
            .map_err(|e| Error::io(&classes, e))?;

        let labels = dir.join("labels.jsonl");
        let mut lines = String::new();
        for doc in &self.documents {
            let rec = serde_json::json!({ "id": doc.doc_id, "label": self.gold[&doc.doc_id] });
            lines.push_str(&rec.to_string());
            lines.push('\n');
        }
        fs::write(&labels, lines).map_err(|e| Error::io(&labels, e))?;

        let provider_dir = dir.join("embeddings");
        let mut writer = PrecomputedWriter::create(&provider_dir, self.hidden_dim)?;
        for (doc, mats) in self.documents.iter().zip(&self.embeddings) {
            writer.write_doc(&doc.doc_id, mats)?;
        }
        writer.finish()?;

        Ok(SyntheticPaths {
            corpus,
            classes,
            labels,
            provider_dir,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            classes: 3,
            docs_per_class: 5,
            sents_per_doc: 6,
            purity: 0.7,
            noise_std: 0.1,
            seed: 11,
            hidden_dim: 8,
            words_per_sentence: 5,
            name_offset: 0.0,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_synthetic_corpus(&small_cfg()).unwrap();
        let b = make_synthetic_corpus(&small_cfg()).unwrap();
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.gold, b.gold);
        for (da, db) in a.embeddings.iter().zip(&b.embeddings) {
            assert_eq!(da, db);
        }
    }

    #[test]
    fn every_document_has_offtopic_sentence_when_impure() {
        let mut cfg = small_cfg();
        cfg.purity = 0.6;
        cfg.noise_std = 0.0;
        let corpus = make_synthetic_corpus(&cfg).unwrap();
        // off-topic sentences use another class's topic words; check each doc
        for doc in &corpus.documents {
            let gold = corpus.gold[&doc.doc_id];
            let has_foreign = doc.sentences.iter().any(|s| {
                s.words.iter().any(|w| {
                    corpus
                        .class_names
                        .iter()
                        .enumerate()
                        .any(|(k, n)| k != gold && w.starts_with(n.as_str()))
                })
            });
            assert!(
                has_foreign,
                "doc {} (gold {gold}) has no off-topic sentence",
                doc.doc_id
            );
        }
    }

    #[test]
    fn pure_noiseless_corpus_has_clean_class_words() {
        let mut cfg = small_cfg();
        cfg.purity = 1.0;
        cfg.noise_std = 0.0;
        let corpus = make_synthetic_corpus(&cfg).unwrap();
        for doc in &corpus.documents {
            let gold = corpus.gold[&doc.doc_id];
            for s in &doc.sentences {
                for w in &s.words {
                    let ok = w.starts_with("filler")
                        || w.starts_with(corpus.class_names[gold].as_str());
                    assert!(ok, "unexpected word {w} in pure doc");
                }
            }
        }
    }

    #[test]
    fn invalid_configs_error() {
        let mut cfg = small_cfg();
        cfg.purity = 0.5;
        assert!(make_synthetic_corpus(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.classes = 1;
        assert!(make_synthetic_corpus(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.hidden_dim = 2;
        assert!(make_synthetic_corpus(&cfg).is_err());
    }

    #[test]
    fn written_files_round_trip_through_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_synthetic_corpus(&small_cfg()).unwrap();
        let paths = corpus.write_files(dir.path()).unwrap();

        let docs = crate::corpus::load_corpus(
            &paths.corpus,
            crate::corpus::CorpusFormat::Jsonl,
            &SegmentOptions::default(),
        )
        .unwrap();
        assert_eq!(docs, corpus.documents);

        let classes = crate::corpus::load_classes(&paths.classes).unwrap();
        assert_eq!(classes.len(), 3);

        let gold = crate::corpus::load_gold_labels(&paths.labels, &docs, &classes).unwrap();
        assert_eq!(gold, corpus.gold);

        // embeddings readable through the provider
        let provider = crate::embeddings::PrecomputedProvider::open(&paths.provider_dir).unwrap();
        let mats = crate::embeddings::embed_corpus(&docs, &provider).unwrap();
        assert_eq!(mats[0][0].vectors, corpus.embeddings[0][0]);
    }
}
