//! Corpus loading and deterministic sentence segmentation.
//!
//! Input formats:
//! - corpus: JSONL (`{"id": "...", "text": "..."}`, id optional) or one
//!   document per line;
//! - classes: one surface name per line, UTF-8;
//! - gold labels: JSONL `{"id": "...", "label": <surface name or index>}`,
//!   used for evaluation only.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClassId;

/// A document admitted to the pipeline: raw text plus its sentence list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    /// Stable identifier, unique within a corpus.
    pub doc_id: String,
    pub raw_text: String,
    /// Non-empty; order preserves textual order.
    pub sentences: Vec<Sentence>,
}

/// One segmented sentence with lowercased word tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    /// 0-based position within the parent document.
    pub sent_index: usize,
    /// Lowercased tokens, truncated to `max_sentence_len`. Never empty.
    pub words: Vec<String>,
    /// Byte offsets `[start, end)` into `raw_text`.
    pub char_span: (usize, usize),
}

/// One class, identified by its surface name (one or more words).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: ClassId,
    pub surface_name: String,
}

impl ClassSpec {
    /// Lowercased member words of the surface name.
    pub fn words(&self) -> Vec<String> {
        self.surface_name
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .collect()
    }
}

/// Corpus file format accepted by [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    OneDocPerLine,
}

/// Sentence segmentation options.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegmentOptions {
    /// Maximum tokens kept per sentence; longer sentences are truncated.
    pub max_sentence_len: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            max_sentence_len: 150,
        }
    }
}

/// Swappable sentence splitter. Implementations must be deterministic.
pub trait SentenceSplitter: Send + Sync {
    /// Byte spans of candidate sentences, in textual order, covering all
    /// non-whitespace content of `text` without overlap.
    fn split(&self, text: &str) -> Vec<(usize, usize)>;
}

/// Default rule-based splitter: a sentence ends at terminal punctuation
/// (`.`, `?`, `!`, plus trailing closing quotes/brackets) followed by
/// whitespace and an uppercase letter or digit.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleSplitter;

impl SentenceSplitter for RuleSplitter {
    fn split(&self, text: &str) -> Vec<(usize, usize)> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let n = chars.len();
        let mut spans = Vec::new();
        let mut start = 0usize; // index into `chars`

        // skip leading whitespace
        while start < n && chars[start].1.is_whitespace() {
            start += 1;
        }

        let mut i = start;
        while i < n {
            let c = chars[i].1;
            if matches!(c, '.' | '?' | '!') {
                // absorb closing quotes/brackets
                let mut end = i + 1;
                while end < n && matches!(chars[end].1, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}') {
                    end += 1;
                }
                // require whitespace, then an uppercase letter or digit
                let mut next = end;
                while next < n && chars[next].1.is_whitespace() {
                    next += 1;
                }
                let had_space = next > end;
                let boundary = had_space
                    && next < n
                    && (chars[next].1.is_uppercase() || chars[next].1.is_ascii_digit());
                if boundary {
                    spans.push((chars[start].0, byte_end(text, &chars, end)));
                    start = next;
                    i = next;
                    continue;
                }
                i = end;
                continue;
            }
            i += 1;
        }

        if start < n {
            // final sentence: trim trailing whitespace
            let mut last = n;
            while last > start && chars[last - 1].1.is_whitespace() {
                last -= 1;
            }
            if last > start {
                spans.push((chars[start].0, byte_end(text, &chars, last)));
            }
        }
        spans
    }
}

fn byte_end(text: &str, chars: &[(usize, char)], char_idx: usize) -> usize {
    if char_idx < chars.len() {
        chars[char_idx].0
    } else {
        text.len()
    }
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Segment `text` into sentences with the default rule-based splitter.
///
/// Candidate spans that tokenize to zero words are merged into the following
/// sentence (or the preceding one at the end of the text) so that every
/// returned [`Sentence`] has words and the spans still cover all
/// non-whitespace content. Returns an empty vector when nothing tokenizes.
pub fn segment(text: &str, opts: &SegmentOptions) -> Vec<Sentence> {
    segment_with(&RuleSplitter, text, opts)
}

/// [`segment`] with an explicit splitter implementation.
pub fn segment_with(
    splitter: &dyn SentenceSplitter,
    text: &str,
    opts: &SegmentOptions,
) -> Vec<Sentence> {
    let raw_spans = splitter.split(text);

    // Merge wordless spans forward; a trailing wordless span merges backward.
    let mut merged: Vec<(usize, usize, Vec<String>)> = Vec::new();
    let mut pending: Option<usize> = None; // start of a wordless run
    for (s, e) in raw_spans {
        let words = tokenize(&text[s..e]);
        if words.is_empty() {
            pending.get_or_insert(s);
            continue;
        }
        let start = pending.take().unwrap_or(s);
        merged.push((start, e, words));
    }
    if let (Some(s), Some(last)) = (pending, merged.last_mut()) {
        debug_assert!(s >= last.1);
        last.1 = text.len().min(trim_end_ws(text, s));
    }

    merged
        .into_iter()
        .enumerate()
        .map(|(idx, (s, e, mut words))| {
            words.truncate(opts.max_sentence_len);
            Sentence {
                sent_index: idx,
                words,
                char_span: (s, e),
            }
        })
        .collect()
}

fn trim_end_ws(text: &str, from: usize) -> usize {
    let tail = &text[from..];
    from + tail.trim_end().len()
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: Option<String>,
    text: String,
}

/// Load and segment a corpus file.
///
/// Documents whose every sentence is empty after tokenization are dropped
/// with a warning. Duplicate or malformed records are errors.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    opts: &SegmentOptions,
) -> Result<Vec<Document>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if content.trim().is_empty() {
        return Err(Error::Corpus(format!("{}: empty corpus file", path.display())));
    }

    let mut docs = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (doc_id, text) = match format {
            CorpusFormat::Jsonl => {
                let rec: CorpusRecord =
                    serde_json::from_str(line).map_err(|e| Error::Malformed {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: format!("invalid JSON record: {e}"),
                    })?;
                (rec.id.unwrap_or_else(|| format!("{idx:08}")), rec.text)
            }
            CorpusFormat::OneDocPerLine => (format!("{idx:08}"), line.to_string()),
        };
        if text.trim().is_empty() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: lineno,
                msg: "record has empty text".into(),
            });
        }
        if !seen_ids.insert(doc_id.clone()) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("duplicate doc id {doc_id:?}"),
            });
        }
        let sentences = segment(&text, opts);
        if sentences.is_empty() {
            log::warn!("dropping document {doc_id:?}: no tokenizable sentences");
            continue;
        }
        docs.push(Document {
            doc_id,
            raw_text: text,
            sentences,
        });
    }
    if docs.is_empty() {
        return Err(Error::Corpus(format!(
            "{}: no usable documents",
            path.display()
        )));
    }
    Ok(docs)
}

/// Load class surface names, one per line. Names must be distinct
/// (case-insensitive) and there must be at least two.
pub fn load_classes(path: &Path) -> Result<Vec<ClassSpec>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut specs = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in content.lines().enumerate() {
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        if !seen.insert(name.to_lowercase()) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("duplicate class name {name:?}"),
            });
        }
        specs.push(ClassSpec {
            class_id: specs.len(),
            surface_name: name.to_string(),
        });
    }
    if specs.len() < 2 {
        return Err(Error::Corpus(format!(
            "{}: need at least 2 classes, got {}",
            path.display(),
            specs.len()
        )));
    }
    Ok(specs)
}

#[derive(Deserialize)]
struct LabelRecord {
    id: String,
    label: serde_json::Value,
}

/// Load gold labels for evaluation. Labels may be class surface names or
/// 0-based indices; every id must reference a known document.
pub fn load_gold_labels(
    path: &Path,
    documents: &[Document],
    classes: &[ClassSpec],
) -> Result<BTreeMap<String, ClassId>> {
    let known: BTreeSet<&str> = documents.iter().map(|d| d.doc_id.as_str()).collect();
    let by_name: BTreeMap<String, ClassId> = classes
        .iter()
        .map(|c| (c.surface_name.to_lowercase(), c.class_id))
        .collect();

    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = BTreeMap::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: LabelRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("invalid JSON record: {e}"),
        })?;
        if !known.contains(rec.id.as_str()) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("label references unknown doc id {:?}", rec.id),
            });
        }
        let class_id = match &rec.label {
            serde_json::Value::Number(n) => {
                let k = n.as_u64().ok_or_else(|| Error::Malformed {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("label index {n} is not a non-negative integer"),
                })? as usize;
                if k >= classes.len() {
                    return Err(Error::Malformed {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: format!("label index {k} out of range (|C| = {})", classes.len()),
                    });
                }
                k
            }
            serde_json::Value::String(s) => {
                *by_name
                    .get(&s.to_lowercase())
                    .ok_or_else(|| Error::Malformed {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: format!("unknown class name {s:?}"),
                    })?
            }
            other => {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("label must be a string or index, got {other}"),
                })
            }
        };
        labels.insert(rec.id, class_id);
    }
    Ok(labels)
}
