//! Versioned binary cache for token matrices and the static word table.
//!
//! Layout: an 8-byte magic, a kind byte, the hidden dimension, the provider
//! id, and a 32-byte corpus fingerprint, followed by the float32
//! little-endian payload. Reads validate the header against the current
//! corpus and provider; any mismatch or truncation is an error, never
//! partial data. Float payloads round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, Result};

use super::{StaticWordTable, TokenMatrix};

const MAGIC: &[u8; 8] = b"WCEMB001";
const KIND_TOKENS: u8 = 1;
const KIND_STATIC: u8 = 2;

/// Fingerprint of a segmented corpus: hash of doc ids and text lengths.
pub fn corpus_fingerprint(corpus: &[Document]) -> [u8; 32] {
    let mut h = Sha256::new();
    for doc in corpus {
        h.update((doc.doc_id.len() as u64).to_le_bytes());
        h.update(doc.doc_id.as_bytes());
        h.update((doc.raw_text.len() as u64).to_le_bytes());
    }
    h.finalize().into()
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.bytes(s.as_bytes())
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.out
            .write_all(b)
            .map_err(|e| Error::Cache(format!("write failed: {e}")))
    }
}

struct Reader<R: Read> {
    inp: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes::<4>()?))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 24 {
            return Err(Error::Cache(format!("implausible string length {len}")));
        }
        let mut buf = vec![0u8; len];
        self.exact(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Cache(format!("invalid utf8: {e}")))
    }
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.exact(&mut buf)?;
        Ok(buf)
    }
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inp
            .read_exact(buf)
            .map_err(|e| Error::Cache(format!("truncated or unreadable cache file: {e}")))
    }
}

fn write_header<W: Write>(
    w: &mut Writer<W>,
    kind: u8,
    hidden_dim: usize,
    provider_id: &str,
    fingerprint: &[u8; 32],
) -> Result<()> {
    w.bytes(MAGIC)?;
    w.u8(kind)?;
    w.u32(hidden_dim as u32)?;
    w.str(provider_id)?;
    w.bytes(fingerprint)
}

fn check_header<R: Read>(
    r: &mut Reader<R>,
    kind: u8,
    provider_id: &str,
    fingerprint: &[u8; 32],
) -> Result<usize> {
    let magic = r.bytes::<8>()?;
    if &magic != MAGIC {
        return Err(Error::Cache(
            "bad magic/version; delete the cache and re-run embed".into(),
        ));
    }
    let k = r.u8()?;
    if k != kind {
        return Err(Error::Cache(format!("wrong cache kind {k}, expected {kind}")));
    }
    let hidden_dim = r.u32()? as usize;
    let cached_provider = r.str()?;
    if cached_provider != provider_id {
        return Err(Error::Cache(format!(
            "cache was built with provider {cached_provider:?}, current is {provider_id:?}; re-run embed"
        )));
    }
    let fp = r.bytes::<32>()?;
    if &fp != fingerprint {
        return Err(Error::Cache(
            "corpus fingerprint mismatch (corpus changed since embedding); re-run embed".into(),
        ));
    }
    Ok(hidden_dim)
}

/// Write all token matrices, grouped per document, to `path` atomically.
pub fn write_token_cache(
    path: &Path,
    provider_id: &str,
    fingerprint: &[u8; 32],
    hidden_dim: usize,
    matrices: &[Vec<TokenMatrix>],
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = Writer {
            out: BufWriter::new(file),
        };
        write_header(&mut w, KIND_TOKENS, hidden_dim, provider_id, fingerprint)?;
        w.u64(matrices.len() as u64)?;
        for doc in matrices {
            let doc_id = doc.first().map(|m| m.doc_id.as_str()).unwrap_or("");
            w.str(doc_id)?;
            w.u32(doc.len() as u32)?;
            for m in doc {
                w.u32(m.sent_index as u32)?;
                w.u32(m.vectors.nrows() as u32)?;
                for v in m.vectors.iter() {
                    w.f32(*v)?;
                }
                w.u32(m.token_to_word.len() as u32)?;
                for t in &m.token_to_word {
                    w.u32(*t as u32)?;
                }
            }
        }
        w.out
            .flush()
            .map_err(|e| Error::Cache(format!("flush failed: {e}")))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read token matrices back; header must match the current corpus/provider.
pub fn read_token_cache(
    path: &Path,
    provider_id: &str,
    fingerprint: &[u8; 32],
) -> Result<(usize, Vec<Vec<TokenMatrix>>)> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingStage(format!("{} not found; run `embed` first", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    let mut r = Reader {
        inp: BufReader::new(file),
    };
    let hidden_dim = check_header(&mut r, KIND_TOKENS, provider_id, fingerprint)?;
    let n_docs = r.u64()? as usize;
    let mut matrices = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let doc_id = r.str()?;
        let n_sents = r.u32()? as usize;
        let mut doc = Vec::with_capacity(n_sents);
        for _ in 0..n_sents {
            let sent_index = r.u32()? as usize;
            let n_words = r.u32()? as usize;
            let mut data = Vec::with_capacity(n_words * hidden_dim);
            for _ in 0..n_words * hidden_dim {
                data.push(r.f32()?);
            }
            let n_sub = r.u32()? as usize;
            let mut token_to_word = Vec::with_capacity(n_sub);
            for _ in 0..n_sub {
                token_to_word.push(r.u32()? as usize);
            }
            doc.push(TokenMatrix {
                doc_id: doc_id.clone(),
                sent_index,
                vectors: Array2::from_shape_vec((n_words, hidden_dim), data)
                    .expect("consistent shape by construction"),
                token_to_word,
            });
        }
        matrices.push(doc);
    }
    Ok((hidden_dim, matrices))
}

/// Write the static word table to `path` atomically.
pub fn write_static_cache(
    path: &Path,
    provider_id: &str,
    fingerprint: &[u8; 32],
    table: &StaticWordTable,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = Writer {
            out: BufWriter::new(file),
        };
        write_header(&mut w, KIND_STATIC, table.hidden_dim, provider_id, fingerprint)?;
        w.u64(table.len() as u64)?;
        for (word, count, vec) in table.iter() {
            w.str(word)?;
            w.u64(count)?;
            for v in vec {
                w.f32(*v)?;
            }
        }
        w.out
            .flush()
            .map_err(|e| Error::Cache(format!("flush failed: {e}")))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read the static word table back; header must match.
pub fn read_static_cache(
    path: &Path,
    provider_id: &str,
    fingerprint: &[u8; 32],
) -> Result<StaticWordTable> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingStage(format!("{} not found; run `embed` first", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    let mut r = Reader {
        inp: BufReader::new(file),
    };
    let hidden_dim = check_header(&mut r, KIND_STATIC, provider_id, fingerprint)?;
    let n_words = r.u64()? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..n_words {
        let word = r.str()?;
        let count = r.u64()?;
        let mut vec = Vec::with_capacity(hidden_dim);
        for _ in 0..hidden_dim {
            vec.push(r.f32()?);
        }
        entries.insert(word, (count, vec));
    }
    Ok(StaticWordTable::from_entries(hidden_dim, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use ndarray::array;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            raw_text: text.into(),
            sentences: vec![Sentence {
                sent_index: 0,
                words: vec!["w".into()],
                char_span: (0, 1),
            }],
        }
    }

    fn sample_matrices() -> Vec<Vec<TokenMatrix>> {
        vec![vec![
            TokenMatrix {
                doc_id: "d0".into(),
                sent_index: 0,
                vectors: array![[0.125f32, -3.5, 1.0e-7], [2.0, 4.0, 8.0]],
                token_to_word: vec![0, 0, 1],
            },
            TokenMatrix {
                doc_id: "d0".into(),
                sent_index: 1,
                vectors: array![[9.0f32, 10.0, 11.0]],
                token_to_word: vec![0],
            },
        ]]
    }

    #[test]
    fn token_cache_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.bin");
        let fp = corpus_fingerprint(&[doc("d0", "hello")]);
        let mats = sample_matrices();
        write_token_cache(&path, "prov", &fp, 3, &mats).unwrap();
        let (h, back) = read_token_cache(&path, "prov", &fp).unwrap();
        assert_eq!(h, 3);
        assert_eq!(back, mats);
    }

    #[test]
    fn stale_fingerprint_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.bin");
        let fp = corpus_fingerprint(&[doc("d0", "hello")]);
        write_token_cache(&path, "prov", &fp, 3, &sample_matrices()).unwrap();
        let other = corpus_fingerprint(&[doc("d0", "hello changed")]);
        let err = read_token_cache(&path, "prov", &other).unwrap_err();
        match err {
            Error::Cache(msg) => assert!(msg.contains("re-run embed"), "{msg}"),
            other => panic!("expected Cache, got {other:?}"),
        }
    }

    #[test]
    fn provider_mismatch_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.bin");
        let fp = corpus_fingerprint(&[doc("d0", "hello")]);
        write_token_cache(&path, "prov-a", &fp, 3, &sample_matrices()).unwrap();
        assert!(read_token_cache(&path, "prov-b", &fp).is_err());
    }

    #[test]
    fn truncated_file_errors_without_partial_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.bin");
        let fp = corpus_fingerprint(&[doc("d0", "hello")]);
        write_token_cache(&path, "prov", &fp, 3, &sample_matrices()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_token_cache(&path, "prov", &fp).unwrap_err();
        assert!(matches!(err, Error::Cache(_)), "{err:?}");
    }

    #[test]
    fn static_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("static.bin");
        let fp = corpus_fingerprint(&[doc("d0", "hello")]);
        let mut entries = BTreeMap::new();
        entries.insert("cat".to_string(), (3u64, vec![1.0f32, -0.5]));
        entries.insert("dog".to_string(), (1u64, vec![0.25f32, 8.0]));
        let table = StaticWordTable::from_entries(2, entries);
        write_static_cache(&path, "prov", &fp, &table).unwrap();
        let back = read_static_cache(&path, "prov", &fp).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn missing_cache_maps_to_missing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("absent.bin");
        let fp = [0u8; 32];
        let err = read_token_cache(&path, "prov", &fp).unwrap_err();
        assert!(matches!(err, Error::MissingStage(_)), "{err:?}");
    }
}
