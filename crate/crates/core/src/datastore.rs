//! Embedding datastore over parallel pairs: cosine and BM25 retrieval,
//! seeded sampling, and a JSON-lines index file with bit-exact round-trips.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Embedder};
use crate::corpus::{lexical_tokens, ParallelPair};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("datastore has no entries")]
    EmptyDatastore,
    #[error("index build failed: {0}")]
    IndexBuild(String),
    #[error("query has dimension {got}, index has {expected}")]
    QueryDimension { expected: usize, got: usize },
    #[error("requested {requested} entries, only {available} available")]
    InsufficientEntries { requested: usize, available: usize },
    #[error("index file line {line}: {reason}")]
    IndexFormat { line: usize, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One indexed pair with its unit-norm source embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct DatastoreEntry {
    pub id: u64,
    pub pair: ParallelPair,
    pub embedding: Vec<f32>,
}

/// A retrieval hit.
#[derive(Clone, Copy, Debug)]
pub struct Scored<'a> {
    pub score: f64,
    pub entry: &'a DatastoreEntry,
}

#[derive(Debug)]
struct Bm25Stats {
    doc_freq: HashMap<String, u32>,
    term_counts: Vec<HashMap<String, u32>>,
    doc_len: Vec<u32>,
    avg_len: f64,
}

impl Bm25Stats {
    fn build(entries: &[DatastoreEntry]) -> Self {
        let mut doc_freq: HashMap<String, u32> = HashMap::new();
        let mut term_counts = Vec::with_capacity(entries.len());
        let mut doc_len = Vec::with_capacity(entries.len());
        for entry in entries {
            let tokens = lexical_tokens(&entry.pair.src, &entry.pair.src_lang);
            doc_len.push(tokens.len() as u32);
            let mut counts: HashMap<String, u32> = HashMap::new();
            for token in tokens {
                *counts.entry(token).or_insert(0) += 1;
            }
            for term in counts.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
            term_counts.push(counts);
        }
        let avg_len = doc_len.iter().map(|&l| l as f64).sum::<f64>() / entries.len().max(1) as f64;
        Bm25Stats {
            doc_freq,
            term_counts,
            doc_len,
            avg_len,
        }
    }

    fn idf(&self, term: &str, n: usize) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n as f64 - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn score(&self, entry_idx: usize, query_terms: &[String], n: usize) -> f64 {
        let len = self.doc_len[entry_idx] as f64;
        let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * len / self.avg_len);
        let counts = &self.term_counts[entry_idx];
        let mut score = 0.0;
        for term in query_terms {
            let tf = counts.get(term).copied().unwrap_or(0) as f64;
            if tf == 0.0 {
                continue;
            }
            score += self.idf(term, n) * tf * (BM25_K1 + 1.0) / (tf + norm);
        }
        score
    }
}

/// Entries plus lexical statistics kept consistent with them. Statistics are
/// derived data, rebuilt whenever entries change.
#[derive(Debug)]
pub struct DatastoreIndex {
    dim: usize,
    entries: Vec<DatastoreEntry>,
    src_lang: String,
    stats: Bm25Stats,
}

/// Unit-norm copy of a vector; `None` for zero or non-finite input. The norm
/// is accumulated in f64.
pub fn l2_normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

/// Embeds every source side and assembles the index. Entry ids are the
/// stable 0-based positions of the input pairs.
pub fn build_index(
    pairs: Vec<ParallelPair>,
    embedder: &dyn Embedder,
) -> Result<DatastoreIndex, DatastoreError> {
    if pairs.is_empty() {
        return Err(DatastoreError::EmptyDatastore);
    }
    let sources: Vec<String> = pairs.iter().map(|p| p.src.clone()).collect();
    let raw = embedder.embed(&sources)?;
    if raw.len() != pairs.len() {
        return Err(DatastoreError::IndexBuild(format!(
            "embedded {} of {} sources",
            raw.len(),
            pairs.len()
        )));
    }
    let dim = raw[0].len();
    if dim == 0 {
        return Err(DatastoreError::IndexBuild("embedding dimension is 0".into()));
    }
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, (pair, vector)) in pairs.into_iter().zip(raw).enumerate() {
        if vector.len() != dim {
            return Err(DatastoreError::IndexBuild(format!(
                "entry {i} has dimension {}, expected {dim}",
                vector.len()
            )));
        }
        let embedding = l2_normalize(&vector).ok_or_else(|| {
            DatastoreError::IndexBuild(format!("entry {i} has a zero or non-finite embedding"))
        })?;
        entries.push(DatastoreEntry {
            id: i as u64,
            pair,
            embedding,
        });
    }
    Ok(DatastoreIndex::from_entries(dim, entries))
}

impl DatastoreIndex {
    fn from_entries(dim: usize, entries: Vec<DatastoreEntry>) -> Self {
        let stats = Bm25Stats::build(&entries);
        let src_lang = entries
            .first()
            .map(|e| e.pair.src_lang.clone())
            .unwrap_or_default();
        DatastoreIndex {
            dim,
            entries,
            src_lang,
            stats,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[DatastoreEntry] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&DatastoreEntry> {
        self.entries.get(id as usize)
    }

    /// Top-k by dot product (cosine on unit-norm vectors), descending score,
    /// ties toward the lower id.
    pub fn retrieve_similar(&self, query: &[f32], k: usize) -> Result<Vec<Scored<'_>>, DatastoreError> {
        if query.len() != self.dim {
            return Err(DatastoreError::QueryDimension {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut scored: Vec<Scored<'_>> = self
            .entries
            .iter()
            .map(|entry| Scored {
                score: dot(query, &entry.embedding),
                entry,
            })
            .collect();
        sort_hits(&mut scored);
        scored.truncate(k);
        Ok(scored)
    }

    /// Top-k by Okapi BM25 over source sides. A query sharing no terms with
    /// the corpus scores every entry 0 and falls back to id order.
    pub fn retrieve_bm25(&self, query: &str, k: usize) -> Result<Vec<Scored<'_>>, DatastoreError> {
        let terms = lexical_tokens(query, &self.src_lang);
        let n = self.entries.len();
        let mut scored: Vec<Scored<'_>> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, entry)| Scored {
                score: self.stats.score(i, &terms, n),
                entry,
            })
            .collect();
        sort_hits(&mut scored);
        scored.truncate(k);
        Ok(scored)
    }

    /// Uniform sample of k distinct entries, fully determined by the seed.
    pub fn sample_random(&self, k: usize, seed: u64) -> Result<Vec<&DatastoreEntry>, DatastoreError> {
        if k > self.entries.len() {
            return Err(DatastoreError::InsufficientEntries {
                requested: k,
                available: self.entries.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = rand::seq::index::sample(&mut rng, self.entries.len(), k);
        Ok(picked.iter().map(|i| &self.entries[i]).collect())
    }
}

fn sort_hits(scored: &mut [Scored<'_>]) {
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.entry.id.cmp(&b.entry.id))
    });
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    version: u32,
    dim: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    id: u64,
    src: String,
    tgt: String,
    src_lang: String,
    tgt_lang: String,
    embedding: String,
}

fn encode_embedding(v: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_embedding(data: &str, dim: usize, line: usize) -> Result<Vec<f32>, DatastoreError> {
    let bytes = BASE64
        .decode(data)
        .map_err(|e| DatastoreError::IndexFormat {
            line,
            reason: format!("bad base64 embedding: {e}"),
        })?;
    if bytes.len() != dim * 4 {
        return Err(DatastoreError::IndexFormat {
            line,
            reason: format!("embedding holds {} bytes, expected {}", bytes.len(), dim * 4),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

/// Writes the index: a header line, then one JSON record per entry with the
/// embedding as base64 little-endian f32 bytes.
pub fn save_index(index: &DatastoreIndex, path: &Path) -> Result<(), DatastoreError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = IndexHeader {
        version: INDEX_FORMAT_VERSION,
        dim: index.dim,
        count: index.entries.len(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header"))?;
    for entry in &index.entries {
        let record = IndexRecord {
            id: entry.id,
            src: entry.pair.src.clone(),
            tgt: entry.pair.tgt.clone(),
            src_lang: entry.pair.src_lang.clone(),
            tgt_lang: entry.pair.tgt_lang.clone(),
            embedding: encode_embedding(&entry.embedding),
        };
        writeln!(w, "{}", serde_json::to_string(&record).expect("record"))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an index written by [`save_index`]. Embedding bits round-trip
/// exactly; lexical statistics are rebuilt from the loaded entries.
pub fn load_index(path: &Path) -> Result<DatastoreIndex, DatastoreError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or(DatastoreError::IndexFormat {
            line: 1,
            reason: "missing header".into(),
        })??;
    let header: IndexHeader =
        serde_json::from_str(&header_line).map_err(|e| DatastoreError::IndexFormat {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
    if header.version != INDEX_FORMAT_VERSION {
        return Err(DatastoreError::IndexFormat {
            line: 1,
            reason: format!(
                "version {} unsupported, expected {INDEX_FORMAT_VERSION}",
                header.version
            ),
        });
    }
    if header.dim == 0 {
        return Err(DatastoreError::IndexFormat {
            line: 1,
            reason: "dimension is 0".into(),
        });
    }
    let mut entries = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if entries.len() == header.count {
            return Err(DatastoreError::IndexFormat {
                line: lineno,
                reason: format!("more than {} records", header.count),
            });
        }
        let record: IndexRecord =
            serde_json::from_str(&line).map_err(|e| DatastoreError::IndexFormat {
                line: lineno,
                reason: format!("bad record: {e}"),
            })?;
        let embedding = decode_embedding(&record.embedding, header.dim, lineno)?;
        entries.push(DatastoreEntry {
            id: record.id,
            pair: ParallelPair {
                src: record.src,
                tgt: record.tgt,
                src_lang: record.src_lang,
                tgt_lang: record.tgt_lang,
            },
            embedding,
        });
    }
    if entries.len() != header.count {
        return Err(DatastoreError::IndexFormat {
            line: entries.len() + 1,
            reason: format!("holds {} records, header says {}", entries.len(), header.count),
        });
    }
    if entries.is_empty() {
        return Err(DatastoreError::EmptyDatastore);
    }
    Ok(DatastoreIndex::from_entries(header.dim, entries))
}
