//! Helpers shared by the integration test targets: fixture paths, canonical
//! replay configuration, and independently written oracles that recompute
//! results from first principles with their own code structure.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use cap_core::attention::{AttentionTensor, ScoreMode};
use cap_core::backend::{BackendClient, BackendMode, ReplayTransport};
use cap_core::corpus::{read_presegmented, Document};
use cap_core::datastore::{load_index, DatastoreIndex};
use cap_core::eval::{read_zpt_annotations, ZptAnnotation};
use cap_core::pipeline::RunConfig;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// The configuration the committed cassette was recorded under. Replay never
/// opens a connection, so the endpoint points at the discard port.
pub fn replay_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.backend.endpoint = "http://127.0.0.1:9".into();
    cfg.backend.model = "fixture".into();
    cfg.backend.mode = BackendMode::Replay;
    cfg
}

pub fn replay_backend() -> BackendClient {
    let transport =
        ReplayTransport::load(&fixtures_dir().join("cassette.jsonl")).expect("cassette loads");
    BackendClient::with_transport("fixture", None, Box::new(transport))
}

pub fn load_compare_docs() -> Vec<Document> {
    let file = std::fs::File::open(fixtures_dir().join("compare_docs.txt")).expect("docs open");
    read_presegmented(std::io::BufReader::new(file), "de", "doc").expect("docs parse")
}

pub fn load_compare_refs() -> Vec<Vec<String>> {
    let file = std::fs::File::open(fixtures_dir().join("compare_refs.txt")).expect("refs open");
    read_presegmented(std::io::BufReader::new(file), "en", "ref")
        .expect("refs parse")
        .into_iter()
        .map(|d| d.sentences.into_iter().map(|s| s.text).collect())
        .collect()
}

pub fn load_compare_zpt() -> Vec<ZptAnnotation> {
    read_zpt_annotations(&fixtures_dir().join("compare_zpt.jsonl")).expect("zpt parses")
}

pub fn load_translate_doc() -> Document {
    let file = std::fs::File::open(fixtures_dir().join("translate_doc.txt")).expect("doc open");
    let mut docs = read_presegmented(std::io::BufReader::new(file), "de", "doc").expect("doc");
    assert_eq!(docs.len(), 1, "translate fixture holds one document");
    docs.remove(0)
}

pub fn load_fixture_index() -> DatastoreIndex {
    load_index(&fixtures_dir().join("index.jsonl")).expect("fixture index loads")
}

/// Random causal attention: each visible prefix of a row gets positive
/// weights normalized to sum 1.
pub fn random_causal_tensor(rng: &mut ChaCha8Rng, heads: usize, tokens: usize) -> AttentionTensor {
    let mut flat = Vec::with_capacity(heads * tokens * tokens);
    for _ in 0..heads {
        for i in 0..tokens {
            let mut row = vec![0.0f64; tokens];
            let mut sum = 0.0;
            for w in row.iter_mut().take(i + 1) {
                *w = rng.random::<f64>() + 1e-6;
                sum += *w;
            }
            for w in row.iter_mut().take(i + 1) {
                *w /= sum;
            }
            flat.extend_from_slice(&row);
        }
    }
    AttentionTensor::new(heads, tokens, true, flat).expect("valid random tensor")
}

/// Random token-to-sentence assignment: contiguous runs per sentence with
/// occasional unassigned tokens (special or gap tokens).
pub fn random_assignment(
    rng: &mut ChaCha8Rng,
    tokens: usize,
    sentences: usize,
) -> Vec<Option<usize>> {
    (0..tokens)
        .map(|t| {
            if rng.random::<f64>() < 0.12 {
                None
            } else {
                // Contiguous-ish blocks so later sentences sit later.
                let s = (t * sentences) / tokens;
                Some(s.min(sentences - 1))
            }
        })
        .collect()
}

/// Head average recomputed with plain index arithmetic.
pub fn oracle_head_average(tensor: &AttentionTensor) -> Vec<Vec<f64>> {
    let t = tensor.num_tokens();
    let h = tensor.num_heads();
    let mut rows = vec![vec![0.0f64; t]; t];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut total = 0.0;
            for head in 0..h {
                total += tensor.get(head, i, j);
            }
            *cell = total / h as f64;
        }
    }
    rows
}

/// Token-to-sentence score straight from the definition: pool the token's
/// weights onto the sentence's visible tokens; no visible token means absent.
pub fn oracle_token_score(
    avg: &[Vec<f64>],
    assignment: &[Option<usize>],
    token: usize,
    sentence: usize,
    mode: ScoreMode,
    causal: bool,
) -> Option<f64> {
    let mut weights = Vec::new();
    for (k, assigned) in assignment.iter().enumerate() {
        if *assigned == Some(sentence) && (!causal || k <= token) {
            weights.push(avg[token][k]);
        }
    }
    if weights.is_empty() {
        return None;
    }
    Some(match mode {
        ScoreMode::Max => weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ScoreMode::Avg => weights.iter().sum::<f64>() / weights.len() as f64,
    })
}

/// Sentence-to-sentence score: mean over the from-sentence tokens whose
/// token score is present.
pub fn oracle_sentence_score(
    avg: &[Vec<f64>],
    assignment: &[Option<usize>],
    from: usize,
    to: usize,
    mode: ScoreMode,
    causal: bool,
) -> Option<f64> {
    let mut present = Vec::new();
    for (i, assigned) in assignment.iter().enumerate() {
        if *assigned == Some(from) {
            if let Some(ts) = oracle_token_score(avg, assignment, i, to, mode, causal) {
                present.push(ts);
            }
        }
    }
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Top-n selection done the slow way: full sort of present candidates by
/// descending score with earlier index winning ties, then document order.
pub fn oracle_select(row: &[Option<f64>], current: usize, n: usize) -> Vec<usize> {
    let mut candidates: Vec<(usize, f64)> = row
        .iter()
        .enumerate()
        .filter(|(s, _)| *s != current)
        .filter_map(|(s, v)| v.map(|v| (s, v)))
        .collect();
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    candidates.truncate(n);
    let mut members: Vec<usize> = candidates.into_iter().map(|(s, _)| s).collect();
    members.sort_unstable();
    members
}

/// Exhaustive nearest-neighbor scan by repeated extraction of the best
/// remaining entry (higher dot product, then lower id).
pub fn oracle_retrieve(
    embeddings: &[(u64, Vec<f32>)],
    query: &[f32],
    k: usize,
) -> Vec<(u64, f64)> {
    let dot = |v: &[f32]| -> f64 {
        v.iter()
            .zip(query)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    };
    let mut remaining: Vec<(u64, f64)> = embeddings.iter().map(|(id, v)| (*id, dot(v))).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k.min(remaining.len()) {
        let mut best = 0;
        for i in 1..remaining.len() {
            let (bid, bscore) = remaining[best];
            let (cid, cscore) = remaining[i];
            if cscore > bscore || (cscore == bscore && cid < bid) {
                best = i;
            }
        }
        picked.push(remaining.swap_remove(best));
    }
    picked
}

fn oracle_is_cjk(c: char) -> bool {
    let u = c as u32;
    (0x3400..=0x4DBF).contains(&u)
        || (0x4E00..=0x9FFF).contains(&u)
        || (0xF900..=0xFAFF).contains(&u)
        || (0x3040..=0x309F).contains(&u)
        || (0x30A0..=0x30FF).contains(&u)
}

/// Metric tokenizer rewritten as a character state machine.
pub fn oracle_metric_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if oracle_is_cjk(c) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn oracle_ngram_counts(tokens: &[String], n: usize) -> std::collections::BTreeMap<String, usize> {
    let mut counts = std::collections::BTreeMap::new();
    if tokens.len() >= n {
        for start in 0..=(tokens.len() - n) {
            let gram = tokens[start..start + n].join("\u{1}");
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Document-level BLEU recomputed independently: per-document clipped
/// matches pooled over the corpus, raw unigram precision, add-one smoothing
/// on higher orders, standard brevity penalty.
pub fn oracle_d_bleu(hyp_docs: &[Vec<String>], ref_docs: &[Vec<String>]) -> f64 {
    assert_eq!(hyp_docs.len(), ref_docs.len());
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, rf) in hyp_docs.iter().zip(ref_docs) {
        let hyp_tokens = oracle_metric_tokens(&hyp.join(" "));
        let ref_tokens = oracle_metric_tokens(&rf.join(" "));
        hyp_len += hyp_tokens.len();
        ref_len += ref_tokens.len();
        for n in 1..=4 {
            let hyp_grams = oracle_ngram_counts(&hyp_tokens, n);
            let ref_grams = oracle_ngram_counts(&ref_tokens, n);
            for (gram, count) in &hyp_grams {
                totals[n - 1] += count;
                matches[n - 1] += count.min(ref_grams.get(gram).unwrap_or(&0));
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let p = if n == 1 {
            if totals[0] == 0 {
                return 0.0;
            }
            matches[0] as f64 / totals[0] as f64
        } else {
            (matches[n - 1] + 1) as f64 / (totals[n - 1] + 1) as f64
        };
        if p <= 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / 4.0;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * log_sum.exp()
}
