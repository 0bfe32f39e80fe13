//! Token-to-sentence attention aggregation and context window selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sentence, Span};

/// Allowed deviation of a row's sum over visible columns from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("invalid attention tensor: {0}")]
    InvalidTensor(String),
    #[error("sentence {0} scored against itself")]
    SelfScore(usize),
    #[error("inconsistent token-sentence map: {0}")]
    InconsistentMap(String),
}

/// How token scores aggregate into a token-to-sentence score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Max,
    Avg,
}

/// How the context window is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    Dynamic,
    Fixed,
}

/// Per-head token-to-token attention, row-major `[head][query][key]`.
/// Construction validates shape, finiteness, non-negativity, causal zeros
/// above the diagonal, and row sums within [`ROW_SUM_TOLERANCE`] of 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionTensor {
    num_heads: usize,
    num_tokens: usize,
    causal: bool,
    weights: Vec<f64>,
}

impl AttentionTensor {
    pub fn new(
        num_heads: usize,
        num_tokens: usize,
        causal: bool,
        weights: Vec<f64>,
    ) -> Result<Self, AttentionError> {
        if num_heads == 0 || num_tokens == 0 {
            return Err(AttentionError::InvalidTensor(
                "zero heads or zero tokens".into(),
            ));
        }
        let expected = num_heads * num_tokens * num_tokens;
        if weights.len() != expected {
            return Err(AttentionError::InvalidTensor(format!(
                "expected {expected} weights, got {}",
                weights.len()
            )));
        }
        let tensor = AttentionTensor {
            num_heads,
            num_tokens,
            causal,
            weights,
        };
        tensor.validate()?;
        Ok(tensor)
    }

    fn validate(&self) -> Result<(), AttentionError> {
        let t = self.num_tokens;
        for h in 0..self.num_heads {
            for i in 0..t {
                let mut sum = 0.0;
                for j in 0..t {
                    let w = self.get(h, i, j);
                    if !w.is_finite() {
                        return Err(AttentionError::InvalidTensor(format!(
                            "non-finite weight at head {h}, row {i}, col {j}"
                        )));
                    }
                    if w < 0.0 {
                        return Err(AttentionError::InvalidTensor(format!(
                            "negative weight at head {h}, row {i}, col {j}"
                        )));
                    }
                    if self.causal && j > i && w != 0.0 {
                        return Err(AttentionError::InvalidTensor(format!(
                            "nonzero weight above the diagonal at head {h}, row {i}, col {j}"
                        )));
                    }
                    sum += w;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(AttentionError::InvalidTensor(format!(
                        "head {h} row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, head: usize, query: usize, key: usize) -> f64 {
        let t = self.num_tokens;
        self.weights[head * t * t + query * t + key]
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn causal(&self) -> bool {
        self.causal
    }
}

/// Square token-to-token matrix, the head average of a tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, AttentionError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(AttentionError::InvalidTensor(
                "token matrix is not square".into(),
            ));
        }
        Ok(TokenMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }
}

/// Mean over heads per token pair.
pub fn average_heads(tensor: &AttentionTensor) -> Result<TokenMatrix, AttentionError> {
    let t = tensor.num_tokens();
    let h = tensor.num_heads();
    let mut data = vec![0.0; t * t];
    for head in 0..h {
        for i in 0..t {
            for j in 0..t {
                let w = tensor.get(head, i, j);
                if !w.is_finite() {
                    return Err(AttentionError::InvalidTensor(format!(
                        "non-finite weight at head {head}, row {i}, col {j}"
                    )));
                }
                data[i * t + j] += w;
            }
        }
    }
    for v in &mut data {
        *v /= h as f64;
    }
    Ok(TokenMatrix { n: t, data })
}

/// Maps tokens to sentence indices. Special tokens carry no sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceMap {
    token_sentence: Vec<Option<usize>>,
    sentence_tokens: Vec<Vec<usize>>,
}

impl SentenceMap {
    pub fn new(
        token_sentence: Vec<Option<usize>>,
        num_sentences: usize,
    ) -> Result<Self, AttentionError> {
        let mut sentence_tokens = vec![Vec::new(); num_sentences];
        for (tok, assigned) in token_sentence.iter().enumerate() {
            if let Some(s) = assigned {
                if *s >= num_sentences {
                    return Err(AttentionError::InconsistentMap(format!(
                        "token {tok} maps to sentence {s}, only {num_sentences} sentences"
                    )));
                }
                sentence_tokens[*s].push(tok);
            }
        }
        Ok(SentenceMap {
            token_sentence,
            sentence_tokens,
        })
    }

    /// Assigns each token span to the sentence it overlaps most, earlier
    /// sentence on ties. Empty spans and spans falling entirely into gaps map
    /// to no sentence.
    pub fn from_spans(token_spans: &[Span], sentences: &[Sentence]) -> Result<Self, AttentionError> {
        let mut token_sentence = Vec::with_capacity(token_spans.len());
        for span in token_spans {
            if span.is_empty() {
                token_sentence.push(None);
                continue;
            }
            let mut best: Option<(usize, usize)> = None;
            for sentence in sentences {
                let overlap = span.overlap(&sentence.span);
                if overlap > 0 && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((sentence.index, overlap));
                }
            }
            token_sentence.push(best.map(|(s, _)| s));
        }
        SentenceMap::new(token_sentence, sentences.len())
    }

    pub fn sentence_of(&self, token: usize) -> Option<usize> {
        self.token_sentence.get(token).copied().flatten()
    }

    pub fn tokens_of(&self, sentence: usize) -> &[usize] {
        &self.sentence_tokens[sentence]
    }

    pub fn num_tokens(&self) -> usize {
        self.token_sentence.len()
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_tokens.len()
    }
}

/// Score of one token against one sentence: max (or mean) of the token's
/// attention onto the sentence's visible tokens. `None` when no token of the
/// sentence is visible, which is distinct from a present score of zero.
pub fn token_sentence_score(
    avg: &TokenMatrix,
    token: usize,
    sentence: usize,
    map: &SentenceMap,
    mode: ScoreMode,
    causal: bool,
) -> Option<f64> {
    let mut count = 0usize;
    let mut acc = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &k in map.tokens_of(sentence) {
        if causal && k > token {
            continue;
        }
        let w = avg.get(token, k);
        count += 1;
        sum += w;
        if w > acc {
            acc = w;
        }
    }
    if count == 0 {
        return None;
    }
    Some(match mode {
        ScoreMode::Max => acc,
        ScoreMode::Avg => sum / count as f64,
    })
}

/// Score of sentence `from` against sentence `to`: mean of the present
/// token-to-sentence scores over `from`'s tokens. `None` when every pair is
/// absent. Scoring a sentence against itself is an error.
pub fn sentence_sentence_score(
    avg: &TokenMatrix,
    from: usize,
    to: usize,
    map: &SentenceMap,
    mode: ScoreMode,
    causal: bool,
) -> Result<Option<f64>, AttentionError> {
    if from == to {
        return Err(AttentionError::SelfScore(from));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in map.tokens_of(from) {
        if let Some(ts) = token_sentence_score(avg, i, to, map, mode, causal) {
            sum += ts;
            count += 1;
        }
    }
    Ok(if count == 0 { None } else { Some(sum / count as f64) })
}

/// Sentence-to-sentence scores with absent pairs kept distinct from zero.
/// The diagonal is always absent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SentenceAttentionMatrix {
    n: usize,
    mode: ScoreMode,
    scores: Vec<Option<f64>>,
}

impl SentenceAttentionMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> ScoreMode {
        self.mode
    }

    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        self.scores[from * self.n + to]
    }

    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n)
            .map(|i| self.scores[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }
}

/// Builds the full sentence-to-sentence score matrix.
pub fn sentence_attention_matrix(
    avg: &TokenMatrix,
    map: &SentenceMap,
    mode: ScoreMode,
    causal: bool,
) -> Result<SentenceAttentionMatrix, AttentionError> {
    if map.num_tokens() != avg.n() {
        return Err(AttentionError::InconsistentMap(format!(
            "map covers {} tokens, matrix has {}",
            map.num_tokens(),
            avg.n()
        )));
    }
    let n = map.num_sentences();
    let mut scores = vec![None; n * n];
    for from in 0..n {
        for to in 0..n {
            if from == to {
                continue;
            }
            scores[from * n + to] = sentence_sentence_score(avg, from, to, map, mode, causal)?;
        }
    }
    Ok(SentenceAttentionMatrix { n, mode, scores })
}

/// A selected context: member sentence indices in document order, never
/// including the current sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub current: usize,
    pub members: Vec<usize>,
    pub requested: usize,
}

impl ContextWindow {
    pub fn empty(current: usize, requested: usize) -> Self {
        ContextWindow {
            current,
            members: Vec::new(),
            requested,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Picks the `n` highest-scoring candidate sentences for `current`, skipping
/// absent pairs, breaking score ties toward the earlier index, then restores
/// document order.
pub fn select_context(
    scores: &SentenceAttentionMatrix,
    current: usize,
    n: usize,
) -> ContextWindow {
    let mut candidates: Vec<(usize, f64)> = (0..scores.n())
        .filter(|&s| s != current)
        .filter_map(|s| scores.get(current, s).map(|v| (s, v)))
        .collect();
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut members: Vec<usize> = candidates.into_iter().take(n).map(|(s, _)| s).collect();
    members.sort_unstable();
    ContextWindow {
        current,
        members,
        requested: n,
    }
}

/// Position-based window: the `before` preceding and `after` following
/// sentences, clamped to the document.
pub fn fixed_context(current: usize, total: usize, before: usize, after: usize) -> ContextWindow {
    let requested = before + after;
    if total == 0 {
        return ContextWindow::empty(current, requested);
    }
    let lo = current.saturating_sub(before);
    let hi = (current + after).min(total - 1);
    let members = (lo..=hi).filter(|&s| s != current).collect();
    ContextWindow {
        current,
        members,
        requested,
    }
}

/// JSON shape of an attention inspection dump.
#[derive(Debug, Serialize)]
pub struct AttentionDump {
    pub tokens: Vec<String>,
    pub head_avg: Vec<Vec<f64>>,
    pub sentence_scores: Vec<Vec<Option<f64>>>,
}
