//! Sentence-aware documents and parallel-corpus preprocessing.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document is empty or whitespace-only")]
    EmptyDocument,
    #[error("zero-length side in pair {index}")]
    ZeroLengthPair { index: usize },
    #[error("line {line}: expected 2 tab-separated fields, found {found}")]
    TsvFormat { line: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Half-open byte range into a document's text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    /// Length of the overlap with another span.
    pub fn overlap(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

/// One sentence of a document. `text` always equals the `span` slice of the
/// owning document's text; spans of consecutive sentences never overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub span: Span,
    pub text: String,
}

/// A document whose sentence spans tile its text: concatenating the spans and
/// the whitespace gaps between them reconstructs `text` exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub lang: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Builds a document by running the rule-based splitter over `text`.
    pub fn new(
        doc_id: impl Into<String>,
        lang: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let text = text.into();
        let sentences = segment_document(&text)?;
        Ok(Document {
            doc_id: doc_id.into(),
            lang: lang.into(),
            text,
            sentences,
        })
    }

    /// Builds a document from pre-segmented sentences, one per line, bypassing
    /// the splitter. Lines are trimmed; the document text joins them with '\n'.
    pub fn from_segmented_lines(
        doc_id: impl Into<String>,
        lang: impl Into<String>,
        lines: &[String],
    ) -> Result<Self, CorpusError> {
        let trimmed: Vec<&str> = lines
            .iter()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .collect();
        if trimmed.is_empty() {
            return Err(CorpusError::EmptyDocument);
        }
        let text = trimmed.join("\n");
        let mut sentences = Vec::with_capacity(trimmed.len());
        let mut offset = 0;
        for (index, line) in trimmed.iter().enumerate() {
            let span = Span::new(offset, offset + line.len());
            sentences.push(Sentence {
                index,
                span,
                text: (*line).to_string(),
            });
            offset = span.end + 1;
        }
        Ok(Document {
            doc_id: doc_id.into(),
            lang: lang.into(),
            text,
            sentences,
        })
    }
}

const TERMINATORS: [char; 6] = ['.', '!', '?', '\u{3002}', '\u{FF01}', '\u{FF1F}'];

const CLOSERS: [char; 12] = [
    '"', '\'', ')', ']', '}', '\u{201D}', '\u{2019}', '\u{00BB}', '\u{300D}', '\u{300F}',
    '\u{300B}', '\u{3009}',
];

fn is_terminator(c: char) -> bool {
    TERMINATORS.contains(&c)
}

fn is_closer(c: char) -> bool {
    CLOSERS.contains(&c)
}

/// Splits text into sentences at runs of terminal punctuation (. ! ? and their
/// fullwidth forms), attaching any closing quotes or brackets to the sentence
/// and leaving surrounding whitespace in the gaps between spans. Text without
/// a terminator yields exactly one sentence.
pub fn segment_document(text: &str) -> Result<Vec<Sentence>, CorpusError> {
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    let mut sentences: Vec<Sentence> = Vec::new();
    let push = |sentences: &mut Vec<Sentence>, start: usize, end: usize| {
        let index = sentences.len();
        sentences.push(Sentence {
            index,
            span: Span::new(start, end),
            text: text[start..end].to_string(),
        });
    };

    let mut start: Option<usize> = None;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if is_terminator(c) {
            let mut end = i + c.len_utf8();
            while let Some(&(j, next)) = iter.peek() {
                if is_terminator(next) || is_closer(next) {
                    end = j + next.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            }
            push(&mut sentences, start.take().unwrap(), end);
        }
    }
    if let Some(s) = start {
        let tail = text[s..].trim_end();
        if !tail.is_empty() {
            push(&mut sentences, s, s + tail.len());
        }
    }
    Ok(sentences)
}

/// Deterministic punctuation cleanup: curly quotes and guillemets become ASCII
/// quotes, the horizontal ellipsis becomes three dots, non-breaking spaces
/// become plain spaces, and runs of spaces collapse to one. Idempotent.
pub fn normalize_punctuation(text: &str) -> String {
    let mut mapped = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{00AB}' | '\u{00BB}' => mapped.push('"'),
            '\u{2018}' | '\u{2019}' | '\u{201A}' => mapped.push('\''),
            '\u{2026}' => mapped.push_str("..."),
            '\u{00A0}' => mapped.push(' '),
            other => mapped.push(other),
        }
    }
    let mut out = String::with_capacity(mapped.len());
    let mut prev_space = false;
    for c in mapped.chars() {
        if c == ' ' {
            if !prev_space {
                out.push(c);
            }
            prev_space = true;
        } else {
            out.push(c);
            prev_space = false;
        }
    }
    out
}

/// One source/target sentence pair. Sides are non-empty after trimming.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub src: String,
    pub tgt: String,
    pub src_lang: String,
    pub tgt_lang: String,
}

fn primary_subtag(lang: &str) -> String {
    lang.split(['-', '_'])
        .next()
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Languages whose length and lexical units are single characters rather than
/// whitespace-delimited words.
pub fn counts_characters(lang: &str) -> bool {
    matches!(primary_subtag(lang).as_str(), "zh" | "ja" | "ko")
}

/// Lexical units of a text: whitespace tokens, or single non-space characters
/// for character-counted languages.
pub fn lexical_tokens(text: &str, lang: &str) -> Vec<String> {
    if counts_characters(lang) {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect()
    } else {
        text.split_whitespace().map(String::from).collect()
    }
}

/// Length of one side under the unit rule for its language.
pub fn side_length(text: &str, lang: &str) -> usize {
    if counts_characters(lang) {
        text.chars().filter(|c| !c.is_whitespace()).count()
    } else {
        text.split_whitespace().count()
    }
}

/// Keeps pairs whose side lengths satisfy max/min <= max_ratio. The boundary
/// is kept. A pair with an empty side is an error, not a drop.
pub fn length_ratio_filter(
    pairs: Vec<ParallelPair>,
    max_ratio: f64,
) -> Result<Vec<ParallelPair>, CorpusError> {
    let mut kept = Vec::with_capacity(pairs.len());
    for (index, pair) in pairs.into_iter().enumerate() {
        let src_len = side_length(&pair.src, &pair.src_lang);
        let tgt_len = side_length(&pair.tgt, &pair.tgt_lang);
        if src_len == 0 || tgt_len == 0 {
            return Err(CorpusError::ZeroLengthPair { index });
        }
        let ratio = src_len.max(tgt_len) as f64 / src_len.min(tgt_len) as f64;
        if ratio <= max_ratio {
            kept.push(pair);
        }
    }
    Ok(kept)
}

/// Reads `src<TAB>tgt` lines. Blank lines are skipped; any other line with a
/// field count other than 2 is rejected with its 1-based line number.
pub fn read_parallel_tsv<R: BufRead>(
    reader: R,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<Vec<ParallelPair>, CorpusError> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(CorpusError::TsvFormat {
                line: i + 1,
                found: fields.len(),
            });
        }
        let src = fields[0].trim();
        let tgt = fields[1].trim();
        if src.is_empty() || tgt.is_empty() {
            return Err(CorpusError::ZeroLengthPair { index: i + 1 });
        }
        pairs.push(ParallelPair {
            src: src.to_string(),
            tgt: tgt.to_string(),
            src_lang: src_lang.to_string(),
            tgt_lang: tgt_lang.to_string(),
        });
    }
    Ok(pairs)
}

/// Reads pre-segmented documents: one sentence per line, a blank line between
/// documents. Ids are `{id_prefix}{ordinal:04}`.
pub fn read_presegmented<R: BufRead>(
    reader: R,
    lang: &str,
    id_prefix: &str,
) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let flush = |current: &mut Vec<String>, docs: &mut Vec<Document>| -> Result<(), CorpusError> {
        if current.is_empty() {
            return Ok(());
        }
        let doc_id = format!("{id_prefix}{:04}", docs.len());
        docs.push(Document::from_segmented_lines(doc_id, lang, current)?);
        current.clear();
        Ok(())
    };
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            flush(&mut current, &mut docs)?;
        } else {
            current.push(line);
        }
    }
    flush(&mut current, &mut docs)?;
    Ok(docs)
}
