//! Demonstration selection strategies, context summarization, and
//! deterministic few-shot prompt rendering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::ContextWindow;
use crate::backend::{BackendError, GenerationRequest, TextGenerator};
use crate::corpus::Document;
use crate::datastore::{DatastoreError, DatastoreIndex};

/// Sanity cap on few-shot examples per prompt.
pub const MAX_DEMONSTRATIONS: usize = 16;
/// Token budget for context summaries.
pub const SUMMARY_MAX_TOKENS: u32 = 128;
/// Instruction wrapped around the selected context sentences. `{sentences}`
/// is replaced by the member sentences joined with newlines.
pub const SUMMARY_INSTRUCTION: &str = "Summarize the following sentences in one short sentence that keeps the main entities, actions, and facts.\n\n{sentences}\n\nSummary:";
/// Note recorded when an empty summary forces the similarity fallback.
pub const EMPTY_SUMMARY_FALLBACK_NOTE: &str = "empty-summary-fallback";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {block} block is missing placeholder {placeholder}")]
    MissingPlaceholder {
        block: &'static str,
        placeholder: &'static str,
    },
    #[error("{requested} demonstrations exceed the cap of {MAX_DEMONSTRATIONS}")]
    TooManyDemonstrations { requested: usize },
    #[error("template override needs 3 parts separated by '---' lines, found {found}")]
    BadOverride { found: usize },
    #[error("strategy {strategy} needs a datastore index")]
    DatastoreRequired { strategy: Strategy },
    #[error("strategy {strategy} needs a {what} embedding in the query context")]
    MissingEmbedding {
        strategy: Strategy,
        what: &'static str,
    },
    #[error("context member {index} outside document with {len} sentences")]
    WindowOutOfRange { index: usize, len: usize },
    #[error("summarizing context {members:?}: {source}")]
    Summarize {
        members: Vec<usize>,
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
}

/// Where a demonstration came from, kept for provenance in run records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemoOrigin {
    Datastore { id: u64 },
    Precedent { sentence_index: usize },
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub src: String,
    pub tgt: String,
    pub origin: DemoOrigin,
}

/// Output of the summarize step together with the sentences it covers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub sentence_indices: Vec<usize>,
}

impl Summary {
    pub fn empty() -> Self {
        Summary {
            text: String::new(),
            sentence_indices: Vec::new(),
        }
    }
}

/// The six selection strategies. Serialized in kebab-case; these strings are
/// also the CLI spelling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ZeroShot,
    Random,
    Bm25,
    Similar,
    Precedent,
    Cap,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::ZeroShot,
        Strategy::Random,
        Strategy::Bm25,
        Strategy::Similar,
        Strategy::Precedent,
        Strategy::Cap,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero-shot",
            Strategy::Random => "random",
            Strategy::Bm25 => "bm25",
            Strategy::Similar => "similar",
            Strategy::Precedent => "precedent",
            Strategy::Cap => "cap",
        }
    }

    /// Row label used in comparison reports.
    pub fn report_label(&self) -> &'static str {
        match self {
            Strategy::ZeroShot => "Zero-shot",
            Strategy::Random => "Random",
            Strategy::Bm25 => "BM25",
            Strategy::Similar => "Similar",
            Strategy::Precedent => "Precedent",
            Strategy::Cap => "Ours",
        }
    }

    /// Zero-shot ignores the configured k.
    pub fn effective_k(&self, k: usize) -> usize {
        match self {
            Strategy::ZeroShot => 0,
            _ => k,
        }
    }

    pub fn uses_datastore(&self) -> bool {
        matches!(
            self,
            Strategy::Random | Strategy::Bm25 | Strategy::Similar | Strategy::Cap
        )
    }

    /// Only this strategy runs the attention + summarize steps.
    pub fn uses_context_window(&self) -> bool {
        matches!(self, Strategy::Cap)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zero-shot" | "zero_shot" | "zeroshot" => Ok(Strategy::ZeroShot),
            "random" => Ok(Strategy::Random),
            "bm25" => Ok(Strategy::Bm25),
            "similar" => Ok(Strategy::Similar),
            "precedent" => Ok(Strategy::Precedent),
            "cap" => Ok(Strategy::Cap),
            other => Err(format!(
                "unknown strategy '{other}' (expected one of: zero-shot, random, bm25, similar, precedent, cap)"
            )),
        }
    }
}

/// Everything a selection call may need about the current sentence. The
/// embeddings are precomputed by the caller so selection stays pure.
#[derive(Clone, Debug, Default)]
pub struct QueryContext {
    pub source: String,
    pub sentence_index: usize,
    pub summary: Option<String>,
    pub source_embedding: Option<Vec<f32>>,
    pub summary_embedding: Option<Vec<f32>>,
}

/// Per-document memory of prior outputs, feeding the precedent strategy.
#[derive(Clone, Debug, Default)]
pub struct PrecedentState {
    items: Vec<(usize, String, String)>,
}

impl PrecedentState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sentence_index: usize, src: &str, output: &str) {
        self.items.push((sentence_index, src.into(), output.into()));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The most recent k items, kept in document order.
    pub fn last_k(&self, k: usize) -> Vec<Demonstration> {
        let start = self.items.len().saturating_sub(k);
        self.items[start..]
            .iter()
            .map(|(index, src, output)| Demonstration {
                src: src.clone(),
                tgt: output.clone(),
                origin: DemoOrigin::Precedent {
                    sentence_index: *index,
                },
            })
            .collect()
    }
}

/// Selection result plus an optional provenance note (e.g. the
/// empty-summary fallback).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectedDemonstrations {
    pub demos: Vec<Demonstration>,
    pub note: Option<String>,
}

fn datastore_demos(hits: Vec<crate::datastore::Scored<'_>>) -> Vec<Demonstration> {
    hits.into_iter()
        .map(|hit| Demonstration {
            src: hit.entry.pair.src.clone(),
            tgt: hit.entry.pair.tgt.clone(),
            origin: DemoOrigin::Datastore { id: hit.entry.id },
        })
        .collect()
}

/// Picks demonstrations for one sentence. Pure given the query context;
/// the random strategy is fully determined by `seed`.
pub fn select_demonstrations(
    strategy: Strategy,
    k: usize,
    seed: u64,
    query: &QueryContext,
    index: Option<&DatastoreIndex>,
    state: Option<&PrecedentState>,
) -> Result<SelectedDemonstrations, PromptError> {
    let k = strategy.effective_k(k);
    if k > MAX_DEMONSTRATIONS {
        return Err(PromptError::TooManyDemonstrations { requested: k });
    }
    let none = SelectedDemonstrations {
        demos: Vec::new(),
        note: None,
    };
    if k == 0 {
        return Ok(none);
    }
    let need_index = || index.ok_or(PromptError::DatastoreRequired { strategy });
    let demos = match strategy {
        Strategy::ZeroShot => unreachable!("k forced to 0"),
        Strategy::Random => need_index()?
            .sample_random(k, seed)?
            .into_iter()
            .map(|entry| Demonstration {
                src: entry.pair.src.clone(),
                tgt: entry.pair.tgt.clone(),
                origin: DemoOrigin::Datastore { id: entry.id },
            })
            .collect(),
        Strategy::Bm25 => datastore_demos(need_index()?.retrieve_bm25(&query.source, k)?),
        Strategy::Similar => {
            let embedding =
                query
                    .source_embedding
                    .as_deref()
                    .ok_or(PromptError::MissingEmbedding {
                        strategy,
                        what: "source",
                    })?;
            datastore_demos(need_index()?.retrieve_similar(embedding, k)?)
        }
        Strategy::Precedent => match state {
            Some(state) => state.last_k(k),
            None => Vec::new(),
        },
        Strategy::Cap => {
            let have_summary = query.summary.as_deref().is_some_and(|s| !s.is_empty());
            if have_summary {
                let embedding =
                    query
                        .summary_embedding
                        .as_deref()
                        .ok_or(PromptError::MissingEmbedding {
                            strategy,
                            what: "summary",
                        })?;
                datastore_demos(need_index()?.retrieve_similar(embedding, k)?)
            } else {
                // No usable summary: behave exactly like the similarity
                // strategy and record that in the note.
                let embedding =
                    query
                        .source_embedding
                        .as_deref()
                        .ok_or(PromptError::MissingEmbedding {
                            strategy,
                            what: "source",
                        })?;
                let demos = datastore_demos(need_index()?.retrieve_similar(embedding, k)?);
                return Ok(SelectedDemonstrations {
                    demos,
                    note: Some(EMPTY_SUMMARY_FALLBACK_NOTE.into()),
                });
            }
        }
    };
    Ok(SelectedDemonstrations { demos, note: None })
}

/// Joins the window's sentences in document order and asks the generator for
/// a one-sentence summary. An empty window short-circuits to an empty
/// summary with no backend call.
pub fn summarize_context(
    window: &ContextWindow,
    doc: &Document,
    generator: &dyn TextGenerator,
) -> Result<Summary, PromptError> {
    if window.is_empty() {
        return Ok(Summary::empty());
    }
    for &member in &window.members {
        if member >= doc.sentences.len() {
            return Err(PromptError::WindowOutOfRange {
                index: member,
                len: doc.sentences.len(),
            });
        }
    }
    let joined = window
        .members
        .iter()
        .map(|&m| doc.sentences[m].text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = substitute(SUMMARY_INSTRUCTION, &[("{sentences}", &joined)]);
    let req = GenerationRequest {
        prompt,
        max_new_tokens: SUMMARY_MAX_TOKENS,
        temperature: 0.0,
        stop: None,
    };
    let text = generator
        .generate(&req)
        .map_err(|source| PromptError::Summarize {
            members: window.members.clone(),
            source,
        })?;
    Ok(Summary {
        text: text.trim().to_string(),
        sentence_indices: window.members.clone(),
    })
}

/// Few-shot prompt shape: demonstration block, query block, and the string
/// joining consecutive blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub demo_block: String,
    pub query_block: String,
    pub joiner: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            demo_block: "{src_lang}: {src}\n{tgt_lang}: {tgt}\n\n".into(),
            query_block: "{src_lang}: {src}\n{tgt_lang}:".into(),
            joiner: String::new(),
        }
    }
}

impl PromptTemplate {
    /// Parses an override file: demo block, query block, and joiner separated
    /// by `---` lines. The newline before each separator belongs to the
    /// separator; every other byte is literal. A single trailing newline on
    /// the joiner part (the file's final newline) is dropped.
    pub fn parse_override(text: &str) -> Result<Self, PromptError> {
        let parts: Vec<&str> = text.split("\n---\n").collect();
        if parts.len() != 3 {
            return Err(PromptError::BadOverride { found: parts.len() });
        }
        let joiner = parts[2].strip_suffix('\n').unwrap_or(parts[2]);
        let template = PromptTemplate {
            demo_block: parts[0].to_string(),
            query_block: parts[1].to_string(),
            joiner: joiner.to_string(),
        };
        template.validate()?;
        Ok(template)
    }

    /// Serializes back into the override format parsed by
    /// [`PromptTemplate::parse_override`].
    pub fn to_override_string(&self) -> String {
        format!(
            "{}\n---\n{}\n---\n{}\n",
            self.demo_block, self.query_block, self.joiner
        )
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (placeholder, block, name) in [
            ("{src}", &self.demo_block, "demo"),
            ("{tgt}", &self.demo_block, "demo"),
            ("{src}", &self.query_block, "query"),
        ] {
            if !block.contains(placeholder) {
                return Err(PromptError::MissingPlaceholder {
                    block: name,
                    placeholder,
                });
            }
        }
        Ok(())
    }
}

/// Human-readable language name for a BCP 47 code's primary subtag; unknown
/// codes render verbatim.
pub fn language_display_name(code: &str) -> String {
    let primary = code.split(['-', '_']).next().unwrap_or(code);
    let name = match primary.to_ascii_lowercase().as_str() {
        "en" => "English",
        "de" => "German",
        "fr" => "French",
        "es" => "Spanish",
        "it" => "Italian",
        "pt" => "Portuguese",
        "nl" => "Dutch",
        "pl" => "Polish",
        "ru" => "Russian",
        "uk" => "Ukrainian",
        "cs" => "Czech",
        "ro" => "Romanian",
        "bg" => "Bulgarian",
        "el" => "Greek",
        "hu" => "Hungarian",
        "tr" => "Turkish",
        "ar" => "Arabic",
        "he" => "Hebrew",
        "fa" => "Persian",
        "hi" => "Hindi",
        "zh" => "Chinese",
        "ja" => "Japanese",
        "ko" => "Korean",
        "vi" => "Vietnamese",
        "th" => "Thai",
        "id" => "Indonesian",
        "sv" => "Swedish",
        "da" => "Danish",
        "fi" => "Finnish",
        "no" => "Norwegian",
        _ => return code.to_string(),
    };
    name.to_string()
}

/// Left-to-right placeholder substitution. Substituted values are emitted
/// verbatim and never rescanned, so placeholder-looking text inside a value
/// survives untouched.
fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in vars {
            if let Some(after) = tail.strip_prefix(name) {
                out.push_str(value);
                rest = after;
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Renders the full few-shot prompt: each demonstration through the demo
/// block, then the query block, all joined by the template joiner, with
/// trailing whitespace stripped.
pub fn render_prompt(
    template: &PromptTemplate,
    demos: &[Demonstration],
    source: &str,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<String, PromptError> {
    if demos.len() > MAX_DEMONSTRATIONS {
        return Err(PromptError::TooManyDemonstrations {
            requested: demos.len(),
        });
    }
    template.validate()?;
    let src_name = language_display_name(src_lang);
    let tgt_name = language_display_name(tgt_lang);
    let mut blocks: Vec<String> = demos
        .iter()
        .map(|demo| {
            substitute(
                &template.demo_block,
                &[
                    ("{src_lang}", &src_name),
                    ("{tgt_lang}", &tgt_name),
                    ("{src}", &demo.src),
                    ("{tgt}", &demo.tgt),
                ],
            )
        })
        .collect();
    blocks.push(substitute(
        &template.query_block,
        &[
            ("{src_lang}", &src_name),
            ("{tgt_lang}", &tgt_name),
            ("{src}", source),
        ],
    ));
    Ok(blocks.join(&template.joiner).trim_end().to_string())
}
