//! End-to-end document translation: context selection, summarization,
//! retrieval, prompting, generation, plus multi-strategy comparison runs
//! and the JSON-lines record format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::{
    average_heads, fixed_context, select_context, sentence_attention_matrix, AttentionDump,
    AttentionError, ContextWindow, ScoreMode, SentenceAttentionMatrix, SentenceMap, WindowMode,
};
use crate::backend::{Backend, BackendConfig, BackendError, GenerationRequest};
use crate::corpus::Document;
use crate::datastore::DatastoreIndex;
use crate::eval::{chrf2, d_bleu, zpt_accuracy, EvalError, ZptAnnotation};
use crate::prompting::{
    render_prompt, select_demonstrations, summarize_context, Demonstration, PromptError,
    PromptTemplate, PrecedentState, QueryContext, SelectedDemonstrations, Strategy, Summary,
    MAX_DEMONSTRATIONS,
};

/// Sentences on each side of the current one in fixed-window mode.
pub const FIXED_WINDOW_RADIUS: usize = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("records file line {line}: {reason}")]
    RecordsFormat { line: usize, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything that determines a run's behavior. Serialized into every
/// output file so results are self-describing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub k_demos: usize,
    pub n_context: usize,
    pub score_mode: ScoreMode,
    pub window_mode: WindowMode,
    /// One attention pass over the whole document instead of per-sentence
    /// prefix passes. Only sound for backends exposing non-causal attention.
    pub bidirectional: bool,
    /// Prepend the selected context sentences verbatim to the prompt.
    pub prepend_context: bool,
    pub seed: u64,
    pub src_lang: String,
    pub tgt_lang: String,
    pub max_new_tokens: u32,
    pub stop: Option<Vec<String>>,
    pub template: PromptTemplate,
    pub record_timing: bool,
    /// Document-level parallelism width.
    pub jobs: usize,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::Cap,
            k_demos: 3,
            n_context: 3,
            score_mode: ScoreMode::Max,
            window_mode: WindowMode::Dynamic,
            bidirectional: false,
            prepend_context: false,
            seed: 0,
            src_lang: "de".into(),
            tgt_lang: "en".into(),
            max_new_tokens: 256,
            stop: Some(vec!["\n".into()]),
            template: PromptTemplate::default(),
            record_timing: false,
            jobs: 1,
            backend: BackendConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_context == 0 {
            return Err(PipelineError::InvalidConfig(
                "n_context must be at least 1".into(),
            ));
        }
        if self.k_demos > MAX_DEMONSTRATIONS {
            return Err(PipelineError::InvalidConfig(format!(
                "k_demos {} exceeds the cap of {MAX_DEMONSTRATIONS}",
                self.k_demos
            )));
        }
        if self.jobs == 0 {
            return Err(PipelineError::InvalidConfig("jobs must be at least 1".into()));
        }
        if self.src_lang.is_empty() || self.tgt_lang.is_empty() {
            return Err(PipelineError::InvalidConfig(
                "source and target languages must be set".into(),
            ));
        }
        if self.window_mode == WindowMode::Fixed && self.strategy != Strategy::Cap {
            return Err(PipelineError::InvalidConfig(format!(
                "fixed window mode only applies to the cap strategy, not {}",
                self.strategy
            )));
        }
        self.template.validate()?;
        Ok(())
    }

    /// Copy with the strategy swapped; the window mode resets to dynamic for
    /// strategies that never run the context step.
    pub fn with_strategy(&self, strategy: Strategy) -> RunConfig {
        let mut cfg = self.clone();
        cfg.strategy = strategy;
        if strategy != Strategy::Cap {
            cfg.window_mode = WindowMode::Dynamic;
        }
        cfg
    }
}

/// Wall-clock milliseconds per stage; stages a strategy skips stay 0.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub attention_ms: u64,
    pub summary_ms: u64,
    pub retrieval_ms: u64,
    pub generate_ms: u64,
}

/// One translated sentence with full provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub doc_id: String,
    pub sentence_index: usize,
    pub strategy: Strategy,
    pub source: String,
    pub output: String,
    pub demonstrations: Vec<Demonstration>,
    pub context_members: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<StageTimings>,
}

/// A document's records; `error` marks a run aborted partway through with
/// the completed records kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentResult {
    pub doc_id: String,
    pub records: Vec<TranslationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-sentence seed for the random strategy: mixes the run seed with the
/// document id and sentence index so draws differ across sentences but stay
/// reproducible.
pub fn sentence_seed(base: u64, doc_id: &str, sentence_index: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(doc_id.as_bytes());
    hasher.update([0u8]);
    hasher.update((sentence_index as u64).to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    base ^ u64::from_le_bytes(bytes)
}

struct SentenceOutcome {
    record: TranslationRecord,
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Attention pass and sentence-score matrix over `sentences[..=last]` of the
/// document (or the whole document when `full` is set).
fn attention_matrix(
    doc: &Document,
    last: usize,
    full: bool,
    mode: ScoreMode,
    backend: &dyn Backend,
) -> Result<SentenceAttentionMatrix, PipelineError> {
    let (text, sentences) = if full {
        (doc.text.as_str(), &doc.sentences[..])
    } else {
        let end = doc.sentences[last].span.end;
        (&doc.text[..end], &doc.sentences[..=last])
    };
    let response = backend.attention(text)?;
    let map = SentenceMap::from_spans(&response.token_spans(), sentences)?;
    let avg = average_heads(&response.tensor)?;
    Ok(sentence_attention_matrix(
        &avg,
        &map,
        mode,
        response.tensor.causal(),
    )?)
}

fn select_window(
    doc: &Document,
    index: usize,
    cfg: &RunConfig,
    backend: &dyn Backend,
    full_matrix: &mut Option<SentenceAttentionMatrix>,
) -> Result<ContextWindow, PipelineError> {
    match cfg.window_mode {
        WindowMode::Fixed => Ok(fixed_context(
            index,
            doc.sentences.len(),
            FIXED_WINDOW_RADIUS,
            FIXED_WINDOW_RADIUS,
        )),
        WindowMode::Dynamic => {
            if cfg.bidirectional {
                if full_matrix.is_none() {
                    *full_matrix = Some(attention_matrix(
                        doc,
                        doc.sentences.len() - 1,
                        true,
                        cfg.score_mode,
                        backend,
                    )?);
                }
                Ok(select_context(
                    full_matrix.as_ref().expect("cached above"),
                    index,
                    cfg.n_context,
                ))
            } else if index == 0 {
                // A one-sentence prefix has no candidates; skip the pass.
                Ok(ContextWindow::empty(0, cfg.n_context))
            } else {
                let matrix = attention_matrix(doc, index, false, cfg.score_mode, backend)?;
                Ok(select_context(&matrix, index, cfg.n_context))
            }
        }
    }
}

fn translate_sentence(
    doc: &Document,
    index: usize,
    cfg: &RunConfig,
    datastore: Option<&DatastoreIndex>,
    backend: &dyn Backend,
    state: &PrecedentState,
    full_matrix: &mut Option<SentenceAttentionMatrix>,
) -> Result<SentenceOutcome, PipelineError> {
    let source = doc.sentences[index].text.clone();
    let mut timing = StageTimings::default();

    // Step 1: context window (the dynamic-context strategy only).
    let window = if cfg.strategy.uses_context_window() {
        let start = Instant::now();
        let window = select_window(doc, index, cfg, backend, full_matrix)?;
        timing.attention_ms = elapsed_ms(start);
        window
    } else {
        ContextWindow::empty(index, 0)
    };

    // Step 2: summarize the window.
    let summary = if cfg.strategy.uses_context_window() {
        let start = Instant::now();
        let summary = summarize_context(&window, doc, backend)?;
        timing.summary_ms = elapsed_ms(start);
        Some(summary)
    } else {
        None
    };

    // Step 3: retrieval. One embed call per sentence at most: the summary
    // when usable, the source otherwise.
    let retrieval_start = Instant::now();
    let mut query = QueryContext {
        source: source.clone(),
        sentence_index: index,
        summary: summary.as_ref().map(|s| s.text.clone()),
        source_embedding: None,
        summary_embedding: None,
    };
    match cfg.strategy {
        Strategy::Cap => {
            let summary_text = query.summary.as_deref().unwrap_or("");
            if summary_text.is_empty() {
                query.source_embedding = Some(embed_one(backend, &source)?);
            } else {
                query.summary_embedding = Some(embed_one(backend, summary_text)?);
            }
        }
        Strategy::Similar => {
            query.source_embedding = Some(embed_one(backend, &source)?);
        }
        _ => {}
    }
    let seed = sentence_seed(cfg.seed, &doc.doc_id, index);
    let SelectedDemonstrations { demos, note } = select_demonstrations(
        cfg.strategy,
        cfg.k_demos,
        seed,
        &query,
        datastore,
        Some(state),
    )?;
    timing.retrieval_ms = elapsed_ms(retrieval_start);

    // Step 4: prompt and generate.
    let generate_start = Instant::now();
    let mut prompt = render_prompt(&cfg.template, &demos, &source, &cfg.src_lang, &cfg.tgt_lang)?;
    if cfg.prepend_context && !window.members.is_empty() {
        let context_text = window
            .members
            .iter()
            .map(|&m| doc.sentences[m].text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        prompt = format!("{context_text}\n\n{prompt}");
    }
    let request = GenerationRequest {
        prompt,
        max_new_tokens: cfg.max_new_tokens,
        temperature: 0.0,
        stop: cfg.stop.clone(),
    };
    let output = backend.generate(&request)?.trim().to_string();
    timing.generate_ms = elapsed_ms(generate_start);

    let record = TranslationRecord {
        doc_id: doc.doc_id.clone(),
        sentence_index: index,
        strategy: cfg.strategy,
        source,
        output,
        demonstrations: demos,
        context_members: window.members,
        summary: summary.map(|s: Summary| s.text),
        note,
        timing: cfg.record_timing.then_some(timing),
    };
    Ok(SentenceOutcome { record })
}

fn embed_one(backend: &dyn Backend, text: &str) -> Result<Vec<f32>, PipelineError> {
    let mut vectors = backend.embed(&[text.to_string()])?;
    Ok(vectors.remove(0))
}

fn require_datastore<'a>(
    cfg: &RunConfig,
    index: Option<&'a DatastoreIndex>,
) -> Result<Option<&'a DatastoreIndex>, PipelineError> {
    if cfg.strategy.uses_datastore() && cfg.strategy.effective_k(cfg.k_demos) > 0 && index.is_none()
    {
        return Err(PromptError::DatastoreRequired {
            strategy: cfg.strategy,
        }
        .into());
    }
    Ok(index)
}

/// Translates one document sentence by sentence. A backend failure partway
/// through stops the document and keeps the completed records, with the
/// failure recorded on the result.
pub fn translate_document(
    doc: &Document,
    cfg: &RunConfig,
    index: Option<&DatastoreIndex>,
    backend: &dyn Backend,
) -> Result<DocumentResult, PipelineError> {
    cfg.validate()?;
    let index = require_datastore(cfg, index)?;
    let mut records = Vec::with_capacity(doc.sentences.len());
    let mut state = PrecedentState::new();
    let mut full_matrix: Option<SentenceAttentionMatrix> = None;
    for i in 0..doc.sentences.len() {
        match translate_sentence(doc, i, cfg, index, backend, &state, &mut full_matrix) {
            Ok(outcome) => {
                state.push(i, &outcome.record.source, &outcome.record.output);
                records.push(outcome.record);
            }
            Err(e) => {
                return Ok(DocumentResult {
                    doc_id: doc.doc_id.clone(),
                    records,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(DocumentResult {
        doc_id: doc.doc_id.clone(),
        records,
        error: None,
    })
}

/// Translates documents with up to `cfg.jobs` running at once. Results come
/// back in input order regardless of scheduling.
pub fn translate_documents(
    docs: &[Document],
    cfg: &RunConfig,
    index: Option<&DatastoreIndex>,
    backend: &dyn Backend,
) -> Result<Vec<DocumentResult>, PipelineError> {
    cfg.validate()?;
    require_datastore(cfg, index)?;
    let jobs = cfg.jobs.min(docs.len().max(1));
    if jobs <= 1 {
        return docs
            .iter()
            .map(|doc| translate_document(doc, cfg, index, backend))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<DocumentResult, PipelineError>>>> =
        (0..docs.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= docs.len() {
                    break;
                }
                let result = translate_document(&docs[i], cfg, index, backend);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot visited"))
        .collect()
}

/// Outputs grouped per document in first-appearance order, sentences sorted
/// by index within each document.
pub fn group_outputs(records: &[TranslationRecord]) -> Vec<(String, Vec<String>)> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<&str, Vec<(usize, &str)>> =
        std::collections::HashMap::new();
    for record in records {
        if !grouped.contains_key(record.doc_id.as_str()) {
            order.push(record.doc_id.clone());
        }
        grouped
            .entry(record.doc_id.as_str())
            .or_default()
            .push((record.sentence_index, record.output.as_str()));
    }
    order
        .into_iter()
        .map(|doc_id| {
            let mut sentences = grouped.remove(doc_id.as_str()).unwrap_or_default();
            sentences.sort_by_key(|(i, _)| *i);
            let outputs = sentences.into_iter().map(|(_, o)| o.to_string()).collect();
            (doc_id, outputs)
        })
        .collect()
}

/// One comparison row: a strategy's counts and corpus metrics. Metrics stay
/// absent when references were not supplied or any document failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub label: String,
    pub doc_count: usize,
    pub sentence_count: usize,
    pub failures: usize,
    pub d_bleu: Option<f64>,
    pub chrf2: Option<f64>,
    pub zpt_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub lang_pair: String,
    pub config: serde_json::Value,
    pub rows: Vec<ComparisonRow>,
}

/// Full per-strategy outputs backing a comparison, kept so callers can write
/// record files alongside the report.
pub struct ComparisonOutcome {
    pub report: ComparisonReport,
    pub results: Vec<(Strategy, Vec<DocumentResult>)>,
}

/// Runs every strategy over the same documents with the same seed and
/// backend. A strategy's failure isolates to its row; reference translations
/// and pronoun annotations are validated upfront.
pub fn run_comparison(
    docs: &[Document],
    strategies: &[Strategy],
    cfg: &RunConfig,
    index: Option<&DatastoreIndex>,
    backend: &dyn Backend,
    refs: Option<&[Vec<String>]>,
    zpt: Option<&[ZptAnnotation]>,
) -> Result<ComparisonOutcome, PipelineError> {
    if strategies.is_empty() {
        return Err(PipelineError::InvalidConfig(
            "at least one strategy is required".into(),
        ));
    }
    if let Some(refs) = refs {
        if refs.len() != docs.len() {
            return Err(EvalError::ShapeMismatch {
                hyp: docs.len(),
                refs: refs.len(),
            }
            .into());
        }
    }
    let total_sentences: usize = docs.iter().map(|d| d.sentences.len()).sum();
    if let Some(zpt) = zpt {
        if zpt.len() != total_sentences {
            return Err(EvalError::AlignmentError {
                outputs: total_sentences,
                annotations: zpt.len(),
            }
            .into());
        }
    }
    let mut rows = Vec::with_capacity(strategies.len());
    let mut results = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let run_cfg = cfg.with_strategy(strategy);
        match translate_documents(docs, &run_cfg, index, backend) {
            Ok(doc_results) => {
                let failures = doc_results.iter().filter(|r| r.error.is_some()).count();
                let records: Vec<&TranslationRecord> =
                    doc_results.iter().flat_map(|r| &r.records).collect();
                let sentence_count = records.len();
                let mut row = ComparisonRow {
                    strategy,
                    label: strategy.report_label().to_string(),
                    doc_count: doc_results.len(),
                    sentence_count,
                    failures,
                    d_bleu: None,
                    chrf2: None,
                    zpt_accuracy: None,
                    error: None,
                };
                if failures == 0 {
                    if let Some(refs) = refs {
                        let owned: Vec<TranslationRecord> =
                            records.iter().map(|r| (*r).clone()).collect();
                        let hyp_docs: Vec<Vec<String>> = group_outputs(&owned)
                            .into_iter()
                            .map(|(_, outputs)| outputs)
                            .collect();
                        row.d_bleu = Some(d_bleu(&hyp_docs, refs)?);
                        row.chrf2 = Some(chrf2(&hyp_docs, refs)?);
                        if let Some(zpt) = zpt {
                            let outputs: Vec<String> = hyp_docs.into_iter().flatten().collect();
                            row.zpt_accuracy = Some(zpt_accuracy(&outputs, zpt)?);
                        }
                    }
                }
                rows.push(row);
                results.push((strategy, doc_results));
            }
            Err(e) => {
                rows.push(ComparisonRow {
                    strategy,
                    label: strategy.report_label().to_string(),
                    doc_count: docs.len(),
                    sentence_count: 0,
                    failures: docs.len(),
                    d_bleu: None,
                    chrf2: None,
                    zpt_accuracy: None,
                    error: Some(e.to_string()),
                });
                results.push((strategy, Vec::new()));
            }
        }
    }
    let mut config = serde_json::to_value(cfg).expect("config serializes");
    if let serde_json::Value::Object(map) = &mut config {
        map.insert(
            "strategies".into(),
            serde_json::to_value(strategies).expect("strategies serialize"),
        );
    }
    Ok(ComparisonOutcome {
        report: ComparisonReport {
            lang_pair: format!("{}-{}", cfg.src_lang, cfg.tgt_lang),
            config,
            rows,
        },
        results,
    })
}

/// Plain-text table of a comparison report: one row per strategy, columns
/// for metrics and counts.
pub fn render_comparison_table(report: &ComparisonReport) -> String {
    let with_zpt = report.rows.iter().any(|r| r.zpt_accuracy.is_some());
    let mut out = String::new();
    out.push_str(&format!("Language pair: {}\n", report.lang_pair));
    out.push_str(&format!("{:<11}{:>9}{:>9}", "Strategy", "d-BLEU", "chrF2"));
    if with_zpt {
        out.push_str(&format!("{:>8}", "ZPT"));
    }
    out.push_str(&format!("{:>7}{:>7}{:>8}\n", "Docs", "Sents", "Failed"));
    for row in &report.rows {
        let fmt2 = |v: Option<f64>| match v {
            Some(v) => format!("{v:.2}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<11}{:>9}{:>9}",
            row.label,
            fmt2(row.d_bleu),
            fmt2(row.chrf2)
        ));
        if with_zpt {
            let zpt = match row.zpt_accuracy {
                Some(v) => format!("{v:.3}"),
                None => "-".to_string(),
            };
            out.push_str(&format!("{zpt:>8}"));
        }
        out.push_str(&format!(
            "{:>7}{:>7}{:>8}\n",
            row.doc_count, row.sentence_count, row.failures
        ));
        if let Some(error) = &row.error {
            out.push_str(&format!("  error: {error}\n"));
        }
    }
    out
}

/// Computes the token and sentence attention views for one sentence: the
/// causal prefix through that sentence by default, the whole document in
/// bidirectional mode.
pub fn attention_dump(
    doc: &Document,
    sentence: usize,
    cfg: &RunConfig,
    backend: &dyn Backend,
) -> Result<AttentionDump, PipelineError> {
    if sentence >= doc.sentences.len() {
        return Err(PipelineError::InvalidConfig(format!(
            "sentence {sentence} outside document with {} sentences",
            doc.sentences.len()
        )));
    }
    let (text, sentences) = if cfg.bidirectional {
        (doc.text.as_str(), &doc.sentences[..])
    } else {
        let end = doc.sentences[sentence].span.end;
        (&doc.text[..end], &doc.sentences[..=sentence])
    };
    let response = backend.attention(text)?;
    let map = SentenceMap::from_spans(&response.token_spans(), sentences)?;
    let avg = average_heads(&response.tensor)?;
    let matrix = sentence_attention_matrix(&avg, &map, cfg.score_mode, response.tensor.causal())?;
    Ok(AttentionDump {
        tokens: response.token_texts(),
        head_avg: avg.rows(),
        sentence_scores: matrix.rows(),
    })
}

/// A document-level failure line in a records file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocFailure {
    pub doc_id: String,
    pub error: String,
}

/// Parsed records file: the config echo line, all records in file order,
/// and any document failure lines.
#[derive(Debug, Default)]
pub struct RecordsFile {
    pub config: Option<serde_json::Value>,
    pub records: Vec<TranslationRecord>,
    pub failures: Vec<DocFailure>,
}

#[derive(Serialize)]
struct ConfigLine<'a> {
    config: &'a serde_json::Value,
}

/// Writes records as JSON lines: a `{"config": ...}` echo first, then each
/// record, then a `{"doc_id", "error"}` line after any failed document's
/// partial records.
pub fn write_records(
    path: &Path,
    config: &serde_json::Value,
    results: &[DocumentResult],
) -> Result<(), PipelineError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "{}",
        serde_json::to_string(&ConfigLine { config }).expect("config line")
    )?;
    for result in results {
        for record in &result.records {
            writeln!(w, "{}", serde_json::to_string(record).expect("record"))?;
        }
        if let Some(error) = &result.error {
            let failure = DocFailure {
                doc_id: result.doc_id.clone(),
                error: error.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&failure).expect("failure"))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_records`]. Lines are dispatched by
/// shape: a `config` wrapper, a failure (`error` without `output`), or a
/// translation record.
pub fn read_records(path: &Path) -> Result<RecordsFile, PipelineError> {
    let file = File::open(path)?;
    let mut out = RecordsFile::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| PipelineError::RecordsFormat {
                line: lineno,
                reason: e.to_string(),
            })?;
        let object = value.as_object().ok_or_else(|| PipelineError::RecordsFormat {
            line: lineno,
            reason: "expected a JSON object".into(),
        })?;
        if let Some(config) = object.get("config") {
            out.config = Some(config.clone());
        } else if object.contains_key("error") && !object.contains_key("output") {
            let failure: DocFailure =
                serde_json::from_value(value).map_err(|e| PipelineError::RecordsFormat {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            out.failures.push(failure);
        } else {
            let record: TranslationRecord =
                serde_json::from_value(value).map_err(|e| PipelineError::RecordsFormat {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            out.records.push(record);
        }
    }
    Ok(out)
}

/// Pulls a `src_lang`/`tgt_lang` pair out of a config echo, looking at the
/// top level and inside a `run` object.
pub fn lang_pair_from_config(config: &serde_json::Value) -> Option<String> {
    let lookup = |v: &serde_json::Value| -> Option<String> {
        let src = v.get("src_lang")?.as_str()?.to_string();
        let tgt = v.get("tgt_lang")?.as_str()?.to_string();
        Some(format!("{src}-{tgt}"))
    };
    lookup(config).or_else(|| config.get("run").and_then(lookup))
}
