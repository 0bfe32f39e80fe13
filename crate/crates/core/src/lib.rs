//! Context-aware prompting for document-level machine translation: attention
//! scores pick the context sentences that matter for the current one, an LLM
//! condenses them into a summary, and the summary's embedding retrieves
//! few-shot demonstrations from a parallel datastore. Five baseline selection
//! strategies, document-level metrics, and a record/replay HTTP backend round
//! out the toolkit.

pub mod attention;
pub mod backend;
pub mod corpus;
pub mod datastore;
pub mod eval;
pub mod pipeline;
pub mod prompting;

pub use attention::{
    average_heads, fixed_context, select_context, sentence_attention_matrix, AttentionDump,
    AttentionError, AttentionTensor, ContextWindow, ScoreMode, SentenceAttentionMatrix,
    SentenceMap, TokenMatrix, WindowMode,
};
pub use backend::{
    network_ops, Backend, BackendClient, BackendConfig, BackendError, BackendMode,
    GenerationRequest, Transport,
};
pub use corpus::{
    normalize_punctuation, read_parallel_tsv, read_presegmented, segment_document, CorpusError,
    Document, ParallelPair, Sentence, Span,
};
pub use datastore::{
    build_index, load_index, save_index, DatastoreEntry, DatastoreError, DatastoreIndex,
};
pub use eval::{chrf2, d_bleu, read_zpt_annotations, zpt_accuracy, EvalError, EvalReport, ZptAnnotation};
pub use pipeline::{
    attention_dump, group_outputs, read_records, render_comparison_table, run_comparison,
    translate_document, translate_documents, write_records, ComparisonOutcome, ComparisonReport,
    ComparisonRow, DocumentResult, PipelineError, RunConfig, TranslationRecord,
};
pub use prompting::{
    language_display_name, render_prompt, select_demonstrations, summarize_context, Demonstration,
    DemoOrigin, PromptError, PromptTemplate, PrecedentState, QueryContext, Strategy, Summary,
    MAX_DEMONSTRATIONS,
};
