//! Command line for the context-aware prompting toolkit: build retrieval
//! datastores, translate documents, compare selection strategies, score
//! outputs, and inspect attention. Settings resolve as defaults, then the
//! TOML config file, then CAP_BACKEND_URL/CAP_BACKEND_MODE, then flags.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Deserialize;

use cap_core::attention::{ScoreMode, WindowMode};
use cap_core::backend::{BackendClient, BackendMode};
use cap_core::corpus::{read_parallel_tsv, read_presegmented, Document};
use cap_core::datastore::{build_index, load_index, save_index, DatastoreIndex};
use cap_core::eval::{chrf2, d_bleu, read_zpt_annotations, zpt_accuracy, EvalReport};
use cap_core::pipeline::{
    attention_dump, group_outputs, lang_pair_from_config, read_records, render_comparison_table,
    run_comparison, translate_documents, write_records, RunConfig,
};
use cap_core::prompting::{PromptTemplate, Strategy};

#[derive(Parser, Debug)]
#[command(
    name = "cap",
    version,
    about = "Context-aware prompting for document-level machine translation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed parallel pairs and write a retrieval index.
    BuildDatastore(BuildDatastoreArgs),
    /// Translate documents sentence by sentence, writing one record each.
    Translate(TranslateArgs),
    /// Run several selection strategies over the same documents and report.
    Compare(CompareArgs),
    /// Score a records file against reference translations.
    Evaluate(EvaluateArgs),
    /// Write the token and sentence attention views for one sentence.
    AttentionDump(AttentionDumpArgs),
}

/// Settings shared by every subcommand, all optional so absence means
/// "no override".
#[derive(Args, Debug, Default)]
struct RunOpts {
    /// Flat TOML file with the same keys as these flags (kebab-case).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Demonstration selection strategy: zero-shot, random, bm25, similar, precedent, or cap.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Demonstrations per prompt (at most 16).
    #[arg(long, value_name = "K")]
    k_demos: Option<usize>,
    /// Maximum sentences in the context window.
    #[arg(long, value_name = "N")]
    n_context: Option<usize>,
    /// Pooling for sentence attention scores: max or avg.
    #[arg(long, value_parser = parse_score_mode)]
    score_mode: Option<ScoreMode>,
    /// Context window selection: dynamic (attention) or fixed (neighbors).
    #[arg(long, value_parser = parse_window_mode)]
    window_mode: Option<WindowMode>,
    /// Score context with one whole-document attention pass.
    #[arg(long, action = ArgAction::SetTrue)]
    bidirectional: Option<bool>,
    /// Prepend the selected context sentences to the prompt.
    #[arg(long, action = ArgAction::SetTrue)]
    prepend_context: Option<bool>,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Source language code.
    #[arg(long, value_name = "LANG")]
    src_lang: Option<String>,
    /// Target language code.
    #[arg(long, value_name = "LANG")]
    tgt_lang: Option<String>,
    /// Token budget per translation call.
    #[arg(long, value_name = "N")]
    max_new_tokens: Option<u32>,
    /// Stop sequence for translation calls (repeatable; one empty value clears).
    #[arg(long, value_name = "SEQ", action = ArgAction::Append)]
    stop: Option<Vec<String>>,
    /// Prompt template override file: demo, query, and joiner blocks
    /// separated by lines containing ---.
    #[arg(long, value_name = "FILE")]
    template: Option<PathBuf>,
    /// Record per-stage wall-clock timings in output records.
    #[arg(long, action = ArgAction::SetTrue)]
    timing: Option<bool>,
    /// Documents translated in parallel.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Backend base URL.
    #[arg(long, value_name = "URL")]
    backend_url: Option<String>,
    /// Separate URL for embedding calls.
    #[arg(long, value_name = "URL")]
    embed_url: Option<String>,
    /// Separate URL for attention calls.
    #[arg(long, value_name = "URL")]
    attention_url: Option<String>,
    /// Model name sent with every request.
    #[arg(long)]
    model: Option<String>,
    /// Request timeout in milliseconds.
    #[arg(long, value_name = "MS")]
    timeout_ms: Option<u64>,
    /// Retries after a failed request.
    #[arg(long, value_name = "N")]
    max_retries: Option<u32>,
    /// Base backoff between retries in milliseconds.
    #[arg(long, value_name = "MS")]
    retry_backoff_ms: Option<u64>,
    /// Backend mode: live, record, or replay.
    #[arg(long, value_parser = parse_backend_mode)]
    backend_mode: Option<BackendMode>,
    /// Cassette file for record and replay modes.
    #[arg(long, value_name = "FILE")]
    cassette: Option<PathBuf>,
    /// Client-side prompt length limit in characters.
    #[arg(long, value_name = "N")]
    max_prompt_chars: Option<usize>,
}

#[derive(Args, Debug)]
struct BuildDatastoreArgs {
    /// Tab-separated source/target sentence pairs, one pair per line.
    #[arg(long, value_name = "FILE")]
    pairs: PathBuf,
    /// Output index file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    /// Source document: raw text, or sentence-per-line with --presegmented.
    #[arg(long, value_name = "FILE")]
    doc: PathBuf,
    /// Treat input as pre-segmented; blank lines separate documents.
    #[arg(long)]
    presegmented: bool,
    /// Document id (raw input) or id prefix (pre-segmented input).
    #[arg(long, value_name = "ID", default_value = "doc")]
    doc_id: String,
    /// Datastore index for retrieval strategies.
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
    /// Output records file (JSON lines).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Pre-segmented source documents; blank lines separate documents.
    #[arg(long, value_name = "FILE")]
    docs: PathBuf,
    /// Pre-segmented reference translations aligned with --docs.
    #[arg(long, value_name = "FILE")]
    refs: Option<PathBuf>,
    /// Pronoun annotations, one JSON line per source sentence.
    #[arg(long, value_name = "FILE")]
    zpt: Option<PathBuf>,
    /// Datastore index for retrieval strategies.
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
    /// Comma-separated strategies to compare.
    #[arg(
        long,
        value_name = "LIST",
        default_value = "zero-shot,random,bm25,similar,precedent,cap"
    )]
    strategies: String,
    /// Directory for report.json and per-strategy records files.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Records file written by translate or compare.
    #[arg(long, value_name = "FILE")]
    records: PathBuf,
    /// Pre-segmented reference translations aligned with the records.
    #[arg(long, value_name = "FILE")]
    refs: PathBuf,
    /// Pronoun annotations, one JSON line per sentence.
    #[arg(long, value_name = "FILE")]
    zpt: Option<PathBuf>,
    /// Also write the report JSON here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Args, Debug)]
struct AttentionDumpArgs {
    /// Source document: raw text, or sentence-per-line with --presegmented.
    #[arg(long, value_name = "FILE")]
    doc: PathBuf,
    /// Treat input as pre-segmented (must hold exactly one document).
    #[arg(long)]
    presegmented: bool,
    /// Document id.
    #[arg(long, value_name = "ID", default_value = "doc")]
    doc_id: String,
    /// Sentence whose attention view to dump.
    #[arg(long, value_name = "I")]
    sentence: usize,
    /// Output JSON file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    run: RunOpts,
}

/// Config file counterpart of [`RunOpts`]: same keys, kebab-case, all
/// optional. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    strategy: Option<String>,
    k_demos: Option<usize>,
    n_context: Option<usize>,
    score_mode: Option<String>,
    window_mode: Option<String>,
    bidirectional: Option<bool>,
    prepend_context: Option<bool>,
    seed: Option<u64>,
    src_lang: Option<String>,
    tgt_lang: Option<String>,
    max_new_tokens: Option<u32>,
    stop: Option<Vec<String>>,
    template: Option<PathBuf>,
    timing: Option<bool>,
    jobs: Option<usize>,
    backend_url: Option<String>,
    embed_url: Option<String>,
    attention_url: Option<String>,
    model: Option<String>,
    timeout_ms: Option<u64>,
    max_retries: Option<u32>,
    retry_backoff_ms: Option<u64>,
    backend_mode: Option<String>,
    cassette: Option<PathBuf>,
    max_prompt_chars: Option<usize>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_score_mode(s: &str) -> Result<ScoreMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "max" => Ok(ScoreMode::Max),
        "avg" => Ok(ScoreMode::Avg),
        other => Err(format!("unknown score mode '{other}' (expected max or avg)")),
    }
}

fn parse_window_mode(s: &str) -> Result<WindowMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "dynamic" => Ok(WindowMode::Dynamic),
        "fixed" => Ok(WindowMode::Fixed),
        other => Err(format!(
            "unknown window mode '{other}' (expected dynamic or fixed)"
        )),
    }
}

fn parse_backend_mode(s: &str) -> Result<BackendMode, String> {
    s.parse()
}

fn load_template(path: &Path) -> Result<PromptTemplate> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading template {}", path.display()))?;
    let template = PromptTemplate::parse_override(&text)
        .with_context(|| format!("parsing template {}", path.display()))?;
    Ok(template)
}

/// A single empty stop value means "no stop sequences".
fn normalize_stop(stop: Vec<String>) -> Option<Vec<String>> {
    if stop.len() == 1 && stop[0].is_empty() {
        None
    } else {
        Some(stop)
    }
}

fn apply_file(cfg: &mut RunConfig, cassette: &mut Option<PathBuf>, file: FileConfig) -> Result<()> {
    if let Some(v) = file.strategy {
        cfg.strategy = parse_strategy(&v).map_err(|e| anyhow!(e))?;
    }
    if let Some(v) = file.k_demos {
        cfg.k_demos = v;
    }
    if let Some(v) = file.n_context {
        cfg.n_context = v;
    }
    if let Some(v) = file.score_mode {
        cfg.score_mode = parse_score_mode(&v).map_err(|e| anyhow!(e))?;
    }
    if let Some(v) = file.window_mode {
        cfg.window_mode = parse_window_mode(&v).map_err(|e| anyhow!(e))?;
    }
    if let Some(v) = file.bidirectional {
        cfg.bidirectional = v;
    }
    if let Some(v) = file.prepend_context {
        cfg.prepend_context = v;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.src_lang {
        cfg.src_lang = v;
    }
    if let Some(v) = file.tgt_lang {
        cfg.tgt_lang = v;
    }
    if let Some(v) = file.max_new_tokens {
        cfg.max_new_tokens = v;
    }
    if let Some(v) = file.stop {
        cfg.stop = normalize_stop(v);
    }
    if let Some(v) = file.template {
        cfg.template = load_template(&v)?;
    }
    if let Some(v) = file.timing {
        cfg.record_timing = v;
    }
    if let Some(v) = file.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = file.backend_url {
        cfg.backend.endpoint = v;
    }
    if let Some(v) = file.embed_url {
        cfg.backend.embed_endpoint = Some(v);
    }
    if let Some(v) = file.attention_url {
        cfg.backend.attention_endpoint = Some(v);
    }
    if let Some(v) = file.model {
        cfg.backend.model = v;
    }
    if let Some(v) = file.timeout_ms {
        cfg.backend.timeout_ms = v;
    }
    if let Some(v) = file.max_retries {
        cfg.backend.max_retries = v;
    }
    if let Some(v) = file.retry_backoff_ms {
        cfg.backend.retry_backoff_ms = v;
    }
    if let Some(v) = file.backend_mode {
        cfg.backend.mode = parse_backend_mode(&v).map_err(|e| anyhow!(e))?;
    }
    if let Some(v) = file.max_prompt_chars {
        cfg.backend.max_prompt_chars = Some(v);
    }
    if let Some(v) = file.cassette {
        *cassette = Some(v);
    }
    Ok(())
}

fn apply_flags(
    cfg: &mut RunConfig,
    cassette: &mut Option<PathBuf>,
    opts: &RunOpts,
) -> Result<()> {
    if let Some(v) = opts.strategy {
        cfg.strategy = v;
    }
    if let Some(v) = opts.k_demos {
        cfg.k_demos = v;
    }
    if let Some(v) = opts.n_context {
        cfg.n_context = v;
    }
    if let Some(v) = opts.score_mode {
        cfg.score_mode = v;
    }
    if let Some(v) = opts.window_mode {
        cfg.window_mode = v;
    }
    if let Some(v) = opts.bidirectional {
        cfg.bidirectional = v;
    }
    if let Some(v) = opts.prepend_context {
        cfg.prepend_context = v;
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    if let Some(v) = &opts.src_lang {
        cfg.src_lang = v.clone();
    }
    if let Some(v) = &opts.tgt_lang {
        cfg.tgt_lang = v.clone();
    }
    if let Some(v) = opts.max_new_tokens {
        cfg.max_new_tokens = v;
    }
    if let Some(v) = &opts.stop {
        cfg.stop = normalize_stop(v.clone());
    }
    if let Some(v) = &opts.template {
        cfg.template = load_template(v)?;
    }
    if let Some(v) = opts.timing {
        cfg.record_timing = v;
    }
    if let Some(v) = opts.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = &opts.backend_url {
        cfg.backend.endpoint = v.clone();
    }
    if let Some(v) = &opts.embed_url {
        cfg.backend.embed_endpoint = Some(v.clone());
    }
    if let Some(v) = &opts.attention_url {
        cfg.backend.attention_endpoint = Some(v.clone());
    }
    if let Some(v) = &opts.model {
        cfg.backend.model = v.clone();
    }
    if let Some(v) = opts.timeout_ms {
        cfg.backend.timeout_ms = v;
    }
    if let Some(v) = opts.max_retries {
        cfg.backend.max_retries = v;
    }
    if let Some(v) = opts.retry_backoff_ms {
        cfg.backend.retry_backoff_ms = v;
    }
    if let Some(v) = opts.backend_mode {
        cfg.backend.mode = v;
    }
    if let Some(v) = &opts.cassette {
        *cassette = Some(v.clone());
    }
    if let Some(v) = opts.max_prompt_chars {
        cfg.backend.max_prompt_chars = Some(v);
    }
    Ok(())
}

/// Defaults, then the config file, then environment overrides, then flags.
fn resolve(opts: &RunOpts) -> Result<(RunConfig, Option<PathBuf>)> {
    let mut cfg = RunConfig::default();
    let mut cassette: Option<PathBuf> = None;
    if let Some(path) = &opts.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: FileConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        apply_file(&mut cfg, &mut cassette, file)?;
    }
    cfg.backend.apply_env_overrides()?;
    apply_flags(&mut cfg, &mut cassette, opts)?;
    cfg.validate()?;
    Ok((cfg, cassette))
}

/// Every run announces what it resolved to; stderr keeps stdout parseable.
fn echo(cfg: &RunConfig) {
    eprintln!(
        "backend mode: {}; seed: {}; resolved config: {}",
        cfg.backend.mode,
        cfg.seed,
        serde_json::to_string(cfg).expect("config serializes")
    );
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn load_docs(path: &Path, presegmented: bool, doc_id: &str, lang: &str) -> Result<Vec<Document>> {
    let docs = if presegmented {
        read_presegmented(open(path)?, lang, doc_id)?
    } else {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading document {}", path.display()))?;
        vec![Document::new(doc_id, lang, text)?]
    };
    if docs.is_empty() {
        bail!("no documents in {}", path.display());
    }
    Ok(docs)
}

fn load_optional_index(path: Option<&Path>) -> Result<Option<DatastoreIndex>> {
    path.map(|p| load_index(p).with_context(|| format!("loading index {}", p.display())))
        .transpose()
}

fn sentence_texts(docs: &[Document]) -> Vec<Vec<String>> {
    docs.iter()
        .map(|d| d.sentences.iter().map(|s| s.text.clone()).collect())
        .collect()
}

fn cmd_build_datastore(args: BuildDatastoreArgs) -> Result<ExitCode> {
    let (cfg, cassette) = resolve(&args.run)?;
    echo(&cfg);
    let pairs = read_parallel_tsv(open(&args.pairs)?, &cfg.src_lang, &cfg.tgt_lang)?;
    let backend = BackendClient::from_config(&cfg.backend, cassette.as_deref())?;
    let index = build_index(pairs, &backend)?;
    save_index(&index, &args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "entries": index.len(),
            "dim": index.dim(),
            "out": args.out.display().to_string(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_translate(args: TranslateArgs) -> Result<ExitCode> {
    let (cfg, cassette) = resolve(&args.run)?;
    echo(&cfg);
    let docs = load_docs(&args.doc, args.presegmented, &args.doc_id, &cfg.src_lang)?;
    let index = load_optional_index(args.index.as_deref())?;
    let backend = BackendClient::from_config(&cfg.backend, cassette.as_deref())?;
    let results = translate_documents(&docs, &cfg, index.as_ref(), &backend)?;
    write_records(&args.out, &serde_json::to_value(&cfg)?, &results)?;
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    let sentences: usize = results.iter().map(|r| r.records.len()).sum();
    println!(
        "{}",
        serde_json::json!({
            "docs": results.len(),
            "sentences": sentences,
            "failures": failures,
            "out": args.out.display().to_string(),
        })
    );
    if failures == results.len() {
        bail!(
            "all {failures} documents failed; see the error lines in {}",
            args.out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_strategies_list(list: &str) -> Result<Vec<Strategy>> {
    let strategies: Vec<Strategy> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_strategy(s).map_err(|e| anyhow!(e)))
        .collect::<Result<_>>()?;
    if strategies.is_empty() {
        bail!("no strategies given");
    }
    Ok(strategies)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let (cfg, cassette) = resolve(&args.run)?;
    echo(&cfg);
    let strategies = parse_strategies_list(&args.strategies)?;
    let docs = read_presegmented(open(&args.docs)?, &cfg.src_lang, "doc")?;
    if docs.is_empty() {
        bail!("no documents in {}", args.docs.display());
    }
    let refs = args
        .refs
        .as_deref()
        .map(|p| -> Result<Vec<Vec<String>>> {
            Ok(sentence_texts(&read_presegmented(
                open(p)?,
                &cfg.tgt_lang,
                "ref",
            )?))
        })
        .transpose()?;
    let zpt = args
        .zpt
        .as_deref()
        .map(read_zpt_annotations)
        .transpose()?;
    let index = load_optional_index(args.index.as_deref())?;
    let backend = BackendClient::from_config(&cfg.backend, cassette.as_deref())?;
    let outcome = run_comparison(
        &docs,
        &strategies,
        &cfg,
        index.as_ref(),
        &backend,
        refs.as_deref(),
        zpt.as_deref(),
    )?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let report_path = args.out_dir.join("report.json");
    let mut report_json = serde_json::to_string_pretty(&outcome.report)?;
    report_json.push('\n');
    fs::write(&report_path, report_json)?;
    for (strategy, results) in &outcome.results {
        let path = args.out_dir.join(format!("records-{strategy}.jsonl"));
        let row_cfg = cfg.with_strategy(*strategy);
        write_records(&path, &serde_json::to_value(&row_cfg)?, results)?;
    }
    print!("{}", render_comparison_table(&outcome.report));
    eprintln!("report: {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let (cfg, _) = resolve(&args.run)?;
    echo(&cfg);
    let records_file = read_records(&args.records)?;
    if !records_file.failures.is_empty() {
        bail!(
            "{} document(s) failed in {}; evaluation needs complete outputs",
            records_file.failures.len(),
            args.records.display()
        );
    }
    if records_file.records.is_empty() {
        bail!("no records in {}", args.records.display());
    }
    let grouped = group_outputs(&records_file.records);
    let hyp: Vec<Vec<String>> = grouped.into_iter().map(|(_, outputs)| outputs).collect();
    let refs = sentence_texts(&read_presegmented(
        open(&args.refs)?,
        &cfg.tgt_lang,
        "ref",
    )?);
    let zpt_score = args
        .zpt
        .as_deref()
        .map(|p| -> Result<f64> {
            let annotations = read_zpt_annotations(p)?;
            let flat: Vec<String> = hyp.iter().flatten().cloned().collect();
            Ok(zpt_accuracy(&flat, &annotations)?)
        })
        .transpose()?;
    let lang_pair = records_file
        .config
        .as_ref()
        .and_then(lang_pair_from_config)
        .unwrap_or_else(|| format!("{}-{}", cfg.src_lang, cfg.tgt_lang));
    let report = EvalReport {
        lang_pair,
        doc_count: hyp.len(),
        sentence_count: hyp.iter().map(Vec::len).sum(),
        d_bleu: d_bleu(&hyp, &refs)?,
        chrf2: chrf2(&hyp, &refs)?,
        zpt_accuracy: zpt_score,
        config: records_file.config,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    print!("{json}");
    if let Some(out) = &args.out {
        fs::write(out, &json)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_attention_dump(args: AttentionDumpArgs) -> Result<ExitCode> {
    let (cfg, cassette) = resolve(&args.run)?;
    echo(&cfg);
    let docs = load_docs(&args.doc, args.presegmented, &args.doc_id, &cfg.src_lang)?;
    if docs.len() != 1 {
        bail!(
            "attention dump takes exactly one document, found {} in {}",
            docs.len(),
            args.doc.display()
        );
    }
    let backend = BackendClient::from_config(&cfg.backend, cassette.as_deref())?;
    let dump = attention_dump(&docs[0], args.sentence, &cfg, &backend)?;
    let mut json = serde_json::to_string_pretty(&dump)?;
    json.push('\n');
    fs::write(&args.out, json)?;
    eprintln!(
        "wrote attention for sentence {} to {}",
        args.sentence,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::BuildDatastore(args) => cmd_build_datastore(args),
        Command::Translate(args) => cmd_translate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::AttentionDump(args) => cmd_attention_dump(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
