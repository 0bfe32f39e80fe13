//! Document-level translation metrics: concatenated-document BLEU, character
//! n-gram F-score, and pronoun-restoration accuracy.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BLEU_MAX_ORDER: usize = 4;
pub const CHRF_MAX_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no documents to evaluate")]
    EmptyEvalSet,
    #[error("{hyp} hypothesis documents but {refs} reference documents")]
    ShapeMismatch { hyp: usize, refs: usize },
    #[error("{outputs} outputs but {annotations} annotations")]
    AlignmentError { outputs: usize, annotations: usize },
    #[error("annotation file line {line}: {reason}")]
    AnnotationFormat { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn is_scored_per_character(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x3040..=0x309F | 0x30A0..=0x30FF)
}

/// Language-agnostic tokens for BLEU: runs of alphanumerics form words,
/// ideographs and kana count one token per character, every other
/// non-whitespace character is its own token.
pub fn metric_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if is_scored_per_character(c) || !c.is_alphanumeric() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u32> {
    let mut counts: HashMap<&[String], u32> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn check_shape<T, U>(hyp_docs: &[T], ref_docs: &[U]) -> Result<(), EvalError> {
    if hyp_docs.len() != ref_docs.len() {
        return Err(EvalError::ShapeMismatch {
            hyp: hyp_docs.len(),
            refs: ref_docs.len(),
        });
    }
    if hyp_docs.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    Ok(())
}

/// Corpus BLEU-4 over whole documents: each document's sentences are joined
/// with single spaces before tokenization, so sentence boundaries carry no
/// weight. Unigram precision is unsmoothed; higher orders use add-one
/// smoothing on both counts, which keeps identical corpora at exactly 100.
/// The standard brevity penalty applies. Range 0 to 100.
pub fn d_bleu(hyp_docs: &[Vec<String>], ref_docs: &[Vec<String>]) -> Result<f64, EvalError> {
    check_shape(hyp_docs, ref_docs)?;
    let mut matches = [0u64; BLEU_MAX_ORDER];
    let mut totals = [0u64; BLEU_MAX_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp_sents, ref_sents) in hyp_docs.iter().zip(ref_docs) {
        let hyp = metric_tokens(&hyp_sents.join(" "));
        let rf = metric_tokens(&ref_sents.join(" "));
        hyp_len += hyp.len() as u64;
        ref_len += rf.len() as u64;
        for n in 1..=BLEU_MAX_ORDER {
            let hyp_grams = ngram_counts(&hyp, n);
            let ref_grams = ngram_counts(&rf, n);
            for (gram, count) in &hyp_grams {
                totals[n - 1] += u64::from(*count);
                let clip = ref_grams.get(gram).copied().unwrap_or(0);
                matches[n - 1] += u64::from((*count).min(clip));
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let p = if n == 1 {
            matches[0] as f64 / totals[0] as f64
        } else {
            (matches[n - 1] + 1) as f64 / (totals[n - 1] + 1) as f64
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln() / BLEU_MAX_ORDER as f64;
    }
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * log_sum.exp())
}

fn char_ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], u32> {
    let mut counts: HashMap<&[char], u32> = HashMap::new();
    if chars.len() >= n {
        for window in chars.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus chrF with β = 2: character n-grams of order 1..=6 over
/// whitespace-stripped concatenated documents, counts pooled across the
/// corpus, F-scores averaged over the orders that have any n-grams on
/// either side. Range 0 to 100.
pub fn chrf2(hyp_docs: &[Vec<String>], ref_docs: &[Vec<String>]) -> Result<f64, EvalError> {
    check_shape(hyp_docs, ref_docs)?;
    let strip = |sents: &Vec<String>| -> Vec<char> {
        sents
            .join(" ")
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect()
    };
    let hyp_chars: Vec<Vec<char>> = hyp_docs.iter().map(strip).collect();
    let ref_chars: Vec<Vec<char>> = ref_docs.iter().map(strip).collect();
    let beta_sq = CHRF_BETA * CHRF_BETA;
    let mut f_sum = 0.0;
    let mut orders = 0u32;
    for n in 1..=CHRF_MAX_ORDER {
        let mut overlap = 0u64;
        let mut hyp_total = 0u64;
        let mut ref_total = 0u64;
        for (hyp, rf) in hyp_chars.iter().zip(&ref_chars) {
            let hyp_grams = char_ngram_counts(hyp, n);
            let ref_grams = char_ngram_counts(rf, n);
            hyp_total += hyp_grams.values().map(|&c| u64::from(c)).sum::<u64>();
            ref_total += ref_grams.values().map(|&c| u64::from(c)).sum::<u64>();
            for (gram, count) in &hyp_grams {
                let clip = ref_grams.get(gram).copied().unwrap_or(0);
                overlap += u64::from((*count).min(clip));
            }
        }
        if hyp_total == 0 && ref_total == 0 {
            continue;
        }
        orders += 1;
        let precision = if hyp_total > 0 {
            overlap as f64 / hyp_total as f64
        } else {
            0.0
        };
        let recall = if ref_total > 0 {
            overlap as f64 / ref_total as f64
        } else {
            0.0
        };
        if precision + recall > 0.0 {
            f_sum += (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall);
        }
    }
    if orders == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * f_sum / f64::from(orders))
}

/// One pronoun-restoration example: a translation output is correct when it
/// contains any expected pronoun as a case-insensitive whole word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZptAnnotation {
    pub source: String,
    pub reference: String,
    pub expected_pronouns: Vec<String>,
}

fn word_tokens_lower(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Whole-word, case-insensitive containment test used by the accuracy
/// metric. "whose" does not match expected "who".
pub fn contains_expected_pronoun(output: &str, expected: &[String]) -> bool {
    let tokens = word_tokens_lower(output);
    expected
        .iter()
        .map(|p| p.trim().to_lowercase())
        .any(|p| !p.is_empty() && tokens.contains(&p))
}

/// Fraction of outputs containing one of their expected pronouns. Outputs
/// align to annotations by position.
pub fn zpt_accuracy(outputs: &[String], annotations: &[ZptAnnotation]) -> Result<f64, EvalError> {
    if outputs.len() != annotations.len() {
        return Err(EvalError::AlignmentError {
            outputs: outputs.len(),
            annotations: annotations.len(),
        });
    }
    if outputs.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let correct = outputs
        .iter()
        .zip(annotations)
        .filter(|(out, ann)| contains_expected_pronoun(out, &ann.expected_pronouns))
        .count();
    Ok(correct as f64 / outputs.len() as f64)
}

/// Reads JSON-lines annotations: one object per line with `source`,
/// `reference`, and a non-empty `expected_pronouns` list of single words.
pub fn read_zpt_annotations(path: &Path) -> Result<Vec<ZptAnnotation>, EvalError> {
    let file = File::open(path)?;
    let mut annotations = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: ZptAnnotation =
            serde_json::from_str(&line).map_err(|e| EvalError::AnnotationFormat {
                line: lineno,
                reason: e.to_string(),
            })?;
        if ann.expected_pronouns.is_empty() {
            return Err(EvalError::AnnotationFormat {
                line: lineno,
                reason: "expected_pronouns is empty".into(),
            });
        }
        for p in &ann.expected_pronouns {
            if p.split_whitespace().count() != 1 {
                return Err(EvalError::AnnotationFormat {
                    line: lineno,
                    reason: format!("expected pronoun {p:?} is not a single token"),
                });
            }
        }
        annotations.push(ann);
    }
    Ok(annotations)
}

/// Metric bundle for one language pair plus the configuration that
/// produced it, making the file self-describing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub lang_pair: String,
    pub doc_count: usize,
    pub sentence_count: usize,
    pub d_bleu: f64,
    pub chrf2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zpt_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn docs(items: &[&[&str]]) -> Vec<Vec<String>> {
        items
            .iter()
            .map(|d| d.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    fn toy_hyp() -> Vec<Vec<String>> {
        docs(&[
            &["the cat sat on the mat .", "it was happy ."],
            &["a quick brown fox ."],
        ])
    }

    fn toy_ref() -> Vec<Vec<String>> {
        docs(&[
            &["the cat sat on the mat .", "it was very happy ."],
            &["the quick brown fox ."],
        ])
    }

    #[test]
    fn tokenizer_splits_words_punctuation_and_ideographs() {
        assert_eq!(
            metric_tokens("Don't stop, now!"),
            vec!["Don", "'", "t", "stop", ",", "now", "!"]
        );
        assert_eq!(
            metric_tokens("\u{4ED6}\u{53BB}\u{5546}\u{5E97}\u{3002}"),
            vec!["\u{4ED6}", "\u{53BB}", "\u{5546}", "\u{5E97}", "\u{3002}"]
        );
        assert_eq!(metric_tokens("  spaced   out  "), vec!["spaced", "out"]);
        assert_eq!(metric_tokens(""), Vec::<String>::new());
    }

    #[test]
    fn d_bleu_matches_frozen_values() {
        let score = d_bleu(&toy_hyp(), &toy_ref()).unwrap();
        assert!((score - 77.13490068359273).abs() < 1e-9, "got {score}");
        let zh = d_bleu(
            &docs(&[&["\u{4ED6}\u{53BB}\u{4E86}\u{5546}\u{5E97}\u{3002}"]]),
            &docs(&[&["\u{4ED6}\u{53BB}\u{4E86}\u{90A3}\u{5BB6}\u{5546}\u{5E97}\u{3002}"]]),
        )
        .unwrap();
        assert!((zh - 42.60520663282873).abs() < 1e-9, "got {zh}");
    }

    #[test]
    fn d_bleu_identity_and_disjoint_bounds() {
        assert_eq!(d_bleu(&toy_ref(), &toy_ref()).unwrap(), 100.0);
        let zero = d_bleu(&docs(&[&["aa bb"]]), &docs(&[&["cc dd"]])).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn chrf2_matches_manual_counts() {
        // hyp "abcd" vs ref "abce": F over orders 1..4 is (3/4 + 2/3 + 1/2
        // + 0)/4; orders 5 and 6 have no n-grams and are excluded.
        let score = chrf2(&docs(&[&["abcd"]]), &docs(&[&["abce"]])).unwrap();
        assert!((score - 47.916666666666664).abs() < 1e-6, "got {score}");
        assert_eq!(chrf2(&toy_ref(), &toy_ref()).unwrap(), 100.0);
        assert_eq!(chrf2(&docs(&[&["xyz"]]), &docs(&[&["abc"]])).unwrap(), 0.0);
    }

    #[test]
    fn chrf2_ignores_whitespace_layout() {
        let a = chrf2(&docs(&[&["a b c d"]]), &docs(&[&["abcd"]])).unwrap();
        assert_eq!(a, 100.0);
    }

    #[test]
    fn metrics_hold_identity_on_random_corpora() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let vocab = ["alpha", "beta", "gamma", "delta", ".", ","];
        for _ in 0..50 {
            let n_docs = rng.random_range(1..4);
            let corpus: Vec<Vec<String>> = (0..n_docs)
                .map(|_| {
                    (0..rng.random_range(1..4))
                        .map(|_| {
                            (0..rng.random_range(1..8))
                                .map(|_| vocab[rng.random_range(0..vocab.len())])
                                .collect::<Vec<_>>()
                                .join(" ")
                        })
                        .collect()
                })
                .collect();
            assert_eq!(d_bleu(&corpus, &corpus).unwrap(), 100.0);
            assert_eq!(chrf2(&corpus, &corpus).unwrap(), 100.0);
        }
    }

    #[test]
    fn metrics_are_permutation_invariant_over_documents() {
        let hyp = toy_hyp();
        let rf = toy_ref();
        let hyp_rev: Vec<Vec<String>> = hyp.iter().rev().cloned().collect();
        let ref_rev: Vec<Vec<String>> = rf.iter().rev().cloned().collect();
        assert_eq!(
            d_bleu(&hyp, &rf).unwrap(),
            d_bleu(&hyp_rev, &ref_rev).unwrap()
        );
        assert_eq!(
            chrf2(&hyp, &rf).unwrap(),
            chrf2(&hyp_rev, &ref_rev).unwrap()
        );
    }

    #[test]
    fn d_bleu_ignores_sentence_boundary_placement() {
        let rf = docs(&[&["the cat sat", "on the mat"]]);
        let a = docs(&[&["the cat", "sat on the mat"]]);
        let b = docs(&[&["the cat sat on", "the mat"]]);
        assert_eq!(d_bleu(&a, &rf).unwrap(), d_bleu(&b, &rf).unwrap());
        assert_eq!(d_bleu(&a, &rf).unwrap(), 100.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        assert!(matches!(
            d_bleu(&toy_hyp(), &toy_ref()[..1]),
            Err(EvalError::ShapeMismatch { hyp: 2, refs: 1 })
        ));
        assert!(matches!(
            d_bleu(&[], &[]),
            Err(EvalError::EmptyEvalSet)
        ));
        assert!(matches!(
            chrf2(&[], &[]),
            Err(EvalError::EmptyEvalSet)
        ));
    }

    fn pronoun_annotation() -> ZptAnnotation {
        ZptAnnotation {
            source: "\u{4E3B}\u{8981}\u{4ECE}\u{4E8B}\u{5A92}\u{4F53}\u{5927}\u{6570}\u{636E}\u{8BA1}\u{7B97}\u{3001}\u{7F51}\u{7EDC}\u{591A}\u{5A92}\u{4F53}\u{4E0E}\u{8DE8}\u{5A92}\u{4F53}\u{667A}\u{80FD}\u{7B49}\u{7814}\u{7A76}\u{5DE5}\u{4F5C}\u{3002}".into(),
            reference: "His research fields primarily concentrate on Media Big Data Computing, Network Multimedia and Cross-Media Intelligence, etc.".into(),
            expected_pronouns: vec!["His".into(), "He".into()],
        }
    }

    #[test]
    fn pronoun_restoration_case_study_scores_match() {
        let ann = vec![pronoun_annotation()];
        let restored = vec![
            "His main research focuses on media big data computation, network multimedia, and cross-media intelligence.".to_string(),
        ];
        assert_eq!(zpt_accuracy(&restored, &ann).unwrap(), 1.0);
        for dropped in [
            "Our research focuses on media big data computing, network multimedia, and cross-media intelligence.",
            "My main research works involve media big data computation, network multimedia and cross-media intelligence.",
            "The main research areas include media big data computing, network multimedia and cross-media intelligence.",
        ] {
            let outputs = vec![dropped.to_string()];
            assert_eq!(zpt_accuracy(&outputs, &ann).unwrap(), 0.0, "{dropped}");
        }
    }

    #[test]
    fn pronoun_match_is_whole_word_case_insensitive() {
        let who = vec!["who".to_string()];
        assert!(!contains_expected_pronoun("whose idea was it", &who));
        assert!(contains_expected_pronoun("Who did it?", &who));
        assert!(contains_expected_pronoun("it was he.", &["He".to_string()]));
        assert!(!contains_expected_pronoun("hear them out", &["He".to_string()]));
        assert!(!contains_expected_pronoun("", &who));
    }

    #[test]
    fn zpt_accuracy_checks_alignment() {
        let ann = vec![pronoun_annotation()];
        assert!(matches!(
            zpt_accuracy(&[], &ann),
            Err(EvalError::AlignmentError { outputs: 0, annotations: 1 })
        ));
        assert!(matches!(
            zpt_accuracy(&[], &[]),
            Err(EvalError::EmptyEvalSet)
        ));
        let outputs = vec!["He went.".to_string(), "She went.".to_string()];
        let anns = vec![pronoun_annotation(), pronoun_annotation()];
        assert_eq!(zpt_accuracy(&outputs, &anns).unwrap(), 0.5);
    }

    #[test]
    fn annotation_file_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zpt.jsonl");
        let ann = pronoun_annotation();
        std::fs::write(&path, format!("{}\n\n", serde_json::to_string(&ann).unwrap())).unwrap();
        let loaded = read_zpt_annotations(&path).unwrap();
        assert_eq!(loaded, vec![ann]);

        std::fs::write(
            &path,
            "{\"source\":\"s\",\"reference\":\"r\",\"expected_pronouns\":[]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_zpt_annotations(&path),
            Err(EvalError::AnnotationFormat { line: 1, .. })
        ));

        std::fs::write(
            &path,
            "{\"source\":\"s\",\"reference\":\"r\",\"expected_pronouns\":[\"he said\"]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_zpt_annotations(&path),
            Err(EvalError::AnnotationFormat { line: 1, .. })
        ));

        std::fs::write(&path, "not json\n").unwrap();
        assert!(read_zpt_annotations(&path).is_err());
    }
}
