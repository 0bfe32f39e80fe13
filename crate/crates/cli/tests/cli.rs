//! Drives the installed binary end to end: exit codes, hermetic replay runs
//! against the committed cassette, golden-file equality, and the
//! defaults < config file < environment < flags precedence chain.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cap_core::pipeline::{write_records, DocumentResult, RunConfig, TranslationRecord};
use cap_core::prompting::Strategy;

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Command with a scrubbed environment so ambient backend settings cannot
/// leak into resolved configs.
fn cap() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cap"));
    cmd.env_remove("CAP_BACKEND_URL");
    cmd.env_remove("CAP_BACKEND_MODE");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Flags pinning the hermetic replay setup every golden was recorded under.
fn replay_flags(cmd: &mut Command) -> &mut Command {
    cmd.arg("--backend-mode")
        .arg("replay")
        .arg("--cassette")
        .arg(fixtures_dir().join("cassette.jsonl"))
        .arg("--model")
        .arg("fixture")
        .arg("--backend-url")
        .arg("http://127.0.0.1:9")
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(cap().arg("--help"))), 0);
    assert_eq!(code(&run(cap().arg("--version"))), 0);
    assert_eq!(code(&run(cap().args(["translate", "--help"]))), 0);
}

#[test]
fn usage_errors_exit_one() {
    let unknown_sub = run(cap().arg("frobnicate"));
    assert_eq!(code(&unknown_sub), 1);

    let unknown_flag = run(cap().args(["translate", "--no-such-flag"]));
    assert_eq!(code(&unknown_flag), 1);

    let missing_required = run(cap().arg("translate"));
    assert_eq!(code(&missing_required), 1);
    assert!(stderr(&missing_required).contains("--doc"));

    let bad_value = run(cap().args(["translate", "--strategy", "nope"]));
    assert_eq!(code(&bad_value), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing_doc = run(cap()
        .args(["translate", "--doc", "/no/such/file", "--out"])
        .arg(dir.path().join("out.jsonl")));
    assert_eq!(code(&missing_doc), 2);
    assert!(stderr(&missing_doc).contains("error:"));

    let replay_without_cassette = run(cap()
        .args(["translate", "--doc"])
        .arg(fixtures_dir().join("translate_doc.txt"))
        .args(["--presegmented", "--backend-mode", "replay", "--out"])
        .arg(dir.path().join("out.jsonl")));
    assert_eq!(code(&replay_without_cassette), 2);
    assert!(stderr(&replay_without_cassette).contains("cassette"));

    let missing_cassette = run(cap()
        .args(["translate", "--doc"])
        .arg(fixtures_dir().join("translate_doc.txt"))
        .args(["--presegmented", "--backend-mode", "replay"])
        .args(["--cassette", "/no/such/cassette.jsonl", "--out"])
        .arg(dir.path().join("out.jsonl")));
    assert_eq!(code(&missing_cassette), 2);
}

#[test]
fn translate_replay_matches_golden() {
    let fx = fixtures_dir();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("records.jsonl");
    let output = run(replay_flags(
        cap()
            .args(["translate", "--doc"])
            .arg(fx.join("translate_doc.txt"))
            .args(["--presegmented", "--index"])
            .arg(fx.join("index.jsonl"))
            .arg("--out")
            .arg(&out),
    ));
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));

    let err = stderr(&output);
    assert!(err.contains("backend mode: replay"), "echo missing: {err}");
    assert!(err.contains("seed: 0"), "echo missing seed: {err}");
    assert!(err.contains("\"strategy\":\"cap\""), "echo missing config: {err}");

    let summary: serde_json::Value = serde_json::from_str(stdout(&output).trim()).unwrap();
    assert_eq!(summary["docs"], 1);
    assert_eq!(summary["sentences"], 4);
    assert_eq!(summary["failures"], 0);

    let got = std::fs::read(&out).unwrap();
    let golden = std::fs::read(fx.join("translate_records.jsonl")).unwrap();
    assert_eq!(got, golden, "records drifted from the committed golden");
}

#[test]
fn build_datastore_replay_matches_committed_index() {
    let fx = fixtures_dir();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("index.jsonl");
    let output = run(replay_flags(
        cap()
            .args(["build-datastore", "--pairs"])
            .arg(fx.join("pairs.tsv"))
            .arg("--out")
            .arg(&out),
    ));
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let summary: serde_json::Value = serde_json::from_str(stdout(&output).trim()).unwrap();
    assert_eq!(summary["entries"], 8);
    assert_eq!(summary["dim"], 16);

    let got = std::fs::read(&out).unwrap();
    let committed = std::fs::read(fx.join("index.jsonl")).unwrap();
    assert_eq!(got, committed, "index bytes differ from the committed fixture");
}

#[test]
fn compare_replay_stable_and_matches_committed_report() {
    let fx = fixtures_dir();
    let dir = tempfile::tempdir().unwrap();
    let run_once = |out_dir: &Path| -> (Output, Vec<(String, Vec<u8>)>) {
        let output = run(replay_flags(
            cap()
                .args(["compare", "--docs"])
                .arg(fx.join("compare_docs.txt"))
                .arg("--refs")
                .arg(fx.join("compare_refs.txt"))
                .arg("--zpt")
                .arg(fx.join("compare_zpt.jsonl"))
                .arg("--index")
                .arg(fx.join("index.jsonl"))
                .arg("--out-dir")
                .arg(out_dir),
        ));
        assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
        let mut files = Vec::new();
        let mut names: Vec<String> = std::fs::read_dir(out_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for name in names {
            files.push((name.clone(), std::fs::read(out_dir.join(name)).unwrap()));
        }
        (output, files)
    };

    let (out1, files1) = run_once(&dir.path().join("one"));
    let (out2, files2) = run_once(&dir.path().join("two"));

    assert_eq!(stdout(&out1), stdout(&out2), "table differs between runs");
    assert_eq!(files1.len(), files2.len());
    assert_eq!(
        files1.len(),
        7,
        "expected report.json plus six records files"
    );
    for ((name1, bytes1), (name2, bytes2)) in files1.iter().zip(&files2) {
        assert_eq!(name1, name2);
        assert_eq!(bytes1, bytes2, "{name1} differs between runs");
    }

    let report = files1
        .iter()
        .find(|(name, _)| name == "report.json")
        .map(|(_, bytes)| bytes.clone())
        .unwrap();
    let committed = std::fs::read(fx.join("report.json")).unwrap();
    assert_eq!(report, committed, "report drifted from the committed golden");

    let table = stdout(&out1);
    for label in ["Zero-shot", "Random", "BM25", "Similar", "Precedent", "Ours"] {
        assert!(table.contains(label), "table missing {label}:\n{table}");
    }
}

#[test]
fn attention_dump_replay_matches_golden() {
    let fx = fixtures_dir();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dump.json");
    let output = run(replay_flags(
        cap()
            .args(["attention-dump", "--doc"])
            .arg(fx.join("translate_doc.txt"))
            .args(["--presegmented", "--sentence", "2", "--out"])
            .arg(&out),
    ));
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let got = std::fs::read(&out).unwrap();
    let golden = std::fs::read(fx.join("attention_dump.json")).unwrap();
    assert_eq!(got, golden, "dump drifted from the committed golden");
}

fn identity_record(doc_id: &str, index: usize, text: &str) -> TranslationRecord {
    TranslationRecord {
        doc_id: doc_id.into(),
        sentence_index: index,
        strategy: Strategy::ZeroShot,
        source: format!("src {index}"),
        output: text.into(),
        demonstrations: vec![],
        context_members: vec![],
        summary: None,
        note: None,
        timing: None,
    }
}

#[test]
fn evaluate_identity_scores_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let sentences_a = ["The cat sat on the mat.", "It was happy there."];
    let sentences_b = ["Dogs bark loudly at night."];
    let results = vec![
        DocumentResult {
            doc_id: "a".into(),
            records: sentences_a
                .iter()
                .enumerate()
                .map(|(i, s)| identity_record("a", i, s))
                .collect(),
            error: None,
        },
        DocumentResult {
            doc_id: "b".into(),
            records: sentences_b
                .iter()
                .enumerate()
                .map(|(i, s)| identity_record("b", i, s))
                .collect(),
            error: None,
        },
    ];
    let records_path = dir.path().join("records.jsonl");
    let cfg = serde_json::to_value(RunConfig::default()).unwrap();
    write_records(&records_path, &cfg, &results).unwrap();

    let refs_path = dir.path().join("refs.txt");
    std::fs::write(
        &refs_path,
        format!(
            "{}\n\n{}\n",
            sentences_a.join("\n"),
            sentences_b.join("\n")
        ),
    )
    .unwrap();

    let report_path = dir.path().join("report.json");
    let output = run(cap()
        .args(["evaluate", "--records"])
        .arg(&records_path)
        .arg("--refs")
        .arg(&refs_path)
        .arg("--out")
        .arg(&report_path));
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));

    let report: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    assert_eq!(report["d_bleu"], 100.0);
    assert_eq!(report["chrf2"], 100.0);
    assert_eq!(report["doc_count"], 2);
    assert_eq!(report["sentence_count"], 3);
    assert_eq!(report["lang_pair"], "de-en");
    let written = std::fs::read_to_string(&report_path).unwrap();
    assert_eq!(written.trim_end(), stdout(&output).trim_end());
}

#[test]
fn evaluate_rejects_records_with_failures() {
    let dir = tempfile::tempdir().unwrap();
    let results = vec![DocumentResult {
        doc_id: "a".into(),
        records: vec![identity_record("a", 0, "partial output.")],
        error: Some("backend timeout".into()),
    }];
    let records_path = dir.path().join("records.jsonl");
    let cfg = serde_json::to_value(RunConfig::default()).unwrap();
    write_records(&records_path, &cfg, &results).unwrap();
    let refs_path = dir.path().join("refs.txt");
    std::fs::write(&refs_path, "partial output.\n").unwrap();

    let output = run(cap()
        .args(["evaluate", "--records"])
        .arg(&records_path)
        .arg("--refs")
        .arg(&refs_path));
    assert_eq!(code(&output), 2);
    assert!(stderr(&output).contains("failed"), "{}", stderr(&output));
}

/// Precedence: defaults, then the config file, then CAP_* environment
/// variables, then explicit flags. The stderr echo reports the resolved
/// values, so a cheap command serves as the probe.
#[test]
fn config_file_env_and_flags_resolve_in_order() {
    let dir = tempfile::tempdir().unwrap();

    // A minimal valid evaluate setup to carry the probe.
    let results = vec![DocumentResult {
        doc_id: "a".into(),
        records: vec![identity_record("a", 0, "Hello there.")],
        error: None,
    }];
    let records_path = dir.path().join("records.jsonl");
    write_records(
        &records_path,
        &serde_json::to_value(RunConfig::default()).unwrap(),
        &results,
    )
    .unwrap();
    let refs_path = dir.path().join("refs.txt");
    std::fs::write(&refs_path, "Hello there.\n").unwrap();

    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        "seed = 7\ntgt-lang = \"fr\"\nbackend-url = \"http://file-url\"\n",
    )
    .unwrap();

    let resolved = |cmd: &mut Command| -> serde_json::Value {
        let output = run(cmd);
        assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
        let err = stderr(&output);
        let line = err
            .lines()
            .find(|l| l.contains("resolved config:"))
            .expect("echo line");
        let json = line.split("resolved config:").nth(1).unwrap().trim();
        serde_json::from_str(json).unwrap()
    };

    // File beats defaults.
    let cfg = resolved(cap()
        .args(["evaluate", "--records"])
        .arg(&records_path)
        .arg("--refs")
        .arg(&refs_path)
        .arg("--config")
        .arg(&config_path));
    assert_eq!(cfg["seed"], 7);
    assert_eq!(cfg["tgt_lang"], "fr");
    assert_eq!(cfg["backend"]["endpoint"], "http://file-url");

    // Environment beats the file.
    let cfg = resolved(cap()
        .args(["evaluate", "--records"])
        .arg(&records_path)
        .arg("--refs")
        .arg(&refs_path)
        .arg("--config")
        .arg(&config_path)
        .env("CAP_BACKEND_URL", "http://env-url"));
    assert_eq!(cfg["backend"]["endpoint"], "http://env-url");
    assert_eq!(cfg["seed"], 7, "env must not disturb unrelated keys");

    // Flags beat the environment.
    let cfg = resolved(cap()
        .args(["evaluate", "--records"])
        .arg(&records_path)
        .arg("--refs")
        .arg(&refs_path)
        .arg("--config")
        .arg(&config_path)
        .env("CAP_BACKEND_URL", "http://env-url")
        .args(["--backend-url", "http://flag-url", "--seed", "9"]));
    assert_eq!(cfg["backend"]["endpoint"], "http://flag-url");
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["tgt_lang"], "fr", "file value survives unrelated overrides");

    // Unknown config keys are rejected.
    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "no-such-key = 1\n").unwrap();
    let output = run(cap()
        .args(["evaluate", "--records"])
        .arg(&records_path)
        .arg("--refs")
        .arg(&refs_path)
        .arg("--config")
        .arg(&bad_config));
    assert_eq!(code(&output), 2);
    assert!(stderr(&output).contains("no-such-key"), "{}", stderr(&output));
}
