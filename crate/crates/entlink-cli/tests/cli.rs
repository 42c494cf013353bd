//! End-to-end tests that drive the `entlink` binary over a small corpus with
//! hand-checked outcomes (see `common` for the arithmetic).

mod common;

use std::fs;
use std::process::{Command, Output};

use entlink::eval::{ErrorSource, EvalReport};
use entlink::kb::PriorIndex;

use common::{entlink_cmd, fixture, setup_world, write_config};

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("run entlink");
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_expect_failure(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("run entlink");
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded\nstdout:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

fn line_count(path: &std::path::Path) -> usize {
    fs::read_to_string(path).expect("read file").lines().filter(|l| !l.trim().is_empty()).count()
}

fn read_report(path: &std::path::Path) -> EvalReport {
    serde_json::from_str(&fs::read_to_string(path).expect("read report")).expect("parse report")
}

fn source_counts(report: &EvalReport) -> (usize, usize, usize) {
    let count = |s: ErrorSource| report.errors.iter().filter(|e| e.source == s).count();
    (
        count(ErrorSource::Step1Candidates),
        count(ErrorSource::Step2Augmentation),
        count(ErrorSource::Step3Selection),
    )
}

#[test]
fn build_index_reports_counts_and_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("small.idx");
    let stdout = run_ok(entlink_cmd().args([
        "build-index",
        "--anchors",
        fixture("anchors_small.tsv").to_str().unwrap(),
        "--kb",
        fixture("kb.jsonl").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]));
    assert!(stdout.contains("2 surfaces, 3 entities"), "stdout: {stdout}");
    assert!(
        stdout.contains("rows 4 | merged duplicates 1 | dropped unresolved 0"),
        "stdout: {stdout}"
    );

    let index = PriorIndex::load(&out_path).unwrap();
    let obama = index.lookup("obama");
    assert_eq!(obama.len(), 2);
    assert_eq!(obama[0].entity_id, "Barack_Obama");
    assert!((obama[0].prior - 5.0 / 6.0).abs() < 1e-12);

    // The JSONL encoding loads back to the same priors.
    let jsonl_path = dir.path().join("small.jsonl");
    run_ok(entlink_cmd().args([
        "build-index",
        "--anchors",
        fixture("anchors_small.tsv").to_str().unwrap(),
        "--kb",
        fixture("kb.jsonl").to_str().unwrap(),
        "--out",
        jsonl_path.to_str().unwrap(),
        "--format",
        "jsonl",
    ]));
    let from_jsonl = PriorIndex::load(&jsonl_path).unwrap();
    assert_eq!(from_jsonl.lookup("obama"), obama);
}

#[test]
fn disambiguate_scores_the_corpus_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let world = setup_world(dir.path());
    let out_dir = dir.path().join("out");
    let stdout = run_ok(entlink_cmd().args([
        "disambiguate",
        "--config",
        world.config_path.to_str().unwrap(),
        "--dataset",
        world.corpus_path.to_str().unwrap(),
        "--preprocess",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));

    assert!(
        stdout.contains(
            "preprocess: dropped 1 duplicate documents, 1 out-of-KB mentions, 1 empty documents"
        ),
        "stdout: {stdout}"
    );
    assert!(stdout.contains("dataset toy-benchmark | 12 scored mentions | variant full"));
    assert!(stdout.contains("precision 0.5000 recall 0.5000 micro-F1 0.5000"));
    assert!(stdout.contains("candidate recall 0.9167"));
    assert!(stdout.contains(
        "requests: 12 augmentation, 12 selection | retriever: 11 calls, 0 failures"
    ));

    assert_eq!(line_count(&out_dir.join("predictions.jsonl")), 12);
    assert_eq!(line_count(&out_dir.join("artifacts.jsonl")), 12);

    let report = read_report(&out_dir.join("report.json"));
    assert_eq!((report.tp, report.fp, report.fn_count), (6, 6, 6));
    assert_eq!(report.micro_f1, 0.5);
    assert!((report.candidate_recall.unwrap() - 11.0 / 12.0).abs() < 1e-12);
    assert!(!report.partial);
    assert_eq!(report.variant.as_deref(), Some("full"));
    assert_eq!(report.config["k"], 10);

    let stats = report.run_stats.unwrap();
    assert_eq!(stats.augmentation_requests, 12);
    assert_eq!(stats.selection_requests, 12);
    assert_eq!(stats.retriever_invocations, 11); // "Dubya" fills its list from priors alone
    assert_eq!(stats.llm_failures, 0);

    assert_eq!(source_counts(&report), (1, 0, 5));
    let step1 = report
        .errors
        .iter()
        .find(|e| e.source == ErrorSource::Step1Candidates)
        .expect("step-1 error");
    assert_eq!((step1.doc_id.as_str(), step1.surface.as_str()), ("d3", "Dubya"));
    assert_eq!(step1.gold, "George_W._Bush");

    // Every artifact line carries candidates and a usable description.
    for line in fs::read_to_string(out_dir.join("artifacts.jsonl")).unwrap().lines() {
        let artifact: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(artifact["candidates"].as_array().unwrap().len() <= 10);
        assert_eq!(artifact["aux_present"], true);
    }
}

#[test]
fn eval_rescoring_saved_predictions_matches_the_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let world = setup_world(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(entlink_cmd().args([
        "disambiguate",
        "--config",
        world.config_path.to_str().unwrap(),
        "--dataset",
        world.clean_corpus_path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));

    let eval_json = dir.path().join("eval.json");
    let errors_csv = dir.path().join("errors.csv");
    let stdout = run_ok(entlink_cmd().args([
        "eval",
        "--predictions",
        out_dir.join("predictions.jsonl").to_str().unwrap(),
        "--dataset",
        world.clean_corpus_path.to_str().unwrap(),
        "--artifacts",
        out_dir.join("artifacts.jsonl").to_str().unwrap(),
        "--out",
        eval_json.to_str().unwrap(),
        "--errors-csv",
        errors_csv.to_str().unwrap(),
    ]));
    assert!(stdout.contains("12 scored mentions | tp 6 fp 6 fn 6"), "stdout: {stdout}");
    assert!(stdout.contains("precision 0.5000 recall 0.5000 micro-F1 0.5000"));
    assert!(stdout.contains("candidate recall 0.9167"));
    assert!(stdout.contains("6 errors attributed"));

    // The standalone rescoring agrees with the report the run wrote.
    let run_report = read_report(&out_dir.join("report.json"));
    let eval_report = read_report(&eval_json);
    assert_eq!(
        (eval_report.tp, eval_report.fp, eval_report.fn_count),
        (run_report.tp, run_report.fp, run_report.fn_count)
    );
    assert_eq!(eval_report.micro_f1, run_report.micro_f1);
    assert_eq!(eval_report.candidate_recall, run_report.candidate_recall);
    assert_eq!(eval_report.errors, run_report.errors);
    assert_eq!(eval_report.rows, run_report.rows);

    let csv = fs::read_to_string(&errors_csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "doc_id,start,end,surface,gold,predicted,source,severity"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().filter(|r| r.contains(",step1-candidates,")).count(), 1);
    assert_eq!(rows.iter().filter(|r| r.contains(",step3-selection,")).count(), 5);
    assert!(rows.iter().any(|r| r.starts_with("d3,0,5,Dubya,George_W._Bush,")));
}

#[test]
fn record_then_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let world = setup_world(dir.path());
    let cassette = dir.path().join("session.jsonl");

    let run_with = |backend: &str, out_dir: &std::path::Path| {
        run_ok(entlink_cmd().args([
            "disambiguate",
            "--config",
            world.config_path.to_str().unwrap(),
            "--dataset",
            world.clean_corpus_path.to_str().unwrap(),
            "--backend",
            backend,
            "--cassette",
            cassette.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]));
    };

    let rec = dir.path().join("rec");
    let rep = dir.path().join("rep");
    run_with("record", &rec);
    assert_eq!(line_count(&cassette), 24); // 12 augmentation + 12 selection exchanges

    // Replay twice into the same directory so the runs are parameterized
    // identically, snapshotting all outputs in between.
    let bytes = |dir: &std::path::Path, name: &str| fs::read(dir.join(name)).unwrap();
    run_with("replay", &rep);
    let first: Vec<(&str, Vec<u8>)> = ["predictions.jsonl", "artifacts.jsonl", "report.json"]
        .into_iter()
        .map(|name| (name, bytes(&rep, name)))
        .collect();
    run_with("replay", &rep);
    for (name, snapshot) in &first {
        assert_eq!(&bytes(&rep, name), snapshot, "{name} diverged between replays");
    }
    // The record run already produced the same predictions and artifacts;
    // its report differs only in the embedded backend configuration.
    for name in ["predictions.jsonl", "artifacts.jsonl"] {
        assert_eq!(bytes(&rec, name), bytes(&rep, name), "{name} diverged from the recording");
    }
}

#[test]
fn variant_flags_reshape_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let world = setup_world(dir.path());
    let run_variant = |variant: &str| {
        let out_dir = dir.path().join(variant);
        let stdout = run_ok(entlink_cmd().args([
            "disambiguate",
            "--config",
            world.config_path.to_str().unwrap(),
            "--dataset",
            world.clean_corpus_path.to_str().unwrap(),
            "--variant",
            variant,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]));
        assert!(stdout.contains(&format!("variant {variant}")), "stdout: {stdout}");
        read_report(&out_dir.join("report.json"))
    };

    let no_aug = run_variant("no-augmentation");
    let stats = no_aug.run_stats.unwrap();
    assert_eq!(stats.augmentation_requests, 0);
    assert_eq!(stats.selection_requests, 12);
    // Without descriptions every non-candidate error is charged to step 2.
    assert_eq!(source_counts(&no_aug), (1, 5, 0));
    assert_eq!(no_aug.micro_f1, 0.5); // the scripted answer ignores the prompt

    let prior_only = run_variant("prior-only-candidates");
    let stats = prior_only.run_stats.unwrap();
    assert_eq!(stats.retriever_invocations, 0);
    assert_eq!(stats.augmentation_requests, 12);
    // "Windy City" has no anchor statistics, so its candidate list is empty
    // and the only option is the catch-all; picking it is an abstention.
    assert_eq!((prior_only.tp, prior_only.fp, prior_only.fn_count), (6, 5, 6));
    assert!((prior_only.candidate_recall.unwrap() - 10.0 / 12.0).abs() < 1e-12);
    assert_eq!(source_counts(&prior_only), (2, 0, 4));

    let free_text = run_variant("no-candidates-instruct");
    let stats = free_text.run_stats.unwrap();
    assert_eq!(stats.retriever_invocations, 0);
    assert_eq!(stats.augmentation_requests, 12);
    assert_eq!(stats.selection_requests, 12);
    // The scripted "A." resolves to no entity, so every answer is a wrong
    // raw-name guess.
    assert_eq!((free_text.tp, free_text.fp), (0, 12));
}

#[test]
fn spent_budget_exits_nonzero_with_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let world = setup_world(dir.path());
    let config = dir.path().join("budget.toml");
    write_config(&config, &world.kb_path, &world.index_path, "[llm.budget]\nmax_requests = 5\n");

    let out_dir = dir.path().join("out");
    let out = run_expect_failure(entlink_cmd().args([
        "disambiguate",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        world.clean_corpus_path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("partial run"), "stderr: {stderr}");

    // Five granted requests complete exactly two mentions (two calls each).
    assert_eq!(line_count(&out_dir.join("predictions.jsonl")), 2);
    let report = read_report(&out_dir.join("report.json"));
    assert!(report.partial);
    assert_eq!(report.run_stats.unwrap().mentions_processed, 2);
    assert!(!report.warnings.is_empty());
}

#[test]
fn qa_command_scores_the_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let world = setup_world(dir.path());
    let config = dir.path().join("qa.toml");
    write_config(&config, &world.kb_path, &world.index_path, "scripted_response = \"B.\"\n");

    let answers_path = dir.path().join("answers.json");
    let stdout = run_ok(entlink_cmd().args([
        "qa",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        fixture("qa.json").to_str().unwrap(),
        "--out",
        answers_path.to_str().unwrap(),
    ]));
    assert!(stdout.contains("toy-qa: accuracy 0.5000 (2/4 correct)"), "stdout: {stdout}");

    let answers: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&answers_path).unwrap()).unwrap();
    assert_eq!(answers["dataset"], "toy-qa");
    assert_eq!(answers["accuracy"], 0.5);
    assert_eq!(answers["answers"].as_array().unwrap().len(), 4);
    assert_eq!(answers["answers"][0]["predicted"], "B");
    assert_eq!(answers["answers"][0]["raw_response"], "B.");
}

#[test]
fn qa_rejects_an_empty_benchmark() {
    let out = run_expect_failure(entlink_cmd().args([
        "qa",
        "--dataset",
        fixture("qa_empty.json").to_str().unwrap(),
    ]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("empty"), "stderr: {stderr}");
}

#[test]
fn build_instructions_exports_verifiable_chat_records() {
    use sha2::{Digest, Sha256};

    let dir = tempfile::tempdir().unwrap();
    let world = setup_world(dir.path());
    let train = dir.path().join("train.jsonl");
    let stdout = run_ok(entlink_cmd().args([
        "build-instructions",
        "--config",
        world.config_path.to_str().unwrap(),
        "--dataset",
        world.clean_corpus_path.to_str().unwrap(),
        "--out",
        train.to_str().unwrap(),
    ]));
    assert!(
        stdout.contains("12 records | skipped 0 mentions without a resolvable gold"),
        "stdout: {stdout}"
    );

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("train.jsonl.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["record_count"], 12);
    assert_eq!(manifest["base_model"], "gpt-3.5-turbo");
    assert_eq!(manifest["epochs"], 1);
    let recomputed = hex::encode(Sha256::digest(fs::read(&train).unwrap()));
    assert_eq!(manifest["sha256"], recomputed.as_str());
    assert!(stdout.contains(&format!("sha256 {recomputed}")));

    let text = fs::read_to_string(&train).unwrap();
    let mut outputs = Vec::new();
    for line in text.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        let messages = record["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 3);
        assert_eq!(messages[0]["role"], "system");
        assert_eq!(messages[1]["role"], "user");
        assert_eq!(messages[2]["role"], "assistant");
        assert!(messages[1]["content"].as_str().unwrap().contains("Candidates:"));
        outputs.push(messages[2]["content"].as_str().unwrap().to_string());
    }
    let clean = common::clean_dataset();
    let golds: Vec<String> =
        clean.iter_mentions().map(|(_, m)| m.gold_entity.clone().unwrap()).collect();
    assert_eq!(outputs, golds);

    // Free-form export drops the candidate list from every input.
    let free = dir.path().join("free.jsonl");
    run_ok(entlink_cmd().args([
        "build-instructions",
        "--config",
        world.config_path.to_str().unwrap(),
        "--dataset",
        world.clean_corpus_path.to_str().unwrap(),
        "--out",
        free.to_str().unwrap(),
        "--no-candidates",
    ]));
    for line in fs::read_to_string(&free).unwrap().lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(!record["messages"][1]["content"].as_str().unwrap().contains("Candidates:"));
    }
}

#[test]
fn missing_paths_produce_actionable_errors() {
    let dir = tempfile::tempdir().unwrap();
    let world = setup_world(dir.path());
    let out = run_expect_failure(entlink_cmd().args([
        "disambiguate",
        "--dataset",
        world.clean_corpus_path.to_str().unwrap(),
    ]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("a knowledge base is required: pass --kb or set kb_path"),
        "stderr: {stderr}"
    );
}
