//! End-to-end pipeline behavior beyond the acceptance gate: offline mode,
//! loaders, report files, and calibration plumbing.

mod common;

use std::sync::Arc;

use coherence::judge::{JudgmentCache, TransportError};
use coherence::model::{ErrorTag, ModelId, Pattern};
use coherence::pipeline::{
    emit_report, load_annotations, load_gold, load_report, load_rollouts, run_audit,
    run_calibration, run_eval_with_transport, CalibrationConfig, DataError, PipelineError,
    RunConfig,
};

use common::{
    fifty_problem_plan, judgment_json, write_corpus, write_lines, MarkerTransport, PanicTransport,
    ProblemPlan, SequenceTransport,
};

fn small_corpus(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let plans: Vec<ProblemPlan> = (0..6)
        .map(|i| ProblemPlan {
            id: format!("p{i}"),
            gold: 10 + i,
            base: vec![(i % 2 == 0, true), (false, false)],
            rl: vec![(true, i != 3), (false, false)],
        })
        .collect();
    write_corpus(dir, &plans)
}

#[test]
fn offline_mode_with_cold_cache_reports_missing_keys() {
    let dir = tempfile::tempdir().unwrap();
    let (gold, base, rl) = small_corpus(dir.path());

    let mut config = RunConfig::new(&gold, &base, &rl, dir.path().join("out"));
    config.k_values = vec![1, 2];
    config.cache_path = Some(dir.path().join("cache.jsonl"));
    config.offline = true;

    let transport = Arc::new(PanicTransport::new());
    let err = run_eval_with_transport(&config, Some(transport.clone())).unwrap_err();
    match err {
        PipelineError::CacheIncomplete { missing } => {
            // every correct response needs a judgment; 3 base + 6 rl
            assert_eq!(missing.len(), 9);
        }
        other => panic!("expected CacheIncomplete, got {other}"),
    }
    assert_eq!(transport.calls(), 0, "offline mode never touches the network");
}

#[test]
fn offline_mode_with_warm_cache_completes() {
    let dir = tempfile::tempdir().unwrap();
    let (gold, base, rl) = small_corpus(dir.path());
    let cache = dir.path().join("cache.jsonl");

    let mut config = RunConfig::new(&gold, &base, &rl, dir.path().join("out"));
    config.k_values = vec![1, 2];
    config.cache_path = Some(cache);

    let online = run_eval_with_transport(&config, Some(Arc::new(MarkerTransport::new()))).unwrap();

    config.offline = true;
    let transport = Arc::new(PanicTransport::new());
    let offline = run_eval_with_transport(&config, Some(transport.clone())).unwrap();
    assert_eq!(transport.calls(), 0);
    assert_eq!(offline.stats.network_calls, 0);
    assert_eq!(offline.report, online.report);
}

#[test]
fn report_files_round_trip_and_have_the_stated_shape() {
    let dir = tempfile::tempdir().unwrap();
    let plans = fifty_problem_plan(4);
    let (gold, base, rl) = write_corpus(dir.path(), &plans);

    let mut config = RunConfig::new(&gold, &base, &rl, dir.path().join("out"));
    config.k_values = vec![1, 4];
    let outcome = run_eval_with_transport(&config, Some(Arc::new(MarkerTransport::new()))).unwrap();

    let out_dir = dir.path().join("out");
    let written = emit_report(&outcome.report, &out_dir).unwrap();
    assert_eq!(written.len(), 3);

    // report.json round-trips through the loader to an equal report
    let loaded = load_report(&out_dir.join("report.json")).unwrap();
    assert_eq!(loaded, outcome.report);

    // matrices.csv: header + 9 rows per (K, populated pattern); patterns
    // 00/01/11 are populated at both K values, 10 is empty
    let csv = std::fs::read_to_string(out_dir.join("matrices.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,pattern,base_outcome,rl_outcome,count");
    assert_eq!(lines.len() - 1, 9 * 3 * 2);

    // report.md: one coherence-rate line per (pattern, model, K)
    let md = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    for k in [1, 4] {
        for pattern in Pattern::ALL {
            for model in ["base", "rl"] {
                let needle = format!("- K={k} pattern {pattern} {model}:");
                assert_eq!(
                    md.matches(&needle).count(),
                    1,
                    "expected exactly one line {needle:?}"
                );
            }
        }
    }

    // every response appears exactly once, judged ones carry cache keys
    let total_responses: usize = outcome
        .report
        .problems
        .iter()
        .map(|p| p.base.responses.len() + p.rl.responses.len())
        .sum();
    assert_eq!(total_responses, 50 * 4 * 2);
    for problem in &outcome.report.problems {
        for response in problem.base.responses.iter().chain(&problem.rl.responses) {
            if response.correct {
                let judgment = response.judgment.as_ref().expect("correct responses judged");
                assert_eq!(judgment.cache_key.len(), 64, "sha-256 hex key");
            } else {
                assert!(response.judgment.is_none(), "default run judges only correct");
            }
        }
    }
}

#[test]
fn judge_all_flag_judges_incorrect_responses_too() {
    let dir = tempfile::tempdir().unwrap();
    let (gold, base, rl) = small_corpus(dir.path());
    let mut config = RunConfig::new(&gold, &base, &rl, dir.path().join("out"));
    config.k_values = vec![2];
    config.judge_all = true;

    let outcome = run_eval_with_transport(&config, Some(Arc::new(MarkerTransport::new()))).unwrap();
    for problem in &outcome.report.problems {
        for response in problem.base.responses.iter().chain(&problem.rl.responses) {
            assert!(response.judgment.is_some());
        }
    }
    assert_eq!(outcome.stats.judged_responses, 6 * 2 * 2);
}

#[test]
fn load_gold_counts_and_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gold.jsonl");

    // a GSM8K-test-sized file loads completely
    let lines: Vec<String> = (0..1319)
        .map(|i| {
            serde_json::json!({
                "question": format!("q{i}"),
                "answer": format!("step\n#### {i}"),
            })
            .to_string()
        })
        .collect();
    write_lines(&path, &lines);
    let dataset = load_gold(&path).unwrap();
    assert_eq!(dataset.records.len(), 1319);
    assert!(dataset.skipped.is_empty());
    // ids default to line numbers
    assert_eq!(dataset.records[0].id, "1");
    assert_eq!(dataset.records[1318].id, "1319");

    // a line without the marker is recorded and skipped (1 of 1319 < 1%)
    let mut with_bad = lines.clone();
    with_bad[7] = serde_json::json!({"question": "q", "answer": "no marker"}).to_string();
    write_lines(&path, &with_bad);
    let dataset = load_gold(&path).unwrap();
    assert_eq!(dataset.records.len(), 1318);
    assert_eq!(dataset.skipped.len(), 1);
    assert_eq!(dataset.skipped[0].line, 8);
    assert!(dataset.skipped[0].message.contains("####"));

    // empty file
    write_lines(&path, &[String::new()]);
    assert!(matches!(
        load_gold(&path),
        Err(DataError::EmptyDataset { .. })
    ));

    // >1% bad lines aborts
    let mostly_bad: Vec<String> = (0..50)
        .map(|i| {
            if i < 2 {
                "not json".to_string()
            } else {
                serde_json::json!({"question": "q", "answer": format!("#### {i}")}).to_string()
            }
        })
        .collect();
    write_lines(&path, &mostly_bad);
    assert!(matches!(
        load_gold(&path),
        Err(DataError::TooManyBadLines { failed: 2, total: 50, .. })
    ));

    // duplicate explicit ids abort
    let dup: Vec<String> = (0..2)
        .map(|_| {
            serde_json::json!({"id": "same", "question": "q", "answer": "#### 1"}).to_string()
        })
        .collect();
    write_lines(&path, &dup);
    assert!(matches!(load_gold(&path), Err(DataError::DuplicateId { .. })));
}

#[test]
fn load_rollouts_grouping_and_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rollouts.jsonl");

    let mut lines = Vec::new();
    for p in 0..5 {
        for s in 0..16 {
            lines.push(
                serde_json::json!({
                    "problem_id": format!("p{p}"),
                    "sample_index": s,
                    "text": format!("\\boxed{{{s}}}"),
                })
                .to_string(),
            );
        }
    }
    write_lines(&path, &lines);
    let rollouts = load_rollouts(&path, ModelId::Base).unwrap();
    assert_eq!(rollouts.len(), 5);
    assert!(rollouts.values().all(|r| r.k() == 16));
    assert!(rollouts.values().all(|r| r.model_id() == ModelId::Base));

    // one short group: NonUniformK
    let short: Vec<String> = lines
        .iter()
        .filter(|l| !l.contains(r#""problem_id":"p3","sample_index":15"#))
        .cloned()
        .collect();
    assert_eq!(short.len(), lines.len() - 1);
    write_lines(&path, &short);
    assert!(matches!(
        load_rollouts(&path, ModelId::Base),
        Err(DataError::NonUniformK { .. })
    ));

    // duplicate (problem, sample)
    let mut dup = lines.clone();
    dup.push(lines[0].clone());
    write_lines(&path, &dup);
    assert!(matches!(
        load_rollouts(&path, ModelId::Base),
        Err(DataError::DuplicateSample { .. })
    ));

    // a gap in sample indices
    let gapped: Vec<String> = vec![
        serde_json::json!({"problem_id": "p", "sample_index": 0, "text": "t"}).to_string(),
        serde_json::json!({"problem_id": "p", "sample_index": 2, "text": "t"}).to_string(),
    ];
    write_lines(&path, &gapped);
    assert!(matches!(
        load_rollouts(&path, ModelId::Base),
        Err(DataError::BadSampleIndices { .. })
    ));
}

#[test]
fn eval_rejects_k_beyond_available_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (gold, base, rl) = small_corpus(dir.path());
    let mut config = RunConfig::new(&gold, &base, &rl, dir.path().join("out"));
    config.k_values = vec![1, 16];
    let err = run_eval_with_transport(&config, Some(Arc::new(PanicTransport::new()))).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn eval_rejects_rollout_coverage_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let (gold, base, rl) = small_corpus(dir.path());

    // drop one problem from the base rollouts
    let base_lines: Vec<String> = std::fs::read_to_string(&base)
        .unwrap()
        .lines()
        .filter(|l| !l.contains(r#""problem_id":"p2""#))
        .map(str::to_string)
        .collect();
    write_lines(&base, &base_lines);

    let mut config = RunConfig::new(&gold, &base, &rl, dir.path().join("out"));
    config.k_values = vec![1];
    let err = run_eval_with_transport(&config, Some(Arc::new(PanicTransport::new()))).unwrap_err();
    match err {
        PipelineError::Data(DataError::MissingRollouts { model_id, count, .. }) => {
            assert_eq!(model_id, ModelId::Base);
            assert_eq!(count, 1);
        }
        other => panic!("expected MissingRollouts, got {other}"),
    }
}

#[test]
fn audit_command_writes_jsonl_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rollouts.jsonl");
    let lines = vec![
        serde_json::json!({
            "problem_id": "p0", "sample_index": 0,
            "text": "5 × 6 = 30. Total: 30 + 6 = 36. \\boxed{36}"
        })
        .to_string(),
        serde_json::json!({
            "problem_id": "p0", "sample_index": 1,
            "text": "5 × 6 = 31. Total: 31 + 6 = 37 with no box"
        })
        .to_string(),
    ];
    write_lines(&path, &lines);

    let out = dir.path().join("audit-out");
    let summary = run_audit(&path, ModelId::Base, &out).unwrap();
    assert_eq!(summary.responses, 2);
    assert_eq!(summary.total_steps, 4);
    assert_eq!(summary.wrong_steps, 1);
    assert_eq!(summary.responses_with_calculator_errors, 1);
    assert_eq!(summary.format_errors, 1);

    let jsonl = std::fs::read_to_string(out.join("audit.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(first["problem_id"], "p0");
    assert_eq!(first["audit"]["boxed_present"], true);

    let summary_json = std::fs::read_to_string(out.join("audit_summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&summary_json).unwrap();
    assert_eq!(parsed["responses"], 2);
}

#[test]
fn calibration_pipeline_with_scripted_judge() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    let lines = vec![
        serde_json::json!({
            "problem": "q1", "response": "good trace", "human_label": "None"
        })
        .to_string(),
        serde_json::json!({
            "problem": "q2", "response": "rule slip", "human_label": "False Rule"
        })
        .to_string(),
        serde_json::json!({
            "problem": "q3", "response": "premise slip", "human_label": "False Premise"
        })
        .to_string(),
        serde_json::json!({
            "problem": "q4", "response": "arithmetic slip", "human_label": "Calculator Error"
        })
        .to_string(),
    ];
    write_lines(&annotations, &lines);

    // scripted judge: matches humans on q1/q2, disagrees on q3, garbage on q4
    let transport = SequenceTransport::new(vec![
        Ok(judgment_json(&[])),
        Ok(judgment_json(&["False Rule"])),
        Ok(judgment_json(&["Calculator Error"])),
        Ok("not json at all".into()),
        Ok("still not json".into()),
        Ok("nope".into()),
        Ok("no".into()),
    ]);

    let config = CalibrationConfig {
        annotations_path: annotations,
        cache_path: Some(dir.path().join("cache.jsonl")),
        out_dir: dir.path().join("calib-out"),
        judge: coherence::judge::JudgeConfig {
            endpoint_url: "http://mock".into(),
            model_name: "mock-judge".into(),
            max_in_flight: 1,
            retry_backoff_ms: 0,
            ..Default::default()
        },
        offline: false,
    };
    let report = run_calibration(&config, Some(Arc::new(transport))).unwrap();
    assert_eq!(report.total, 4);
    assert_eq!(report.matches_exact, 2);
    assert_eq!(report.accuracy_exact, 0.5);
    assert_eq!(report.unusable_judgments, 1);
    // q3: human False Premise (row 0), judged Calculator Error (col 2)
    assert_eq!(report.confusion[0][2], 1);

    let written = std::fs::read_to_string(dir.path().join("calib-out/calibration.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&written).unwrap();
    assert_eq!(parsed["total"], 4);

    // offline rerun straight from the cache matches
    let offline_config = CalibrationConfig {
        offline: true,
        out_dir: dir.path().join("calib-out2"),
        ..config
    };
    let rerun = run_calibration(&offline_config, Some(Arc::new(PanicTransport::new()))).unwrap();
    assert_eq!(rerun, report);
}

#[test]
fn annotations_loader_rejects_unlabeled_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotations.jsonl");
    write_lines(
        &path,
        &[serde_json::json!({"problem": "q", "response": "r", "human_label": "Hallucination"})
            .to_string()],
    );
    match load_annotations(&path) {
        Err(DataError::UnlabeledRecord { line, found, .. }) => {
            assert_eq!(line, 1);
            assert_eq!(found, "Hallucination");
        }
        other => panic!("expected UnlabeledRecord, got {other:?}"),
    }

    write_lines(
        &path,
        &[serde_json::json!({"problem": "q", "response": "r"}).to_string()],
    );
    assert!(matches!(
        load_annotations(&path),
        Err(DataError::UnlabeledRecord { .. })
    ));
}

#[test]
fn transport_failures_surface_with_exit_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let (gold, base, rl) = small_corpus(dir.path());
    let mut config = RunConfig::new(&gold, &base, &rl, dir.path().join("out"));
    config.k_values = vec![1];
    config.judge.max_retries = 1;
    config.judge.retry_backoff_ms = 0;
    config.judge.max_in_flight = 1;

    let transport = SequenceTransport::new(vec![
        Err(TransportError::Network("down".into())),
        Err(TransportError::Status(503)),
    ]);
    let err = run_eval_with_transport(&config, Some(Arc::new(transport))).unwrap_err();
    assert!(matches!(err, PipelineError::Judge(_)));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn cache_survives_between_runs_and_dedupes_identical_responses() {
    let dir = tempfile::tempdir().unwrap();
    // two problems share an identical question and response text → same key
    let gold = dir.path().join("gold.jsonl");
    write_lines(
        &gold,
        &[
            serde_json::json!({"id": "a", "question": "same q", "answer": "#### 1"}).to_string(),
            serde_json::json!({"id": "b", "question": "same q", "answer": "#### 1"}).to_string(),
        ],
    );
    let rollout_line = |id: &str| {
        serde_json::json!({"problem_id": id, "sample_index": 0, "text": "\\boxed{1}"}).to_string()
    };
    let base = dir.path().join("base.jsonl");
    write_lines(&base, &[rollout_line("a"), rollout_line("b")]);
    let rl = dir.path().join("rl.jsonl");
    write_lines(&rl, &[rollout_line("a"), rollout_line("b")]);

    let mut config = RunConfig::new(&gold, &base, &rl, dir.path().join("out"));
    config.k_values = vec![1];
    config.cache_path = Some(dir.path().join("cache.jsonl"));
    config.judge.max_in_flight = 1;

    let transport = Arc::new(MarkerTransport::new());
    let outcome = run_eval_with_transport(&config, Some(transport.clone())).unwrap();
    // 4 judged responses but only one distinct (question, response) pair
    assert_eq!(outcome.stats.judged_responses, 4);
    assert_eq!(transport.calls(), 1);

    let cache = JudgmentCache::open(dir.path().join("cache.jsonl")).unwrap();
    assert_eq!(cache.len(), 1);

    // judged responses all share the one cache key and Ok status
    let keys: Vec<&str> = outcome
        .report
        .problems
        .iter()
        .flat_map(|p| p.base.responses.iter().chain(&p.rl.responses))
        .filter_map(|r| r.judgment.as_ref())
        .map(|j| j.cache_key.as_str())
        .collect();
    assert_eq!(keys.len(), 4);
    assert!(keys.windows(2).all(|w| w[0] == w[1]));
    assert!(outcome
        .report
        .problems
        .iter()
        .flat_map(|p| p.base.responses.iter().chain(&p.rl.responses))
        .filter_map(|r| r.judgment.as_ref())
        .all(|j| j.tags == vec![ErrorTag::FalseRule]));
}
