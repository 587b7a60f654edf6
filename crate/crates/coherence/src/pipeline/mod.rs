//! CLI orchestration: load datasets and rollouts, drive the deterministic
//! audit and the judge, compute metrics at each K, and persist reports.

mod report;

pub use report::{
    emit_calibration, emit_report, load_report, AuditReport, EvalReport, JudgmentRef,
    KMetricsReport, ModelReport, ProblemKSummary, ProblemReport, ReportError, ResponseReport,
    StepReport,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::judge::{
    CacheKey, ChatTransport, JudgeClient, JudgeConfig, JudgeError, JudgmentCache,
};
use crate::metrics::{
    coherence_outcome, confusion_matrices, correctness_bits, judge_calibration, CalibrationRecord,
    CalibrationReport, HumanLabel, MetricsError, ProblemKEval,
};
use crate::model::{
    parse_gold, Judgment, ModelId, Pattern, ProblemRecord, ResponseTrace, RolloutSet,
};
use crate::steps::audit_traces;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dataset {path} is empty")]
    EmptyDataset { path: PathBuf },
    #[error("{failed} of {total} lines in {path} failed to parse (>1%); first failure at line {first_line}: {first_error}")]
    TooManyBadLines {
        path: PathBuf,
        failed: usize,
        total: usize,
        first_line: usize,
        first_error: String,
    },
    #[error("{path} line {line}: {message}")]
    BadLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate problem id {id:?} at {path} line {line}")]
    DuplicateId {
        path: PathBuf,
        id: String,
        line: usize,
    },
    #[error("duplicate sample (problem {problem_id:?}, sample_index {sample_index}) in {path}")]
    DuplicateSample {
        path: PathBuf,
        problem_id: String,
        sample_index: usize,
    },
    #[error("non-uniform k in {path}: problem {problem_id:?} has {found} samples, expected {expected}")]
    NonUniformK {
        path: PathBuf,
        problem_id: String,
        found: usize,
        expected: usize,
    },
    #[error("problem {problem_id:?} in {path}: sample indices must cover 0..k-1, found {found:?}")]
    BadSampleIndices {
        path: PathBuf,
        problem_id: String,
        found: Vec<usize>,
    },
    #[error("{model_id} rollouts are missing {count} gold problems (first: {first:?})")]
    MissingRollouts {
        model_id: ModelId,
        count: usize,
        first: String,
    },
    #[error("{model_id} rollouts contain {count} problems not in the gold dataset (first: {first:?})")]
    UnknownProblems {
        model_id: ModelId,
        count: usize,
        first: String,
    },
    #[error("annotation at {path} line {line} has no usable human label: {found:?}")]
    UnlabeledRecord {
        path: PathBuf,
        line: usize,
        found: String,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("cache incomplete: {} judgments missing in offline mode (first key: {})",
            .missing.len(), .missing.first().map_or("-", |k| k.as_str()))]
    CacheIncomplete { missing: Vec<String> },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot open cache {path}: {source}")]
    Cache {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 judge transport, 5 cache
    /// incomplete.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Metrics(_) => 3,
            PipelineError::Judge(_) => 4,
            PipelineError::CacheIncomplete { .. } => 5,
            PipelineError::Report(_) | PipelineError::Cache { .. } => 3,
        }
    }
}

/// Everything one evaluation run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gold_path: PathBuf,
    pub base_path: PathBuf,
    pub rl_path: PathBuf,
    pub cache_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub k_values: Vec<usize>,
    pub judge: JudgeConfig,
    /// Never open a network connection; every needed judgment must be cached.
    pub offline: bool,
    /// Judge incorrect responses too (coherence only needs correct ones).
    pub judge_all: bool,
}

impl RunConfig {
    pub fn new(
        gold_path: impl Into<PathBuf>,
        base_path: impl Into<PathBuf>,
        rl_path: impl Into<PathBuf>,
        out_dir: impl Into<PathBuf>,
    ) -> RunConfig {
        RunConfig {
            gold_path: gold_path.into(),
            base_path: base_path.into(),
            rl_path: rl_path.into(),
            cache_path: None,
            out_dir: out_dir.into(),
            k_values: vec![1, 4, 16],
            judge: JudgeConfig::default(),
            offline: false,
            judge_all: false,
        }
    }

    fn validate(&self) -> Result<Vec<usize>, PipelineError> {
        if self.k_values.is_empty() {
            return Err(PipelineError::Config("no K values given".into()));
        }
        if self.k_values.contains(&0) {
            return Err(PipelineError::Config("K values must be positive".into()));
        }
        self.judge.validate().map_err(PipelineError::Config)?;
        let mut ks = self.k_values.clone();
        ks.sort_unstable();
        ks.dedup();
        Ok(ks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug)]
pub struct GoldDataset {
    pub records: Vec<ProblemRecord>,
    pub skipped: Vec<LineIssue>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn value_to_id(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Load a gold dataset: JSON lines with `question` and `answer` fields and
/// an optional `id` (line numbers otherwise). Per-line failures are
/// collected and skipped; the run aborts when more than 1% of lines fail.
pub fn load_gold(path: &Path) -> Result<GoldDataset, DataError> {
    #[derive(Deserialize)]
    struct GoldLine {
        id: Option<Value>,
        question: String,
        answer: String,
    }

    let lines = read_lines(path)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    let mut data_lines = 0usize;

    for (number, line) in lines.iter().enumerate() {
        let line_no = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        data_lines += 1;
        let parsed: Result<GoldLine, _> = serde_json::from_str(line);
        let gold_line = match parsed {
            Ok(g) => g,
            Err(err) => {
                skipped.push(LineIssue {
                    line: line_no,
                    message: format!("invalid JSON: {err}"),
                });
                continue;
            }
        };
        let id = match gold_line.id.as_ref() {
            Some(value) => match value_to_id(value) {
                Some(id) => id,
                None => {
                    skipped.push(LineIssue {
                        line: line_no,
                        message: "id must be a string or number".into(),
                    });
                    continue;
                }
            },
            None => line_no.to_string(),
        };
        let gold_answer = match parse_gold(&gold_line.answer) {
            Ok(answer) => answer,
            Err(err) => {
                skipped.push(LineIssue {
                    line: line_no,
                    message: err.to_string(),
                });
                continue;
            }
        };
        if seen_ids.insert(id.clone(), line_no).is_some() {
            return Err(DataError::DuplicateId {
                path: path.to_path_buf(),
                id,
                line: line_no,
            });
        }
        records.push(ProblemRecord {
            id,
            question: gold_line.question,
            gold_answer,
            gold_raw: gold_line.answer,
        });
    }

    if data_lines == 0 {
        return Err(DataError::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    if skipped.len() * 100 > data_lines {
        let first = skipped.first().expect("non-empty skipped");
        return Err(DataError::TooManyBadLines {
            path: path.to_path_buf(),
            failed: skipped.len(),
            total: data_lines,
            first_line: first.line,
            first_error: first.message.clone(),
        });
    }
    Ok(GoldDataset { records, skipped })
}

/// Load model rollouts: JSON lines of {problem_id, sample_index, text},
/// grouped by problem and ordered by sample index. k is inferred as the
/// uniform group size; gaps, duplicates, and ragged groups are errors.
pub fn load_rollouts(
    path: &Path,
    model_id: ModelId,
) -> Result<BTreeMap<String, RolloutSet>, DataError> {
    #[derive(Deserialize)]
    struct RolloutLine {
        problem_id: Value,
        sample_index: usize,
        text: String,
    }

    let lines = read_lines(path)?;
    let mut groups: BTreeMap<String, BTreeMap<usize, String>> = BTreeMap::new();
    let mut data_lines = 0usize;

    for (number, line) in lines.iter().enumerate() {
        let line_no = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        data_lines += 1;
        let parsed: RolloutLine =
            serde_json::from_str(line).map_err(|err| DataError::BadLine {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("invalid JSON: {err}"),
            })?;
        let problem_id = value_to_id(&parsed.problem_id).ok_or_else(|| DataError::BadLine {
            path: path.to_path_buf(),
            line: line_no,
            message: "problem_id must be a string or number".into(),
        })?;
        let group = groups.entry(problem_id.clone()).or_default();
        if group.insert(parsed.sample_index, parsed.text).is_some() {
            return Err(DataError::DuplicateSample {
                path: path.to_path_buf(),
                problem_id,
                sample_index: parsed.sample_index,
            });
        }
    }

    if data_lines == 0 {
        return Err(DataError::EmptyDataset {
            path: path.to_path_buf(),
        });
    }

    let k = groups.values().next().expect("non-empty groups").len();
    let mut rollouts = BTreeMap::new();
    for (problem_id, group) in groups {
        if group.len() != k {
            return Err(DataError::NonUniformK {
                path: path.to_path_buf(),
                problem_id,
                found: group.len(),
                expected: k,
            });
        }
        let indices: Vec<usize> = group.keys().copied().collect();
        if indices.iter().enumerate().any(|(want, &got)| want != got) {
            return Err(DataError::BadSampleIndices {
                path: path.to_path_buf(),
                problem_id,
                found: indices,
            });
        }
        let responses: Vec<ResponseTrace> = group
            .into_iter()
            .map(|(index, text)| ResponseTrace::from_raw(problem_id.clone(), model_id, index, text))
            .collect();
        let set = RolloutSet::new(problem_id.clone(), model_id, responses)
            .expect("validated rollout shape");
        rollouts.insert(problem_id, set);
    }
    Ok(rollouts)
}

fn check_coverage(
    gold: &[ProblemRecord],
    rollouts: &BTreeMap<String, RolloutSet>,
    model_id: ModelId,
) -> Result<(), DataError> {
    let gold_ids: HashSet<&str> = gold.iter().map(|p| p.id.as_str()).collect();
    let missing: Vec<&str> = gold
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| !rollouts.contains_key(*id))
        .collect();
    if let Some(first) = missing.first() {
        return Err(DataError::MissingRollouts {
            model_id,
            count: missing.len(),
            first: first.to_string(),
        });
    }
    let unknown: Vec<&String> = rollouts
        .keys()
        .filter(|id| !gold_ids.contains(id.as_str()))
        .collect();
    if let Some(first) = unknown.first() {
        return Err(DataError::UnknownProblems {
            model_id,
            count: unknown.len(),
            first: first.to_string(),
        });
    }
    Ok(())
}

/// Side statistics that deliberately stay out of the report files so that
/// warm-cache reruns are byte-identical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub network_calls: u64,
    pub cache_hits: usize,
    pub judged_responses: usize,
    pub skipped_gold_lines: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub stats: RunStats,
}

struct JudgeJob {
    problem_index: usize,
    model_id: ModelId,
    sample_index: usize,
    key: CacheKey,
}

/// Run the full evaluation with the transport chosen from the config (HTTP
/// online, nothing offline).
pub fn run_eval(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    run_eval_with_transport(config, None)
}

/// Run the full evaluation. `transport` overrides the HTTP transport (used
/// by tests and mock endpoints); offline mode never constructs or touches
/// any transport at all.
pub fn run_eval_with_transport(
    config: &RunConfig,
    transport: Option<Arc<dyn ChatTransport>>,
) -> Result<RunOutcome, PipelineError> {
    let k_values = config.validate()?;

    let gold = load_gold(&config.gold_path)?;
    let base_rollouts = load_rollouts(&config.base_path, ModelId::Base)?;
    let rl_rollouts = load_rollouts(&config.rl_path, ModelId::Rl)?;
    check_coverage(&gold.records, &base_rollouts, ModelId::Base)?;
    check_coverage(&gold.records, &rl_rollouts, ModelId::Rl)?;

    let k_available = base_rollouts
        .values()
        .map(RolloutSet::k)
        .chain(rl_rollouts.values().map(RolloutSet::k))
        .min()
        .unwrap_or(0);
    if let Some(&too_big) = k_values.iter().find(|&&k| k > k_available) {
        return Err(PipelineError::Config(format!(
            "K={too_big} exceeds the {k_available} samples available per problem"
        )));
    }

    let cache = match &config.cache_path {
        Some(path) => JudgmentCache::open(path).map_err(|source| PipelineError::Cache {
            path: path.clone(),
            source,
        })?,
        None => JudgmentCache::in_memory(),
    };

    // Deterministic audit of every response, in parallel.
    let mut texts: Vec<&str> = Vec::new();
    for problem in &gold.records {
        for rollouts in [&base_rollouts, &rl_rollouts] {
            for response in rollouts[&problem.id].responses() {
                texts.push(&response.raw_text);
            }
        }
    }
    let all_audits = audit_traces(&texts);
    let mut audit_cursor = all_audits.into_iter();

    let mut problem_reports: Vec<ProblemReport> = Vec::with_capacity(gold.records.len());
    let mut correctness: HashMap<(usize, ModelId), Vec<bool>> = HashMap::new();
    for (problem_index, problem) in gold.records.iter().enumerate() {
        let mut model_reports = Vec::new();
        for (model_id, rollouts) in [
            (ModelId::Base, &base_rollouts),
            (ModelId::Rl, &rl_rollouts),
        ] {
            let rollout = &rollouts[&problem.id];
            let bits = correctness_bits(rollout.responses(), &problem.gold_answer);
            let responses = rollout
                .responses()
                .iter()
                .zip(&bits)
                .map(|(response, &correct)| ResponseReport {
                    sample_index: response.sample_index,
                    final_answer: response.final_answer().cloned(),
                    correct,
                    audit: AuditReport::from(&audit_cursor.next().expect("audit per response")),
                    judgment: None,
                })
                .collect();
            correctness.insert((problem_index, model_id), bits);
            model_reports.push(ModelReport {
                k: rollout.k(),
                responses,
            });
        }
        let rl_report = model_reports.pop().expect("rl report");
        let base_report = model_reports.pop().expect("base report");
        problem_reports.push(ProblemReport {
            problem_id: problem.id.clone(),
            gold_answer: problem.gold_answer.clone(),
            base: base_report,
            rl: rl_report,
            per_k: Vec::new(),
        });
    }

    // Judge correct responses (or everything with --judge-all).
    let mut jobs: Vec<JudgeJob> = Vec::new();
    for (problem_index, problem) in gold.records.iter().enumerate() {
        for (model_id, rollouts) in [
            (ModelId::Base, &base_rollouts),
            (ModelId::Rl, &rl_rollouts),
        ] {
            let bits = &correctness[&(problem_index, model_id)];
            for (response, &correct) in rollouts[&problem.id].responses().iter().zip(bits) {
                if correct || config.judge_all {
                    jobs.push(JudgeJob {
                        problem_index,
                        model_id,
                        sample_index: response.sample_index,
                        key: CacheKey::compute(
                            &config.judge.prompt_version,
                            &config.judge.model_name,
                            &problem.question,
                            &response.raw_text,
                        ),
                    });
                }
            }
        }
    }

    let cache_hits = jobs.iter().filter(|job| cache.contains(&job.key)).count();
    let mut stats = RunStats {
        cache_hits,
        judged_responses: jobs.len(),
        skipped_gold_lines: gold.skipped.len(),
        ..RunStats::default()
    };

    let judgments: Vec<Judgment> = if config.offline {
        let missing: Vec<String> = jobs
            .iter()
            .filter(|job| !cache.contains(&job.key))
            .map(|job| job.key.as_str().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(PipelineError::CacheIncomplete { missing });
        }
        jobs.iter()
            .map(|job| cache.get(&job.key).expect("checked above"))
            .collect()
    } else {
        let client = match transport {
            Some(transport) => JudgeClient::new(config.judge.clone(), transport),
            None => JudgeClient::over_http(config.judge.clone()),
        };
        let requests: Vec<(&str, &str)> = jobs
            .iter()
            .map(|job| {
                let problem = &gold.records[job.problem_index];
                let rollouts = match job.model_id {
                    ModelId::Base => &base_rollouts,
                    ModelId::Rl => &rl_rollouts,
                };
                let response = &rollouts[&problem.id].responses()[job.sample_index];
                (problem.question.as_str(), response.raw_text.as_str())
            })
            .collect();
        let judgments = client.judge_many(&requests, &cache)?;
        stats.network_calls = client.network_calls();
        judgments
    };

    // Attach judgments to the per-response reports and index them for the
    // coherence computation.
    let mut judgment_index: HashMap<(usize, ModelId, usize), Judgment> = HashMap::new();
    for (job, judgment) in jobs.iter().zip(judgments) {
        let problem_report = &mut problem_reports[job.problem_index];
        let model_report = match job.model_id {
            ModelId::Base => &mut problem_report.base,
            ModelId::Rl => &mut problem_report.rl,
        };
        model_report.responses[job.sample_index].judgment = Some(JudgmentRef {
            cache_key: job.key.as_str().to_string(),
            status: judgment.status,
            tags: judgment.tags.clone(),
            rationale: judgment.rationale.clone(),
            retry_count: judgment.retry_count,
        });
        judgment_index.insert((job.problem_index, job.model_id, job.sample_index), judgment);
    }

    // Per-K evaluation using prefix subsets.
    let mut per_k_reports = Vec::new();
    for &k in &k_values {
        let mut evals: Vec<ProblemKEval> = Vec::with_capacity(gold.records.len());
        for (problem_index, problem) in gold.records.iter().enumerate() {
            let mut pass = [false; 2];
            let mut coherence = [crate::model::CoherenceOutcome::Invalid; 2];
            for (slot, (model_id, rollouts)) in [
                (ModelId::Base, &base_rollouts),
                (ModelId::Rl, &rl_rollouts),
            ]
            .into_iter()
            .enumerate()
            {
                let rollout = &rollouts[&problem.id];
                let prefix = rollout.prefix(k);
                let judgments: Vec<Option<Judgment>> = prefix
                    .iter()
                    .map(|r| {
                        judgment_index
                            .get(&(problem_index, model_id, r.sample_index))
                            .cloned()
                    })
                    .collect();
                pass[slot] = crate::metrics::any_correct(prefix, &problem.gold_answer);
                coherence[slot] = coherence_outcome(prefix, &problem.gold_answer, &judgments)?;
            }
            let pattern = Pattern::classify(pass[0], pass[1]);
            problem_reports[problem_index].per_k.push(ProblemKSummary {
                k,
                base_pass: pass[0],
                rl_pass: pass[1],
                pattern,
                base_coherence: coherence[0],
                rl_coherence: coherence[1],
            });
            evals.push(ProblemKEval {
                problem_id: problem.id.clone(),
                k,
                base_pass: pass[0],
                rl_pass: pass[1],
                pattern,
                base_coherence: coherence[0],
                rl_coherence: coherence[1],
            });
        }

        let total = evals.len().max(1);
        let summary = confusion_matrices(&evals, k);
        let pattern_counts = Pattern::ALL
            .iter()
            .map(|&p| (p, evals.iter().filter(|e| e.pattern == p).count()))
            .collect();
        per_k_reports.push(KMetricsReport {
            k,
            base_pass_rate: evals.iter().filter(|e| e.base_pass).count() as f64 / total as f64,
            rl_pass_rate: evals.iter().filter(|e| e.rl_pass).count() as f64 / total as f64,
            pattern_counts,
            matrices: summary.matrices,
            empty_patterns: summary.empty_patterns,
        });
    }

    let report = EvalReport {
        k_values,
        judge_model: config.judge.model_name.clone(),
        prompt_version: config.judge.prompt_version.clone(),
        judged_all: config.judge_all,
        problems: problem_reports,
        per_k: per_k_reports,
    };
    Ok(RunOutcome { report, stats })
}

/// Deterministic-only audit over one rollouts file; no judge involved.
pub fn run_audit(
    rollouts_path: &Path,
    model_id: ModelId,
    out_dir: &Path,
) -> Result<AuditRunSummary, PipelineError> {
    let rollouts = load_rollouts(rollouts_path, model_id)?;
    fs::create_dir_all(out_dir).map_err(|source| {
        PipelineError::Report(ReportError::Io {
            path: out_dir.to_path_buf(),
            source,
        })
    })?;

    let mut texts: Vec<&str> = Vec::new();
    for rollout in rollouts.values() {
        for response in rollout.responses() {
            texts.push(&response.raw_text);
        }
    }
    let audits = audit_traces(&texts);
    let mut audit_iter = audits.iter();

    let mut lines = String::new();
    let mut summary = AuditRunSummary::default();
    for rollout in rollouts.values() {
        for response in rollout.responses() {
            let audit = audit_iter.next().expect("audit per response");
            let report = AuditReport::from(audit);
            summary.responses += 1;
            summary.total_steps += report.steps.len();
            summary.wrong_steps += report.calculator_errors;
            if report.calculator_errors > 0 {
                summary.responses_with_calculator_errors += 1;
            }
            if report.format_error {
                summary.format_errors += 1;
            }
            let record = serde_json::json!({
                "problem_id": response.problem_id,
                "model_id": response.model_id,
                "sample_index": response.sample_index,
                "final_answer": response.final_answer(),
                "audit": report,
            });
            lines.push_str(&serde_json::to_string(&record).expect("audit record serializes"));
            lines.push('\n');
        }
    }

    let io_err = |path: &Path, source| {
        PipelineError::Report(ReportError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let jsonl_path = out_dir.join("audit.jsonl");
    fs::write(&jsonl_path, lines).map_err(|e| io_err(&jsonl_path, e))?;
    let summary_path = out_dir.join("audit_summary.json");
    let mut summary_json =
        serde_json::to_string_pretty(&summary).expect("summary serializes");
    summary_json.push('\n');
    fs::write(&summary_path, summary_json).map_err(|e| io_err(&summary_path, e))?;
    Ok(summary)
}

#[derive(Debug, Default, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AuditRunSummary {
    pub responses: usize,
    pub responses_with_calculator_errors: usize,
    pub total_steps: usize,
    pub wrong_steps: usize,
    pub format_errors: usize,
}

/// One human-annotated response loaded from a JSONL annotations file.
#[derive(Debug, Clone)]
pub struct Annotation {
    pub problem: String,
    pub response: String,
    pub human: HumanLabel,
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>, DataError> {
    #[derive(Deserialize)]
    struct AnnotationLine {
        problem: String,
        response: String,
        human_label: Option<String>,
    }

    let lines = read_lines(path)?;
    let mut annotations = Vec::new();
    for (number, line) in lines.iter().enumerate() {
        let line_no = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AnnotationLine =
            serde_json::from_str(line).map_err(|err| DataError::BadLine {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("invalid JSON: {err}"),
            })?;
        let raw_label = parsed.human_label.unwrap_or_default();
        let human = HumanLabel::parse(&raw_label).ok_or_else(|| DataError::UnlabeledRecord {
            path: path.to_path_buf(),
            line: line_no,
            found: raw_label.clone(),
        })?;
        annotations.push(Annotation {
            problem: parsed.problem,
            response: parsed.response,
            human,
        });
    }
    if annotations.is_empty() {
        return Err(DataError::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    Ok(annotations)
}

/// Settings for the calibration command.
#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    pub annotations_path: PathBuf,
    pub cache_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub judge: JudgeConfig,
    pub offline: bool,
}

/// Judge every annotated response (via cache when possible) and score the
/// judge against the human labels.
pub fn run_calibration(
    config: &CalibrationConfig,
    transport: Option<Arc<dyn ChatTransport>>,
) -> Result<CalibrationReport, PipelineError> {
    config.judge.validate().map_err(PipelineError::Config)?;
    let annotations = load_annotations(&config.annotations_path)?;

    let cache = match &config.cache_path {
        Some(path) => JudgmentCache::open(path).map_err(|source| PipelineError::Cache {
            path: path.clone(),
            source,
        })?,
        None => JudgmentCache::in_memory(),
    };

    let judgments: Vec<Judgment> = if config.offline {
        let keys: Vec<CacheKey> = annotations
            .iter()
            .map(|a| {
                CacheKey::compute(
                    &config.judge.prompt_version,
                    &config.judge.model_name,
                    &a.problem,
                    &a.response,
                )
            })
            .collect();
        let missing: Vec<String> = keys
            .iter()
            .filter(|key| !cache.contains(key))
            .map(|key| key.as_str().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(PipelineError::CacheIncomplete { missing });
        }
        keys.iter()
            .map(|key| cache.get(key).expect("checked above"))
            .collect()
    } else {
        let client = match transport {
            Some(transport) => JudgeClient::new(config.judge.clone(), transport),
            None => JudgeClient::over_http(config.judge.clone()),
        };
        let jobs: Vec<(&str, &str)> = annotations
            .iter()
            .map(|a| (a.problem.as_str(), a.response.as_str()))
            .collect();
        client.judge_many(&jobs, &cache)?
    };

    let records: Vec<CalibrationRecord> = annotations
        .iter()
        .zip(judgments)
        .map(|(annotation, judgment)| CalibrationRecord {
            response_text: annotation.response.clone(),
            human: annotation.human,
            judge_tags: judgment.tags,
            judge_status: judgment.status,
        })
        .collect();
    let report = judge_calibration(&records);
    emit_calibration(&report, &config.out_dir)?;
    Ok(report)
}
