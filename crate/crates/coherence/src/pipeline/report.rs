//! Report data model and file emission. Everything here is deterministic:
//! identical inputs and a warm judgment cache produce byte-identical
//! report.json, matrices.csv, and report.md.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CalibrationReport, ConfusionMatrix};
use crate::model::{Answer, CoherenceOutcome, ErrorTag, JudgmentStatus, Pattern};
use crate::steps::{DeterministicAudit, VerdictKind};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse report {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// Flattened audit of one step, as it appears in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub lhs: String,
    pub stated: Answer,
    pub computed: Option<Answer>,
    pub kind: VerdictKind,
    pub ok: bool,
    pub division_by_zero: bool,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub steps: Vec<StepReport>,
    pub calculator_errors: usize,
    pub format_error: bool,
    pub boxed_present: bool,
}

impl From<&DeterministicAudit> for AuditReport {
    fn from(audit: &DeterministicAudit) -> Self {
        AuditReport {
            steps: audit
                .steps
                .iter()
                .map(|v| StepReport {
                    lhs: v.step.lhs_text.clone(),
                    stated: v.step.stated.clone(),
                    computed: v.computed.clone(),
                    kind: v.kind,
                    ok: v.ok,
                    division_by_zero: v.division_by_zero,
                    span: v.step.span,
                })
                .collect(),
            calculator_errors: audit.calculator_errors,
            format_error: audit.format_error,
            boxed_present: audit.boxed_present,
        }
    }
}

/// What the judge said about one response, keyed into the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRef {
    pub cache_key: String,
    pub status: JudgmentStatus,
    pub tags: Vec<ErrorTag>,
    pub rationale: String,
    pub retry_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReport {
    pub sample_index: usize,
    pub final_answer: Option<Answer>,
    pub correct: bool,
    pub audit: AuditReport,
    /// Judge tags and the deterministic audit sit side by side; the report
    /// never merges them.
    pub judgment: Option<JudgmentRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub k: usize,
    pub responses: Vec<ResponseReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemKSummary {
    pub k: usize,
    pub base_pass: bool,
    pub rl_pass: bool,
    pub pattern: Pattern,
    pub base_coherence: CoherenceOutcome,
    pub rl_coherence: CoherenceOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub problem_id: String,
    pub gold_answer: Answer,
    pub base: ModelReport,
    pub rl: ModelReport,
    pub per_k: Vec<ProblemKSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetricsReport {
    pub k: usize,
    /// Fraction of problems passing at this K, per model.
    pub base_pass_rate: f64,
    pub rl_pass_rate: f64,
    pub pattern_counts: Vec<(Pattern, usize)>,
    pub matrices: Vec<ConfusionMatrix>,
    pub empty_patterns: Vec<Pattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k_values: Vec<usize>,
    pub judge_model: String,
    pub prompt_version: String,
    pub judged_all: bool,
    pub problems: Vec<ProblemReport>,
    pub per_k: Vec<KMetricsReport>,
}

/// Serialize with a stable layout and a trailing newline.
fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    text
}

pub fn render_matrices_csv(report: &EvalReport) -> String {
    let mut csv = String::from("k,pattern,base_outcome,rl_outcome,count\n");
    for k_metrics in &report.per_k {
        for matrix in &k_metrics.matrices {
            for base in CoherenceOutcome::ALL {
                for rl in CoherenceOutcome::ALL {
                    csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        matrix.k,
                        matrix.pattern,
                        base,
                        rl,
                        matrix.cell(base, rl)
                    ));
                }
            }
        }
    }
    csv
}

fn rate_line(model: &str, k: usize, pattern: Pattern, rate: Option<(f64, usize)>) -> String {
    match rate {
        Some((rate, total)) => format!(
            "- K={k} pattern {pattern} {model}: coherence rate {:.4} over {total} problems\n",
            rate
        ),
        None => format!("- K={k} pattern {pattern} {model}: n/a\n"),
    }
}

pub fn render_markdown(report: &EvalReport) -> String {
    let mut md = String::new();
    md.push_str("# Trace Coherence Evaluation\n\n");
    md.push_str(&format!(
        "- problems: {}\n- judge model: {} (prompt {})\n- K values: {}\n- judged all responses: {}\n\n",
        report.problems.len(),
        report.judge_model,
        report.prompt_version,
        report
            .k_values
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(", "),
        report.judged_all,
    ));

    md.push_str("## Pass@K accuracy\n\n| K | base | rl |\n|---|------|----|\n");
    for k_metrics in &report.per_k {
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} |\n",
            k_metrics.k, k_metrics.base_pass_rate, k_metrics.rl_pass_rate
        ));
    }

    md.push_str("\n## Pattern populations\n\n");
    for k_metrics in &report.per_k {
        let counts = k_metrics
            .pattern_counts
            .iter()
            .map(|(p, n)| format!("{p}: {n}"))
            .collect::<Vec<_>>()
            .join(", ");
        md.push_str(&format!("- K={}: {}\n", k_metrics.k, counts));
    }

    md.push_str("\n## Coherence rates\n\n");
    for k_metrics in &report.per_k {
        for pattern in Pattern::ALL {
            let matrix = k_metrics.matrices.iter().find(|m| m.pattern == pattern);
            let base = matrix.and_then(|m| m.base_coherence_rate.map(|r| (r, m.total)));
            let rl = matrix.and_then(|m| m.rl_coherence_rate.map(|r| (r, m.total)));
            md.push_str(&rate_line("base", k_metrics.k, pattern, base));
            md.push_str(&rate_line("rl", k_metrics.k, pattern, rl));
        }
    }
    md
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ReportError> {
    let final_path = dir.join(name);
    let tmp_path = dir.join(format!("{name}.tmp"));
    let io_err = |source, path: &Path| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(&tmp_path).map_err(|e| io_err(e, &tmp_path))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| io_err(e, &tmp_path))?;
    file.sync_all().map_err(|e| io_err(e, &tmp_path))?;
    drop(file);
    fs::rename(&tmp_path, &final_path).map_err(|e| io_err(e, &final_path))?;
    Ok(final_path)
}

/// Write report.json, matrices.csv, and report.md into `dir`. Files are
/// written via temp-and-rename; on failure everything written by this call
/// is removed so no partial report is left behind.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let outputs = [
        ("report.json", to_pretty_json(report)),
        ("matrices.csv", render_matrices_csv(report)),
        ("report.md", render_markdown(report)),
    ];
    for (name, contents) in outputs {
        match write_file(dir, name, &contents) {
            Ok(path) => written.push(path),
            Err(err) => {
                for path in &written {
                    let _ = fs::remove_file(path);
                }
                let _ = fs::remove_file(dir.join(format!("{name}.tmp")));
                return Err(err);
            }
        }
    }
    Ok(written)
}

/// Load report.json back; equal in-memory reports round-trip exactly.
pub fn load_report(path: &Path) -> Result<EvalReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|err| ReportError::Parse {
        path: path.to_path_buf(),
        message: err.to_string(),
    })
}

pub fn emit_calibration(
    report: &CalibrationReport,
    dir: &Path,
) -> Result<PathBuf, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(dir, "calibration.json", &to_pretty_json(report))
}
