//! Pass@K accuracy, Pass@K trace coherence, base-vs-RL pattern partitioning,
//! confusion matrices, and judge calibration against human-annotated labels.
//!
//! Pass@K here is the literal any-of-k rule over exactly k samples, not the
//! combinatorial estimator: a problem passes when any of its k responses has
//! the correct final answer. When evaluating at K smaller than the number of
//! samples on file, the first K samples in file order are used (prefix
//! rule), which keeps runs reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    answers_equal, Answer, CoherenceOutcome, ErrorTag, Judgment, JudgmentStatus, Pattern,
    ResponseTrace, RolloutSet,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("correct response at sample_index {sample_index} has no judgment")]
    MissingJudgment { sample_index: usize },
    #[error("calibration record {index} has no human label")]
    UnlabeledRecord { index: usize },
}

/// Per-response correctness bits: absent final answers are simply wrong.
pub fn correctness_bits(responses: &[ResponseTrace], gold: &Answer) -> Vec<bool> {
    responses
        .iter()
        .map(|r| r.final_answer().is_some_and(|a| answers_equal(a, gold)))
        .collect()
}

/// Literal any-of-k Pass@K accuracy over the rollout's own k responses.
pub fn passk_accuracy(rollout: &RolloutSet, gold: &Answer) -> bool {
    any_correct(rollout.responses(), gold)
}

/// Slice form used when evaluating prefixes at smaller K.
pub fn any_correct(responses: &[ResponseTrace], gold: &Answer) -> bool {
    responses
        .iter()
        .any(|r| r.final_answer().is_some_and(|a| answers_equal(a, gold)))
}

/// Pass@K trace coherence. With c = number of correct responses: Invalid
/// when c = 0; otherwise Coherent iff at least one correct response has an
/// error-free judgment. Judgments are aligned by index and may be absent for
/// incorrect responses (coherence is checked only where answers are
/// correct); `ParseFailed`/`Refused` judgments cannot certify coherence.
pub fn passk_coherence(
    rollout: &RolloutSet,
    gold: &Answer,
    judgments: &[Option<Judgment>],
) -> Result<CoherenceOutcome, MetricsError> {
    coherence_outcome(rollout.responses(), gold, judgments)
}

/// Slice form used when evaluating prefixes at smaller K.
pub fn coherence_outcome(
    responses: &[ResponseTrace],
    gold: &Answer,
    judgments: &[Option<Judgment>],
) -> Result<CoherenceOutcome, MetricsError> {
    let bits = correctness_bits(responses, gold);
    if bits.iter().all(|b| !b) {
        return Ok(CoherenceOutcome::Invalid);
    }
    let mut any_error_free = false;
    for (index, correct) in bits.iter().enumerate() {
        if !correct {
            continue;
        }
        let judgment = judgments
            .get(index)
            .and_then(Option::as_ref)
            .ok_or(MetricsError::MissingJudgment {
                sample_index: index,
            })?;
        if judgment.is_error_free() {
            any_error_free = true;
        }
    }
    Ok(if any_error_free {
        CoherenceOutcome::Coherent
    } else {
        CoherenceOutcome::Incoherent
    })
}

/// P00/P01/P10/P11 from the two models' Pass@K bits at the same K.
pub fn classify_pattern(base_pass: bool, rl_pass: bool) -> Pattern {
    Pattern::classify(base_pass, rl_pass)
}

/// One problem's evaluation at a fixed K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemKEval {
    pub problem_id: String,
    pub k: usize,
    pub base_pass: bool,
    pub rl_pass: bool,
    pub pattern: Pattern,
    pub base_coherence: CoherenceOutcome,
    pub rl_coherence: CoherenceOutcome,
}

/// 3×3 coherence-outcome counts for one pattern at one K. Rows are the base
/// model's outcome, columns the RL model's, both in the order
/// Coherent, Incoherent, Invalid. Cells sum to the pattern's population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub pattern: Pattern,
    pub cells: [[usize; 3]; 3],
    pub total: usize,
    /// Coherent / (Coherent + Incoherent) per model; absent when the model
    /// had no valid (non-Invalid) outcomes in this pattern.
    pub base_coherence_rate: Option<f64>,
    pub rl_coherence_rate: Option<f64>,
}

impl ConfusionMatrix {
    pub fn cell(&self, base: CoherenceOutcome, rl: CoherenceOutcome) -> usize {
        self.cells[base.index()][rl.index()]
    }
}

/// The matrices that exist at one K, plus a flag listing patterns with no
/// problems (those yield no matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub matrices: Vec<ConfusionMatrix>,
    pub empty_patterns: Vec<Pattern>,
}

fn coherence_rate(coherent: usize, incoherent: usize) -> Option<f64> {
    let denom = coherent + incoherent;
    (denom > 0).then(|| coherent as f64 / denom as f64)
}

/// One 3×3 matrix per non-empty pattern, cells counting problems by
/// (base outcome, RL outcome), plus per-pattern per-model coherence rates.
pub fn confusion_matrices(evals: &[ProblemKEval], k: usize) -> ConfusionSummary {
    let mut matrices = Vec::new();
    let mut empty_patterns = Vec::new();
    for pattern in Pattern::ALL {
        let mut cells = [[0usize; 3]; 3];
        let mut total = 0;
        for eval in evals.iter().filter(|e| e.k == k && e.pattern == pattern) {
            cells[eval.base_coherence.index()][eval.rl_coherence.index()] += 1;
            total += 1;
        }
        if total == 0 {
            empty_patterns.push(pattern);
            continue;
        }
        let base_coherent: usize = cells[CoherenceOutcome::Coherent.index()].iter().sum();
        let base_incoherent: usize = cells[CoherenceOutcome::Incoherent.index()].iter().sum();
        let rl_coherent: usize = cells
            .iter()
            .map(|row| row[CoherenceOutcome::Coherent.index()])
            .sum();
        let rl_incoherent: usize = cells
            .iter()
            .map(|row| row[CoherenceOutcome::Incoherent.index()])
            .sum();
        matrices.push(ConfusionMatrix {
            k,
            pattern,
            cells,
            total,
            base_coherence_rate: coherence_rate(base_coherent, base_incoherent),
            rl_coherence_rate: coherence_rate(rl_coherent, rl_incoherent),
        });
    }
    ConfusionSummary {
        matrices,
        empty_patterns,
    }
}

/// Human label on a calibration response: exactly one tag, or no error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HumanLabel {
    Tag(ErrorTag),
    NoError,
}

impl HumanLabel {
    /// Accepts the four canonical tag labels plus "None" / "No Error".
    pub fn parse(label: &str) -> Option<HumanLabel> {
        let trimmed = label.trim();
        if trimmed.eq_ignore_ascii_case("none") || trimmed.eq_ignore_ascii_case("no error") {
            return Some(HumanLabel::NoError);
        }
        ErrorTag::from_label(trimmed).map(HumanLabel::Tag)
    }

    pub fn class_index(&self) -> usize {
        match self {
            HumanLabel::Tag(tag) => ErrorTag::ALL
                .iter()
                .position(|t| t == tag)
                .expect("tag in taxonomy"),
            HumanLabel::NoError => 4,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            HumanLabel::Tag(tag) => tag.label(),
            HumanLabel::NoError => "No Error",
        }
    }
}

/// One human-annotated response paired with what the judge said about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub response_text: String,
    pub human: HumanLabel,
    pub judge_tags: Vec<ErrorTag>,
    pub judge_status: JudgmentStatus,
}

impl CalibrationRecord {
    fn judge_matches_exact(&self) -> bool {
        if self.judge_status != JudgmentStatus::Ok {
            return false;
        }
        match self.human {
            HumanLabel::NoError => self.judge_tags.is_empty(),
            HumanLabel::Tag(tag) => self.judge_tags == [tag],
        }
    }

    fn judge_matches_lenient(&self) -> bool {
        if self.judge_status != JudgmentStatus::Ok {
            return false;
        }
        match self.human {
            HumanLabel::NoError => self.judge_tags.is_empty(),
            HumanLabel::Tag(tag) => self.judge_tags.contains(&tag),
        }
    }

    /// Judge-side bucket for the 5×5 matrix: primary tag = first listed;
    /// empty tag sets bucket as No Error.
    fn judge_class_index(&self) -> Option<usize> {
        if self.judge_status != JudgmentStatus::Ok {
            return None;
        }
        Some(match self.judge_tags.first() {
            Some(tag) => HumanLabel::Tag(*tag).class_index(),
            None => HumanLabel::NoError.class_index(),
        })
    }
}

pub const CALIBRATION_CLASSES: [&str; 5] = [
    "False Premise",
    "False Rule",
    "Calculator Error",
    "Format Error",
    "No Error",
];

/// The reference gold-set composition: 25 responses per error type and 100
/// with no errors.
pub const REFERENCE_COMPOSITION: [usize; 5] = [25, 25, 25, 25, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: String,
    pub support: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Judge-vs-human agreement statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub total: usize,
    /// Exact set match: a human tag matches the singleton containing it;
    /// "no error" matches the empty set.
    pub matches_exact: usize,
    pub accuracy_exact: f64,
    /// Lenient: the human tag just has to appear in the judge's set.
    pub matches_lenient: usize,
    pub accuracy_lenient: f64,
    /// Exact accuracy over records whose human label is not Format Error,
    /// reported alongside the full figure because the inclusion rule behind
    /// published accuracy numbers is ambiguous.
    pub accuracy_exact_excluding_format: f64,
    pub excluded_format_records: usize,
    /// Judgments that never parsed (or were refused); they count as
    /// mismatches and stay out of the label matrix.
    pub unusable_judgments: usize,
    /// Rows = human label, cols = judge primary label, order
    /// [False Premise, False Rule, Calculator Error, Format Error, No Error].
    pub confusion: [[usize; 5]; 5],
    /// Supplementary: per human label, how many judge verdicts carried more
    /// than one tag (they appear in `confusion` under their primary tag).
    pub multi_tag_by_human: [usize; 5],
    pub per_class: Vec<ClassStats>,
    /// Human-label counts in class order, plus whether they equal the
    /// reference gold-set composition.
    pub composition: [usize; 5],
    pub matches_reference_composition: bool,
}

fn ratio_or_zero(numer: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        numer as f64 / denom as f64
    }
}

/// Score judge output against human annotations: overall accuracy in exact
/// and lenient modes, per-class precision/recall, and the 5×5 label matrix.
pub fn judge_calibration(records: &[CalibrationRecord]) -> CalibrationReport {
    let total = records.len();
    let matches_exact = records.iter().filter(|r| r.judge_matches_exact()).count();
    let matches_lenient = records
        .iter()
        .filter(|r| r.judge_matches_lenient())
        .count();

    let non_format: Vec<&CalibrationRecord> = records
        .iter()
        .filter(|r| r.human != HumanLabel::Tag(ErrorTag::FormatError))
        .collect();
    let matches_exact_non_format = non_format
        .iter()
        .filter(|r| r.judge_matches_exact())
        .count();

    let mut confusion = [[0usize; 5]; 5];
    let mut multi_tag_by_human = [0usize; 5];
    let mut composition = [0usize; 5];
    let mut unusable_judgments = 0;
    for record in records {
        let human_index = record.human.class_index();
        composition[human_index] += 1;
        match record.judge_class_index() {
            Some(judge_index) => {
                confusion[human_index][judge_index] += 1;
                if record.judge_tags.len() > 1 {
                    multi_tag_by_human[human_index] += 1;
                }
            }
            None => unusable_judgments += 1,
        }
    }

    let per_class = (0..5)
        .map(|class| {
            let tp = confusion[class][class];
            let judged_as: usize = (0..5).map(|h| confusion[h][class]).sum();
            let support: usize = composition[class];
            let humans_in_matrix: usize = confusion[class].iter().sum();
            ClassStats {
                label: CALIBRATION_CLASSES[class].to_string(),
                support,
                precision: (judged_as > 0).then(|| tp as f64 / judged_as as f64),
                recall: (humans_in_matrix > 0).then(|| tp as f64 / humans_in_matrix as f64),
            }
        })
        .collect();

    CalibrationReport {
        total,
        matches_exact,
        accuracy_exact: ratio_or_zero(matches_exact, total),
        matches_lenient,
        accuracy_lenient: ratio_or_zero(matches_lenient, total),
        accuracy_exact_excluding_format: ratio_or_zero(matches_exact_non_format, non_format.len()),
        excluded_format_records: total - non_format.len(),
        unusable_judgments,
        confusion,
        multi_tag_by_human,
        per_class,
        composition,
        matches_reference_composition: composition == REFERENCE_COMPOSITION,
    }
}
