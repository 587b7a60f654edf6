//! Domain types shared by every stage of the evaluation, plus gold-answer
//! normalization and comparison.
//!
//! Answers are exact rationals rather than floats so that the integer
//! comparisons dominating GSM8K-style data stay exact; the tolerance in
//! [`answers_equal`] only comes into play when a side is non-integer.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scan::{minus_reads_binary, scan_all_numbers, scan_number_at};

/// An exact numeric answer value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Answer(BigRational);

impl Answer {
    pub fn new(value: BigRational) -> Self {
        Answer(value)
    }

    pub fn from_integer(n: i64) -> Self {
        Answer(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn ratio(numer: i64, denom: i64) -> Self {
        Answer(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    /// Canonical rendering: integers bare ("72"), everything else as a
    /// reduced fraction ("10/3"). [`normalize_answer`] parses both back.
    pub fn render(&self) -> String {
        if self.0.is_integer() {
            self.0.numer().to_string()
        } else {
            format!("{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<BigRational> for Answer {
    fn from(value: BigRational) -> Self {
        Answer(value)
    }
}

impl Serialize for Answer {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        normalize_answer(&text)
            .ok_or_else(|| D::Error::custom(format!("not a numeric answer: {text:?}")))
    }
}

/// Parse an answer-like string into an exact rational.
///
/// Strips currency symbols, thousands separators, surrounding whitespace, a
/// trailing `%`, and unit suffixes ("72 clips" → 72). Accepts plain integers
/// and decimals, `a/b` fractions, and `\frac{a}{b}`. Absence is a value:
/// unparseable input returns `None`, never an error.
pub fn normalize_answer(text: &str) -> Option<Answer> {
    let cleaned: String = text
        .trim()
        .chars()
        .map(|c| if c == '\u{2212}' { '-' } else { c })
        .collect();
    if cleaned.is_empty() {
        return None;
    }

    if let Some(frac) = parse_latex_frac(&cleaned) {
        return Some(frac);
    }

    let numbers = scan_all_numbers(&cleaned);
    let first = numbers.first()?;
    let negative = leading_minus(&cleaned, first.start);
    let mut value = first.value.clone();

    // "a/b" written as a fraction, e.g. "3/4" or "10 / 3"
    if let Some(denom) = fraction_denominator(&cleaned, first.end, &numbers) {
        if denom.value.is_zero() {
            return None;
        }
        value /= denom.value.clone();
    }

    if negative {
        value = -value;
    }
    Some(Answer(value))
}

fn leading_minus(text: &str, number_start: usize) -> bool {
    let head = text[..number_start].trim_end();
    head.ends_with('-') && head[..head.len() - 1].trim_end().is_empty()
}

fn fraction_denominator<'a>(
    text: &str,
    numer_end: usize,
    numbers: &'a [crate::scan::ScannedNumber],
) -> Option<&'a crate::scan::ScannedNumber> {
    let between = &text[numer_end..];
    let slash = between.trim_start();
    if !slash.starts_with('/') {
        return None;
    }
    let slash_pos = numer_end + (between.len() - slash.len());
    let denom = numbers.get(1)?;
    if text[slash_pos + 1..denom.start].trim().is_empty() {
        Some(denom)
    } else {
        None
    }
}

fn parse_latex_frac(text: &str) -> Option<Answer> {
    let idx = text.find("\\frac{").map(|i| i + 6).or_else(|| {
        text.find("\\dfrac{").map(|i| i + 7)
    })?;
    let rest = &text[idx..];
    let close = rest.find('}')?;
    let numer = rest[..close].trim();
    let after = &rest[close + 1..];
    let open = after.find('{')?;
    let close2 = after[open + 1..].find('}')? + open + 1;
    let denom = after[open + 1..close2].trim();
    let n = parse_signed_number(numer)?;
    let d = parse_signed_number(denom)?;
    if d.is_zero() {
        return None;
    }
    Some(Answer(n / d))
}

fn parse_signed_number(text: &str) -> Option<BigRational> {
    let trimmed = text.trim();
    let (negative, digits) = match trimmed.strip_prefix('-') {
        Some(rest) => (true, rest.trim_start()),
        None => (false, trimmed),
    };
    let scanned = scan_number_at(digits, 0)?;
    if scanned.end != digits.len() {
        return None;
    }
    Some(if negative {
        -scanned.value
    } else {
        scanned.value
    })
}

/// The last numeric literal in a trace, used as the final answer when
/// `\boxed{}` is absent. Keeps accuracy decoupled from format errors.
pub fn extract_fallback_answer(text: &str) -> Option<Answer> {
    let cleaned: String = text
        .chars()
        .map(|c| if c == '\u{2212}' { '-' } else { c })
        .collect();
    let last = scan_all_numbers(&cleaned).into_iter().next_back()?;
    let mut value = last.value;
    // attach a directly adjacent unary minus: "-4" but not "9-4"
    if last.start > 0
        && cleaned.as_bytes()[last.start - 1] == b'-'
        && !minus_reads_binary(&cleaned, last.start - 1)
    {
        value = -value;
    }
    Some(Answer(value))
}

/// Tolerance-aware equality: exact when both sides are integers, otherwise
/// |a − b| ≤ max(abs_tol, rel_tol·max(|a|, |b|)) with abs_tol = rel_tol =
/// 1e-6, evaluated in exact rational arithmetic. The relative term uses the
/// larger magnitude so the comparison is symmetric.
pub fn answers_equal(a: &Answer, b: &Answer) -> bool {
    if a.is_integer() && b.is_integer() {
        return a == b;
    }
    let tol = BigRational::new(BigInt::from(1), BigInt::from(1_000_000));
    let diff = (&a.0 - &b.0).abs();
    let rel = a.0.abs().max(b.0.abs()) * &tol;
    diff <= tol.max(rel)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GoldParseError {
    #[error("no \"####\" answer marker found")]
    MissingMarker,
    #[error("text after \"####\" does not parse as a number: {0:?}")]
    UnparseableGold(String),
}

/// Extract the gold answer from GSM8K-style answer text: everything after
/// the last `####` marker on its line, normalized.
pub fn parse_gold(answer_text: &str) -> Result<Answer, GoldParseError> {
    let idx = answer_text.rfind("####").ok_or(GoldParseError::MissingMarker)?;
    let tail = &answer_text[idx + 4..];
    let line = tail.lines().next().unwrap_or("");
    normalize_answer(line).ok_or_else(|| GoldParseError::UnparseableGold(line.trim().to_string()))
}

/// A math problem with its gold numeric answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub question: String,
    pub gold_answer: Answer,
    /// Original answer text the gold value was extracted from.
    pub gold_raw: String,
}

/// Which sampled model a rollout came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Base,
    Rl,
}

impl ModelId {
    pub const ALL: [ModelId; 2] = [ModelId::Base, ModelId::Rl];
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelId::Base => "base",
            ModelId::Rl => "rl",
        })
    }
}

/// One sampled model response with its extracted final answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTrace {
    pub problem_id: String,
    pub model_id: ModelId,
    pub sample_index: usize,
    pub raw_text: String,
    pub boxed_answer: Option<Answer>,
    pub fallback_answer: Option<Answer>,
}

impl ResponseTrace {
    /// Build a trace from raw text, extracting the boxed answer and, when
    /// the box is absent, the fallback (last number in the trace).
    pub fn from_raw(
        problem_id: impl Into<String>,
        model_id: ModelId,
        sample_index: usize,
        raw_text: impl Into<String>,
    ) -> Self {
        let raw_text = raw_text.into();
        let boxed_answer =
            crate::steps::detect_boxed(&raw_text).and_then(|inner| normalize_answer(&inner));
        let fallback_answer = extract_fallback_answer(&raw_text);
        ResponseTrace {
            problem_id: problem_id.into(),
            model_id,
            sample_index,
            raw_text,
            boxed_answer,
            fallback_answer,
        }
    }

    /// Boxed answer when present, else the fallback, else absent.
    pub fn final_answer(&self) -> Option<&Answer> {
        self.boxed_answer.as_ref().or(self.fallback_answer.as_ref())
    }
}

/// The four canonical error tags a judge may assign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorTag {
    #[serde(rename = "False Premise")]
    FalsePremise,
    #[serde(rename = "False Rule")]
    FalseRule,
    #[serde(rename = "Calculator Error")]
    CalculatorError,
    #[serde(rename = "Format Error")]
    FormatError,
}

impl ErrorTag {
    pub const ALL: [ErrorTag; 4] = [
        ErrorTag::FalsePremise,
        ErrorTag::FalseRule,
        ErrorTag::CalculatorError,
        ErrorTag::FormatError,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ErrorTag::FalsePremise => "False Premise",
            ErrorTag::FalseRule => "False Rule",
            ErrorTag::CalculatorError => "Calculator Error",
            ErrorTag::FormatError => "Format Error",
        }
    }

    /// Exact-label lookup. The literal "None" is not a tag; callers
    /// canonicalize it to the empty set.
    pub fn from_label(label: &str) -> Option<ErrorTag> {
        ErrorTag::ALL.into_iter().find(|t| t.label() == label)
    }
}

impl fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Whether a judge reply could be used at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentStatus {
    Ok,
    ParseFailed,
    Refused,
}

/// A judge's verdict on one response: the FOL rendering, canonical error
/// tags, rationale, and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub fol_text: String,
    /// Tags in the judge's listed order, deduplicated. Order matters for
    /// calibration's primary-tag bucketing; use [`Judgment::tag_set`] for
    /// set comparisons.
    pub tags: Vec<ErrorTag>,
    pub rationale: String,
    pub judge_model: String,
    pub prompt_version: String,
    pub raw_json: String,
    pub status: JudgmentStatus,
    pub retry_count: u32,
    pub parse_error: Option<String>,
}

impl Judgment {
    pub fn tag_set(&self) -> BTreeSet<ErrorTag> {
        self.tags.iter().copied().collect()
    }

    /// A response certifies coherence only through an error-free verdict.
    pub fn is_error_free(&self) -> bool {
        self.status == JudgmentStatus::Ok && self.tags.is_empty()
    }

    pub fn primary_tag(&self) -> Option<ErrorTag> {
        self.tags.first().copied()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RolloutError {
    #[error("rollout set for {problem_id} is empty")]
    Empty { problem_id: String },
    #[error("rollout set for {problem_id} mixes problem ids (found {found})")]
    MixedProblemIds { problem_id: String, found: String },
    #[error("rollout set for {problem_id} mixes model ids")]
    MixedModels { problem_id: String },
    #[error("rollout set for {problem_id} has sample_index {found} at position {position}")]
    BadSampleIndex {
        problem_id: String,
        position: usize,
        found: usize,
    },
}

/// k responses for one (problem, model) pair, ordered by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSet {
    problem_id: String,
    model_id: ModelId,
    responses: Vec<ResponseTrace>,
}

impl RolloutSet {
    pub fn new(
        problem_id: impl Into<String>,
        model_id: ModelId,
        responses: Vec<ResponseTrace>,
    ) -> Result<Self, RolloutError> {
        let problem_id = problem_id.into();
        if responses.is_empty() {
            return Err(RolloutError::Empty { problem_id });
        }
        for (position, r) in responses.iter().enumerate() {
            if r.problem_id != problem_id {
                return Err(RolloutError::MixedProblemIds {
                    problem_id,
                    found: r.problem_id.clone(),
                });
            }
            if r.model_id != model_id {
                return Err(RolloutError::MixedModels { problem_id });
            }
            if r.sample_index != position {
                return Err(RolloutError::BadSampleIndex {
                    problem_id,
                    position,
                    found: r.sample_index,
                });
            }
        }
        Ok(RolloutSet {
            problem_id,
            model_id,
            responses,
        })
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }

    pub fn model_id(&self) -> ModelId {
        self.model_id
    }

    pub fn k(&self) -> usize {
        self.responses.len()
    }

    pub fn responses(&self) -> &[ResponseTrace] {
        &self.responses
    }

    /// The first `k` responses in file order — the prefix rule that keeps
    /// evaluations at smaller K reproducible.
    pub fn prefix(&self, k: usize) -> &[ResponseTrace] {
        &self.responses[..k.min(self.responses.len())]
    }
}

/// Partition of problems by (base correct?, RL correct?) at a given K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pattern {
    #[serde(rename = "00")]
    P00,
    #[serde(rename = "01")]
    P01,
    #[serde(rename = "10")]
    P10,
    #[serde(rename = "11")]
    P11,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::P00, Pattern::P01, Pattern::P10, Pattern::P11];

    /// First digit is base-model correctness, second is RL-model correctness.
    pub fn classify(base_pass: bool, rl_pass: bool) -> Pattern {
        match (base_pass, rl_pass) {
            (false, false) => Pattern::P00,
            (false, true) => Pattern::P01,
            (true, false) => Pattern::P10,
            (true, true) => Pattern::P11,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Pattern::P00 => "00",
            Pattern::P01 => "01",
            Pattern::P10 => "10",
            Pattern::P11 => "11",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Coherence at a given K: Invalid exactly when zero of the k responses are
/// correct; otherwise coherent iff at least one correct response is
/// error-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceOutcome {
    Coherent,
    Incoherent,
    Invalid,
}

impl CoherenceOutcome {
    pub const ALL: [CoherenceOutcome; 3] = [
        CoherenceOutcome::Coherent,
        CoherenceOutcome::Incoherent,
        CoherenceOutcome::Invalid,
    ];

    pub fn index(&self) -> usize {
        match self {
            CoherenceOutcome::Coherent => 0,
            CoherenceOutcome::Incoherent => 1,
            CoherenceOutcome::Invalid => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CoherenceOutcome::Coherent => "coherent",
            CoherenceOutcome::Incoherent => "incoherent",
            CoherenceOutcome::Invalid => "invalid",
        }
    }
}

impl fmt::Display for CoherenceOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}
