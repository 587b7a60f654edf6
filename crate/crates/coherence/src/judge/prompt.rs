//! Judge prompt construction. The template is a versioned resource file,
//! not inlined in code, so a wording change is a new prompt version and a
//! new cache key.

use crate::model::{ProblemRecord, ResponseTrace};

pub const PROMPT_VERSION: &str = "v1";

const TEMPLATE_V1: &str = include_str!("../../resources/judge_prompt_v1.txt");

/// Substitute the problem question and response text into the template.
/// Byte-identical output for identical inputs.
pub fn build_prompt(problem: &ProblemRecord, response: &ResponseTrace) -> String {
    build_prompt_from_texts(&problem.question, &response.raw_text)
}

/// Text-level variant used by calibration, where there is no full
/// [`ProblemRecord`] (annotated responses carry no gold answer).
pub fn build_prompt_from_texts(question: &str, response_text: &str) -> String {
    let (before_q, rest) = TEMPLATE_V1
        .split_once("{{question}}")
        .expect("template has a question placeholder");
    let (between, after_r) = rest
        .split_once("{{response}}")
        .expect("template has a response placeholder");
    let mut prompt = String::with_capacity(
        TEMPLATE_V1.len() + question.len() + response_text.len(),
    );
    prompt.push_str(before_q);
    prompt.push_str(question);
    prompt.push_str(between);
    prompt.push_str(response_text);
    prompt.push_str(after_r);
    prompt
}
