//! Strict parsing of judge completions into [`Judgment`]s.
//!
//! The judge must return a JSON object with exactly three keys:
//! "First-Order Logic", "error_tags" (the prompt also spells it
//! "error tags"; both are accepted), and "rationale". Anything else is a
//! `ParseFailed` judgment — a value, not an exception, so downstream
//! metrics can count failures explicitly.

use serde_json::Value;

use crate::model::{ErrorTag, Judgment, JudgmentStatus};

const KEY_FOL: &str = "First-Order Logic";
const KEY_TAGS: &str = "error_tags";
const KEY_TAGS_SPACED: &str = "error tags";
const KEY_RATIONALE: &str = "rationale";

/// Parse raw judge output. Surrounding code fences and leading/trailing
/// prose are stripped before the JSON is read.
pub fn parse_judgment(raw: &str) -> Judgment {
    match try_parse(raw) {
        Ok((fol_text, tags, rationale)) => Judgment {
            fol_text,
            tags,
            rationale,
            judge_model: String::new(),
            prompt_version: String::new(),
            raw_json: raw.to_string(),
            status: JudgmentStatus::Ok,
            retry_count: 0,
            parse_error: None,
        },
        Err(reason) => Judgment {
            fol_text: String::new(),
            tags: Vec::new(),
            rationale: String::new(),
            judge_model: String::new(),
            prompt_version: String::new(),
            raw_json: raw.to_string(),
            status: JudgmentStatus::ParseFailed,
            retry_count: 0,
            parse_error: Some(reason),
        },
    }
}

fn try_parse(raw: &str) -> Result<(String, Vec<ErrorTag>, String), String> {
    let object = extract_object(raw).ok_or_else(|| "no JSON object found".to_string())?;

    let map = object
        .as_object()
        .ok_or_else(|| "top-level JSON value is not an object".to_string())?;

    if map.len() != 3 {
        return Err(format!("expected exactly 3 keys, found {}", map.len()));
    }

    let fol = map
        .get(KEY_FOL)
        .ok_or_else(|| format!("missing key {KEY_FOL:?}"))?;
    let tags_value = map
        .get(KEY_TAGS)
        .or_else(|| map.get(KEY_TAGS_SPACED))
        .ok_or_else(|| format!("missing key {KEY_TAGS:?}"))?;
    let rationale = map
        .get(KEY_RATIONALE)
        .ok_or_else(|| format!("missing key {KEY_RATIONALE:?}"))?;

    let fol_text = fol
        .as_str()
        .ok_or_else(|| format!("{KEY_FOL:?} is not a string"))?
        .to_string();
    let rationale_text = rationale
        .as_str()
        .ok_or_else(|| format!("{KEY_RATIONALE:?} is not a string"))?
        .to_string();
    let tags = canonicalize_tags(tags_value)?;

    Ok((fol_text, tags, rationale_text))
}

/// Canonicalize the judge's tag list: the literal "None" collapses to the
/// empty set, duplicates are dropped, and any label outside the taxonomy is
/// a validation error.
fn canonicalize_tags(value: &Value) -> Result<Vec<ErrorTag>, String> {
    let items = value
        .as_array()
        .ok_or_else(|| "error tags value is not an array".to_string())?;
    let mut tags = Vec::new();
    for item in items {
        let label = item
            .as_str()
            .ok_or_else(|| format!("error tag {item} is not a string"))?;
        if label == "None" {
            continue;
        }
        let tag = ErrorTag::from_label(label)
            .ok_or_else(|| format!("invalid tag: {label:?}"))?;
        if !tags.contains(&tag) {
            tags.push(tag);
        }
    }
    Ok(tags)
}

/// Pull the JSON object out of a completion that may wrap it in code fences
/// or prose: try the trimmed text, then the outermost brace span.
fn extract_object(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    if start >= end {
        return None;
    }
    serde_json::from_str(&trimmed[start..=end]).ok()
}
