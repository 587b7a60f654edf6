//! Helpers shared by the integration suites: scripted judge transports and
//! synthetic corpus builders.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use coherence::judge::{ChatCompletion, ChatRequest, ChatTransport, TransportError};

pub const COHERENT_MARKER: &str = "TRACE-CLEAN";
pub const FLAWED_MARKER: &str = "TRACE-FLAWED";

pub fn judgment_json(tags: &[&str]) -> String {
    let tag_list = tags
        .iter()
        .map(|t| format!("{t:?}"))
        .collect::<Vec<_>>()
        .join(",");
    format!(
        r#"{{"First-Order Logic":"Signature: n\nFormalization: ok\nDerivation: ok\nCheck: ok","error_tags":[{tag_list}],"rationale":"scripted verdict"}}"#
    )
}

/// Judge mock that answers based on markers embedded in the response text:
/// traces carrying [`COHERENT_MARKER`] get an empty tag list, everything
/// else gets a False Rule tag. Counts calls.
pub struct MarkerTransport {
    calls: AtomicUsize,
}

impl MarkerTransport {
    pub fn new() -> MarkerTransport {
        MarkerTransport {
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatTransport for MarkerTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request
            .messages
            .first()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let body = if prompt.contains(COHERENT_MARKER) {
            judgment_json(&[])
        } else {
            judgment_json(&["False Rule"])
        };
        Ok(ChatCompletion {
            content: Some(body),
            refusal: None,
        })
    }
}

/// Transport that fails the test if it is ever reached.
pub struct PanicTransport {
    calls: AtomicUsize,
}

impl PanicTransport {
    pub fn new() -> PanicTransport {
        PanicTransport {
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatTransport for PanicTransport {
    fn complete(&self, _request: &ChatRequest) -> Result<ChatCompletion, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(TransportError::Network(
            "no network calls expected in this test".into(),
        ))
    }
}

/// Scripted transport that replies with a fixed sequence.
pub struct SequenceTransport {
    script: Mutex<Vec<Result<String, TransportError>>>,
    calls: AtomicUsize,
}

impl SequenceTransport {
    pub fn new(script: Vec<Result<String, TransportError>>) -> SequenceTransport {
        SequenceTransport {
            script: Mutex::new(script),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatTransport for SequenceTransport {
    fn complete(&self, _request: &ChatRequest) -> Result<ChatCompletion, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut script = self.script.lock().unwrap();
        if script.is_empty() {
            return Err(TransportError::Network("script exhausted".into()));
        }
        script.remove(0).map(|content| ChatCompletion {
            content: Some(content),
            refusal: None,
        })
    }
}

pub fn write_lines(path: &Path, lines: &[String]) {
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(path, text).unwrap_or_else(|e| panic!("write {}: {e}", path.display()));
}

/// Plan for one synthetic problem in the end-to-end corpus.
pub struct ProblemPlan {
    pub id: String,
    pub gold: i64,
    /// Per model: per sample, (is_correct, is_coherent).
    pub base: Vec<(bool, bool)>,
    pub rl: Vec<(bool, bool)>,
}

pub fn render_trace(problem_id: &str, sample: usize, gold: i64, correct: bool, coherent: bool) -> String {
    let answer = if correct { gold } else { gold + 1 };
    let marker = if coherent { COHERENT_MARKER } else { FLAWED_MARKER };
    format!(
        "[{marker}] Working on {problem_id} sample {sample}: 2 + 2 = 4. The total is \\boxed{{{answer}}}"
    )
}

/// Write gold/base/rl JSONL files realizing the given plans.
pub fn write_corpus(dir: &Path, plans: &[ProblemPlan]) -> (PathBuf, PathBuf, PathBuf) {
    let gold_path = dir.join("gold.jsonl");
    let base_path = dir.join("base.jsonl");
    let rl_path = dir.join("rl.jsonl");

    let gold_lines: Vec<String> = plans
        .iter()
        .map(|p| {
            serde_json::json!({
                "id": p.id,
                "question": format!("Synthetic question {} expecting {}", p.id, p.gold),
                "answer": format!("reasoning...\n#### {}", p.gold),
            })
            .to_string()
        })
        .collect();
    write_lines(&gold_path, &gold_lines);

    for (path, pick) in [
        (&base_path, true),
        (&rl_path, false),
    ] {
        let mut lines = Vec::new();
        for plan in plans {
            let samples = if pick { &plan.base } else { &plan.rl };
            for (index, &(correct, coherent)) in samples.iter().enumerate() {
                lines.push(
                    serde_json::json!({
                        "problem_id": plan.id,
                        "sample_index": index,
                        "text": render_trace(&plan.id, index, plan.gold, correct, coherent),
                    })
                    .to_string(),
                );
            }
        }
        write_lines(path, &lines);
    }
    (gold_path, base_path, rl_path)
}

/// The 50-problem corpus used by the end-to-end criteria: 20 pattern-01
/// problems with an RL coherence rate of exactly 17/20 = 0.85, 25
/// pattern-11 problems with an RL rate of exactly 24/25 = 0.96 (base rate
/// 10/25 = 0.40), and 5 pattern-00 problems. Sample 0 decides correctness
/// and coherence, so every rate is identical at each K.
pub fn fifty_problem_plan(k: usize) -> Vec<ProblemPlan> {
    assert!(k >= 1);
    let wrong = vec![(false, false); k];
    let deciding = |correct: bool, coherent: bool| {
        let mut samples = vec![(false, false); k];
        samples[0] = (correct, coherent);
        samples
    };

    let mut plans = Vec::new();
    for i in 0..20 {
        plans.push(ProblemPlan {
            id: format!("p01-{i:02}"),
            gold: 100 + i,
            base: wrong.clone(),
            rl: deciding(true, i < 17),
        });
    }
    for i in 0..25 {
        plans.push(ProblemPlan {
            id: format!("p11-{i:02}"),
            gold: 200 + i,
            base: deciding(true, i < 10),
            rl: deciding(true, i < 24),
        });
    }
    for i in 0..5 {
        plans.push(ProblemPlan {
            id: format!("p00-{i:02}"),
            gold: 300 + i,
            base: wrong.clone(),
            rl: wrong.clone(),
        });
    }
    plans
}
