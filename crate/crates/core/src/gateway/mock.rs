//! Deterministic offline backend.
//!
//! Every choice is drawn from SHA-256 of the user content plus the sample tags,
//! so responses are identical on every machine.

use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;

use super::{BackendError, BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError};
use crate::digest::stable_u64;
use crate::parser::Section;

/// Task names the mock draws from; one entry is a spelling variant on purpose.
pub const MOCK_TASK_POOL: &[&str] = &[
    "Text Classification",
    "Sentiment Analysis",
    "Named Entity Recognition",
    "Question Answering",
    "Intent Detection",
    "Topic Classification",
    "Dialogue Act Classification",
    "Natural Language Inference",
    "Emotion Detection",
    "Paraphrase Identification",
    "Coreference Resolution",
    "text classification.",
];

const OPENERS: &[&str] = &[
    "The following short scene ties the sentences together.",
    "Here is a small story built around one afternoon at home.",
    "This passage follows a family through an ordinary day.",
    "Consider the conversation below between a parent and a child.",
    "The paragraph describes a busy morning in a small town.",
];

const CLOSERS: &[&str] = &[
    "In the end everyone agreed it had been a good day.",
    "The moment passed, but the questions stayed with them.",
    "Nobody said anything else for a while.",
    "Later they laughed about it together.",
    "It was the kind of exchange that repeats every evening.",
];

const LABEL_POOL: &[&str] = &[
    "Question Asked",
    "Request Made",
    "Emotion Expressed",
    "Person Mentioned",
    "Object Mentioned",
    "Positive",
    "Negative",
    "Neutral",
    "Agreement",
    "Refusal",
];

const SCORE_REMARKS: &[&str] = &[
    "The sentences are connected by a shared setting, though some transitions are abrupt.",
    "The paragraph keeps a consistent topic and the ideas follow one another naturally.",
    "Several sentences feel unrelated, which weakens the overall flow.",
    "The narrative voice is stable and the closing line resolves the opening.",
];

fn pick<'a>(pool: &[&'a str], h: u64, salt: u64) -> &'a str {
    let mixed = h.rotate_left((salt * 13 % 64) as u32) ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    pool[(mixed % pool.len() as u64) as usize]
}

fn request_hash(request: &ChatRequest) -> u64 {
    let mut bytes = request.user_text().into_bytes();
    bytes.push(0);
    bytes.extend_from_slice(&request.sample_index.to_be_bytes());
    bytes.extend_from_slice(&request.attempt.to_be_bytes());
    stable_u64(&bytes)
}

fn is_generation_prompt(text: &str) -> bool {
    Section::ALL.iter().all(|s| text.lines().any(|l| l.trim_end().eq_ignore_ascii_case(s.header())))
}

fn is_scoring_prompt(text: &str) -> bool {
    text.to_ascii_lowercase().contains("thus the coherency score is")
}

/// Numbered sentence lines ("1. text") preceding the output-format skeleton.
fn extract_sentences(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut last_idx = None;
    for (i, line) in lines.iter().enumerate() {
        if line.trim_end().eq_ignore_ascii_case("Plan:") {
            break;
        }
        let Some((num, rest)) = line.split_once(". ") else { continue };
        if num.parse::<usize>().ok() == Some(out.len() + 1) {
            out.push(rest.trim().to_string());
            last_idx = Some(i);
        }
    }
    // the built-in template appends "." right after the list
    if let Some(i) = last_idx {
        let next = lines.get(i + 1).copied().unwrap_or("");
        if next.starts_with("Make a plan") {
            if let Some(last) = out.last_mut() {
                if let Some(stripped) = last.strip_suffix('.') {
                    *last = stripped.to_string();
                }
            }
        }
    }
    out
}

fn generation_output(prompt: &str, h: u64) -> String {
    let sentences = extract_sentences(prompt);
    let task = pick(MOCK_TASK_POOL, h, 1);
    let mut paragraph = vec![pick(OPENERS, h, 2).to_string()];
    paragraph.extend(sentences.iter().cloned());
    paragraph.push(pick(CLOSERS, h, 3).to_string());

    let mut plan = vec!["1. Read the sentences and look for a shared setting".to_string()];
    for (i, s) in sentences.iter().enumerate() {
        let words: Vec<&str> = s.split_whitespace().take(4).collect();
        plan.push(format!("{}. Work in sentence {} about \"{}\"", i + 2, i + 1, words.join(" ")));
    }
    plan.push(format!("{}. Decide which {} labels fit the paragraph", plan.len() + 1, task.to_lowercase()));

    let n_labels = 2 + (h % 3) as usize;
    let mut labels: Vec<&str> = Vec::new();
    let mut salt = 10;
    while labels.len() < n_labels {
        let l = pick(LABEL_POOL, h, salt);
        if !labels.contains(&l) {
            labels.push(l);
        }
        salt += 1;
    }
    let labels: Vec<String> = labels.iter().enumerate().map(|(i, l)| format!("{}. {l}", i + 1)).collect();

    format!(
        "Plan:\n{}\n\nParagraph:\n{}\n\nTask:\n[{}]\n\nLabels:\n{}\n",
        plan.join("\n"),
        paragraph.join(" "),
        task,
        labels.join("\n")
    )
}

fn scoring_output(h: u64) -> String {
    let s = 1 + h % 10;
    format!("{}\nThus the coherency score is {s}", pick(SCORE_REMARKS, h, 4))
}

/// Produces the mock completion text for a request.
pub fn mock_complete(request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    let prompt = request.user_text();
    let h = request_hash(request);
    let content = if is_generation_prompt(&prompt) {
        generation_output(&prompt, h)
    } else if is_scoring_prompt(&prompt) {
        scoring_output(h)
    } else {
        return Err(GatewayError::UnrecognizedPromptShape);
    };
    Ok(ChatResponse {
        prompt_tokens: prompt.split_whitespace().count() as u64,
        completion_tokens: content.split_whitespace().count() as u64,
        content,
        finish_reason: "stop".into(),
        backend: BackendKind::Mock,
        cached: false,
    })
}

#[derive(Debug, Default)]
pub struct MockBackend {
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        mock_complete(request).map_err(BackendError::Fatal)
    }
}
