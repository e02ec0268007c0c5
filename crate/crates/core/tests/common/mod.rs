// Each test target uses a different subset of these helpers.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use taskforge::gateway::{
    BackendError, BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError, MockBackend,
};
use taskforge::prompting::SCORING_INSTRUCTION;
use taskforge::PipelineConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Mock-backed config writing to `out`, fast backoff.
pub fn mock_config(inputs: Vec<PathBuf>, out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig { inputs, out: out.to_path_buf(), seed: 42, ..Default::default() };
    c.gateway.backoff_initial_ms = 1;
    c.gateway.backoff_max_ms = 2;
    c
}

const SUBJECTS: &[&str] = &["the dog", "a girl", "my brother", "the teacher", "our cat", "that bird", "the farmer"];
const VERBS: &[&str] = &["sees", "finds", "carries", "draws", "wants", "holds", "paints", "kicks"];
const OBJECTS: &[&str] = &["a ball", "the red box", "two apples", "a small boat", "the blue kite", "some bread"];

/// Writes `n` distinct synthetic sentences and returns the file path.
pub fn synthetic_corpus(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::new();
    for i in 0..n {
        let s = SUBJECTS[i % SUBJECTS.len()];
        let v = VERBS[(i / SUBJECTS.len()) % VERBS.len()];
        let o = OBJECTS[(i / 3) % OBJECTS.len()];
        text.push_str(&format!("Sentence {i}: {s} {v} {o}.\n"));
    }
    let path = dir.join(format!("synthetic_{n}.txt"));
    fs::write(&path, text).unwrap();
    path
}

/// Mock backend that records every prompt it answers and can be told to
/// fail permanently after a number of calls.
#[derive(Default)]
pub struct Recording {
    inner: MockBackend,
    pub prompts: Mutex<Vec<String>>,
    fail_after: Option<u64>,
    calls: AtomicU64,
}

impl Recording {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn failing_after(calls: u64) -> Self {
        Self { fail_after: Some(calls), ..Self::default() }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

#[async_trait]
impl ChatBackend for Recording {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|limit| n >= limit) {
            return Err(BackendError::Fatal(GatewayError::TransportError("connection reset".into())));
        }
        self.prompts.lock().unwrap().push(request.user_text());
        self.inner.send(request).await
    }
}

/// Sleeps on every call and tracks the peak number of concurrent calls.
pub struct Slow {
    pub delay: Duration,
    current: AtomicUsize,
    pub peak: AtomicUsize,
    pub calls: AtomicUsize,
}

impl Slow {
    pub fn new(delay: Duration) -> Self {
        Self { delay, current: AtomicUsize::new(0), peak: AtomicUsize::new(0), calls: AtomicUsize::new(0) }
    }
}

#[async_trait]
impl ChatBackend for Slow {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        tokio::time::sleep(self.delay).await;
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok(ChatResponse {
            content: format!("echo {}", request.user_text().len()),
            finish_reason: "stop".into(),
            prompt_tokens: 1,
            completion_tokens: 2,
            backend: BackendKind::Mock,
            cached: false,
        })
    }
}

/// Answers generation prompts with the listed sentences as the paragraph.
/// Paragraphs containing the word `low` get scores 7,7,7,7,6 over the five
/// slots; all others get 7 in every slot.
pub struct Judge;

pub fn judge_scores(low: bool) -> [u8; 5] {
    if low {
        [7, 7, 7, 7, 6]
    } else {
        [7; 5]
    }
}

#[async_trait]
impl ChatBackend for Judge {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let prompt = request.user_text();
        let content = if let Some(paragraph) = prompt.strip_prefix(SCORING_INSTRUCTION) {
            let low = paragraph.split_whitespace().any(|w| w.trim_matches('.') == "low");
            let s = judge_scores(low)[request.sample_index as usize % 5];
            format!("Reads fine.\nThus the coherency score is {s}")
        } else {
            let sentences: Vec<&str> = prompt
                .lines()
                .filter_map(|l| l.split_once(". ").filter(|(n, _)| n.parse::<u8>().is_ok()).map(|(_, s)| s))
                .collect();
            let paragraph = sentences.join(" ");
            let task = if paragraph.split_whitespace().any(|w| w.trim_matches('.') == "low") {
                "Low Detection"
            } else {
                "High Detection"
            };
            format!("Plan:\n1. Join them\nParagraph:\n{paragraph}\nTask:\n[{task}]\nLabels:\n1. yes\n2. no")
        };
        Ok(ChatResponse {
            content,
            finish_reason: "stop".into(),
            prompt_tokens: 1,
            completion_tokens: 1,
            backend: BackendKind::Mock,
            cached: false,
        })
    }
}

fn line(max_words: usize) -> impl proptest::strategy::Strategy<Value = String> {
    use proptest::prelude::*;
    prop::collection::vec("[A-Za-z][a-z']{0,7}[,.?!]?", 1..=max_words).prop_map(|w| w.join(" "))
}

/// Four-section results whose canonical rendering contains no stray headers.
pub fn well_formed_generation() -> impl proptest::strategy::Strategy<Value = taskforge::parser::GenerationResult> {
    use proptest::prelude::*;
    (
        prop::collection::vec(line(10), 1..6),
        prop::collection::vec(line(25), 1..4),
        line(4),
        prop::collection::vec(line(3), 0..6),
    )
        .prop_map(|(plan, paragraph, task, labels)| taskforge::parser::GenerationResult {
            plan: plan.join("\n"),
            paragraph: paragraph.join("\n"),
            task_raw: task,
            labels,
        })
}
