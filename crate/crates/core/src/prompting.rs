//! Generation and scoring prompt templates.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceStore;
use crate::sampler::SampleGroup;

pub const INPUT_PLACEHOLDER: &str = "{input}";
pub const PARAGRAPH_PLACEHOLDER: &str = "{paragraph}";

pub const DEFAULT_GENERATION_TEMPLATE: &str = "\
Use the given sentences to create an example paragraph of an NLU task and its corresponding labels. The 5 sentences are: {input}.
Make a plan then write and determine. Your output should be of the following format:
Plan:
Your plan here.
Paragraph:
Your paragraph here.
Task:
[Only the task name here, without additional information.]
Labels:
[Only the labels here, without additional information.]";

/// The scoring instruction line. `{s}` is literal text the model is asked to fill in.
pub const SCORING_INSTRUCTION: &str = "Analyze the following paragraph, then at the last line conclude \"Thus the coherency score is {s}\", where s is an integer from 1 to 10.";

pub const DEFAULT_SCORING_TEMPLATE: &str = "\
Analyze the following paragraph, then at the last line conclude \"Thus the coherency score is {s}\", where s is an integer from 1 to 10.

{paragraph}";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("sentence id {0} is not in the store")]
    UnknownSentenceId(usize),
    #[error("paragraph to score is empty")]
    EmptyParagraph,
    #[error("{kind} template must contain {placeholder} exactly once, found {found}")]
    BadPlaceholder { kind: PromptKind, placeholder: &'static str, found: usize },
    #[error("cannot read template {path}: {message}")]
    Unreadable { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Generation,
    Scoring,
}

impl PromptKind {
    pub fn placeholder(self) -> &'static str {
        match self {
            PromptKind::Generation => INPUT_PLACEHOLDER,
            PromptKind::Scoring => PARAGRAPH_PLACEHOLDER,
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            PromptKind::Generation => "generation.txt",
            PromptKind::Scoring => "scoring.txt",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Generation => "generation",
            PromptKind::Scoring => "scoring",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    body: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let placeholder = kind.placeholder();
        let found = body.matches(placeholder).count();
        if found != 1 {
            return Err(PromptError::BadPlaceholder { kind, placeholder, found });
        }
        Ok(Self { kind, body })
    }

    pub fn default_for(kind: PromptKind) -> Self {
        let body = match kind {
            PromptKind::Generation => DEFAULT_GENERATION_TEMPLATE,
            PromptKind::Scoring => DEFAULT_SCORING_TEMPLATE,
        };
        Self::new(kind, body).expect("built-in templates are valid")
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    fn fill(&self, value: &str) -> String {
        let (head, tail) = self
            .body
            .split_once(self.kind.placeholder())
            .expect("placeholder checked at construction");
        let mut out = String::with_capacity(head.len() + value.len() + tail.len());
        out.push_str(head);
        out.push_str(value);
        out.push_str(tail);
        out
    }
}

/// Which request a rendered prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Group(usize),
    Adhoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub kind: PromptKind,
    pub provenance: Provenance,
}

/// The generation/scoring template pair used by a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub generation: PromptTemplate,
    pub scoring: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            generation: PromptTemplate::default_for(PromptKind::Generation),
            scoring: PromptTemplate::default_for(PromptKind::Scoring),
        }
    }
}

impl Templates {
    /// Loads `generation.txt` and/or `scoring.txt` from `dir`; missing files keep the defaults.
    pub fn load_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = Templates::default();
        for kind in [PromptKind::Generation, PromptKind::Scoring] {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Unreadable {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let body = body.strip_suffix('\n').unwrap_or(&body).to_string();
            let t = PromptTemplate::new(kind, body)?;
            match kind {
                PromptKind::Generation => templates.generation = t,
                PromptKind::Scoring => templates.scoring = t,
            }
        }
        Ok(templates)
    }

    pub fn render_generation(
        &self,
        group: &SampleGroup,
        store: &SentenceStore,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut input = String::new();
        for (i, &id) in group.sentence_ids.iter().enumerate() {
            let s = store.get(id).ok_or(PromptError::UnknownSentenceId(id))?;
            input.push('\n');
            input.push_str(&format!("{}. {}", i + 1, s.text));
        }
        Ok(RenderedPrompt {
            text: self.generation.fill(&input),
            kind: PromptKind::Generation,
            provenance: Provenance::Group(group.group_id),
        })
    }

    pub fn render_score(&self, paragraph: &str) -> Result<RenderedPrompt, PromptError> {
        if paragraph.trim().is_empty() {
            return Err(PromptError::EmptyParagraph);
        }
        Ok(RenderedPrompt {
            text: self.scoring.fill(paragraph),
            kind: PromptKind::Scoring,
            provenance: Provenance::Adhoc,
        })
    }
}

/// Renders with the built-in generation template.
pub fn render_generation_prompt(
    group: &SampleGroup,
    store: &SentenceStore,
) -> Result<RenderedPrompt, PromptError> {
    Templates::default().render_generation(group, store)
}

/// Renders with the built-in scoring template.
pub fn render_score_prompt(paragraph: &str) -> Result<RenderedPrompt, PromptError> {
    Templates::default().render_score(paragraph)
}
