//! Parsing of the four-section generation output and the coherency-score line.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Section {
    Plan,
    Paragraph,
    Task,
    Labels,
}

impl Section {
    pub const ALL: [Section; 4] = [Section::Plan, Section::Paragraph, Section::Task, Section::Labels];

    pub fn header(self) -> &'static str {
        match self {
            Section::Plan => "Plan:",
            Section::Paragraph => "Paragraph:",
            Section::Task => "Task:",
            Section::Labels => "Labels:",
        }
    }

    /// Matches a header at the start of `line`, returning the rest of the line.
    fn strip_header(self, line: &str) -> Option<&str> {
        let h = self.header();
        let head = line.get(..h.len())?;
        head.eq_ignore_ascii_case(h).then(|| &line[h.len()..])
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header().trim_end_matches(':'))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseError {
    #[error("missing section {0}")]
    MissingSection(Section),
    #[error("section {0} appears more than once")]
    DuplicateSection(Section),
    #[error("section {0} is empty")]
    EmptySection(Section),
    #[error("no coherency score line")]
    ScoreLineMissing,
    #[error("coherency score {0} is outside 1..=10")]
    ScoreOutOfRange(u64),
    #[error("task name is empty after normalization")]
    EmptyAfterNormalization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub plan: String,
    pub paragraph: String,
    pub task_raw: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub key: String,
    pub display: String,
}

fn strip_wrapping_brackets(s: &str) -> &str {
    let t = s.trim();
    match t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        Some(inner) if !inner.contains(['[', ']']) => inner.trim(),
        _ => t,
    }
}

/// Drops a lone bracket left over from a bracketed multi-line block.
fn strip_unbalanced_brackets(s: &str) -> &str {
    let mut t = s.trim();
    let opens = t.matches('[').count();
    let closes = t.matches(']').count();
    if opens > closes {
        t = t.strip_prefix('[').unwrap_or(t).trim_start();
    } else if closes > opens {
        t = t.strip_suffix(']').unwrap_or(t).trim_end();
    }
    t
}

fn enumeration_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\d+[.)]|[-*•])\s+").expect("valid regex"))
}

fn score_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^thus the coherency score is (\d+)\.?$").expect("valid regex")
    })
}

fn parse_labels(content: &str) -> Vec<String> {
    let content = strip_wrapping_brackets(content);
    content
        .lines()
        .map(|line| {
            let line = strip_unbalanced_brackets(line);
            let line = enumeration_marker().replace(line, "");
            strip_wrapping_brackets(&line).to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Splits an LLM response into plan, paragraph, task and labels.
///
/// Headers must begin a line (case-insensitive); text on the header line after
/// the colon belongs to that section. Sections may appear in any order.
pub fn parse_generation(text: &str) -> Result<GenerationResult, ParseError> {
    let mut bodies: [Option<String>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        let hit = Section::ALL
            .iter()
            .enumerate()
            .find_map(|(i, s)| s.strip_header(line).map(|rest| (i, rest)));
        match hit {
            Some((i, rest)) => {
                if bodies[i].is_some() {
                    return Err(ParseError::DuplicateSection(Section::ALL[i]));
                }
                let rest = rest.trim();
                bodies[i] = Some(if rest.is_empty() { String::new() } else { format!("{rest}\n") });
                current = Some(i);
            }
            None => {
                if let Some(i) = current {
                    let body = bodies[i].as_mut().expect("current section is open");
                    body.push_str(line.trim_end());
                    body.push('\n');
                }
            }
        }
    }
    let mut take = |s: Section| -> Result<String, ParseError> {
        bodies[s as usize]
            .take()
            .map(|b| b.trim().to_string())
            .ok_or(ParseError::MissingSection(s))
    };
    let plan = take(Section::Plan)?;
    let paragraph = take(Section::Paragraph)?;
    let task = take(Section::Task)?;
    let labels = take(Section::Labels)?;

    if plan.is_empty() {
        return Err(ParseError::EmptySection(Section::Plan));
    }
    if paragraph.is_empty() {
        return Err(ParseError::EmptySection(Section::Paragraph));
    }
    let task_raw = strip_unbalanced_brackets(strip_wrapping_brackets(&task)).to_string();
    if normalize_task_name(&task_raw).is_err() {
        return Err(ParseError::EmptySection(Section::Task));
    }
    Ok(GenerationResult { plan, paragraph, task_raw, labels: parse_labels(&labels) })
}

/// Canonical four-section rendering; `parse_generation` inverts it.
pub fn render_generation(g: &GenerationResult) -> String {
    let labels = g
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}. {l}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "Plan:\n{}\nParagraph:\n{}\nTask:\n[{}]\nLabels:\n{}",
        g.plan, g.paragraph, g.task_raw, labels
    )
}

/// Reads the score from the last line of the form `Thus the coherency score is N`.
pub fn parse_score(text: &str) -> Result<u8, ParseError> {
    for line in text.lines().rev() {
        if let Some(caps) = score_line().captures(line.trim()) {
            let digits = &caps[1];
            let value = digits.parse::<u64>().unwrap_or(u64::MAX);
            return if (1..=10).contains(&value) {
                Ok(value as u8)
            } else {
                Err(ParseError::ScoreOutOfRange(value))
            };
        }
    }
    Err(ParseError::ScoreLineMissing)
}

const QUOTES: &[char] = &['"', '\'', '`', '“', '”', '‘', '’'];

pub fn normalize_task_name(task_raw: &str) -> Result<TaskKey, ParseError> {
    let mut display = task_raw.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let before = display.len();
        let t = display.trim().trim_end_matches('.').trim();
        let t = strip_wrapping_brackets(t);
        let t = t
            .strip_prefix(QUOTES)
            .and_then(|r| r.strip_suffix(QUOTES))
            .unwrap_or(t)
            .trim();
        display = t.to_string();
        if display.len() == before {
            break;
        }
    }
    if display.is_empty() {
        return Err(ParseError::EmptyAfterNormalization);
    }
    Ok(TaskKey { key: display.to_lowercase(), display })
}
