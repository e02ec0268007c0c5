//! Pretraining text output, dataset statistics and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curator::PretrainDataset;
use crate::digest::sha256_hex;

/// Line separating documents in the dataset file.
pub const DOC_SEPARATOR: &str = "<|doc|>";

/// Reason (plan) first, blank line, then the example paragraph.
pub fn render_document(plan: &str, example: &str) -> String {
    format!("{plan}\n\n{example}")
}

/// Full file contents: documents joined by separator lines, trailing newline.
pub fn render_dataset(dataset: &PretrainDataset) -> String {
    let docs: Vec<String> = dataset.instances().map(|i| render_document(&i.plan, &i.example)).collect();
    if docs.is_empty() {
        return String::new();
    }
    let mut out = docs.join(&format!("\n{DOC_SEPARATOR}\n"));
    out.push('\n');
    out
}

/// Writes the dataset file and returns the SHA-256 of its bytes.
pub fn write_dataset(dataset: &PretrainDataset, path: &Path) -> std::io::Result<String> {
    let body = render_dataset(dataset);
    fs::write(path, body.as_bytes())?;
    Ok(sha256_hex(body.as_bytes()))
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_instances: usize,
    pub empty: bool,
    pub mean_paragraph_words: f64,
    /// Exact instance counts keyed by task display name.
    pub task_distribution: BTreeMap<String, usize>,
}

impl DatasetStats {
    /// Task counts with single-occurrence tasks folded into "others".
    pub fn report_distribution(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = Vec::new();
        let mut others = 0;
        for (task, &n) in &self.task_distribution {
            if n == 1 {
                others += 1;
            } else {
                rows.push((task.clone(), n));
            }
        }
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if others > 0 {
            rows.push(("others".into(), others));
        }
        rows
    }
}

pub fn compute_stats(dataset: &PretrainDataset) -> DatasetStats {
    let words: Vec<usize> = dataset.instances().map(|i| word_count(&i.example)).collect();
    let mean_paragraph_words = if words.is_empty() {
        0.0
    } else {
        words.iter().sum::<usize>() as f64 / words.len() as f64
    };
    let mut task_distribution = BTreeMap::new();
    for g in &dataset.groups {
        *task_distribution.entry(g.task.display.clone()).or_insert(0) += g.instances.len();
    }
    DatasetStats {
        total_instances: dataset.total_instances,
        empty: words.is_empty(),
        mean_paragraph_words,
        task_distribution,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub ingested: usize,
    pub deduplicated: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub sampled: usize,
    /// Groups for which every generation request returned.
    pub generated: usize,
    /// Groups with at least one parseable candidate.
    pub parsed: usize,
    /// Groups with at least one fully scored candidate.
    pub scored: usize,
    /// Groups whose selected candidate passed the threshold.
    pub selected: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_digest: String,
    pub corpus: CorpusCounts,
    pub groups: GroupCounts,
    pub stats: DatasetStats,
    pub dataset_digest: String,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut body = serde_json::to_string_pretty(self).expect("manifest serializes");
        body.push('\n');
        fs::write(path, body)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Consistency checks between pipeline counts and dataset statistics.
    pub fn check(&self) -> Result<(), String> {
        let dist: usize = self.stats.task_distribution.values().sum();
        if dist != self.stats.total_instances {
            return Err(format!("task distribution sums to {dist}, dataset has {}", self.stats.total_instances));
        }
        let g = &self.groups;
        if !(g.selected <= g.scored && g.scored <= g.parsed && g.parsed <= g.generated && g.generated <= g.sampled) {
            return Err(format!("group funnel is not monotone: {g:?}"));
        }
        if self.corpus.deduplicated > self.corpus.ingested {
            return Err("more deduplicated sentences than ingested".into());
        }
        Ok(())
    }
}
