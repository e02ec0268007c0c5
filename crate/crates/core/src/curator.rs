//! Candidate generation, coherency scoring, best-of-k selection, threshold
//! filtering and task grouping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::corpus::SentenceStore;
use crate::gateway::{Gateway, GatewayError};
use crate::parser::{normalize_task_name, parse_generation, parse_score, GenerationResult, TaskKey};
use crate::prompting::{PromptError, Templates};
use crate::sampler::SampleGroup;

pub const DEFAULT_THRESHOLD: f64 = 7.0;
pub const DEFAULT_PLANS_PER_GROUP: usize = 2;
pub const DEFAULT_SCORES_PER_PLAN: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurateError {
    #[error("group {group_id}: no candidate parsed ({reasons:?})")]
    AllCandidatesFailed { group_id: usize, reasons: Vec<String> },
    #[error("candidate could not be scored: {0}")]
    Unscorable(String),
    #[error("no candidates to select from")]
    EmptyCandidateList,
    #[error("task key {0:?} appears in more than one group")]
    DuplicateTaskKey(String),
    #[error("threshold {0} outside [1, 10]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub plans_per_group: usize,
    pub scores_per_plan: usize,
    /// Re-requests after an unparseable generation, per candidate.
    pub parse_retries: u32,
    /// Re-requests after an unparseable score, per scoring slot.
    pub score_retries: u32,
    pub threshold: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            plans_per_group: DEFAULT_PLANS_PER_GROUP,
            scores_per_plan: DEFAULT_SCORES_PER_PLAN,
            parse_retries: 2,
            score_retries: 2,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

pub fn validate_threshold(threshold: f64) -> Result<(), CurateError> {
    if (1.0..=10.0).contains(&threshold) {
        Ok(())
    } else {
        Err(CurateError::InvalidThreshold(threshold))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub generation: GenerationResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub index: usize,
    pub reason: String,
}

/// Checkpointed outcome of the generation stage for one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub group_id: usize,
    pub candidates: Vec<Candidate>,
    pub failures: Vec<CandidateFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePlan {
    pub index: usize,
    pub generation: GenerationResult,
    pub scores: Vec<u8>,
    pub mean_score: f64,
}

impl CandidatePlan {
    pub fn new(index: usize, generation: GenerationResult, scores: Vec<u8>) -> Self {
        let mean_score = mean_score(&scores);
        Self { index, generation, scores, mean_score }
    }
}

/// Checkpointed outcome of the scoring stage for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub group_id: usize,
    pub plans: Vec<CandidatePlan>,
    pub unscorable: Vec<CandidateFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub group_id: usize,
    pub candidate_index: usize,
    pub example: String,
    pub plan: String,
    pub task: TaskKey,
    pub labels: Vec<String>,
    pub scores: Vec<u8>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CuratedSet {
    pub instances: Vec<ScoredInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGroup {
    pub task: TaskKey,
    pub instances: Vec<ScoredInstance>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainDataset {
    pub groups: Vec<TaskGroup>,
    pub total_instances: usize,
}

impl PretrainDataset {
    pub fn instances(&self) -> impl Iterator<Item = &ScoredInstance> {
        self.groups.iter().flat_map(|g| g.instances.iter())
    }
}

/// One line of the audit log, per scored or unscorable candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub group_id: usize,
    pub candidate_index: usize,
    pub scores: Option<Vec<u8>>,
    pub mean: Option<f64>,
    /// Won best-of-k selection within its group.
    pub selected: bool,
    /// Selected but removed by the threshold filter.
    pub filtered: bool,
    pub in_dataset: bool,
    pub task_key: Option<String>,
}

pub fn mean_score(scores: &[u8]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|&s| u32::from(s)).sum::<u32>() as f64 / scores.len() as f64
}

/// Highest mean wins; on an exact tie the earliest candidate is kept.
pub fn select_best(candidates: &[CandidatePlan]) -> Result<&CandidatePlan, CurateError> {
    let mut iter = candidates.iter();
    let mut best = iter.next().ok_or(CurateError::EmptyCandidateList)?;
    for c in iter {
        if c.mean_score > best.mean_score {
            best = c;
        }
    }
    Ok(best)
}

pub fn to_instance(group_id: usize, plan: &CandidatePlan) -> ScoredInstance {
    let task = normalize_task_name(&plan.generation.task_raw).unwrap_or_else(|_| TaskKey {
        key: plan.generation.task_raw.to_lowercase(),
        display: plan.generation.task_raw.clone(),
    });
    ScoredInstance {
        group_id,
        candidate_index: plan.index,
        example: plan.generation.paragraph.clone(),
        plan: plan.generation.plan.clone(),
        task,
        labels: plan.generation.labels.clone(),
        scores: plan.scores.clone(),
        mean_score: plan.mean_score,
    }
}

/// Keeps instances whose mean score reaches `threshold` (inclusive), in input order.
pub fn filter_select(instances: Vec<ScoredInstance>, threshold: f64) -> CuratedSet {
    CuratedSet { instances: instances.into_iter().filter(|i| i.mean_score >= threshold).collect() }
}

/// Partitions by task key; groups ordered by key, members by group id.
pub fn group_by_task(selected: &CuratedSet) -> Vec<TaskGroup> {
    let mut by_key: BTreeMap<&str, Vec<&ScoredInstance>> = BTreeMap::new();
    for inst in &selected.instances {
        by_key.entry(inst.task.key.as_str()).or_default().push(inst);
    }
    by_key
        .into_values()
        .map(|mut members| {
            members.sort_by_key(|i| (i.group_id, i.candidate_index));
            TaskGroup {
                task: members[0].task.clone(),
                instances: members.into_iter().cloned().collect(),
            }
        })
        .collect()
}

pub fn assemble(groups: Vec<TaskGroup>) -> Result<PretrainDataset, CurateError> {
    let mut seen = std::collections::HashSet::new();
    for g in &groups {
        if !seen.insert(g.task.key.clone()) {
            return Err(CurateError::DuplicateTaskKey(g.task.key.clone()));
        }
    }
    let total_instances = groups.iter().map(|g| g.instances.len()).sum();
    Ok(PretrainDataset { groups, total_instances })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curation {
    pub dataset: PretrainDataset,
    pub audit: Vec<AuditRecord>,
    /// Groups with at least one scorable candidate.
    pub scored_groups: usize,
    pub unscorable_groups: usize,
    pub below_threshold: usize,
}

/// Selection, filtering, grouping and assembly over all scoring records.
///
/// Records are ordered by group id first, so the result does not depend on
/// worker completion order.
pub fn curate(records: &[ScoreRecord], threshold: f64) -> Result<Curation, CurateError> {
    validate_threshold(threshold)?;
    let mut records: Vec<&ScoreRecord> = records.iter().collect();
    records.sort_by_key(|r| r.group_id);

    let mut out = Curation::default();
    let mut winners = Vec::new();
    for rec in records {
        let winner = select_best(&rec.plans).ok().map(|w| w.index);
        match winner {
            Some(_) => out.scored_groups += 1,
            None => out.unscorable_groups += 1,
        }
        let mut rows: Vec<AuditRecord> = rec
            .plans
            .iter()
            .map(|p| {
                let selected = Some(p.index) == winner;
                let filtered = selected && p.mean_score < threshold;
                AuditRecord {
                    group_id: rec.group_id,
                    candidate_index: p.index,
                    scores: Some(p.scores.clone()),
                    mean: Some(p.mean_score),
                    selected,
                    filtered,
                    in_dataset: selected && !filtered,
                    task_key: normalize_task_name(&p.generation.task_raw).ok().map(|k| k.key),
                }
            })
            .collect();
        rows.extend(rec.unscorable.iter().map(|f| AuditRecord {
            group_id: rec.group_id,
            candidate_index: f.index,
            scores: None,
            mean: None,
            selected: false,
            filtered: false,
            in_dataset: false,
            task_key: None,
        }));
        rows.sort_by_key(|r| r.candidate_index);
        out.audit.extend(rows);
        if let Some(w) = winner {
            let plan = rec.plans.iter().find(|p| p.index == w).expect("winner exists");
            winners.push(to_instance(rec.group_id, plan));
        }
    }
    let considered = winners.len();
    let selected = filter_select(winners, threshold);
    out.below_threshold = considered - selected.instances.len();
    out.dataset = assemble(group_by_task(&selected))?;
    Ok(out)
}

/// Issues generation and scoring requests through a [`Gateway`].
#[derive(Clone)]
pub struct Curator {
    gateway: Gateway,
    templates: Templates,
    config: CurationConfig,
}

impl Curator {
    pub fn new(gateway: Gateway, templates: Templates, config: CurationConfig) -> Self {
        Self { gateway, templates, config }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn config(&self) -> &CurationConfig {
        &self.config
    }

    /// Requests `plans_per_group` independent generations. Unparseable replies
    /// are re-requested up to `parse_retries` times, then counted as failures.
    pub async fn generate_candidates(
        &self,
        group: &SampleGroup,
        store: &SentenceStore,
    ) -> Result<GenerationRecord, CurateError> {
        let prompt = self.templates.render_generation(group, store)?;
        let gw = self.gateway.config();
        let mut record = GenerationRecord { group_id: group.group_id, candidates: vec![], failures: vec![] };
        for index in 0..self.config.plans_per_group {
            let mut last_err = String::new();
            let mut parsed = None;
            for attempt in 0..=self.config.parse_retries {
                let req = gw.request(prompt.text.clone()).with_sample(index as u32, attempt);
                let resp = self.gateway.complete(&req).await?;
                match parse_generation(&resp.content) {
                    Ok(g) => {
                        parsed = Some(g);
                        break;
                    }
                    Err(e) => {
                        debug!(group = group.group_id, index, attempt, error = %e, "unparseable generation");
                        last_err = e.to_string();
                    }
                }
            }
            match parsed {
                Some(generation) => record.candidates.push(Candidate { index, generation }),
                None => record.failures.push(CandidateFailure { index, reason: last_err }),
            }
        }
        if record.candidates.is_empty() {
            warn!(group = group.group_id, "all candidates failed to parse");
            return Err(CurateError::AllCandidatesFailed {
                group_id: group.group_id,
                reasons: record.failures.into_iter().map(|f| f.reason).collect(),
            });
        }
        Ok(record)
    }

    /// Scores the paragraph `scores_per_plan` times with independent requests.
    pub async fn score_candidate(&self, candidate: &Candidate) -> Result<CandidatePlan, CurateError> {
        let prompt = self.templates.render_score(&candidate.generation.paragraph)?;
        let gw = self.gateway.config();
        let mut scores = Vec::with_capacity(self.config.scores_per_plan);
        for slot in 0..self.config.scores_per_plan {
            let mut score = None;
            let mut last_err = String::new();
            for attempt in 0..=self.config.score_retries {
                let req = gw.request(prompt.text.clone()).with_sample(slot as u32, attempt);
                let resp = self.gateway.complete(&req).await?;
                match parse_score(&resp.content) {
                    Ok(s) => {
                        score = Some(s);
                        break;
                    }
                    Err(e) => last_err = e.to_string(),
                }
            }
            match score {
                Some(s) => scores.push(s),
                None => return Err(CurateError::Unscorable(format!("slot {slot}: {last_err}"))),
            }
        }
        Ok(CandidatePlan::new(candidate.index, candidate.generation.clone(), scores))
    }

    pub async fn score_group(&self, record: &GenerationRecord) -> Result<ScoreRecord, CurateError> {
        let mut out = ScoreRecord { group_id: record.group_id, plans: vec![], unscorable: vec![] };
        for c in &record.candidates {
            match self.score_candidate(c).await {
                Ok(plan) => out.plans.push(plan),
                Err(CurateError::Unscorable(reason)) => {
                    out.unscorable.push(CandidateFailure { index: c.index, reason })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}
