//! Stage orchestration: ingest, sample, generate, score, curate, write, stats.
//!
//! Every LLM-backed stage appends one record per finished group to its
//! checkpoint, so an interrupted run resumes where it stopped. Stage keys chain
//! the digests of their inputs; changing e.g. the threshold invalidates only
//! the curated stage.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use futures::stream::{self, StreamExt};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tracing::info;

use crate::checkpoint::{read_jsonl, CheckpointError, Checkpoints, Stage};
use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::{deduplicate, ingest, SentenceStore};
use crate::curator::{
    assemble, curate, group_by_task, AuditRecord, CandidateFailure, CurateError, CuratedSet, Curator,
    GenerationRecord, PretrainDataset, ScoreRecord, ScoredInstance,
};
use crate::dataset_io::{compute_stats, write_dataset, CorpusCounts, GroupCounts, Manifest};
use crate::digest::{json_digest, sha256_hex};
use crate::gateway::{ChatBackend, Gateway, GatewayStats};
use crate::sampler::{sample_groups, SampleGroup};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage_err(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        PipelineError::Stage { stage: "checkpoint", message: e.to_string() }
    }
}

/// Files produced under the output directory.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub root: PathBuf,
    pub store: PathBuf,
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub audit: PathBuf,
    pub events: PathBuf,
    pub summary: PathBuf,
    pub checkpoints: PathBuf,
}

impl OutputPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            store: root.join("store.jsonl"),
            dataset: root.join("dataset.txt"),
            manifest: root.join("manifest.json"),
            audit: root.join("audit.jsonl"),
            events: root.join("events.jsonl"),
            summary: root.join("summary.txt"),
            checkpoints: root.join("checkpoints"),
        }
    }
}

/// JSONL event log, truncated at the start of each run.
struct EventLog {
    file: Mutex<File>,
}

impl EventLog {
    fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn emit(&self, event: &str, fields: Value) {
        let ts_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let mut record = json!({ "ts_ms": ts_ms, "event": event });
        if let (Some(obj), Value::Object(extra)) = (record.as_object_mut(), fields) {
            obj.extend(extra);
        }
        let mut line = record.to_string();
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        let _ = f.write_all(line.as_bytes());
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: Manifest,
    pub summary: String,
    pub gateway: GatewayStats,
    pub paths: OutputPaths,
    /// Stages loaded from a complete checkpoint instead of being executed.
    pub skipped_stages: Vec<Stage>,
}

pub struct Pipeline {
    config: PipelineConfig,
    backend: Option<Arc<dyn ChatBackend>>,
}

enum Resume {
    Fresh,
    Partial,
    Done,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config, backend: None }
    }

    /// Replaces the backend named in the config, e.g. with an instrumented one.
    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    fn resume_state(&self, cp: &Checkpoints, stage: Stage, key: &str) -> Result<Resume, PipelineError> {
        match cp.meta(stage) {
            Some(m) if self.config.resume && m.key == key && m.complete => Ok(Resume::Done),
            Some(m) if self.config.resume && m.key == key => Ok(Resume::Partial),
            _ => {
                cp.reset(stage, key)?;
                Ok(Resume::Fresh)
            }
        }
    }

    pub async fn run(&self) -> Result<RunReport, PipelineError> {
        let cfg = &self.config;
        cfg.validate()?;
        let templates = cfg.templates()?;
        let config_digest = cfg.digest(&templates);
        let paths = OutputPaths::new(&cfg.out);
        fs::create_dir_all(&paths.root).map_err(|e| stage_err("setup")(&e))?;
        let events = EventLog::create(&paths.events).map_err(|e| stage_err("setup")(&e))?;
        events.emit("run_start", json!({ "config_digest": config_digest, "seed": cfg.seed }));

        let result = self.run_stages(&paths, &events, &templates, &config_digest).await;
        match &result {
            Ok(r) => events.emit(
                "run_complete",
                json!({ "instances": r.manifest.stats.total_instances, "dataset_digest": r.manifest.dataset_digest }),
            ),
            Err(e) => events.emit("run_failed", json!({ "error": e.to_string() })),
        }
        result
    }

    async fn run_stages(
        &self,
        paths: &OutputPaths,
        events: &EventLog,
        templates: &crate::prompting::Templates,
        config_digest: &str,
    ) -> Result<RunReport, PipelineError> {
        let cfg = &self.config;
        let mut skipped = Vec::new();

        // ingest
        let inputs = cfg.resolve_inputs()?;
        let raw = ingest(&inputs).map_err(|e| stage_err("ingest")(&e))?;
        let store = Arc::new(deduplicate(&raw));
        store.write_jsonl(&paths.store).map_err(|e| stage_err("ingest")(&e))?;
        let store_digest = sha256_hex(store.to_jsonl().as_bytes());
        let corpus = CorpusCounts { ingested: raw.len(), deduplicated: store.len() };
        events.emit("stage_complete", json!({ "stage": "ingest", "ingested": corpus.ingested, "unique": corpus.deduplicated }));
        info!(ingested = corpus.ingested, unique = corpus.deduplicated, "corpus ready");

        let gateway = match &self.backend {
            Some(b) => Gateway::new(cfg.gateway_config(), b.clone()),
            None => Gateway::from_config(cfg.gateway_config()),
        }
        .map_err(|e| stage_err("setup")(&e))?;
        let curator = Curator::new(gateway.clone(), templates.clone(), cfg.curation());
        let cp = Checkpoints::open(&paths.checkpoints)?;

        // groups
        let groups_key = json_digest(&json!({ "store": store_digest, "seed": cfg.seed, "max_groups": cfg.max_groups }));
        let groups: Vec<SampleGroup> = match self.resume_state(&cp, Stage::Groups, &groups_key)? {
            Resume::Done => {
                skipped.push(Stage::Groups);
                cp.read_checkpoint(Stage::Groups)?
            }
            _ => {
                cp.reset(Stage::Groups, &groups_key)?;
                let g = sample_groups(&store, cfg.seed, cfg.max_groups).map_err(|e| stage_err("groups")(&e))?;
                cp.write_checkpoint(Stage::Groups, &g)?;
                cp.mark_complete(Stage::Groups, &groups_key)?;
                g
            }
        };
        events.emit("stage_complete", json!({ "stage": "groups", "groups": groups.len() }));

        // generations
        let gen_key = json_digest(&json!({
            "groups": groups_key,
            "backend": cfg.gateway.backend,
            "model": cfg.gateway.model,
            "temperature": cfg.gateway.temperature,
            "max_tokens": cfg.gateway.max_tokens,
            "plans_per_group": cfg.plans_per_group,
            "parse_retries": cfg.parse_retries,
            "template": templates.generation.body(),
        }));
        let generations: Vec<GenerationRecord> = self
            .run_llm_stage(&cp, events, Stage::Generations, &gen_key, &groups, &mut skipped, |g| g.group_id, {
                let curator = curator.clone();
                let store = store.clone();
                move |group: SampleGroup| {
                    let curator = curator.clone();
                    let store = store.clone();
                    async move {
                        match curator.generate_candidates(&group, &store).await {
                            Ok(rec) => Ok(rec),
                            Err(CurateError::AllCandidatesFailed { group_id, reasons }) => Ok(GenerationRecord {
                                group_id,
                                candidates: vec![],
                                failures: reasons
                                    .into_iter()
                                    .enumerate()
                                    .map(|(index, reason)| CandidateFailure { index, reason })
                                    .collect(),
                            }),
                            Err(e) => Err(e),
                        }
                    }
                }
            })
            .await?;
        for rec in generations.iter().filter(|r| r.candidates.is_empty()) {
            events.emit("group_dropped", json!({ "stage": "generations", "group_id": rec.group_id, "reason": "all candidates failed to parse", "failures": rec.failures }));
        }

        // scores
        let scores_key = json_digest(&json!({
            "generations": gen_key,
            "scores_per_plan": cfg.scores_per_plan,
            "score_retries": cfg.score_retries,
            "template": templates.scoring.body(),
        }));
        let parsed: Vec<GenerationRecord> = generations.iter().filter(|r| !r.candidates.is_empty()).cloned().collect();
        let scores: Vec<ScoreRecord> = self
            .run_llm_stage(&cp, events, Stage::Scores, &scores_key, &parsed, &mut skipped, |r| r.group_id, {
                let curator = curator.clone();
                move |rec: GenerationRecord| {
                    let curator = curator.clone();
                    async move { curator.score_group(&rec).await }
                }
            })
            .await?;
        for rec in scores.iter().filter(|r| r.plans.is_empty()) {
            events.emit("group_dropped", json!({ "stage": "scores", "group_id": rec.group_id, "reason": "no scorable candidate", "failures": rec.unscorable }));
        }

        // curated
        let curated_key = json_digest(&json!({ "scores": scores_key, "threshold": cfg.threshold }));
        let dataset: PretrainDataset = match self.resume_state(&cp, Stage::Curated, &curated_key)? {
            Resume::Done => {
                skipped.push(Stage::Curated);
                let instances: Vec<ScoredInstance> = cp.read_checkpoint(Stage::Curated)?;
                assemble(group_by_task(&CuratedSet { instances })).map_err(|e| stage_err("curated")(&e))?
            }
            _ => {
                cp.reset(Stage::Curated, &curated_key)?;
                let curation = curate(&scores, cfg.threshold).map_err(|e| stage_err("curated")(&e))?;
                write_jsonl_file(&paths.audit, &curation.audit).map_err(|e| stage_err("curated")(&e))?;
                let selected: Vec<&ScoredInstance> = {
                    let mut v: Vec<&ScoredInstance> = curation.dataset.instances().collect();
                    v.sort_by_key(|i| i.group_id);
                    v
                };
                cp.write_checkpoint(Stage::Curated, &selected)?;
                cp.mark_complete(Stage::Curated, &curated_key)?;
                curation.dataset
            }
        };
        events.emit("stage_complete", json!({ "stage": "curated", "instances": dataset.total_instances }));

        // write + stats
        let dataset_digest = write_dataset(&dataset, &paths.dataset).map_err(|e| stage_err("write")(&e))?;
        let parsed_groups = parsed.len();
        let scored_groups = scores.iter().filter(|r| !r.plans.is_empty()).count();
        let manifest = Manifest {
            seed: cfg.seed,
            config_digest: config_digest.to_string(),
            corpus,
            groups: GroupCounts {
                sampled: groups.len(),
                generated: generations.len(),
                parsed: parsed_groups,
                scored: scored_groups,
                selected: dataset.total_instances,
            },
            stats: compute_stats(&dataset),
            dataset_digest,
        };
        manifest.check().map_err(|e| stage_err("stats")(&e))?;
        manifest.write(&paths.manifest).map_err(|e| stage_err("stats")(&e))?;

        let gw_stats = gateway.stats();
        let summary = render_summary(&manifest, cfg.threshold, &gw_stats);
        fs::write(&paths.summary, &summary).map_err(|e| stage_err("stats")(&e))?;
        Ok(RunReport { manifest, summary, gateway: gw_stats, paths: paths.clone(), skipped_stages: skipped })
    }

    /// Runs `work` over every item not yet checkpointed, at most
    /// `concurrency` at a time, appending each result as it lands. Returns
    /// all records sorted by group id.
    #[allow(clippy::too_many_arguments)]
    async fn run_llm_stage<I, R, F, Fut>(
        &self,
        cp: &Checkpoints,
        events: &EventLog,
        stage: Stage,
        key: &str,
        items: &[I],
        skipped: &mut Vec<Stage>,
        id_of_item: impl Fn(&I) -> usize,
        work: F,
    ) -> Result<Vec<R>, PipelineError>
    where
        I: Clone,
        R: Serialize + serde::de::DeserializeOwned + HasGroupId,
        F: Fn(I) -> Fut,
        Fut: std::future::Future<Output = Result<R, CurateError>>,
    {
        let name = stage.name();
        let mut records: Vec<R> = match self.resume_state(cp, stage, key)? {
            Resume::Done => {
                skipped.push(stage);
                let mut r: Vec<R> = cp.read_checkpoint(stage)?;
                r.sort_by_key(|x| x.group_id());
                events.emit("stage_skipped", json!({ "stage": name, "records": r.len() }));
                return Ok(r);
            }
            Resume::Partial => {
                let r: Vec<R> = cp.read_checkpoint(stage)?;
                events.emit("stage_resumed", json!({ "stage": name, "records": r.len() }));
                r
            }
            Resume::Fresh => Vec::new(),
        };
        let done: HashSet<usize> = records.iter().map(|r| r.group_id()).collect();
        let pending: Vec<I> = items.iter().filter(|i| !done.contains(&id_of_item(i))).cloned().collect();
        info!(stage = name, pending = pending.len(), done = done.len(), "running stage");

        let mut writer = cp.writer(stage)?;
        let mut results = stream::iter(pending).map(&work).buffer_unordered(self.config.concurrency);
        while let Some(res) = results.next().await {
            let rec = res.map_err(|e| stage_err(name)(&e))?;
            writer.append(&rec)?;
            records.push(rec);
        }
        cp.mark_complete(stage, key)?;
        records.sort_by_key(|r| r.group_id());
        events.emit("stage_complete", json!({ "stage": name, "records": records.len() }));
        Ok(records)
    }
}

pub trait HasGroupId {
    fn group_id(&self) -> usize;
}

impl HasGroupId for GenerationRecord {
    fn group_id(&self) -> usize {
        self.group_id
    }
}

impl HasGroupId for ScoreRecord {
    fn group_id(&self) -> usize {
        self.group_id
    }
}

fn write_jsonl_file<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    fs::write(path, out)
}

/// Reads the audit log written by the curated stage.
pub fn read_audit(path: &Path) -> Result<Vec<AuditRecord>, CheckpointError> {
    read_jsonl(path)
}

pub fn render_summary(m: &Manifest, threshold: f64, gw: &GatewayStats) -> String {
    let g = &m.groups;
    let mut s = String::new();
    s.push_str(&format!("corpus      {} lines ingested, {} unique\n", m.corpus.ingested, m.corpus.deduplicated));
    s.push_str(&format!("sampled     {} groups of 5\n", g.sampled));
    s.push_str(&format!("generated   {}\n", g.generated));
    s.push_str(&format!("parsed      {}  (dropped {}: no parseable candidate)\n", g.parsed, g.generated - g.parsed));
    s.push_str(&format!("scored      {}  (dropped {}: no scorable candidate)\n", g.scored, g.parsed - g.scored));
    s.push_str(&format!(
        "selected    {}  (dropped {}: mean score below {threshold})\n",
        g.selected,
        g.scored - g.selected
    ));
    s.push_str(&format!(
        "dataset     {} instances, {:.2} words per paragraph\n",
        m.stats.total_instances, m.stats.mean_paragraph_words
    ));
    s.push_str("tasks\n");
    for (task, n) in m.stats.report_distribution() {
        s.push_str(&format!("  {n:>6}  {task}\n"));
    }
    s.push_str(&format!(
        "llm         {} backend calls, {} cache hits, {} retries\n",
        gw.backend_calls, gw.cache_hits, gw.retries
    ));
    s.push_str(&format!("digest      {}\n", m.dataset_digest));
    s
}

/// Loads a sentence store written by a previous run.
pub fn load_store(path: &Path) -> Result<SentenceStore, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| stage_err("ingest")(&e))?;
    SentenceStore::from_jsonl(&text).map_err(|e| stage_err("ingest")(&e))
}
