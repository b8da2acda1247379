//! Executes an episode matrix (tasks x bias variants) under one framework,
//! streaming records into the manifest.
//!
//! Episodes run concurrently up to the worker budget; turns within an
//! episode are strictly sequential. Workers hand their records to an
//! ordered sink that flushes episodes in matrix order, so manifests are
//! reproducible regardless of scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::prompts::{render_judge_prompt, MetaMode};
use crate::agents::{
    AgentError, AgentId, AgentRole, AgentRuntime, CallCtx, CallLog, CallRecord, now_ms,
};
use crate::bias::{self, BiasError};
use crate::config::{ConfigError, RunConfig};
use crate::core::{BiasKind, ComparisonTask};
use crate::dataset::{self, DatasetError};
use crate::manifest::{
    file_fingerprint, run_id, EpisodeKey, EpisodeRecord, Footer, FrameworkKey, Header,
    ManifestError, ManifestWriter, RecordBody,
};
use crate::orchestrate::{MetaConfig, Orchestrator, OrchestrateError, Transcript};
use crate::parse::{Parser, TemplateError};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "framework", rename_all = "snake_case")]
pub enum FrameworkSpec {
    Single {
        judge: AgentId,
    },
    Debate {
        judge: AgentId,
        critic: AgentId,
        rounds: u32,
    },
    Meta {
        meta: AgentId,
        pool: Vec<AgentId>,
        mode: MetaMode,
    },
}

impl FrameworkSpec {
    pub fn key(&self) -> FrameworkKey {
        match self {
            FrameworkSpec::Single { judge } => FrameworkKey::Single { judge: judge.clone() },
            FrameworkSpec::Debate { judge, critic, rounds } => FrameworkKey::Debate {
                judge: judge.clone(),
                critic: critic.clone(),
                rounds: *rounds,
            },
            FrameworkSpec::Meta { meta, pool, mode } => FrameworkKey::Meta {
                meta: meta.clone(),
                pool: pool.clone(),
                mode: *mode,
            },
        }
    }

    fn agent_ids(&self) -> Vec<&AgentId> {
        match self {
            FrameworkSpec::Single { judge } => vec![judge],
            FrameworkSpec::Debate { judge, critic, .. } => vec![judge, critic],
            FrameworkSpec::Meta { meta, pool, .. } => {
                let mut ids = vec![meta];
                ids.extend(pool.iter());
                ids
            }
        }
    }

    pub fn command_label(&self) -> &'static str {
        match self {
            FrameworkSpec::Single { .. } => "run single",
            FrameworkSpec::Debate { .. } => "run debate",
            FrameworkSpec::Meta { .. } => "run meta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub framework: FrameworkSpec,
    pub tasks_path: PathBuf,
    pub biases: Vec<BiasKind>,
    pub workers: usize,
    pub seed: u64,
    pub dry_run: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub episodes: usize,
    pub calls: usize,
    pub invalid_turns: u32,
    pub manifest: PathBuf,
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Orchestrate(#[from] OrchestrateError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{0}")]
    Invalid(String),
}

/// Flushes per-episode record batches in episode order; out-of-order
/// arrivals wait in a pending map.
struct OrderedSink {
    writer: ManifestWriter,
    next: usize,
    pending: BTreeMap<usize, Vec<RecordBody>>,
    episodes: usize,
    calls: usize,
    invalid_turns: u32,
}

impl OrderedSink {
    fn submit(&mut self, index: usize, records: Vec<RecordBody>) -> Result<(), ManifestError> {
        self.pending.insert(index, records);
        while let Some(batch) = self.pending.remove(&self.next) {
            for body in batch {
                match &body {
                    RecordBody::Episode(e) => {
                        self.episodes += 1;
                        self.invalid_turns += e.invalid_turns;
                    }
                    RecordBody::Call(_) => self.calls += 1,
                    _ => {}
                }
                self.writer.append(body)?;
            }
            self.next += 1;
        }
        Ok(())
    }
}

/// Runs the full episode matrix and writes the manifest. The returned
/// summary mirrors what landed in the manifest.
pub fn execute_run(
    config: &RunConfig,
    request: &RunRequest,
    manifest_path: &Path,
) -> Result<RunSummary, RunnerError> {
    config.validate()?;
    let runtime = AgentRuntime::new(
        &config.agents,
        config.retry.clone(),
        config.templates.rules.clone(),
        config.rate_limit.requests_per_minute,
    )?;
    for id in request.framework.agent_ids() {
        if !runtime.has_agent(id) {
            return Err(AgentError::UnknownAgent(id.clone()).into());
        }
    }
    if let FrameworkSpec::Meta { pool, .. } = &request.framework {
        if pool.len() < 2 {
            return Err(OrchestrateError::PoolTooSmall(pool.len()).into());
        }
    }
    if request.workers == 0 {
        return Err(RunnerError::Invalid("workers must be at least 1".into()));
    }

    let mut tasks = dataset::load_pairs(&request.tasks_path)?;

    // Verbosity episodes need the extended variant up front.
    let mut prologue = CallLog::new();
    if request.biases.contains(&BiasKind::Verbosity) && !request.dry_run {
        match &config.rewriter {
            Some(rewriter) => bias::ensure_verbose(
                &mut tasks,
                rewriter,
                &runtime,
                &config.templates,
                &mut prologue,
            )?,
            None => {
                if let Some(task) = tasks.iter().find(|t| t.verbose_y.is_none()) {
                    return Err(BiasError::MissingVerboseVariant {
                        task_id: task.id.clone(),
                    }
                    .into());
                }
            }
        }
    }

    let config_snapshot =
        serde_json::to_value(config).expect("config is serializable");
    let request_snapshot =
        serde_json::to_value(request).expect("request is serializable");
    let command = request.framework.command_label();
    let header = Header {
        run_id: run_id(command, &config_snapshot, &request_snapshot),
        created_ms: now_ms(),
        command: command.to_string(),
        seed: request.seed,
        sampler: seeding::SAMPLER_ALGORITHM.to_string(),
        dataset_fingerprint: Some(file_fingerprint(&request.tasks_path)?),
        config: config_snapshot,
        request: request_snapshot,
    };

    let mut writer = ManifestWriter::create(manifest_path)?;
    writer.append(RecordBody::Header(header))?;
    for call in prologue.calls {
        writer.append(RecordBody::Call(call))?;
    }

    let sink = Mutex::new(OrderedSink {
        writer,
        next: 0,
        pending: BTreeMap::new(),
        episodes: 0,
        calls: 0,
        invalid_turns: 0,
    });

    let parser = Parser::new(&config.templates.rules)?;
    let orchestrator = Orchestrator::new(&runtime, &config.templates, &parser);

    let n_jobs = request.biases.len() * tasks.len();
    let next_job = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let first_error: Mutex<Option<RunnerError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..request.workers.min(n_jobs.max(1)) {
            scope.spawn(|| loop {
                let index = next_job.fetch_add(1, Ordering::SeqCst);
                if index >= n_jobs || stop.load(Ordering::SeqCst) {
                    break;
                }
                let kind = request.biases[index / tasks.len()];
                let task = &tasks[index % tasks.len()];
                match run_episode(&orchestrator, config, request, task, kind) {
                    Ok(records) => {
                        let mut sink = sink.lock().expect("sink poisoned");
                        if let Err(e) = sink.submit(index, records) {
                            stop.store(true, Ordering::SeqCst);
                            first_error.lock().unwrap().get_or_insert(e.into());
                            break;
                        }
                    }
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(error) = first_error.into_inner().unwrap() {
        return Err(error);
    }

    let mut sink = sink.into_inner().expect("sink poisoned");
    let footer = Footer {
        completed: true,
        n_episodes: sink.episodes as u64,
        ts_ms: now_ms(),
    };
    sink.writer.append(RecordBody::Footer(footer))?;

    Ok(RunSummary {
        episodes: sink.episodes,
        calls: sink.calls,
        invalid_turns: sink.invalid_turns,
        manifest: manifest_path.to_path_buf(),
    })
}

fn run_episode(
    orchestrator: &Orchestrator,
    config: &RunConfig,
    request: &RunRequest,
    task: &ComparisonTask,
    kind: BiasKind,
) -> Result<Vec<RecordBody>, RunnerError> {
    let variant = bias::variant_for(kind, &config.templates);
    let presentation = bias::present(task, &variant)?;
    let mut log = CallLog::new();

    if request.dry_run {
        return Ok(render_only(config, request, task, kind, &presentation));
    }

    let transcript = match &request.framework {
        FrameworkSpec::Single { judge } => {
            let judgment = orchestrator.run_single_judge(judge, &presentation, &mut log)?;
            let mut t = Transcript::new(&task.id, kind);
            t.push_judgment(AgentRole::Judge, judgment);
            t
        }
        FrameworkSpec::Debate { judge, critic, rounds } => {
            orchestrator.run_debate(judge, critic, &presentation, *rounds, &mut log)?
        }
        FrameworkSpec::Meta { meta, pool, mode } => {
            let cfg = MetaConfig {
                pool: pool.clone(),
                meta: meta.clone(),
                mode: *mode,
                shuffle_seed: request.seed,
            };
            orchestrator.run_meta(&cfg, &presentation, &mut log)?
        }
    };

    let key = EpisodeKey {
        task_id: task.id.clone(),
        bias: kind,
        framework: request.framework.key(),
    };
    let episode = EpisodeRecord::from_transcript(key, task, &presentation, &transcript);

    let mut records: Vec<RecordBody> = log.calls.into_iter().map(RecordBody::Call).collect();
    records.push(RecordBody::Episode(episode));
    Ok(records)
}

/// Dry run: render the opening prompt of every independent round-0 call and
/// record it without contacting any backend.
fn render_only(
    config: &RunConfig,
    request: &RunRequest,
    task: &ComparisonTask,
    kind: BiasKind,
    presentation: &crate::core::Presentation,
) -> Vec<RecordBody> {
    let judges: Vec<&AgentId> = match &request.framework {
        FrameworkSpec::Single { judge } => vec![judge],
        FrameworkSpec::Debate { judge, .. } => vec![judge],
        FrameworkSpec::Meta { pool, .. } => pool.iter().collect(),
    };
    let mut records = Vec::new();
    for judge in judges {
        let history = Transcript::new(&task.id, kind);
        let cot = kind == BiasKind::Cot;
        let messages = render_judge_prompt(presentation, &history, cot, &config.templates);
        records.push(RecordBody::Call(CallRecord {
            ctx: CallCtx {
                task_id: task.id.clone(),
                agent: judge.clone(),
                role: AgentRole::Judge,
                round: 0,
                bias: kind,
            },
            attempt: 0,
            request: messages,
            response: None,
            error: Some("dry-run: completion skipped".into()),
            ts_ms: now_ms(),
        }));
    }
    records
}
