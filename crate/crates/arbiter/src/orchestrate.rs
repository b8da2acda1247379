//! Episode execution for the three evaluation frameworks: single judge,
//! judge-vs-critic debate, and meta-judging over a judgment pool.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::prompts::{
    render_critic_prompt, render_judge_prompt, render_meta_prompt, MetaMode, PromptTemplates,
};
use crate::agents::{AgentError, AgentId, AgentRole, AgentRuntime, CallCtx, CallLog, Message};
use crate::core::{BiasKind, Judgment, Presentation, Verdict};
use crate::parse::{ParseFailure, Parser};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// 1-based position in the shuffled pool; None when parsing failed.
    pub shuffled_position: Option<usize>,
    /// 0-based index into the pre-shuffle pool.
    pub pool_index: Option<usize>,
    /// De-shuffled pool member the selection refers to.
    pub agent: Option<AgentId>,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnPayload {
    Judgment(Judgment),
    Selection(Selection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub agent: AgentId,
    pub role: AgentRole,
    pub round: u32,
    pub payload: TurnPayload,
}

/// Ordered turns of one episode, fully replayable from the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    pub bias: BiasKind,
    pub turns: Vec<Turn>,
    /// Meta episodes: shuffled position i held the judgment of pool member
    /// `shuffle[i]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<Vec<usize>>,
}

impl Transcript {
    pub fn empty(task_id: &str) -> Transcript {
        Transcript {
            task_id: task_id.to_string(),
            bias: BiasKind::None,
            turns: Vec::new(),
            shuffle: None,
        }
    }

    pub fn new(task_id: &str, bias: BiasKind) -> Transcript {
        Transcript { bias, ..Transcript::empty(task_id) }
    }

    pub fn push_judgment(&mut self, role: AgentRole, judgment: Judgment) {
        self.turns.push(Turn {
            agent: judgment.agent.clone(),
            role,
            round: judgment.round,
            payload: TurnPayload::Judgment(judgment),
        });
    }

    pub fn judgment_turns(&self) -> impl Iterator<Item = (&Turn, &Judgment)> {
        self.turns.iter().filter_map(|turn| match &turn.payload {
            TurnPayload::Judgment(j) => Some((turn, j)),
            TurnPayload::Selection(_) => None,
        })
    }

    /// The judge's verdict per round, in round order.
    pub fn judge_round_verdicts(&self) -> Vec<(u32, Verdict)> {
        self.judgment_turns()
            .filter(|(turn, _)| turn.role == AgentRole::Judge)
            .map(|(turn, j)| (turn.round, j.verdict))
            .collect()
    }

    /// Final verdict of the episode under each framework's rule: the judge's
    /// last-round judgment for single/debate; the meta turn for meta
    /// episodes (selected pool verdict or the meta's own).
    pub fn final_verdict(&self) -> Verdict {
        if let Some(turn) = self.turns.iter().rev().find(|t| t.role == AgentRole::Meta) {
            return match &turn.payload {
                TurnPayload::Judgment(j) => j.verdict,
                TurnPayload::Selection(s) => match s.pool_index {
                    Some(idx) => self
                        .judgment_turns()
                        .nth(idx)
                        .map(|(_, j)| j.verdict)
                        .unwrap_or(Verdict::Invalid),
                    None => Verdict::Invalid,
                },
            };
        }
        self.judgment_turns()
            .filter(|(turn, _)| turn.role == AgentRole::Judge)
            .last()
            .map(|(_, j)| j.verdict)
            .unwrap_or(Verdict::Invalid)
    }

    pub fn selection(&self) -> Option<&Selection> {
        self.turns.iter().rev().find_map(|t| match &t.payload {
            TurnPayload::Selection(s) => Some(s),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub pool: Vec<AgentId>,
    pub meta: AgentId,
    pub mode: MetaMode,
    pub shuffle_seed: u64,
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), OrchestrateError> {
        if self.pool.len() < 2 {
            return Err(OrchestrateError::PoolTooSmall(self.pool.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum OrchestrateError {
    #[error("debate requires at least one round")]
    NoRounds,
    #[error("judgment pool must have at least two members, got {0}")]
    PoolTooSmall(usize),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

pub struct Orchestrator<'a> {
    pub runtime: &'a AgentRuntime,
    pub templates: &'a PromptTemplates,
    pub parser: &'a Parser,
}

impl<'a> Orchestrator<'a> {
    pub fn new(
        runtime: &'a AgentRuntime,
        templates: &'a PromptTemplates,
        parser: &'a Parser,
    ) -> Orchestrator<'a> {
        Orchestrator { runtime, templates, parser }
    }

    /// One render + complete + parse cycle at round 0.
    pub fn run_single_judge(
        &self,
        judge: &str,
        p: &Presentation,
        log: &mut CallLog,
    ) -> Result<Judgment, OrchestrateError> {
        let history = Transcript::new(&p.task_id, p.bias.kind());
        self.judged_completion(judge, AgentRole::Judge, 0, p, &history, log)
    }

    /// Judge opens at round 0; each subsequent round is one critic turn then
    /// one judge turn. The judge's final-round judgment is the episode
    /// verdict. Runs every round; agreement never stops a debate early.
    pub fn run_debate(
        &self,
        judge: &str,
        critic: &str,
        p: &Presentation,
        rounds: u32,
        log: &mut CallLog,
    ) -> Result<Transcript, OrchestrateError> {
        if rounds == 0 {
            return Err(OrchestrateError::NoRounds);
        }
        let mut transcript = Transcript::new(&p.task_id, p.bias.kind());

        let opening = self.judged_completion(judge, AgentRole::Judge, 0, p, &transcript, log)?;
        transcript.push_judgment(AgentRole::Judge, opening);

        for round in 1..=rounds {
            let critique =
                self.judged_completion(critic, AgentRole::Critic, round, p, &transcript, log)?;
            transcript.push_judgment(AgentRole::Critic, critique);

            let revision =
                self.judged_completion(judge, AgentRole::Judge, round, p, &transcript, log)?;
            transcript.push_judgment(AgentRole::Judge, revision);
        }
        Ok(transcript)
    }

    /// Pool judges run independently at round 0; their judgments are
    /// shuffled by a per-task seeded permutation before the meta sees them.
    pub fn run_meta(
        &self,
        cfg: &MetaConfig,
        p: &Presentation,
        log: &mut CallLog,
    ) -> Result<Transcript, OrchestrateError> {
        cfg.validate()?;
        let mut transcript = Transcript::new(&p.task_id, p.bias.kind());

        for judge in &cfg.pool {
            let history = Transcript::new(&p.task_id, p.bias.kind());
            let judgment =
                self.judged_completion(judge, AgentRole::Judge, 0, p, &history, log)?;
            transcript.push_judgment(AgentRole::Judge, judgment);
        }

        let k = cfg.pool.len();
        let mut rng = seeding::rng_for("meta-shuffle", cfg.shuffle_seed, &p.task_id);
        let shuffle = seeding::shuffled_indices(k, &mut rng);
        transcript.shuffle = Some(shuffle.clone());

        let pool_judgments: Vec<&Judgment> = transcript
            .judgment_turns()
            .map(|(_, j)| j)
            .collect();
        let shuffled: Vec<&Judgment> = shuffle.iter().map(|&i| pool_judgments[i]).collect();

        match cfg.mode {
            MetaMode::Conclude => {
                let messages = render_meta_prompt(p, &shuffled, MetaMode::Conclude, self.templates)?;
                let ctx = self.ctx(&cfg.meta, AgentRole::Meta, 0, p);
                let judgment = self.score_loop(&ctx, messages, log)?;
                transcript.push_judgment(AgentRole::Meta, judgment);
            }
            MetaMode::Select => {
                let messages = render_meta_prompt(p, &shuffled, MetaMode::Select, self.templates)?;
                let ctx = self.ctx(&cfg.meta, AgentRole::Meta, 0, p);
                let selection = self.selection_loop(&ctx, messages, k, &shuffle, &cfg.pool, log)?;
                transcript.turns.push(Turn {
                    agent: cfg.meta.clone(),
                    role: AgentRole::Meta,
                    round: 0,
                    payload: TurnPayload::Selection(selection),
                });
            }
        }
        Ok(transcript)
    }

    fn ctx(&self, agent: &str, role: AgentRole, round: u32, p: &Presentation) -> CallCtx {
        CallCtx {
            task_id: p.task_id.clone(),
            agent: agent.to_string(),
            role,
            round,
            bias: p.bias.kind(),
        }
    }

    /// Renders the role prompt and runs the complete/parse/retry cycle.
    /// Backend failures and exhausted parses both land as Invalid judgments;
    /// the episode carries on with the raw text in history.
    fn judged_completion(
        &self,
        agent: &str,
        role: AgentRole,
        round: u32,
        p: &Presentation,
        history: &Transcript,
        log: &mut CallLog,
    ) -> Result<Judgment, OrchestrateError> {
        let messages = match role {
            AgentRole::Critic => render_critic_prompt(p, history, self.templates)?,
            _ => {
                let cot = p.bias.kind() == BiasKind::Cot;
                render_judge_prompt(p, history, cot, self.templates)
            }
        };
        let ctx = self.ctx(agent, role, round, p);
        self.score_loop(&ctx, messages, log)
    }

    fn score_loop(
        &self,
        ctx: &CallCtx,
        mut conversation: Vec<Message>,
        log: &mut CallLog,
    ) -> Result<Judgment, OrchestrateError> {
        let max_attempts = self.runtime.retry().max_attempts;
        let mut last_text = String::new();
        for attempt in 1..=max_attempts {
            let text = match self.runtime.complete(ctx, &conversation, log) {
                Ok(text) => text,
                Err(err @ AgentError::Backend { .. }) => {
                    return Ok(Judgment::invalid(&ctx.agent, ctx.round, err.to_string()));
                }
                Err(err) => return Err(err.into()),
            };
            match self.parser.extract_scores(&text) {
                Ok((s1, s2)) => {
                    // Regex-extracted numbers are always finite.
                    let judgment = Judgment::from_scores(&ctx.agent, ctx.round, s1, s2, text)
                        .expect("parsed scores are finite");
                    return Ok(judgment);
                }
                Err(_) if attempt < max_attempts => {
                    conversation.push(Message::assistant(if text.is_empty() {
                        "(empty reply)".to_string()
                    } else {
                        text.clone()
                    }));
                    conversation.push(Message::user(
                        self.runtime.retry().reformat_reminder.clone(),
                    ));
                    last_text = text;
                }
                Err(_) => last_text = text,
            }
        }
        Ok(Judgment::invalid(&ctx.agent, ctx.round, last_text))
    }

    /// Selection parse loop. A malformed reply retries with the reformat
    /// reminder up to the policy budget; an out-of-range index gets exactly
    /// one reformat retry before going Invalid.
    fn selection_loop(
        &self,
        ctx: &CallCtx,
        mut conversation: Vec<Message>,
        k: usize,
        shuffle: &[usize],
        pool: &[AgentId],
        log: &mut CallLog,
    ) -> Result<Selection, OrchestrateError> {
        let max_attempts = self.runtime.retry().max_attempts.max(1);
        let mut out_of_range_retried = false;
        let mut last_text = String::new();
        let mut attempt = 0;
        while attempt < max_attempts {
            attempt += 1;
            let text = match self.runtime.complete(ctx, &conversation, log) {
                Ok(text) => text,
                Err(err @ AgentError::Backend { .. }) => {
                    return Ok(Selection {
                        shuffled_position: None,
                        pool_index: None,
                        agent: None,
                        raw: err.to_string(),
                    });
                }
                Err(err) => return Err(err.into()),
            };
            match self.parser.extract_selection(&text, k) {
                Ok(position) => {
                    let pool_index = shuffle[position - 1];
                    return Ok(Selection {
                        shuffled_position: Some(position),
                        pool_index: Some(pool_index),
                        agent: Some(pool[pool_index].clone()),
                        raw: text,
                    });
                }
                Err(ParseFailure::SelectionOutOfRange { .. }) if !out_of_range_retried => {
                    out_of_range_retried = true;
                    conversation.push(Message::assistant(text.clone()));
                    conversation.push(Message::user(format!(
                        "That referee number is outside 1..={k}. {}",
                        self.runtime.retry().reformat_reminder
                    )));
                    last_text = text;
                }
                Err(ParseFailure::SelectionOutOfRange { .. }) => {
                    last_text = text;
                    break;
                }
                Err(_) if attempt < max_attempts => {
                    conversation.push(Message::assistant(if text.is_empty() {
                        "(empty reply)".to_string()
                    } else {
                        text.clone()
                    }));
                    conversation.push(Message::user(
                        self.runtime.retry().reformat_reminder.clone(),
                    ));
                    last_text = text;
                }
                Err(_) => last_text = text,
            }
        }
        Ok(Selection {
            shuffled_position: None,
            pool_index: None,
            agent: None,
            raw: last_text,
        })
    }
}
