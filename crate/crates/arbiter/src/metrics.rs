//! Consistency metrics over manifest episodes: the before/after consistency
//! rate with its flip matrix, gold-label agreement, and pool-member
//! selection rates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentId;
use crate::core::{BiasKind, CanonicalVerdict, ComparisonTask};
use crate::manifest::{EpisodeRecord, FrameworkKey};

/// One task's verdict before and after a prompt modification, under the
/// same framework configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodePair {
    pub task_id: String,
    pub framework: String,
    pub bias: BiasKind,
    pub round_or_pool: u32,
    pub baseline: CanonicalVerdict,
    pub modified: CanonicalVerdict,
}

/// Verdict-match rate over a pair population, with the full flip matrix
/// over {X, Y, Tie}. Pairs with an Invalid side are excluded from the
/// denominator and counted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub bias: BiasKind,
    pub framework: String,
    pub round_or_pool: u32,
    pub n_total: usize,
    pub n_excluded: usize,
    pub cr: f64,
    /// `flip_matrix[baseline][modified]`, indexed X=0, Y=1, Tie=2.
    pub flip_matrix: [[usize; 3]; 3],
}

impl ConsistencyReport {
    pub fn counted(&self) -> usize {
        self.n_total - self.n_excluded
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no pairs to score")]
    NoPairs,
    #[error("all pairs excluded (Invalid on one side)")]
    AllExcluded,
    #[error("task {0} has no gold label")]
    MissingGold(String),
    #[error("verdicts and tasks differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no baseline episode for task {task_id} under {framework}")]
    MissingBaseline { task_id: String, framework: String },
}

fn matrix_index(v: CanonicalVerdict) -> Option<usize> {
    match v {
        CanonicalVerdict::X => Some(0),
        CanonicalVerdict::Y => Some(1),
        CanonicalVerdict::Tie => Some(2),
        CanonicalVerdict::Invalid => None,
    }
}

/// The fraction of non-excluded pairs whose canonical verdicts match
/// exactly; ties match only ties.
pub fn consistency_rate(pairs: &[EpisodePair]) -> Result<ConsistencyReport, MetricsError> {
    let first = pairs.first().ok_or(MetricsError::NoPairs)?;
    let mut flip_matrix = [[0usize; 3]; 3];
    let mut n_excluded = 0usize;
    for pair in pairs {
        match (matrix_index(pair.baseline), matrix_index(pair.modified)) {
            (Some(b), Some(m)) => flip_matrix[b][m] += 1,
            _ => n_excluded += 1,
        }
    }
    let counted = pairs.len() - n_excluded;
    if counted == 0 {
        return Err(MetricsError::AllExcluded);
    }
    let trace = flip_matrix[0][0] + flip_matrix[1][1] + flip_matrix[2][2];
    Ok(ConsistencyReport {
        bias: first.bias,
        framework: first.framework.clone(),
        round_or_pool: first.round_or_pool,
        n_total: pairs.len(),
        n_excluded,
        cr: trace as f64 / counted as f64,
        flip_matrix,
    })
}

/// Fraction of non-Invalid verdicts that agree with the gold label; a tie
/// never agrees.
pub fn gold_agreement(
    verdicts: &[CanonicalVerdict],
    tasks: &[ComparisonTask],
) -> Result<f64, MetricsError> {
    if verdicts.len() != tasks.len() {
        return Err(MetricsError::LengthMismatch(verdicts.len(), tasks.len()));
    }
    if verdicts.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let mut counted = 0usize;
    let mut agreed = 0usize;
    for (verdict, task) in verdicts.iter().zip(tasks) {
        let gold = task
            .gold
            .ok_or_else(|| MetricsError::MissingGold(task.id.clone()))?;
        if *verdict == CanonicalVerdict::Invalid {
            continue;
        }
        counted += 1;
        if *verdict == CanonicalVerdict::from(gold) {
            agreed += 1;
        }
    }
    if counted == 0 {
        return Err(MetricsError::AllExcluded);
    }
    Ok(agreed as f64 / counted as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRate {
    pub member: AgentId,
    /// Fraction of valid Select episodes whose de-shuffled selection is
    /// this member.
    pub rate: f64,
    /// Mean of 1/k over the counted episodes.
    pub uniform_baseline: f64,
    pub n_counted: usize,
    pub n_excluded: usize,
}

/// Selection rate of one pool member across Select-mode episodes.
pub fn selection_rate(episodes: &[EpisodeRecord], member: &str) -> SelectionRate {
    let mut n_counted = 0usize;
    let mut n_excluded = 0usize;
    let mut hits = 0usize;
    let mut baseline_sum = 0.0f64;
    for episode in episodes {
        let FrameworkKey::Meta { pool, mode, .. } = &episode.key.framework else {
            continue;
        };
        if *mode != crate::agents::prompts::MetaMode::Select {
            continue;
        }
        match &episode.selection {
            Some(selection) if selection.agent.is_some() => {
                n_counted += 1;
                baseline_sum += 1.0 / pool.len() as f64;
                if selection.agent.as_deref() == Some(member) {
                    hits += 1;
                }
            }
            _ => n_excluded += 1,
        }
    }
    SelectionRate {
        member: member.to_string(),
        rate: if n_counted == 0 { 0.0 } else { hits as f64 / n_counted as f64 },
        uniform_baseline: if n_counted == 0 { 0.0 } else { baseline_sum / n_counted as f64 },
        n_counted,
        n_excluded,
    }
}

/// Pool members appearing in any Select episode, in first-appearance order.
pub fn selection_members(episodes: &[EpisodeRecord]) -> Vec<AgentId> {
    let mut members = Vec::new();
    for episode in episodes {
        if let FrameworkKey::Meta { pool, mode, .. } = &episode.key.framework {
            if *mode == crate::agents::prompts::MetaMode::Select {
                for agent in pool {
                    if !members.contains(agent) {
                        members.push(agent.clone());
                    }
                }
            }
        }
    }
    members
}

/// Pairs every modified episode with its bias-free baseline by task, under
/// the same framework configuration. Debate episodes yield one pair per
/// round; meta episodes pair final verdicts with the pool size as row index.
/// Output order follows first appearance in the episode list.
pub fn collect_pairs(episodes: &[EpisodeRecord]) -> Result<Vec<EpisodePair>, MetricsError> {
    // (framework, task) -> baseline episode
    let mut baselines: HashMap<(&FrameworkKey, &str), &EpisodeRecord> = HashMap::new();
    for episode in episodes {
        if episode.key.bias == BiasKind::None {
            baselines.insert(
                (&episode.key.framework, episode.key.task_id.as_str()),
                episode,
            );
        }
    }

    let mut pairs = Vec::new();
    for episode in episodes {
        if episode.key.bias == BiasKind::None {
            continue;
        }
        let framework = &episode.key.framework;
        let descriptor = framework.descriptor();
        let baseline = baselines
            .get(&(framework, episode.key.task_id.as_str()))
            .ok_or_else(|| MetricsError::MissingBaseline {
                task_id: episode.key.task_id.clone(),
                framework: descriptor.clone(),
            })?;
        let rows: Vec<u32> = match framework {
            FrameworkKey::Single { .. } => vec![0],
            FrameworkKey::Debate { rounds, .. } => (0..=*rounds).collect(),
            FrameworkKey::Meta { pool, .. } => vec![pool.len() as u32],
        };
        for row in rows {
            let (b, m) = match framework {
                FrameworkKey::Meta { .. } => (baseline.final_verdict, episode.final_verdict),
                _ => (
                    baseline.verdict_at_round(row).unwrap_or(CanonicalVerdict::Invalid),
                    episode.verdict_at_round(row).unwrap_or(CanonicalVerdict::Invalid),
                ),
            };
            pairs.push(EpisodePair {
                task_id: episode.key.task_id.clone(),
                framework: descriptor.clone(),
                bias: episode.key.bias,
                round_or_pool: row,
                baseline: b,
                modified: m,
            });
        }
    }
    Ok(pairs)
}

/// Groups pairs by (framework, bias, row) in first-appearance order.
pub fn group_pairs(pairs: &[EpisodePair]) -> Vec<(PairGroupKey, Vec<&EpisodePair>)> {
    let mut order: Vec<PairGroupKey> = Vec::new();
    let mut groups: HashMap<PairGroupKey, Vec<&EpisodePair>> = HashMap::new();
    for pair in pairs {
        let key = PairGroupKey {
            framework: pair.framework.clone(),
            bias: pair.bias,
            round_or_pool: pair.round_or_pool,
        };
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(pair);
    }
    order
        .into_iter()
        .map(|key| {
            let members = groups.remove(&key).expect("grouped above");
            (key, members)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairGroupKey {
    pub framework: String,
    pub bias: BiasKind,
    pub round_or_pool: u32,
}

/// One consistency report per (framework, bias, round/pool) group.
pub fn collect_reports(
    episodes: &[EpisodeRecord],
) -> Result<Vec<ConsistencyReport>, MetricsError> {
    let pairs = collect_pairs(episodes)?;
    group_pairs(&pairs)
        .into_iter()
        .map(|(_, members)| {
            let owned: Vec<EpisodePair> = members.into_iter().cloned().collect();
            consistency_rate(&owned)
        })
        .collect()
}
