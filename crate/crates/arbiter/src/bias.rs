//! The four prompt perturbations. Each injector touches exactly one declared
//! surface of the presentation: slot order, the second slot's text, the
//! question text, or the prompt's reasoning instruction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::prompts::{render_rewrite_prompt, PromptTemplates};
use crate::agents::{AgentError, AgentId, AgentRole, AgentRuntime, CallCtx, CallLog};
use crate::core::{BiasKind, BiasVariant, ComparisonTask, Perm, Presentation};
use crate::parse::SLOT_PLACEHOLDER;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("task {task_id}: verbosity needs verbose_y or a configured rewriter")]
    MissingVerboseVariant { task_id: String },
    #[error("rewriter failed for task {task_id}: {source}")]
    RewriterFailed {
        task_id: String,
        source: AgentError,
    },
}

/// Instantiates a variant from the run templates.
pub fn variant_for(kind: BiasKind, t: &PromptTemplates) -> BiasVariant {
    match kind {
        BiasKind::None => BiasVariant::None,
        BiasKind::Position => BiasVariant::Position,
        BiasKind::Verbosity => BiasVariant::Verbosity,
        BiasKind::Bandwagon => BiasVariant::Bandwagon {
            statement: t
                .bandwagon_statement
                .replace(SLOT_PLACEHOLDER, &t.bandwagon_target_slot.to_string()),
            target_slot: t.bandwagon_target_slot,
        },
        BiasKind::Cot => BiasVariant::Cot { instruction: t.cot_instruction.clone() },
    }
}

/// Renders a task under a bias variant.
pub fn present(task: &ComparisonTask, variant: &BiasVariant) -> Result<Presentation, BiasError> {
    let base = Presentation {
        task_id: task.id.clone(),
        question_text: task.question.clone(),
        slot1: task.solution_x.clone(),
        slot2: task.solution_y.clone(),
        perm: Perm::Identity,
        bias: variant.clone(),
    };
    Ok(match variant {
        BiasVariant::None | BiasVariant::Cot { .. } => base,
        BiasVariant::Position => swap(base),
        BiasVariant::Verbosity => {
            let verbose = task.verbose_y.clone().ok_or_else(|| {
                BiasError::MissingVerboseVariant { task_id: task.id.clone() }
            })?;
            Presentation { slot2: verbose, ..base }
        }
        BiasVariant::Bandwagon { statement, .. } => Presentation {
            question_text: format!("{}\n\n{statement}", task.question),
            ..base
        },
    })
}

/// Exchanges the slots and toggles the permutation; everything else is
/// untouched. Involutive.
pub fn swap(p: Presentation) -> Presentation {
    Presentation {
        slot1: p.slot2,
        slot2: p.slot1,
        perm: p.perm.toggled(),
        ..p
    }
}

/// Produces the extended variant of solution Y, calling the rewriter only on
/// a cache miss. The returned text is meant to be cached into
/// `task.verbose_y`; a result shorter than the original is used anyway, with
/// a warning recorded on the call log entry.
pub fn extend_via_rewriter(
    task: &ComparisonTask,
    rewriter: &AgentId,
    runtime: &AgentRuntime,
    templates: &PromptTemplates,
    log: &mut CallLog,
) -> Result<String, BiasError> {
    if let Some(cached) = &task.verbose_y {
        return Ok(cached.clone());
    }
    let messages = render_rewrite_prompt(&task.solution_y, templates);
    let ctx = CallCtx {
        task_id: task.id.clone(),
        agent: rewriter.clone(),
        role: AgentRole::Rewriter,
        round: 0,
        bias: BiasKind::Verbosity,
    };
    let text = runtime
        .complete(&ctx, &messages, log)
        .map_err(|source| BiasError::RewriterFailed { task_id: task.id.clone(), source })?;
    if text.len() < task.solution_y.len() {
        if let Some(record) = log.calls.last_mut() {
            record.error = Some(format!(
                "warning: extension shorter than original ({} < {} bytes)",
                text.len(),
                task.solution_y.len()
            ));
        }
    }
    Ok(text)
}

/// Fills `verbose_y` for every task that lacks it, via the configured
/// rewriter. No-op for tasks already carrying one.
pub fn ensure_verbose(
    tasks: &mut [ComparisonTask],
    rewriter: &AgentId,
    runtime: &AgentRuntime,
    templates: &PromptTemplates,
    log: &mut CallLog,
) -> Result<(), BiasError> {
    for task in tasks.iter_mut() {
        if task.verbose_y.is_none() {
            let text = extend_via_rewriter(task, rewriter, runtime, templates, log)?;
            task.verbose_y = Some(text);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub question_text: bool,
    pub slot1: bool,
    pub slot2: bool,
    pub perm: bool,
    pub bias: bool,
}

/// Field-by-field diff against another presentation of the same task; used
/// to check that each injector touches only its declared surface.
pub fn diff(a: &Presentation, b: &Presentation) -> FieldDiff {
    FieldDiff {
        question_text: a.question_text != b.question_text,
        slot1: a.slot1 != b.slot1,
        slot2: a.slot2 != b.slot2,
        perm: a.perm != b.perm,
        bias: a.bias != b.bias,
    }
}
