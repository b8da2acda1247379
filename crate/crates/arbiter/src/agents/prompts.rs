//! Prompt rendering for every agent role.
//!
//! All templates are run-config overridable. Solution author identities are
//! never rendered anywhere; pool judges appear only under anonymous referee
//! labels. History is inlined into the user message, so a rendered prompt is
//! always one System message plus one User message.

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, AgentRole, Message};
use crate::core::{Judgment, Presentation};
use crate::orchestrate::{Transcript, TurnPayload};
use crate::parse::ParseRules;

/// Marks the start of the text a rewriter call must expand.
pub(crate) const REWRITE_BEGIN: &str = "<<<SOLUTION";
/// Marks the end of the text a rewriter call must expand.
pub(crate) const REWRITE_END: &str = "SOLUTION>>>";
/// Terminates the solution block in a rendered prompt.
pub(crate) const TASK_BLOCK_END: &str = "-----";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub judge_system: String,
    pub critic_system: String,
    pub meta_system: String,
    /// Appended when prior conversation exists.
    pub history_note: String,
    pub critic_encouragement: String,
    pub cot_instruction: String,
    /// Bandwagon claim appended after the question; `{slot}` names the
    /// position the majority allegedly favors.
    pub bandwagon_statement: String,
    pub bandwagon_target_slot: u8,
    /// Instructions for the verbosity rewriter.
    pub extension_prompt: String,
    pub score_min: u32,
    pub score_max: u32,
    pub rules: ParseRules,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            judge_system: "You are an impartial judge evaluating two candidate \
                solutions to a question. Weigh helpfulness, correctness, and \
                clarity. Judge only the content shown; the origins of the \
                solutions are unknown to you."
                .into(),
            critic_system: "You are a critical reviewer in a structured debate \
                about which of two candidate solutions is better. Your job is \
                to stress-test the standing judgment, not to echo it."
                .into(),
            meta_system: "You are the presiding judge over a panel of referees \
                who have each assessed two candidate solutions. Weigh their \
                judgments on their merits."
                .into(),
            history_note: "First briefly summarize the key points of the \
                conversation so far and say whether you agree or disagree \
                with them, then give your judgment."
                .into(),
            critic_encouragement: "You are encouraged to provide a different \
                judgment from the judge's if you see any grounds for one."
                .into(),
            cot_instruction: "Before scoring, reason step by step about the \
                question on your own, then evaluate both solutions."
                .into(),
            bandwagon_statement: "Most people believe that the solution in \
                position {slot} is better."
                .into(),
            bandwagon_target_slot: 2,
            extension_prompt: "Rewrite the solution below to be substantially \
                more detailed and thorough without changing its meaning, \
                adding new claims, or fixing any of its mistakes. Reply with \
                the rewritten solution only."
                .into(),
            score_min: 1,
            score_max: 10,
            rules: ParseRules::default(),
        }
    }
}

impl PromptTemplates {
    fn task_block(&self, p: &Presentation) -> String {
        format!(
            "Question:\n{q}\n\n{l1}\n{s1}\n\n{l2}\n{s2}\n{end}",
            q = p.question_text,
            l1 = self.slot_header(1),
            s1 = p.slot1,
            l2 = self.slot_header(2),
            s2 = p.slot2,
            end = TASK_BLOCK_END,
        )
    }

    pub(crate) fn slot_header(&self, slot: u8) -> String {
        format!("{} {}:", self.rules.solution_label, slot)
    }

    fn score_instructions(&self) -> String {
        format!(
            "Give brief feedback for each solution, then end your reply with \
             exactly these two lines:\n{line1}\n{line2}\nUse whole-number \
             scores from {min} to {max}; give equal scores if and only if \
             the solutions are equally good.",
            line1 = self.rules.score_line_for(1, "<score>"),
            line2 = self.rules.score_line_for(2, "<score>"),
            min = self.score_min,
            max = self.score_max,
        )
    }

    fn history_block(&self, history: &Transcript) -> Option<String> {
        if history.turns.is_empty() {
            return None;
        }
        let mut out = String::from("Conversation so far:");
        for turn in &history.turns {
            let speaker = match turn.role {
                AgentRole::Judge => "Judge",
                AgentRole::Critic => "Critic",
                AgentRole::Meta => "Meta judge",
                AgentRole::Rewriter => continue,
            };
            let text = match &turn.payload {
                TurnPayload::Judgment(j) => j.rationale.as_str(),
                TurnPayload::Selection(s) => s.raw.as_str(),
            };
            out.push_str(&format!("\n\n[Round {}] {speaker}:\n{text}", turn.round));
        }
        Some(out)
    }
}

fn assemble(system: &str, sections: Vec<Option<String>>) -> Vec<Message> {
    let body: Vec<String> = sections.into_iter().flatten().collect();
    vec![Message::system(system), Message::user(body.join("\n\n"))]
}

/// Prompt for the judge role: task, optional prior conversation, optional
/// reasoning instruction, and the score format contract.
pub fn render_judge_prompt(
    p: &Presentation,
    history: &Transcript,
    cot: bool,
    t: &PromptTemplates,
) -> Vec<Message> {
    let cot_text = cot.then(|| {
        p.bias
            .cot_instruction()
            .unwrap_or(&t.cot_instruction)
            .to_string()
    });
    assemble(
        &t.judge_system,
        vec![
            Some(t.task_block(p)),
            t.history_block(history),
            (!history.turns.is_empty()).then(|| t.history_note.clone()),
            cot_text,
            Some(t.score_instructions()),
        ],
    )
}

/// Prompt for the critic role: quotes the judge's latest assessment and asks
/// for a critique plus an independent scored judgment.
pub fn render_critic_prompt(
    p: &Presentation,
    history: &Transcript,
    t: &PromptTemplates,
) -> Result<Vec<Message>, AgentError> {
    let latest = history
        .turns
        .iter()
        .rev()
        .find_map(|turn| match (&turn.role, &turn.payload) {
            (AgentRole::Judge, TurnPayload::Judgment(j)) => Some(j),
            _ => None,
        })
        .ok_or(AgentError::EmptyHistory)?;

    let cot_text = (p.bias.kind() == crate::core::BiasKind::Cot).then(|| {
        p.bias
            .cot_instruction()
            .unwrap_or(&t.cot_instruction)
            .to_string()
    });
    Ok(assemble(
        &t.critic_system,
        vec![
            Some(t.task_block(p)),
            t.history_block(history),
            Some(format!(
                "The judge's latest assessment was:\n{}\n\nCritique this \
                 assessment: point out weaknesses, oversights, or unjustified \
                 claims. {} Then give your own independent assessment.",
                latest.rationale, t.critic_encouragement,
            )),
            (!history.turns.is_empty()).then(|| t.history_note.clone()),
            cot_text,
            Some(t.score_instructions()),
        ],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    Select,
    Conclude,
}

impl MetaMode {
    pub fn label(self) -> &'static str {
        match self {
            MetaMode::Select => "select",
            MetaMode::Conclude => "conclude",
        }
    }
}

impl std::str::FromStr for MetaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "select" => Ok(MetaMode::Select),
            "conclude" => Ok(MetaMode::Conclude),
            other => Err(format!("unknown mode `{other}` (expected select or conclude)")),
        }
    }
}

/// Prompt for the meta role over an already-shuffled judgment pool. Pool
/// members appear only as anonymous referees, in the shuffled order given.
pub fn render_meta_prompt(
    p: &Presentation,
    pool_judgments: &[&Judgment],
    mode: MetaMode,
    t: &PromptTemplates,
) -> Result<Vec<Message>, AgentError> {
    if pool_judgments.len() < 2 {
        return Err(AgentError::PoolTooSmall(pool_judgments.len()));
    }

    let mut pool_block = format!(
        "{} referees assessed the two solutions independently:",
        pool_judgments.len()
    );
    for (i, judgment) in pool_judgments.iter().enumerate() {
        let label = format!("{} {}", t.rules.referee_label, i + 1);
        let scores = match (judgment.score1, judgment.score2) {
            (Some(s1), Some(s2)) => format!(
                "{label} scored {} 1 at {} and {} 2 at {}.",
                t.rules.solution_label,
                format_score(s1),
                t.rules.solution_label,
                format_score(s2)
            ),
            _ => format!("{label} gave no parseable scores."),
        };
        pool_block.push_str(&format!(
            "\n\n[{label}]\n{}\n({scores})",
            judgment.rationale
        ));
    }

    let instruction = match mode {
        MetaMode::Select => format!(
            "Decide which referee's judgment is the most sound. Briefly \
             justify your choice, then end your reply with exactly this \
             line:\n{}",
            t.rules.selection_line_for("<number>"),
        ),
        MetaMode::Conclude => format!(
            "Considering the referees' judgments, give your own final \
             judgment. {}",
            t.score_instructions()
        ),
    };

    let cot_text = (p.bias.kind() == crate::core::BiasKind::Cot).then(|| {
        p.bias
            .cot_instruction()
            .unwrap_or(&t.cot_instruction)
            .to_string()
    });
    Ok(assemble(
        &t.meta_system,
        vec![Some(t.task_block(p)), Some(pool_block), cot_text, Some(instruction)],
    ))
}

/// Prompt asking the rewriter to expand solution Y, with the original text
/// delimited so scripted backends can locate it.
pub fn render_rewrite_prompt(solution_y: &str, t: &PromptTemplates) -> Vec<Message> {
    vec![
        Message::system("You rewrite answers on request without changing what they claim."),
        Message::user(format!(
            "{}\n\n{REWRITE_BEGIN}\n{solution_y}\n{REWRITE_END}",
            t.extension_prompt
        )),
    ]
}

/// Scores render as integers when whole, else with one decimal place.
pub fn format_score(score: f64) -> String {
    if score.fract() == 0.0 {
        format!("{}", score as i64)
    } else {
        format!("{score:.1}")
    }
}
