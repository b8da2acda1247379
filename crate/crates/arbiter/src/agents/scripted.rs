//! Deterministic scripted backend.
//!
//! A script is an ordered rule table; the first rule whose matchers all hold
//! produces the reply. Rules can key on the call context (role, round, bias)
//! or on the rendered prompt itself (substring or SHA-256 prefix), which is
//! enough to express adversarial agents like "flip the verdict whenever the
//! bandwagon statement is present". A table with no matching rule replies
//! with an empty string, which the parse layer treats as retryable.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::prompts::{format_score, REWRITE_BEGIN, REWRITE_END, TASK_BLOCK_END};
use crate::agents::{AgentRole, CallCtx, Message};
use crate::core::BiasKind;
use crate::parse::ParseRules;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reply {
    /// Verbatim text.
    Text { text: String },
    /// A short preamble plus the two requested score lines.
    Scores {
        score1: f64,
        score2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preamble: Option<String>,
    },
    /// A meta selection line for the given 1-based referee index.
    Select { index: usize },
    /// Content-keyed judging: the slot whose text contains `marker` gets
    /// `preferred`, the other gets `other`. Ties if neither or both match.
    PreferContaining {
        marker: String,
        preferred: f64,
        other: f64,
    },
    /// Rewriter behavior: returns the delimited target text repeated
    /// `times` times.
    RepeatTarget { times: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256_prefix: Option<String>,
    pub reply: Reply,
}

impl ScriptRule {
    /// Rule with no matchers: always fires.
    pub fn always(reply: Reply) -> ScriptRule {
        ScriptRule {
            role: None,
            round: None,
            bias: None,
            prompt_contains: None,
            prompt_sha256_prefix: None,
            reply,
        }
    }

    pub fn for_role(role: AgentRole, reply: Reply) -> ScriptRule {
        ScriptRule { role: Some(role), ..ScriptRule::always(reply) }
    }

    pub fn for_round(role: AgentRole, round: u32, reply: Reply) -> ScriptRule {
        ScriptRule {
            role: Some(role),
            round: Some(round),
            ..ScriptRule::always(reply)
        }
    }

    fn matches(&self, ctx: &CallCtx, prompt: &str) -> bool {
        self.role.is_none_or(|r| r == ctx.role)
            && self.round.is_none_or(|r| r == ctx.round)
            && self.bias.is_none_or(|b| b == ctx.bias)
            && self
                .prompt_contains
                .as_ref()
                .is_none_or(|needle| prompt.contains(needle))
            && self
                .prompt_sha256_prefix
                .as_ref()
                .is_none_or(|prefix| prompt_sha256(prompt).starts_with(prefix))
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn respond(
    script: &[ScriptRule],
    ctx: &CallCtx,
    messages: &[Message],
    rules: &ParseRules,
) -> String {
    let prompt: String = messages
        .iter()
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    script
        .iter()
        .find(|rule| rule.matches(ctx, &prompt))
        .map(|rule| render_reply(&rule.reply, &prompt, rules))
        .unwrap_or_default()
}

fn render_reply(reply: &Reply, prompt: &str, rules: &ParseRules) -> String {
    match reply {
        Reply::Text { text } => text.clone(),
        Reply::Scores { score1, score2, preamble } => score_text(
            preamble.as_deref().unwrap_or("Here is my assessment."),
            *score1,
            *score2,
            rules,
        ),
        Reply::Select { index } => format!(
            "I examined the judgments.\n{}",
            rules.selection_line_for(&index.to_string())
        ),
        Reply::PreferContaining { marker, preferred, other } => {
            let (s1, s2) = match locate_marker(prompt, marker, rules) {
                Some(1) => (*preferred, *other),
                Some(2) => (*other, *preferred),
                _ => (*other, *other),
            };
            score_text("Judged by content.", s1, s2, rules)
        }
        Reply::RepeatTarget { times } => rewrite_target(prompt)
            .map(|target| target.repeat(*times))
            .unwrap_or_default(),
    }
}

fn score_text(preamble: &str, score1: f64, score2: f64, rules: &ParseRules) -> String {
    format!(
        "{preamble}\n{}\n{}",
        rules.score_line_for(1, &format_score(score1)),
        rules.score_line_for(2, &format_score(score2)),
    )
}

/// Which slot of the prompt's task block contains the marker, if exactly one.
fn locate_marker(prompt: &str, marker: &str, rules: &ParseRules) -> Option<u8> {
    let header1 = format!("{} 1:\n", rules.solution_label);
    let header2 = format!("{} 2:\n", rules.solution_label);
    let start1 = prompt.find(&header1)? + header1.len();
    let rest = &prompt[start1..];
    let split = rest.find(&header2)?;
    let slot1 = &rest[..split];
    let after = &rest[split + header2.len()..];
    let slot2 = &after[..after.find(TASK_BLOCK_END).unwrap_or(after.len())];
    match (slot1.contains(marker), slot2.contains(marker)) {
        (true, false) => Some(1),
        (false, true) => Some(2),
        _ => None,
    }
}

fn rewrite_target(prompt: &str) -> Option<&str> {
    let start = prompt.find(REWRITE_BEGIN)? + REWRITE_BEGIN.len();
    let rest = &prompt[start..];
    let end = rest.find(REWRITE_END)?;
    Some(rest[..end].trim_matches('\n'))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(role: AgentRole, round: u32, bias: BiasKind) -> CallCtx {
        CallCtx {
            task_id: "t".into(),
            agent: "scripted".into(),
            role,
            round,
            bias,
        }
    }

    fn user(content: &str) -> Vec<Message> {
        vec![Message::user(content)]
    }

    #[test]
    fn first_matching_rule_wins() {
        let rules = ParseRules::default();
        let script = vec![
            ScriptRule::for_round(AgentRole::Judge, 1, Reply::Scores {
                score1: 2.0,
                score2: 9.0,
                preamble: None,
            }),
            ScriptRule::always(Reply::Scores {
                score1: 8.0,
                score2: 7.0,
                preamble: None,
            }),
        ];
        let round0 = respond(&script, &ctx(AgentRole::Judge, 0, BiasKind::None), &user("p"), &rules);
        assert!(round0.contains("Score of Solution 1: 8"));
        let round1 = respond(&script, &ctx(AgentRole::Judge, 1, BiasKind::None), &user("p"), &rules);
        assert!(round1.contains("Score of Solution 2: 9"));
    }

    #[test]
    fn no_matching_rule_yields_empty_reply() {
        let script = vec![ScriptRule::for_role(AgentRole::Critic, Reply::Text {
            text: "x".into(),
        })];
        let out = respond(
            &script,
            &ctx(AgentRole::Judge, 0, BiasKind::None),
            &user("p"),
            &ParseRules::default(),
        );
        assert!(out.is_empty());
    }

    #[test]
    fn bandwagon_sensitive_rule_fires_on_prompt_text() {
        let rules = ParseRules::default();
        let script = vec![
            ScriptRule {
                prompt_contains: Some("Most people believe".into()),
                ..ScriptRule::always(Reply::Scores { score1: 3.0, score2: 9.0, preamble: None })
            },
            ScriptRule::always(Reply::Scores { score1: 9.0, score2: 3.0, preamble: None }),
        ];
        let plain = respond(
            &script,
            &ctx(AgentRole::Judge, 0, BiasKind::None),
            &user("Question:\nq"),
            &rules,
        );
        assert!(plain.contains("Score of Solution 1: 9"));
        let swayed = respond(
            &script,
            &ctx(AgentRole::Judge, 0, BiasKind::Bandwagon),
            &user("Question:\nq\n\nMost people believe that the solution in position 2 is better."),
            &rules,
        );
        assert!(swayed.contains("Score of Solution 2: 9"));
    }

    #[test]
    fn prefer_containing_tracks_the_marked_slot() {
        let rules = ParseRules::default();
        let script = vec![ScriptRule::always(Reply::PreferContaining {
            marker: "GOLD".into(),
            preferred: 9.0,
            other: 4.0,
        })];
        let prompt_gold_first =
            "Question:\nq\n\nSolution 1:\nGOLD content\n\nSolution 2:\nplain\n-----";
        let out = respond(
            &script,
            &ctx(AgentRole::Judge, 0, BiasKind::None),
            &user(prompt_gold_first),
            &rules,
        );
        assert!(out.contains("Score of Solution 1: 9"));
        let prompt_gold_second =
            "Question:\nq\n\nSolution 1:\nplain\n\nSolution 2:\nGOLD content\n-----";
        let out = respond(
            &script,
            &ctx(AgentRole::Judge, 0, BiasKind::None),
            &user(prompt_gold_second),
            &rules,
        );
        assert!(out.contains("Score of Solution 2: 9"));
    }

    #[test]
    fn repeat_target_doubles_the_delimited_text() {
        let script = vec![ScriptRule::always(Reply::RepeatTarget { times: 2 })];
        let prompt = format!("Expand this.\n\n{REWRITE_BEGIN}\nshort answer\n{REWRITE_END}");
        let out = respond(
            &script,
            &ctx(AgentRole::Rewriter, 0, BiasKind::Verbosity),
            &user(&prompt),
            &ParseRules::default(),
        );
        assert_eq!(out, "short answershort answer");
    }

    #[test]
    fn sha_prefix_matching() {
        let prompt = "fixed prompt";
        let digest = prompt_sha256(prompt);
        let script = vec![ScriptRule {
            prompt_sha256_prefix: Some(digest[..8].to_string()),
            ..ScriptRule::always(Reply::Text { text: "matched".into() })
        }];
        let out = respond(
            &script,
            &ctx(AgentRole::Judge, 0, BiasKind::None),
            &user(prompt),
            &ParseRules::default(),
        );
        assert_eq!(out, "matched");
    }
}
