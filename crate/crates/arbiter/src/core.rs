//! Shared domain types: tasks, presentations, verdicts, and the
//! canonicalization that makes verdicts comparable across slot permutations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable identity of a candidate solution, independent of display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolutionId {
    X,
    Y,
}

/// A question plus two candidate solutions with stable identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTask {
    pub id: String,
    pub category: String,
    pub question: String,
    pub solution_x: String,
    pub solution_y: String,
    /// Human preference label, when the corpus carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<SolutionId>,
    /// Precomputed extended variant of solution Y.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbose_y: Option<String>,
}

impl ComparisonTask {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.id.is_empty() {
            return Err(CoreError::InvalidTask("empty id".into()));
        }
        if self.solution_x.is_empty() || self.solution_y.is_empty() {
            return Err(CoreError::InvalidTask(format!(
                "task {}: solutions must be non-empty",
                self.id
            )));
        }
        Ok(())
    }
}

/// Which candidate occupies slot 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Perm {
    /// slot1 = solution X, slot2 = solution Y.
    Identity,
    /// slot1 = solution Y, slot2 = solution X.
    Swapped,
}

impl Perm {
    pub fn toggled(self) -> Perm {
        match self {
            Perm::Identity => Perm::Swapped,
            Perm::Swapped => Perm::Identity,
        }
    }
}

/// Tag identifying one of the supported prompt perturbations.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    None,
    Position,
    Verbosity,
    Bandwagon,
    Cot,
}

impl BiasKind {
    pub const ALL_MODIFIED: [BiasKind; 4] = [
        BiasKind::Position,
        BiasKind::Verbosity,
        BiasKind::Bandwagon,
        BiasKind::Cot,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BiasKind::None => "none",
            BiasKind::Position => "position",
            BiasKind::Verbosity => "verbosity",
            BiasKind::Bandwagon => "bandwagon",
            BiasKind::Cot => "cot",
        }
    }
}

impl std::str::FromStr for BiasKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(BiasKind::None),
            "position" => Ok(BiasKind::Position),
            "verbosity" => Ok(BiasKind::Verbosity),
            "bandwagon" => Ok(BiasKind::Bandwagon),
            "cot" => Ok(BiasKind::Cot),
            other => Err(CoreError::UnknownBias(other.to_string())),
        }
    }
}

/// A bias perturbation together with the parameters it needs at render time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasVariant {
    None,
    Position,
    Verbosity,
    Bandwagon {
        /// Fully rendered statement appended after the question.
        statement: String,
        /// Presentation slot the statement claims the majority favors.
        target_slot: u8,
    },
    Cot {
        instruction: String,
    },
}

impl BiasVariant {
    pub fn kind(&self) -> BiasKind {
        match self {
            BiasVariant::None => BiasKind::None,
            BiasVariant::Position => BiasKind::Position,
            BiasVariant::Verbosity => BiasKind::Verbosity,
            BiasVariant::Bandwagon { .. } => BiasKind::Bandwagon,
            BiasVariant::Cot { .. } => BiasKind::Cot,
        }
    }

    pub fn cot_instruction(&self) -> Option<&str> {
        match self {
            BiasVariant::Cot { instruction } => Some(instruction),
            _ => None,
        }
    }
}

/// A task rendered in a specific slot order, under a specific bias variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presentation {
    pub task_id: String,
    pub question_text: String,
    pub slot1: String,
    pub slot2: String,
    pub perm: Perm,
    pub bias: BiasVariant,
}

/// A verdict in presentation-slot space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    First,
    Second,
    Tie,
    /// Parsing failed after all retries.
    Invalid,
}

impl Verdict {
    /// Swaps First/Second; Tie and Invalid are fixed points.
    pub fn flipped(self) -> Verdict {
        match self {
            Verdict::First => Verdict::Second,
            Verdict::Second => Verdict::First,
            other => other,
        }
    }
}

/// A verdict in solution-identity space, comparable across permutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CanonicalVerdict {
    X,
    Y,
    Tie,
    Invalid,
}

impl From<SolutionId> for CanonicalVerdict {
    fn from(id: SolutionId) -> Self {
        match id {
            SolutionId::X => CanonicalVerdict::X,
            SolutionId::Y => CanonicalVerdict::Y,
        }
    }
}

/// One agent's scored verdict for a presentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub agent: String,
    pub round: u32,
    /// None iff the verdict is Invalid.
    pub score1: Option<f64>,
    pub score2: Option<f64>,
    pub verdict: Verdict,
    /// Raw model output.
    pub rationale: String,
}

impl Judgment {
    pub fn invalid(agent: &str, round: u32, rationale: String) -> Judgment {
        Judgment {
            agent: agent.to_string(),
            round,
            score1: None,
            score2: None,
            verdict: Verdict::Invalid,
            rationale,
        }
    }

    pub fn from_scores(
        agent: &str,
        round: u32,
        score1: f64,
        score2: f64,
        rationale: String,
    ) -> Result<Judgment, CoreError> {
        let verdict = derive_verdict(score1, score2)?;
        Ok(Judgment {
            agent: agent.to_string(),
            round,
            score1: Some(score1),
            score2: Some(score2),
            verdict,
            rationale,
        })
    }
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("score is not finite: {0}")]
    NonFiniteScore(f64),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("unknown bias kind: {0}")]
    UnknownBias(String),
}

/// Maps a slot-space verdict back to solution-identity space by undoing
/// the presentation's permutation. Tie and Invalid are fixed points.
pub fn canonicalize(v: Verdict, p: &Presentation) -> CanonicalVerdict {
    match (v, p.perm) {
        (Verdict::First, Perm::Identity) | (Verdict::Second, Perm::Swapped) => CanonicalVerdict::X,
        (Verdict::Second, Perm::Identity) | (Verdict::First, Perm::Swapped) => CanonicalVerdict::Y,
        (Verdict::Tie, _) => CanonicalVerdict::Tie,
        (Verdict::Invalid, _) => CanonicalVerdict::Invalid,
    }
}

/// The higher-scored slot wins; equal scores are a tie.
pub fn derive_verdict(score1: f64, score2: f64) -> Result<Verdict, CoreError> {
    if !score1.is_finite() {
        return Err(CoreError::NonFiniteScore(score1));
    }
    if !score2.is_finite() {
        return Err(CoreError::NonFiniteScore(score2));
    }
    Ok(if score1 > score2 {
        Verdict::First
    } else if score1 < score2 {
        Verdict::Second
    } else {
        Verdict::Tie
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn presentation(perm: Perm) -> Presentation {
        Presentation {
            task_id: "t1".into(),
            question_text: "q".into(),
            slot1: "a".into(),
            slot2: "b".into(),
            perm,
            bias: BiasVariant::None,
        }
    }

    #[test]
    fn canonicalize_identity_and_swap() {
        let id = presentation(Perm::Identity);
        let sw = presentation(Perm::Swapped);
        assert_eq!(canonicalize(Verdict::First, &id), CanonicalVerdict::X);
        assert_eq!(canonicalize(Verdict::Second, &id), CanonicalVerdict::Y);
        assert_eq!(canonicalize(Verdict::First, &sw), CanonicalVerdict::Y);
        assert_eq!(canonicalize(Verdict::Second, &sw), CanonicalVerdict::X);
        assert_eq!(canonicalize(Verdict::Tie, &sw), CanonicalVerdict::Tie);
        assert_eq!(canonicalize(Verdict::Invalid, &id), CanonicalVerdict::Invalid);
    }

    #[test]
    fn flip_swap_identity_exhaustive() {
        // canonicalize(flip(v), swap(p)) == canonicalize(v, p) over the full
        // 4x2 input space.
        for v in [Verdict::First, Verdict::Second, Verdict::Tie, Verdict::Invalid] {
            for perm in [Perm::Identity, Perm::Swapped] {
                let p = presentation(perm);
                let q = presentation(perm.toggled());
                assert_eq!(canonicalize(v.flipped(), &q), canonicalize(v, &p));
            }
        }
    }

    #[test]
    fn derive_verdict_basic() {
        assert_eq!(derive_verdict(8.0, 7.0).unwrap(), Verdict::First);
        assert_eq!(derive_verdict(6.0, 6.0).unwrap(), Verdict::Tie);
        assert_eq!(derive_verdict(3.0, 9.0).unwrap(), Verdict::Second);
    }

    #[test]
    fn derive_verdict_rejects_non_finite() {
        assert!(derive_verdict(f64::NAN, 1.0).is_err());
        assert!(derive_verdict(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn derive_verdict_antisymmetric() {
        for a in 0..12 {
            for b in 0..12 {
                let (a, b) = (f64::from(a) * 0.5, f64::from(b) * 0.5);
                let fwd = derive_verdict(a, b).unwrap();
                let rev = derive_verdict(b, a).unwrap();
                assert_eq!(fwd == Verdict::First, rev == Verdict::Second);
            }
        }
    }

    #[test]
    fn judgment_verdict_consistent_with_scores() {
        let j = Judgment::from_scores("j", 0, 9.0, 4.0, "raw".into()).unwrap();
        assert_eq!(j.verdict, Verdict::First);
        let j = Judgment::from_scores("j", 0, 5.0, 5.0, "raw".into()).unwrap();
        assert_eq!(j.verdict, Verdict::Tie);
    }
}
