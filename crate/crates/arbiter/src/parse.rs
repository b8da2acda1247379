//! Score and selection extraction from free-form model output.
//!
//! Extraction runs in two passes. The strict pass demands the exact format
//! the prompt requested (final lines, anchored). The lenient pass falls back
//! to the last position-labeled numbers anywhere in the text, so judges that
//! restate their scores in a closing summary still parse.

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCORE_PLACEHOLDER: &str = "{score}";
pub const SLOT_PLACEHOLDER: &str = "{slot}";
pub const INDEX_PLACEHOLDER: &str = "{index}";

/// Strict one-decimal-place numeric token; anything richer falls to lenient.
const STRICT_NUMBER: &str = r"(\d+(?:\.\d)?)";
const LENIENT_NUMBER: &str = r"(\d+(?:\.\d+)?)";

/// Textual patterns shared between prompt rendering and parsing, so the
/// format the prompt requests is always the format the parser accepts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRules {
    /// Line format for one score, with `{slot}` and `{score}` placeholders.
    pub score_line: String,
    /// Label used when referring to a solution by position.
    pub solution_label: String,
    /// Line format for a meta selection, with `{index}` placeholder.
    pub selection_line: String,
    /// Label used for anonymous pool members.
    pub referee_label: String,
}

impl Default for ParseRules {
    fn default() -> Self {
        ParseRules {
            score_line: "Score of Solution {slot}: {score}".into(),
            solution_label: "Solution".into(),
            selection_line: "Best judgment: Referee {index}".into(),
            referee_label: "Referee".into(),
        }
    }
}

impl ParseRules {
    /// Renders the strict score line the prompt asks for, e.g. for use in
    /// format instructions.
    pub fn score_line_for(&self, slot: u8, score: &str) -> String {
        self.score_line
            .replace(SLOT_PLACEHOLDER, &slot.to_string())
            .replace(SCORE_PLACEHOLDER, score)
    }

    pub fn selection_line_for(&self, index: &str) -> String {
        self.selection_line.replace(INDEX_PLACEHOLDER, index)
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` must contain `{placeholder}`")]
    MissingPlaceholder {
        template: String,
        placeholder: &'static str,
    },
    #[error("template produced an invalid pattern: {0}")]
    Pattern(#[from] regex::Error),
}

/// Declared failure of either extraction pass; triggers the
/// retry-with-reminder path upstream.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("no score pair found")]
    NoScores,
    #[error("no selection found")]
    NoSelection,
    #[error("selection {index} outside pool 1..={pool}")]
    SelectionOutOfRange { index: usize, pool: usize },
}

/// Compiled extraction patterns. Build once per run; extraction itself is
/// pure and freely concurrent.
#[derive(Debug)]
pub struct Parser {
    strict_score: [Regex; 2],
    lenient_score: Regex,
    strict_selection: Regex,
    lenient_selection: Regex,
}

impl Parser {
    pub fn new(rules: &ParseRules) -> Result<Parser, TemplateError> {
        for (template, placeholder) in [
            (&rules.score_line, SLOT_PLACEHOLDER),
            (&rules.score_line, SCORE_PLACEHOLDER),
            (&rules.selection_line, INDEX_PLACEHOLDER),
        ] {
            if !template.contains(placeholder) {
                return Err(TemplateError::MissingPlaceholder {
                    template: template.clone(),
                    placeholder,
                });
            }
        }

        let strict_line = |slot: u8| -> Result<Regex, regex::Error> {
            let pattern = regex::escape(&rules.score_line)
                .replace(&regex::escape(SLOT_PLACEHOLDER), &slot.to_string())
                .replace(&regex::escape(SCORE_PLACEHOLDER), STRICT_NUMBER);
            Regex::new(&format!("^{pattern}$"))
        };

        let lenient_score = Regex::new(&format!(
            r"(?i){}\s*(\d+)[^0-9\r\n]*?{}",
            regex::escape(&rules.solution_label),
            LENIENT_NUMBER,
        ))?;

        let strict_selection = Regex::new(&format!(
            "^{}$",
            regex::escape(&rules.selection_line)
                .replace(&regex::escape(INDEX_PLACEHOLDER), r"(\d+)")
        ))?;
        let lenient_selection = Regex::new(&format!(
            r"(?i){}\s*(\d+)",
            regex::escape(&rules.referee_label)
        ))?;

        Ok(Parser {
            strict_score: [strict_line(1)?, strict_line(2)?],
            lenient_score,
            strict_selection,
            lenient_selection,
        })
    }

    /// Extracts the two positional scores from `text`.
    pub fn extract_scores(&self, text: &str) -> Result<(f64, f64), ParseFailure> {
        if let Some(pair) = self.strict_scores(text) {
            return Ok(pair);
        }
        self.lenient_scores(text).ok_or(ParseFailure::NoScores)
    }

    /// Strict pass: the last two non-empty lines are exactly the requested
    /// score lines for slot 1 and slot 2, in order.
    fn strict_scores(&self, text: &str) -> Option<(f64, f64)> {
        let mut tail = text.lines().map(str::trim).filter(|l| !l.is_empty()).rev();
        let line2 = tail.next()?;
        let line1 = tail.next()?;
        let s1 = capture_number(&self.strict_score[0], line1)?;
        let s2 = capture_number(&self.strict_score[1], line2)?;
        Some((s1, s2))
    }

    /// Lenient pass: last labeled score per slot anywhere in the text.
    fn lenient_scores(&self, text: &str) -> Option<(f64, f64)> {
        let mut s1 = None;
        let mut s2 = None;
        for caps in self.lenient_score.captures_iter(text) {
            let slot = caps.get(1)?.as_str();
            let score: f64 = caps.get(2)?.as_str().parse().ok()?;
            match slot {
                "1" => s1 = Some(score),
                "2" => s2 = Some(score),
                _ => {}
            }
        }
        Some((s1?, s2?))
    }

    /// Extracts a 1-based pool selection, validated against pool size `k`.
    pub fn extract_selection(&self, text: &str, k: usize) -> Result<usize, ParseFailure> {
        let strict = text
            .lines()
            .map(str::trim)
            .filter_map(|line| self.strict_selection.captures(line))
            .next_back();
        let caps = match strict {
            Some(caps) => Some(caps),
            None => self.lenient_selection.captures_iter(text).last(),
        };
        let index: usize = caps
            .and_then(|c| c.get(1))
            .and_then(|m| m.as_str().parse().ok())
            .ok_or(ParseFailure::NoSelection)?;
        if (1..=k).contains(&index) {
            Ok(index)
        } else {
            Err(ParseFailure::SelectionOutOfRange { index, pool: k })
        }
    }
}

fn capture_number(re: &Regex, line: &str) -> Option<f64> {
    re.captures(line)?.get(1)?.as_str().parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parser() -> Parser {
        Parser::new(&ParseRules::default()).unwrap()
    }

    #[test]
    fn strict_final_lines() {
        let text = "Reasoning here.\nScore of Solution 1: 8\nScore of Solution 2: 7";
        assert_eq!(parser().extract_scores(text).unwrap(), (8.0, 7.0));
    }

    #[test]
    fn lenient_inline_scores() {
        let text = "Solution 1 gets 6/10. Solution 2 gets 6/10.";
        assert_eq!(parser().extract_scores(text).unwrap(), (6.0, 6.0));
    }

    #[test]
    fn no_scores_is_a_failure() {
        assert_eq!(
            parser().extract_scores("Both are fine."),
            Err(ParseFailure::NoScores)
        );
    }

    #[test]
    fn last_occurrence_wins() {
        let text = "Solution 1: 3, Solution 2: 9.\n\
                    Revised: Solution 1: 7 and Solution 2: 5.";
        assert_eq!(parser().extract_scores(text).unwrap(), (7.0, 5.0));
    }

    #[test]
    fn strict_allows_one_decimal_place() {
        let text = "Score of Solution 1: 8.5\nScore of Solution 2: 8.25";
        // 8.25 fails strict, whole text falls to lenient, which accepts it.
        assert_eq!(parser().extract_scores(text).unwrap(), (8.5, 8.25));
    }

    #[test]
    fn slot_labels_above_nine_do_not_alias() {
        let text = "Solution 12: 4. Solution 1: 8. Solution 2: 6.";
        assert_eq!(parser().extract_scores(text).unwrap(), (8.0, 6.0));
    }

    #[test]
    fn selection_strict_line() {
        assert_eq!(
            parser().extract_selection("Best judgment: Referee 3", 4).unwrap(),
            3
        );
    }

    #[test]
    fn selection_out_of_range() {
        assert_eq!(
            parser().extract_selection("Referee 5", 4),
            Err(ParseFailure::SelectionOutOfRange { index: 5, pool: 4 })
        );
    }

    #[test]
    fn selection_prefers_strict_over_earlier_mentions() {
        let text = "I prefer Referee 2's reasoning over Referee 1.\nBest judgment: Referee 2";
        assert_eq!(parser().extract_selection(text, 4).unwrap(), 2);
    }

    #[test]
    fn selection_missing() {
        assert_eq!(
            parser().extract_selection("no verdict here", 3),
            Err(ParseFailure::NoSelection)
        );
    }

    #[test]
    fn template_validation() {
        let rules = ParseRules { score_line: "Score: {score}".into(), ..ParseRules::default() };
        assert!(Parser::new(&rules).is_err());
    }

    proptest! {
        // Total and deterministic: never panics, same input same output.
        #[test]
        fn extraction_total_on_arbitrary_text(text in ".{0,400}") {
            let p = parser();
            let a = p.extract_scores(&text);
            let b = p.extract_scores(&text);
            prop_assert_eq!(a, b);
            let a = p.extract_selection(&text, 4);
            let b = p.extract_selection(&text, 4);
            prop_assert_eq!(a, b);
        }

        // Strict success implies the lenient pass agrees.
        #[test]
        fn strict_subsumed_by_lenient(
            preamble in "[a-zA-Z ,.\n]{0,200}",
            s1 in 0u32..100,
            s2 in 0u32..100,
        ) {
            let p = parser();
            let text = format!(
                "{preamble}\nScore of Solution 1: {s1}\nScore of Solution 2: {s2}"
            );
            let strict = p.strict_scores(&text);
            prop_assert_eq!(strict, Some((f64::from(s1), f64::from(s2))));
            prop_assert_eq!(p.lenient_scores(&text), strict);
        }
    }
}
