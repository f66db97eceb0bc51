//! Answer extraction from raw model text.
//!
//! Unparseable is a value, not a failure: every caller records it and the
//! metrics layer counts it against accuracy without crediting any position.

use regex::Regex;

/// What kind of answer the prompt asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    /// A single option label such as "B".
    Label,
    /// Yes or No.
    YesNo,
}

/// Compiled matcher for one label set.
pub struct AnswerParser {
    labels: Vec<String>,
    mode: AnswerMode,
    token_re: Regex,
    answer_re: Regex,
}

impl AnswerParser {
    pub fn new(labels: &[String], mode: AnswerMode) -> Self {
        assert!(!labels.is_empty(), "labels must be nonempty");
        let alternation = labels
            .iter()
            .map(|l| regex::escape(l))
            .collect::<Vec<_>>()
            .join("|");
        let token_re = Regex::new(&format!(r"(?i)\b({alternation})\b")).expect("valid pattern");
        // "the answer is X" / "answer: X" style; used only to break ties.
        let answer_re = Regex::new(&format!(
            r"(?i)\banswer\s*(?:is|:)?\s*[\(\[]?({alternation})\b"
        ))
        .expect("valid pattern");
        AnswerParser {
            labels: labels.to_vec(),
            mode,
            token_re,
            answer_re,
        }
    }

    fn canonical(&self, matched: &str) -> String {
        self.labels
            .iter()
            .find(|l| l.eq_ignore_ascii_case(matched))
            .expect("match came from the label alternation")
            .clone()
    }

    /// Extract the pick, or None when the text is unparseable.
    ///
    /// Label mode: the first standalone label token wins; a text containing
    /// two or more distinct labels is ambiguous unless an "answer is X"
    /// pattern names one. Yes/no mode: the first standalone yes or no token.
    pub fn parse(&self, raw: &str) -> Option<String> {
        match self.mode {
            AnswerMode::YesNo => self
                .token_re
                .find(raw)
                .map(|m| self.canonical(m.as_str())),
            AnswerMode::Label => {
                let mut distinct: Vec<String> = Vec::new();
                for m in self.token_re.find_iter(raw) {
                    let label = self.canonical(m.as_str());
                    if !distinct.contains(&label) {
                        distinct.push(label);
                    }
                }
                match distinct.len() {
                    0 => None,
                    1 => Some(distinct.remove(0)),
                    _ => self
                        .answer_re
                        .captures(raw)
                        .map(|c| self.canonical(c.get(1).expect("group 1").as_str())),
                }
            }
        }
    }
}

/// One-shot convenience over [`AnswerParser`].
pub fn parse_answer(raw: &str, labels: &[String], mode: AnswerMode) -> Option<String> {
    AnswerParser::new(labels, mode).parse(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        vec!["A".into(), "B".into(), "C".into(), "D".into()]
    }

    #[test]
    fn leading_answer_pattern() {
        assert_eq!(
            parse_answer("The answer is B.", &labels(), AnswerMode::Label),
            Some("B".into())
        );
    }

    #[test]
    fn ambiguity_without_answer_pattern_is_unparseable() {
        assert_eq!(
            parse_answer("Both A and B could work", &labels(), AnswerMode::Label),
            None
        );
    }

    #[test]
    fn ambiguity_resolved_by_answer_pattern() {
        assert_eq!(
            parse_answer(
                "A is tempting but wrong; the answer is C.",
                &labels(),
                AnswerMode::Label
            ),
            Some("C".into())
        );
        assert_eq!(
            parse_answer("Not B. Answer: D", &labels(), AnswerMode::Label),
            Some("D".into())
        );
    }

    #[test]
    fn single_token_with_noise() {
        assert_eq!(
            parse_answer("I think it's (C)", &labels(), AnswerMode::Label),
            Some("C".into())
        );
        assert_eq!(
            parse_answer("op.d", &labels(), AnswerMode::Label),
            Some("D".into())
        );
    }

    #[test]
    fn article_a_does_not_count_inside_words() {
        // "Basically" contains no standalone B; "a" alone does match label A.
        assert_eq!(
            parse_answer("Basically unsure", &labels(), AnswerMode::Label),
            None
        );
    }

    #[test]
    fn no_label_is_unparseable() {
        assert_eq!(
            parse_answer("I cannot tell.", &labels(), AnswerMode::Label),
            None
        );
        assert_eq!(parse_answer("", &labels(), AnswerMode::Label), None);
    }

    #[test]
    fn yes_no_first_token() {
        let yn: Vec<String> = vec!["Yes".into(), "No".into()];
        assert_eq!(
            parse_answer("Yes, the action appears.", &yn, AnswerMode::YesNo),
            Some("Yes".into())
        );
        assert_eq!(
            parse_answer("no... wait, yes", &yn, AnswerMode::YesNo),
            Some("No".into())
        );
        assert_eq!(parse_answer("maybe", &yn, AnswerMode::YesNo), None);
    }

    #[test]
    fn never_returns_label_outside_set() {
        let two: Vec<String> = vec!["A".into(), "B".into()];
        for raw in ["C", "The answer is D", "A or C?"] {
            if let Some(pick) = parse_answer(raw, &two, AnswerMode::Label) {
                assert!(two.contains(&pick), "{pick} outside label set");
            }
        }
    }
}
