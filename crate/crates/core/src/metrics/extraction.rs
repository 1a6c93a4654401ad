//! Rule-based recovery of a choice label from free-form generations.
//!
//! Rules are regular expressions tried in order; the first rule whose capture
//! is one of the valid labels wins. Pattern text may use two placeholders:
//! `{labels}` expands to a case-insensitive alternation of the valid labels,
//! `{labels_strict}` to the same alternation but case-sensitive when every
//! label is a single ASCII letter, so English words such as "a" or "I" are
//! not mistaken for answers.

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulePattern {
    pub pattern: String,
    #[serde(default = "default_capture")]
    pub capture: usize,
}

fn default_capture() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionRule {
    #[serde(default = "default_rules")]
    pub rules: Vec<RulePattern>,
    pub valid_labels: Vec<String>,
    #[serde(default)]
    pub default_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub label: Option<String>,
    pub rule_index: Option<usize>,
}

/// Built-in rule order: exact label, "answer is <label>" with up to three
/// interleaving words, parenthesized label, label followed by `)` at a line
/// start, and finally the last standalone label token.
pub fn default_rules() -> Vec<RulePattern> {
    [
        r"(?i)^\s*\(?({labels})\)?\s*[.:)]?\s*$",
        r"(?i)\banswer(?:\s+is|\s*[:=])\s*(?:[\w']+\s+){0,3}?\(?({labels_strict})\)?(?:[^\w]|$)",
        r"\(\s*({labels})\s*\)",
        r"(?m)^\s*({labels})\)",
        r"(?s)^.*(?:^|[^\w])({labels_strict})(?:[^\w]|$)",
    ]
    .into_iter()
    .map(|p| RulePattern { pattern: p.to_owned(), capture: 1 })
    .collect()
}

impl ExtractionRule {
    pub fn with_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            rules: default_rules(),
            valid_labels: labels.into_iter().map(Into::into).collect(),
            default_score: 0.0,
        }
    }

    pub fn compile(&self) -> Result<CompiledExtraction, regex::Error> {
        let alternation = self
            .valid_labels
            .iter()
            .map(|l| regex::escape(l))
            .collect::<Vec<_>>()
            .join("|");
        let single_letters = !self.valid_labels.is_empty()
            && self
                .valid_labels
                .iter()
                .all(|l| l.len() == 1 && l.chars().all(|c| c.is_ascii_alphabetic()));
        let loose = format!("(?i:{alternation})");
        let strict = if single_letters { format!("(?-i:{alternation})") } else { loose.clone() };
        let rules = self
            .rules
            .iter()
            .map(|r| {
                let text = r.pattern.replace("{labels_strict}", &strict).replace("{labels}", &loose);
                Regex::new(&text).map(|re| (re, r.capture))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompiledExtraction { rules, valid_labels: self.valid_labels.clone() })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledExtraction {
    rules: Vec<(Regex, usize)>,
    valid_labels: Vec<String>,
}

impl CompiledExtraction {
    pub fn extract(&self, generation: &str) -> Extraction {
        for (index, (re, group)) in self.rules.iter().enumerate() {
            let Some(caps) = re.captures(generation) else { continue };
            let Some(m) = caps.get(*group) else { continue };
            if let Some(label) = self.canonical_label(m.as_str()) {
                return Extraction { label: Some(label), rule_index: Some(index) };
            }
        }
        Extraction { label: None, rule_index: None }
    }

    fn canonical_label(&self, captured: &str) -> Option<String> {
        let captured = captured.trim();
        self.valid_labels
            .iter()
            .find(|l| l.to_lowercase() == captured.to_lowercase())
            .cloned()
    }
}

/// Applies `rule` to `generation`. A `None` label tells the caller to assign
/// `rule.default_score`. An invalid custom pattern yields no match.
pub fn extract_choice_label(generation: &str, rule: &ExtractionRule) -> Extraction {
    match rule.compile() {
        Ok(compiled) => compiled.extract(generation),
        Err(err) => {
            log::warn!("invalid extraction pattern: {err}");
            Extraction { label: None, rule_index: None }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> ExtractionRule {
        ExtractionRule::with_labels(["A", "B", "C", "D"])
    }

    #[test]
    fn hedged_answer_phrase() {
        let e = extract_choice_label("The answer is probably B", &abcd());
        assert_eq!(e.label.as_deref(), Some("B"));
        assert_eq!(e.rule_index, Some(1));
    }

    #[test]
    fn exact_label_uses_first_rule() {
        let e = extract_choice_label("B", &abcd());
        assert_eq!(e, Extraction { label: Some("B".into()), rule_index: Some(0) });
    }

    #[test]
    fn no_match_is_none() {
        let e = extract_choice_label("no idea", &abcd());
        assert_eq!(e, Extraction { label: None, rule_index: None });
    }

    #[test]
    fn articles_are_not_labels() {
        let e = extract_choice_label("I think it is a trick question", &abcd());
        assert_eq!(e.label, None);
    }

    #[test]
    fn first_match_wins_on_collision() {
        // Both the parenthesized and the last-token rule match, with
        // different labels.
        let text = "(b) looks right but maybe D";
        let rule = abcd();
        assert_eq!(extract_choice_label(text, &rule).label.as_deref(), Some("B"));
        let mut reversed = rule.clone();
        reversed.rules.reverse();
        assert_eq!(extract_choice_label(text, &reversed).label.as_deref(), Some("D"));
    }

    #[test]
    fn numeric_labels() {
        let rule = ExtractionRule::with_labels(["0", "1"]);
        assert_eq!(extract_choice_label(" 1\n", &rule).label.as_deref(), Some("1"));
        assert_eq!(extract_choice_label("Answer: 0", &rule).label.as_deref(), Some("0"));
    }

    #[test]
    fn word_labels_are_case_insensitive() {
        let rule = ExtractionRule::with_labels(["yes", "no"]);
        assert_eq!(extract_choice_label("Yes.", &rule).label.as_deref(), Some("yes"));
        assert_eq!(
            extract_choice_label("I would say the answer is No", &rule).label.as_deref(),
            Some("no")
        );
    }

    #[test]
    fn invalid_custom_pattern_yields_no_match() {
        let mut rule = abcd();
        rule.rules = vec![RulePattern { pattern: "(".into(), capture: 1 }];
        assert_eq!(extract_choice_label("A", &rule).label, None);
    }
}
