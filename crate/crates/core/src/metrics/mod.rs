//! Scoring functions: answer normalization, string-overlap metrics, the
//! unbiased pass@k estimator, rule-based label extraction and sandboxed
//! execution of code completions.
//!
//! Every metric returns a value in `[0, 1]`. Scaling to percentages happens
//! only when results are presented.

mod extraction;
mod sandbox;

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extraction::{default_rules, CompiledExtraction, extract_choice_label, Extraction, ExtractionRule, RulePattern};
pub use sandbox::{Sandbox, SandboxConfig, SandboxError, SandboxOutcome, SandboxVerdict};

pub const EXACT_MATCH: &str = "exact_match";
pub const ACCURACY: &str = "accuracy";
pub const TOKEN_F1: &str = "token_f1";
pub const BLEU: &str = "bleu";
pub const CHRF: &str = "chrf";
pub const ROUGE_L: &str = "rouge_l";
pub const PASS_AT_K: &str = "pass_at_k";

/// Character n-gram orders used by chrF.
pub const CHRF_MAX_ORDER: usize = 6;
/// Recall weight used by chrF.
pub const CHRF_BETA: f64 = 2.0;
/// Maximum n-gram order used by BLEU.
pub const BLEU_MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("hypothesis count {hypotheses} does not match reference count {references}")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("invalid pass@k arguments n={n} c={c} k={k}: require 0 <= c <= n and 1 <= k <= n")]
    InvalidPassAtK { n: u64, c: u64, k: u64 },
    #[error("no problems to aggregate")]
    NoProblems,
    #[error("problem {0:?} has no verdicts")]
    EmptyProblem(String),
}

/// An aggregated metric value. `value` is `None` when no record contributed,
/// so an undefined score is never confused with a score of zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: String,
    pub value: Option<f64>,
    pub support: usize,
}

impl MetricScore {
    pub fn from_values(metric: impl Into<String>, values: &[f64]) -> Self {
        let value = if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        };
        Self { metric: metric.into(), value, support: values.len() }
    }
}

fn punctuation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}\p{S}]").unwrap())
}

fn article_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").unwrap())
}

/// Lowercase, strip punctuation, drop the articles a/an/the and collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct = punctuation_re().replace_all(&lowered, "");
    let no_articles = article_re().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased, punctuation-free whitespace tokens. Articles are kept, as in
/// the usual ROUGE tokenization.
fn rouge_tokens(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    punctuation_re().replace_all(&lowered, "").split_whitespace().map(str::to_owned).collect()
}

fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text).split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Harmonic mean of precision and recall over the multiset of normalized
/// tokens. Two empty answers agree perfectly; one empty answer scores zero.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_tokens = normalized_tokens(pred);
    let gold_tokens = normalized_tokens(gold);
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred_tokens {
        if let Some(count) = gold_counts.get_mut(t.as_str()) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (LCS based, beta 1) over lowercased, punctuation-free
/// tokens.
pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    let pred_tokens = rouge_tokens(pred);
    let gold_tokens = rouge_tokens(gold);
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let lcs = lcs_len(&pred_tokens, &gold_tokens);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / pred_tokens.len() as f64;
    let recall = lcs as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn check_corpus(hypotheses: usize, references: usize) -> Result<(), MetricError> {
    if hypotheses != references {
        return Err(MetricError::LengthMismatch { hypotheses, references });
    }
    if hypotheses == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

fn ngram_counts<T: Eq + std::hash::Hash + Clone>(items: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if items.len() >= n {
        for window in items.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 over whitespace tokens.
///
/// Candidate n-gram counts are clipped by the maximum count in any single
/// reference. The brevity penalty uses, per sentence, the reference length
/// closest to the hypothesis length (shorter on ties). When an order above
/// unigrams has zero matches, its precision becomes `(0 + 1) / (total + 1)`.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[S],
    references: &[Vec<R>],
) -> Result<f64, MetricError> {
    check_corpus(hypotheses.len(), references.len())?;
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, refs) in hypotheses.iter().zip(references) {
        let hyp_tokens: Vec<&str> = hyp.as_ref().split_whitespace().collect();
        let ref_tokens: Vec<Vec<&str>> =
            refs.iter().map(|r| r.as_ref().split_whitespace().collect()).collect();
        hyp_len += hyp_tokens.len();
        ref_len += closest_ref_len(hyp_tokens.len(), ref_tokens.iter().map(Vec::len));

        for n in 1..=BLEU_MAX_ORDER {
            let hyp_counts = ngram_counts(&hyp_tokens, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in &ref_tokens {
                for (gram, count) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, count) in &hyp_counts {
                matches[n - 1] += (*count).min(max_ref.get(gram).copied().unwrap_or(0));
                totals[n - 1] += count;
            }
        }
    }

    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..BLEU_MAX_ORDER {
        let precision = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += precision.ln();
    }
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok((brevity * (log_sum / BLEU_MAX_ORDER as f64).exp()).clamp(0.0, 1.0))
}

fn closest_ref_len(hyp_len: usize, ref_lens: impl Iterator<Item = usize>) -> usize {
    ref_lens
        .min_by_key(|&len| (len.abs_diff(hyp_len), len))
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, Default)]
struct ChrfStats {
    matches: usize,
    hyp: usize,
    reference: usize,
}

fn chrf_sentence_stats(hyp: &[char], reference: &[char]) -> [ChrfStats; CHRF_MAX_ORDER] {
    let mut stats = [ChrfStats::default(); CHRF_MAX_ORDER];
    for n in 1..=CHRF_MAX_ORDER {
        let hyp_counts = ngram_counts(hyp, n);
        let ref_counts = ngram_counts(reference, n);
        let matches = hyp_counts
            .iter()
            .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        stats[n - 1] = ChrfStats {
            matches,
            hyp: hyp.len().saturating_sub(n - 1),
            reference: reference.len().saturating_sub(n - 1),
        };
    }
    stats
}

fn chrf_from_stats(stats: &[ChrfStats; CHRF_MAX_ORDER]) -> f64 {
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut effective_order = 0usize;
    for s in stats {
        if s.hyp > 0 && s.reference > 0 {
            precision += s.matches as f64 / s.hyp as f64;
            recall += s.matches as f64 / s.reference as f64;
            effective_order += 1;
        }
    }
    if effective_order == 0 {
        return 0.0;
    }
    precision /= effective_order as f64;
    recall /= effective_order as f64;
    let beta2 = CHRF_BETA * CHRF_BETA;
    let denom = beta2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    }
}

fn chrf_chars(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Corpus-level chrF with character orders 1..=6 and beta 2.
///
/// Whitespace is ignored. Per order, matched/hypothesis/reference n-gram
/// counts are summed over the corpus; precision and recall are averaged over
/// the orders for which both sides have n-grams, then combined into an
/// F-beta score. With several references, each sentence uses the reference
/// that gives it the highest sentence-level score.
pub fn chrf<S: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[S],
    references: &[Vec<R>],
) -> Result<f64, MetricError> {
    check_corpus(hypotheses.len(), references.len())?;
    let mut totals = [ChrfStats::default(); CHRF_MAX_ORDER];
    for (hyp, refs) in hypotheses.iter().zip(references) {
        let hyp_chars = chrf_chars(hyp.as_ref());
        let best = refs
            .iter()
            .map(|r| chrf_sentence_stats(&hyp_chars, &chrf_chars(r.as_ref())))
            .fold(None::<([ChrfStats; CHRF_MAX_ORDER], f64)>, |best, stats| {
                let score = chrf_from_stats(&stats);
                match best {
                    Some((_, s)) if s >= score => best,
                    _ => Some((stats, score)),
                }
            });
        if let Some((stats, _)) = best {
            for (total, s) in totals.iter_mut().zip(stats.iter()) {
                total.matches += s.matches;
                total.hyp += s.hyp;
                total.reference += s.reference;
            }
        }
    }
    Ok(chrf_from_stats(&totals).clamp(0.0, 1.0))
}

/// Unbiased pass@k estimator `1 - C(n-c, k) / C(n, k)`.
///
/// The ratio of binomials is evaluated as an exact fraction when it fits in
/// 128 bits and as a running product of `(1 - k/i)` terms otherwise, so large
/// `n` never overflows.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricError> {
    if c > n || k == 0 || k > n {
        return Err(MetricError::InvalidPassAtK { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if let Some((num, den)) = exact_fail_ratio(n, c, k) {
        return Ok(((den - num) as f64 / den as f64).clamp(0.0, 1.0));
    }
    let mut fail_all = 1.0f64;
    for i in (n - c + 1)..=n {
        fail_all *= 1.0 - k as f64 / i as f64;
    }
    Ok((1.0 - fail_all).clamp(0.0, 1.0))
}

/// `C(n-c, k) / C(n, k)` as a reduced fraction, using the shorter of the two
/// product forms.
fn exact_fail_ratio(n: u64, c: u64, k: u64) -> Option<(u128, u128)> {
    let (terms, offset) = if c < k { (c, k) } else { (k, c) };
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..terms {
        num = num.checked_mul(u128::from(n - offset - i))?;
        den = den.checked_mul(u128::from(n - i))?;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    Some((num, den))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Mean pass@1 over problems. Each entry maps a problem to its sample
/// verdicts; a sample counts as correct only when it passed.
pub fn aggregate_pass_at_1<'a, I>(problems: I) -> Result<MetricScore, MetricError>
where
    I: IntoIterator<Item = (&'a str, &'a [SandboxVerdict])>,
{
    let mut per_problem = Vec::new();
    for (problem, verdicts) in problems {
        if verdicts.is_empty() {
            return Err(MetricError::EmptyProblem(problem.to_owned()));
        }
        let n = verdicts.len() as u64;
        let c = verdicts.iter().filter(|v| v.outcome == SandboxOutcome::Passed).count() as u64;
        per_problem.push(pass_at_k(n, c, 1)?);
    }
    if per_problem.is_empty() {
        return Err(MetricError::NoProblems);
    }
    Ok(MetricScore::from_values(PASS_AT_K, &per_problem))
}
