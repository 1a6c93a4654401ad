//! Evaluator plugins and the built-in implementations.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use regex::Regex;

use super::dataset::ExampleRecord;
use crate::canonical::fingerprint;
use crate::engine::{self, EvaluationInput, EvaluationOutput};
use crate::metrics::{
    self, CompiledExtraction, ExtractionRule, Sandbox, SandboxConfig, SandboxOutcome, ACCURACY, BLEU, CHRF,
    EXACT_MATCH, PASS_AT_K, ROUGE_L, TOKEN_F1,
};
use crate::spec::TaskArgs;

/// Scores generations for one family of benchmarks.
///
/// The engine renders prompts from [`Evaluator::prompt_fields`], requests
/// [`Evaluator::samples_per_record`] completions per record and hands them
/// to [`Evaluator::score`]. Implementors usually only provide `score` and
/// `primary_metric`.
pub trait Evaluator: Send + Sync {
    fn primary_metric(&self) -> &str;

    fn samples_per_record(&self, _args: &TaskArgs) -> usize {
        1
    }

    fn prompt_fields(&self, record: &ExampleRecord) -> BTreeMap<String, String> {
        with_language(record)
    }

    /// `(metric, value)` pairs for one record. An error marks the record as
    /// skipped with that reason.
    fn score(&self, record: &ExampleRecord, completions: &[String], args: &TaskArgs) -> Result<Vec<(String, f64)>, String>;

    /// Runs the whole render → generate → score loop over `input`.
    fn evaluate(&self, input: EvaluationInput<'_>) -> EvaluationOutput {
        engine::evaluate_records(self, input)
    }
}

fn with_language(record: &ExampleRecord) -> BTreeMap<String, String> {
    let mut fields = record.fields.clone();
    fields.entry("language".into()).or_insert_with(|| record.language.clone());
    fields
}

fn gold_refs(record: &ExampleRecord) -> Result<Vec<&str>, String> {
    record.gold.as_ref().map(|g| g.references()).ok_or_else(|| "record has no gold answer".to_owned())
}

fn first_completion(completions: &[String]) -> &str {
    completions.first().map(String::as_str).unwrap_or("")
}

/// First non-empty line of a generation, trimmed.
pub fn first_line(text: &str) -> &str {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

fn max_over(refs: &[&str], f: impl Fn(&str) -> f64) -> f64 {
    refs.iter().map(|r| f(r)).fold(0.0, f64::max)
}

/// Label extraction plus accuracy against a gold label.
pub struct MultipleChoice {
    default_labels: Vec<String>,
    compiled: Mutex<HashMap<String, Arc<CompiledExtraction>>>,
}

impl MultipleChoice {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(labels: I) -> Self {
        Self { default_labels: labels.into_iter().map(Into::into).collect(), compiled: Mutex::default() }
    }

    pub fn rule_for(&self, args: &TaskArgs) -> ExtractionRule {
        args.extraction.clone().unwrap_or_else(|| ExtractionRule::with_labels(self.default_labels.clone()))
    }

    fn compiled(&self, rule: &ExtractionRule) -> Result<Arc<CompiledExtraction>, String> {
        let key = fingerprint(rule);
        if let Some(hit) = self.compiled.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let compiled = Arc::new(rule.compile().map_err(|e| format!("invalid extraction rule: {e}"))?);
        self.compiled.lock().unwrap().insert(key, compiled.clone());
        Ok(compiled)
    }

    /// Gold as one of `labels`: a direct (case-insensitive) match, or an
    /// integer index into the label list.
    fn canonical_gold(gold: &str, labels: &[String]) -> Option<String> {
        let gold = gold.trim();
        if let Some(label) = labels.iter().find(|l| l.eq_ignore_ascii_case(gold)) {
            return Some(label.clone());
        }
        gold.parse::<usize>().ok().and_then(|i| labels.get(i).cloned())
    }
}

impl Evaluator for MultipleChoice {
    fn primary_metric(&self) -> &str {
        ACCURACY
    }

    /// Adds an `options` block ("A. ...\nB. ...") when the record carries
    /// its choices as a list.
    fn prompt_fields(&self, record: &ExampleRecord) -> BTreeMap<String, String> {
        let mut fields = with_language(record);
        if fields.contains_key("options") {
            return fields;
        }
        let mut lines = Vec::new();
        for i in 0.. {
            let (text, label) = if let Some(text) = fields.get(&format!("choices_text_{i}")) {
                (text, fields.get(&format!("choices_label_{i}")).cloned())
            } else if let Some(text) = fields.get(&format!("choices_{i}")) {
                (text, None)
            } else {
                break;
            };
            let label = label.unwrap_or_else(|| ((b'A' + (i % 26) as u8) as char).to_string());
            lines.push(format!("{label}. {text}"));
        }
        if !lines.is_empty() {
            fields.insert("options".into(), lines.join("\n"));
        }
        fields
    }

    fn score(&self, record: &ExampleRecord, completions: &[String], args: &TaskArgs) -> Result<Vec<(String, f64)>, String> {
        let rule = self.rule_for(args);
        let gold = gold_refs(record)?[0];
        let gold = Self::canonical_gold(gold, &rule.valid_labels)
            .ok_or_else(|| format!("gold {gold:?} is not one of the valid labels"))?;
        let extraction = self.compiled(&rule)?.extract(first_completion(completions));
        let value = match extraction.label {
            Some(label) if label == gold => 1.0,
            Some(_) => 0.0,
            None => rule.default_score,
        };
        Ok(vec![(ACCURACY.into(), value)])
    }
}

/// Exact match and token F1 against the best reference.
pub struct ExtractiveQa;

impl Evaluator for ExtractiveQa {
    fn primary_metric(&self) -> &str {
        TOKEN_F1
    }

    fn score(&self, record: &ExampleRecord, completions: &[String], _args: &TaskArgs) -> Result<Vec<(String, f64)>, String> {
        let refs = gold_refs(record)?;
        let pred = first_line(first_completion(completions));
        Ok(vec![
            (EXACT_MATCH.into(), max_over(&refs, |r| metrics::exact_match(pred, r))),
            (TOKEN_F1.into(), max_over(&refs, |r| metrics::token_f1(pred, r))),
        ])
    }
}

/// Exact match only, against any reference alias.
pub struct ExactMatch;

impl Evaluator for ExactMatch {
    fn primary_metric(&self) -> &str {
        EXACT_MATCH
    }

    fn score(&self, record: &ExampleRecord, completions: &[String], _args: &TaskArgs) -> Result<Vec<(String, f64)>, String> {
        let refs = gold_refs(record)?;
        let pred = first_line(first_completion(completions));
        Ok(vec![(EXACT_MATCH.into(), max_over(&refs, |r| metrics::exact_match(pred, r)))])
    }
}

/// Compares the last number in the generation with the gold number.
/// Gold text in the `... #### 42` convention is supported.
pub struct NumericAnswer {
    number: Regex,
}

impl Default for NumericAnswer {
    fn default() -> Self {
        Self { number: Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("valid pattern") }
    }
}

impl NumericAnswer {
    fn last_number(&self, text: &str) -> Option<f64> {
        self.number.find_iter(text).last().and_then(|m| m.as_str().replace(',', "").parse().ok())
    }
}

impl Evaluator for NumericAnswer {
    fn primary_metric(&self) -> &str {
        ACCURACY
    }

    fn score(&self, record: &ExampleRecord, completions: &[String], _args: &TaskArgs) -> Result<Vec<(String, f64)>, String> {
        let gold_text = gold_refs(record)?[0];
        let gold_text = gold_text.rsplit("####").next().unwrap_or(gold_text);
        let gold = self.last_number(gold_text).ok_or_else(|| format!("gold {gold_text:?} has no number"))?;
        let value = match self.last_number(first_completion(completions)) {
            Some(pred) if (pred - gold).abs() < 1e-9 => 1.0,
            _ => 0.0,
        };
        Ok(vec![(ACCURACY.into(), value)])
    }
}

/// ROUGE-L and token F1 for free-form generation.
pub struct Summarization;

impl Evaluator for Summarization {
    fn primary_metric(&self) -> &str {
        ROUGE_L
    }

    fn score(&self, record: &ExampleRecord, completions: &[String], _args: &TaskArgs) -> Result<Vec<(String, f64)>, String> {
        let refs = gold_refs(record)?;
        let pred = first_completion(completions).trim();
        Ok(vec![
            (ROUGE_L.into(), max_over(&refs, |r| metrics::rouge_l(pred, r))),
            (TOKEN_F1.into(), max_over(&refs, |r| metrics::token_f1(pred, r))),
        ])
    }
}

/// Sentence-level BLEU and chrF per record; the task score is their mean
/// over records.
pub struct Translation;

impl Evaluator for Translation {
    fn primary_metric(&self) -> &str {
        CHRF
    }

    fn score(&self, record: &ExampleRecord, completions: &[String], _args: &TaskArgs) -> Result<Vec<(String, f64)>, String> {
        let refs = gold_refs(record)?;
        let pred = first_line(first_completion(completions));
        if pred.is_empty() {
            return Ok(vec![(BLEU.into(), 0.0), (CHRF.into(), 0.0)]);
        }
        let refs = vec![refs];
        let bleu = metrics::bleu(&[pred], &refs).map_err(|e| e.to_string())?;
        let chrf = metrics::chrf(&[pred], &refs).map_err(|e| e.to_string())?;
        Ok(vec![(BLEU.into(), bleu), (CHRF.into(), chrf)])
    }
}

/// Runs each completion against the record's test harness in the sandbox
/// and reports the unbiased pass@1 estimate per problem.
pub struct CodeExecution {
    sandbox: Sandbox,
}

impl Default for CodeExecution {
    fn default() -> Self {
        Self::new(SandboxConfig::default())
    }
}

impl CodeExecution {
    pub fn new(config: SandboxConfig) -> Self {
        Self { sandbox: Sandbox::new(config) }
    }

    /// Strips a Markdown code fence if the model wrapped its answer in one.
    pub fn extract_code(completion: &str) -> &str {
        let Some(start) = completion.find("```") else { return completion };
        let body = &completion[start + 3..];
        let body = body.find('\n').map_or(body, |nl| &body[nl + 1..]);
        body.find("```").map_or(body, |end| &body[..end])
    }
}

impl Evaluator for CodeExecution {
    fn primary_metric(&self) -> &str {
        PASS_AT_K
    }

    fn samples_per_record(&self, args: &TaskArgs) -> usize {
        args.num_samples.unwrap_or(1).max(1) as usize
    }

    fn score(&self, record: &ExampleRecord, completions: &[String], args: &TaskArgs) -> Result<Vec<(String, f64)>, String> {
        let tests = gold_refs(record)?[0];
        let prompt = record.fields.get("prompt").map(String::as_str).unwrap_or("");
        let mut harness = tests.to_owned();
        if let Some(entry) = record.fields.get("entry_point") {
            if !tests.contains(&format!("check({entry})")) {
                harness.push_str(&format!("\n\ncheck({entry})\n"));
            }
        }
        let timeout = args
            .sandbox_timeout_ms
            .map(|t| t.max(1) as u64)
            .unwrap_or(self.sandbox.config().default_timeout_ms);
        let mut passed = 0u64;
        for completion in completions {
            let code = Self::extract_code(completion);
            let program = if code.trim_start().starts_with(prompt.trim_start()) && !prompt.is_empty() {
                code.to_owned()
            } else {
                format!("{prompt}{code}")
            };
            let verdict = self.sandbox.run(&program, &harness, timeout).map_err(|e| e.to_string())?;
            if verdict.outcome == SandboxOutcome::Passed {
                passed += 1;
            } else {
                log::debug!("record {}: {:?}: {}", record.id, verdict.outcome, verdict.stderr);
            }
        }
        let n = completions.len() as u64;
        let value = metrics::pass_at_k(n, passed, 1).map_err(|e| e.to_string())?;
        Ok(vec![(PASS_AT_K.into(), value)])
    }
}

/// Dotted names of the evaluators every registry starts with.
pub fn builtin_evaluators() -> Vec<(&'static str, Arc<dyn Evaluator>)> {
    vec![
        ("core.multiple_choice.evaluate", Arc::new(MultipleChoice::new(["A", "B", "C", "D"]))),
        ("core.extractive_qa.evaluate", Arc::new(ExtractiveQa)),
        ("core.exact_match.evaluate", Arc::new(ExactMatch)),
        ("core.math.evaluate_numeric", Arc::new(NumericAnswer::default())),
        ("core.generation.evaluate_rouge", Arc::new(Summarization)),
        ("core.translation.evaluate", Arc::new(Translation)),
        ("core.code.evaluate_pass_at_1", Arc::new(CodeExecution::default())),
        ("indic.arc_c_in.evaluate_arc_c_in", Arc::new(MultipleChoice::new(["A", "B", "C", "D"]))),
    ]
}
