//! Cross-model comparison against a baseline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{format_score, ResultsError, RunResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub model: String,
    pub score: f64,
    /// `score` minus the baseline score.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: String,
    pub language: String,
    pub metric: String,
    pub baseline: f64,
    pub others: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub models: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// Fixed-width text: one line per shared entry, deltas in points.
    pub fn render(&self) -> String {
        let mut header = vec!["task".to_owned(), "language".into(), "metric".into(), self.baseline.clone()];
        for m in &self.models {
            header.push(m.clone());
            header.push(format!("delta({m})"));
        }
        let mut lines = vec![header];
        for row in &self.rows {
            let mut line = vec![row.task.clone(), row.language.clone(), row.metric.clone(), format_score(row.baseline)];
            for cell in &row.others {
                line.push(format_score(cell.score));
                line.push(format!("{:+.2}", cell.delta * 100.0));
            }
            lines.push(line);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// Joins every model found in `results` on (task, language, metric);
/// only entries present for all models are kept. The first model seen is
/// the baseline. A model name that repeats across results gets a `#n`
/// suffix so two runs of one model can be compared.
pub fn compare_models(results: &[RunResult]) -> Result<Comparison, ResultsError> {
    let mut columns: Vec<(String, &RunResult, String)> = Vec::new();
    for result in results {
        for model in result.models() {
            let mut name = model.to_owned();
            let mut n = 2;
            while columns.iter().any(|(label, _, _)| *label == name) {
                name = format!("{model}#{n}");
                n += 1;
            }
            columns.push((name, result, model.to_owned()));
        }
    }
    if columns.len() < 2 {
        return Err(ResultsError::NotEnoughModels);
    }
    let score = |(_, result, model): &(String, &RunResult, String), task: &str, lang: &str, metric: &str| {
        result
            .rows
            .iter()
            .find(|r| &r.model == model && r.task == task && r.language == lang && r.metric == metric)
            .map(|r| r.score)
    };
    let (base, rest) = columns.split_first().expect("at least two columns");
    let base_rows = base.1.rows.iter().filter(|r| r.model == base.2);
    let mut rows = Vec::new();
    for row in base_rows {
        let others: Option<Vec<ComparisonCell>> = rest
            .iter()
            .map(|col| {
                score(col, &row.task, &row.language, &row.metric).map(|s| ComparisonCell {
                    model: col.0.clone(),
                    score: s,
                    delta: s - row.score,
                })
            })
            .collect();
        if let Some(others) = others {
            rows.push(ComparisonRow {
                task: row.task.clone(),
                language: row.language.clone(),
                metric: row.metric.clone(),
                baseline: row.score,
                others,
            });
        }
    }
    if rows.is_empty() {
        return Err(ResultsError::NoOverlap);
    }
    Ok(Comparison { baseline: base.0.clone(), models: rest.iter().map(|c| c.0.clone()).collect(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::ResultRow;

    fn single(model: &str, task: &str, score: f64) -> RunResult {
        RunResult {
            rows: vec![ResultRow {
                model: model.into(),
                task: task.into(),
                language: String::new(),
                metric: "accuracy".into(),
                score,
                support: 10,
            }],
            ..Default::default()
        }
    }

    #[test]
    fn delta_against_first_model() {
        let cmp = compare_models(&[single("a", "T", 0.6), single("b", "T", 0.7)]).unwrap();
        assert_eq!(cmp.baseline, "a");
        assert_eq!(cmp.rows[0].others[0].delta, 0.7 - 0.6);
        assert!(cmp.render().contains("+10.00"));
    }

    #[test]
    fn identical_results_have_zero_deltas() {
        let cmp = compare_models(&[single("a", "T", 0.6), single("a", "T", 0.6)]).unwrap();
        assert_eq!(cmp.models, ["a#2"]);
        assert!(cmp.rows.iter().all(|r| r.others.iter().all(|c| c.delta == 0.0)));
    }

    #[test]
    fn disjoint_tasks_do_not_overlap() {
        assert!(matches!(
            compare_models(&[single("a", "T", 0.6), single("b", "U", 0.7)]),
            Err(ResultsError::NoOverlap)
        ));
        assert!(matches!(compare_models(&[single("a", "T", 0.6)]), Err(ResultsError::NotEnoughModels)));
    }
}
