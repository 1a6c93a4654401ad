//! SVG charts. Each image is written with a `.tsv` sidecar holding the
//! plotted numbers, one `label<TAB>value` line per data point.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{write_atomic, ResultRow, ResultsError, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Bar,
    Heatmap,
    Radar,
}

impl ChartKind {
    pub const ALL: [ChartKind; 3] = [Self::Bar, Self::Heatmap, Self::Radar];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bar => "bar",
            Self::Heatmap => "heatmap",
            Self::Radar => "radar",
        }
    }
}

impl FromStr for ChartKind {
    type Err = ResultsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ResultsError::UnknownChartKind(s.to_owned()))
    }
}

/// Filters applied before plotting. Empty lists keep everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChartSelection {
    pub models: Vec<String>,
    pub tasks: Vec<String>,
}

impl ChartSelection {
    fn keeps(&self, row: &ResultRow) -> bool {
        (self.models.is_empty() || self.models.contains(&row.model))
            && (self.tasks.is_empty() || self.tasks.contains(&row.task))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartOutput {
    pub image: PathBuf,
    pub sidecar: PathBuf,
    /// Exactly the values written to the sidecar, in order.
    pub data: Vec<(String, f64)>,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("tsv")
}

fn task_label(row: &ResultRow) -> String {
    if row.language.is_empty() {
        row.task.clone()
    } else {
        format!("{}[{}]", row.task, row.language)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Plots the primary-metric rows of `result` that survive `selection`.
pub fn render_chart(
    result: &RunResult,
    kind: &str,
    selection: &ChartSelection,
    path: &Path,
) -> Result<ChartOutput, ResultsError> {
    let kind: ChartKind = kind.parse()?;
    let rows: Vec<&ResultRow> = result.primary_rows().filter(|r| selection.keeps(r)).collect();
    if rows.is_empty() {
        return Err(ResultsError::EmptySelection);
    }
    let mut models: Vec<&str> = Vec::new();
    let mut tasks: Vec<String> = Vec::new();
    for row in &rows {
        if !models.contains(&row.model.as_str()) {
            models.push(&row.model);
        }
        let label = task_label(row);
        if !tasks.contains(&label) {
            tasks.push(label);
        }
    }
    let cell = |model: &str, task: &str| {
        rows.iter().find(|r| r.model == model && task_label(r) == task).map(|r| r.score)
    };

    let (data, svg) = match kind {
        ChartKind::Bar => {
            if models.len() != 1 {
                return Err(ResultsError::NeedsOneModel(models.len()));
            }
            let data: Vec<(String, f64)> =
                tasks.iter().filter_map(|t| cell(models[0], t).map(|v| (t.clone(), v))).collect();
            let svg = bar_svg(models[0], &data);
            (data, svg)
        }
        ChartKind::Heatmap => {
            let mut data = Vec::new();
            for m in &models {
                for t in &tasks {
                    if let Some(v) = cell(m, t) {
                        data.push((format!("{m}|{t}"), v));
                    }
                }
            }
            let svg = heatmap_svg(&models, &tasks, &cell);
            (data, svg)
        }
        ChartKind::Radar => {
            let mut data = Vec::new();
            for m in &models {
                for t in &tasks {
                    data.push((format!("{m}|{t}"), cell(m, t).unwrap_or(0.0)));
                }
            }
            let svg = radar_svg(&models, &tasks, &cell);
            (data, svg)
        }
    };

    let mut sidecar = String::new();
    for (label, value) in &data {
        let _ = writeln!(sidecar, "{label}\t{value}");
    }
    let sidecar_file = sidecar_path(path);
    write_atomic(path, svg.as_bytes())?;
    write_atomic(&sidecar_file, sidecar.as_bytes())?;
    Ok(ChartOutput { image: path.to_owned(), sidecar: sidecar_file, data })
}

/// Parses a sidecar file back into (label, value) pairs.
pub fn read_sidecar(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .filter_map(|line| {
            let (label, value) = line.rsplit_once('\t')?;
            Some((label.to_owned(), value.parse().ok()?))
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn bar_svg(model: &str, data: &[(String, f64)]) -> String {
    let (bar_w, gap, plot_h, left, top) = (48.0, 16.0, 240.0, 50.0, 40.0);
    let width = left + data.len() as f64 * (bar_w + gap) + gap;
    let height = top + plot_h + 90.0;
    let mut s = svg_open(width, height);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(model));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/><line x1="{left}" y1="{}" x2="{width}" y2="{}" stroke="black"/>"#,
        top + plot_h,
        top + plot_h,
        top + plot_h
    );
    for (i, (label, value)) in data.iter().enumerate() {
        let x = left + gap + i as f64 * (bar_w + gap);
        let h = value.clamp(0.0, 1.0) * plot_h;
        let y = top + plot_h - h;
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="{bar_w}" height="{h:.1}" fill="{}"/>"#, PALETTE[0]);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{:.1}</text>"#,
            x + bar_w / 2.0,
            y - 4.0,
            value * 100.0
        );
        let ly = top + plot_h + 14.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="10" transform="rotate(30 {:.1} {ly:.1})">{}</text>"#,
            x + 4.0,
            x + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn heatmap_svg(models: &[&str], tasks: &[String], cell: &dyn Fn(&str, &str) -> Option<f64>) -> String {
    let (cw, ch, left, top) = (70.0, 30.0, 160.0, 110.0);
    let width = left + tasks.len() as f64 * cw + 20.0;
    let height = top + models.len() as f64 * ch + 20.0;
    let mut s = svg_open(width, height);
    for (j, t) in tasks.iter().enumerate() {
        let x = left + j as f64 * cw + cw / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" font-size="10" transform="rotate(-40 {x:.1} {:.1})">{}</text>"#,
            top - 6.0,
            top - 6.0,
            escape(t)
        );
    }
    for (i, m) in models.iter().enumerate() {
        let y = top + i as f64 * ch;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            left - 6.0,
            y + ch / 2.0 + 4.0,
            escape(m)
        );
        for (j, t) in tasks.iter().enumerate() {
            let x = left + j as f64 * cw;
            let (fill, text) = match cell(m, t) {
                Some(v) => {
                    let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                    (format!("rgb({shade},{shade},255)"), format!("{:.1}", v * 100.0))
                }
                None => ("#eeeeee".to_owned(), "-".to_owned()),
            };
            let _ = writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="{cw}" height="{ch}" fill="{fill}" stroke="white"/>"#);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{text}</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn radar_svg(models: &[&str], tasks: &[String], cell: &dyn Fn(&str, &str) -> Option<f64>) -> String {
    let (cx, cy, r) = (220.0, 220.0, 150.0);
    let mut s = svg_open(440.0 + 160.0, 440.0);
    let n = tasks.len().max(1);
    let point = |j: usize, radius: f64| {
        let angle = std::f64::consts::TAU * j as f64 / n as f64 - std::f64::consts::FRAC_PI_2;
        (cx + radius * angle.cos(), cy + radius * angle.sin())
    };
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..n).map(|j| point(j, r * ring)).map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="none" stroke="#cccccc"/>"##, pts.join(" "));
    }
    for (j, t) in tasks.iter().enumerate() {
        let (x, y) = point(j, r);
        let (lx, ly) = point(j, r + 18.0);
        let _ = writeln!(s, r##"<line x1="{cx}" y1="{cy}" x2="{x:.1}" y2="{y:.1}" stroke="#cccccc"/>"##);
        let _ = writeln!(s, r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="middle" font-size="10">{}</text>"#, escape(t));
    }
    for (i, m) in models.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = tasks
            .iter()
            .enumerate()
            .map(|(j, t)| point(j, r * cell(m, t).unwrap_or(0.0).clamp(0.0, 1.0)))
            .map(|(x, y)| format!("{x:.1},{y:.1}"))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = 30.0 + i as f64 * 18.0;
        let _ = writeln!(s, r#"<rect x="450" y="{:.1}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(s, r#"<text x="468" y="{ly:.1}" font-size="11">{}</text>"#, escape(m));
    }
    s.push_str("</svg>\n");
    s
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"sans-serif\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::{BenchmarkVersion, ResultRow};
    use crate::spec::TaskArgs;

    fn result(models: &[&str], tasks: &[&str]) -> RunResult {
        let mut r = RunResult::default();
        let args: TaskArgs = serde_json::from_value(serde_json::json!({
            "dataset_name": "d", "dataset_split": "s", "num_few_shot": 0,
            "prompt_template_name_zeroshot": "t",
            "prompt_file_benchmark_key": "k", "prompt_file_category": "c"
        }))
        .unwrap();
        for t in tasks {
            r.metadata.benchmarks.push(BenchmarkVersion {
                task: (*t).into(),
                language: String::new(),
                evaluation_function: "core.x.y".into(),
                primary_metric: "accuracy".into(),
                task_args: args.clone(),
                dataset_version: String::new(),
                prompt_fingerprint: String::new(),
            });
        }
        for (i, m) in models.iter().enumerate() {
            for (j, t) in tasks.iter().enumerate() {
                for metric in ["accuracy", "other"] {
                    r.rows.push(ResultRow {
                        model: (*m).into(),
                        task: (*t).into(),
                        language: String::new(),
                        metric: metric.into(),
                        score: (i * 10 + j) as f64 / 37.0,
                        support: 3,
                    });
                }
            }
        }
        r
    }

    #[test]
    fn bar_sidecar_has_one_pair_per_task() {
        let dir = tempfile::tempdir().unwrap();
        let r = result(&["m"], &["SQuAD", "BoolQ", "QuAC"]);
        let out = render_chart(&r, "bar", &ChartSelection::default(), &dir.path().join("bar.svg")).unwrap();
        let side = read_sidecar(&std::fs::read_to_string(&out.sidecar).unwrap());
        assert_eq!(side.len(), 3);
        for ((label, value), row) in side.iter().zip(r.primary_rows()) {
            assert_eq!(label, &row.task);
            assert_eq!(*value, row.score);
        }
        assert!(std::fs::read_to_string(&out.image).unwrap().starts_with("<svg"));
    }

    #[test]
    fn heatmap_is_model_by_task() {
        let dir = tempfile::tempdir().unwrap();
        let r = result(&["a", "b"], &["t1", "t2", "t3", "t4"]);
        let out = render_chart(&r, "heatmap", &ChartSelection::default(), &dir.path().join("h.svg")).unwrap();
        assert_eq!(out.data.len(), 8);
        assert_eq!(out.data[5].0, "b|t2");
    }

    #[test]
    fn radar_draws_polygon_per_model() {
        let dir = tempfile::tempdir().unwrap();
        let r = result(&["a", "b"], &["t1", "t2", "t3"]);
        let out = render_chart(&r, "radar", &ChartSelection::default(), &dir.path().join("r.svg")).unwrap();
        let svg = std::fs::read_to_string(out.image).unwrap();
        assert_eq!(svg.matches("stroke-width=\"2\"").count(), 2);
    }

    #[test]
    fn bad_kind_and_empty_selection() {
        let dir = tempfile::tempdir().unwrap();
        let r = result(&["a"], &["t1"]);
        let path = dir.path().join("x.svg");
        assert!(matches!(
            render_chart(&r, "pie", &ChartSelection::default(), &path),
            Err(ResultsError::UnknownChartKind(_))
        ));
        let none = ChartSelection { models: vec!["zzz".into()], tasks: vec![] };
        assert!(matches!(render_chart(&r, "bar", &none, &path), Err(ResultsError::EmptySelection)));
        let two = result(&["a", "b"], &["t1"]);
        assert!(matches!(
            render_chart(&two, "bar", &ChartSelection::default(), &path),
            Err(ResultsError::NeedsOneModel(2))
        ));
    }
}
