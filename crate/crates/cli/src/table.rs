use std::io::{self, Write};

use evalkit_core::results::{table_records, RunResult, CSV_HEADER};

/// Renders `result` as plain fixed-width text, columns in CSV order.
pub fn render_results_table(result: &RunResult) -> String {
    let header: Vec<String> = CSV_HEADER.split(',').map(str::to_owned).collect();
    let records = table_records(result);
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for record in &records {
        for (w, cell) in widths.iter_mut().zip(record) {
            *w = (*w).max(cell.chars().count());
        }
    }
    // score and support are numeric and right-aligned.
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i >= 4 { format!("{c:>w$}") } else { format!("{c:<w$}") })
            .collect();
        parts.join("  ").trim_end().to_owned()
    };
    let mut out = String::new();
    out.push_str(&line(&header));
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    if records.is_empty() {
        out.push_str("(no results)\n");
    }
    for record in &records {
        out.push_str(&line(record));
        out.push('\n');
    }
    out
}

pub fn display_results_table(result: &RunResult, out: &mut dyn Write) -> io::Result<String> {
    let text = render_results_table(result);
    out.write_all(text.as_bytes())?;
    Ok(text)
}
