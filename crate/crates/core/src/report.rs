//! Report emission: a CSV of aggregates and an aligned text table with one
//! row per synthesis task, method columns, and best-method markers in place
//! of bold type.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const CSV_HEADER: &str = "task,method,metric,mean,std,n";

fn ordered_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for it in items {
        if !out.iter().any(|o| o == it) {
            out.push(it.to_string());
        }
    }
    out
}

/// Aggregate CSV, one row per (task, method, metric).
pub fn report_csv(reports: &[MetricReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::data("no reports to emit"));
    }
    let mut s = String::new();
    let _ = writeln!(s, "{CSV_HEADER}");
    for r in reports {
        let p = r.psnr_aggregate();
        let sm = r.ssim_aggregate();
        let _ = writeln!(s, "{},{},psnr,{:.6},{:.6},{}", r.task, r.method, p.mean, p.std, p.n);
        let _ = writeln!(s, "{},{},ssim,{:.6},{:.6},{}", r.task, r.method, sm.mean, sm.std, sm.n);
    }
    Ok(s)
}

/// Parse rows produced by [`report_csv`] back into (task, method, metric,
/// mean, std, n) tuples; used to merge per-run CSVs into one table.
pub fn parse_csv(text: &str) -> Result<Vec<(String, String, String, f64, f64, usize)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(Error::data(format!(
                "bad report csv header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::data(format!("bad report csv row: {line}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::data(format!("bad number {s}: {e}")));
        rows.push((
            f[0].to_string(),
            f[1].to_string(),
            f[2].to_string(),
            num(f[3])?,
            num(f[4])?,
            f[5].parse::<usize>().map_err(|e| Error::data(format!("bad count {}: {e}", f[5])))?,
        ));
    }
    Ok(rows)
}

struct Cell {
    ssim: Option<(f64, f64)>,
    psnr: Option<(f64, f64)>,
}

/// Aligned text table from merged aggregate rows. Layout: one row per task,
/// per-method SSIM and PSNR columns (mean ± std), then `best_ssim` /
/// `best_psnr` columns naming the top method for the row.
pub fn format_table(rows: &[(String, String, String, f64, f64, usize)]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::data("no rows to tabulate"));
    }
    let tasks = ordered_unique(rows.iter().map(|r| r.0.as_str()));
    let methods = ordered_unique(rows.iter().map(|r| r.1.as_str()));
    let cell = |task: &str, method: &str| -> Cell {
        let mut c = Cell { ssim: None, psnr: None };
        for (t, m, metric, mean, std, _) in rows {
            if t == task && m == method {
                match metric.as_str() {
                    "ssim" => c.ssim = Some((*mean, *std)),
                    "psnr" => c.psnr = Some((*mean, *std)),
                    _ => {}
                }
            }
        }
        c
    };
    let fmt_ssim = |v: Option<(f64, f64)>| match v {
        Some((m, s)) => format!("{m:.3} ± {s:.3}"),
        None => "-".into(),
    };
    let fmt_psnr = |v: Option<(f64, f64)>| match v {
        Some((m, s)) => format!("{m:.2} ± {s:.2}"),
        None => "-".into(),
    };

    let mut header: Vec<String> = vec!["task".into()];
    for m in &methods {
        header.push(format!("{m} SSIM"));
        header.push(format!("{m} PSNR"));
    }
    header.push("best_ssim".into());
    header.push("best_psnr".into());

    let mut body: Vec<Vec<String>> = Vec::new();
    for task in &tasks {
        let cells: Vec<Cell> = methods.iter().map(|m| cell(task, m)).collect();
        let best_of = |pick: &dyn Fn(&Cell) -> Option<(f64, f64)>| -> String {
            let mut best: Option<(usize, f64)> = None;
            for (i, c) in cells.iter().enumerate() {
                if let Some((mean, _)) = pick(c) {
                    if best.is_none_or(|(_, b)| mean > b) {
                        best = Some((i, mean));
                    }
                }
            }
            best.map_or("-".into(), |(i, _)| methods[i].clone())
        };
        let mut row: Vec<String> = vec![task.clone()];
        for c in &cells {
            row.push(fmt_ssim(c.ssim));
            row.push(fmt_psnr(c.psnr));
        }
        row.push(best_of(&|c: &Cell| c.ssim));
        row.push(best_of(&|c: &Cell| c.psnr));
        body.push(row);
    }

    let n_cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let emit_row = |out: &mut String, row: &[String]| {
        for (i, cell) in row.iter().enumerate() {
            let _ = write!(out, "{cell:<width$}", width = widths[i]);
            if i + 1 < n_cols {
                out.push_str("  ");
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    emit_row(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    emit_row(&mut out, &rule);
    for row in &body {
        emit_row(&mut out, row);
    }
    Ok(out)
}

/// Emit both artifacts from in-memory reports.
pub fn emit_report(reports: &[MetricReport]) -> Result<(String, String)> {
    let csv = report_csv(reports)?;
    let rows = parse_csv(&csv)?;
    let table = format_table(&rows)?;
    Ok((csv, table))
}
