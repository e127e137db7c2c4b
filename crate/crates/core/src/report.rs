//! Table and CSV rendering of analysis results.
//!
//! Tables print values to 6 significant digits; CSV carries the full 17
//! significant digits so the numeric payload is identical in both formats.

use crate::interval_scan::{GridScan, IntervalReport, TraceRow, Verdict};
use crate::transition::DerivativeSeries;
use crate::valuefn::ValueFunction;

/// Output format selector shared by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
}

fn fmt_table(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-4..1e6).contains(&a) {
        format!("{v:.6}")
    } else {
        format!("{v:.5e}")
    }
}

fn fmt_csv(v: f64) -> String {
    format!("{v:.17e}")
}

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

const TRACE_HEADER: [&str; 7] =
    ["k", "value", "Optim.", "Viol.", "delta", "sigma_min(dF)", "dist_to_limit"];

fn trace_cells(rows: &[TraceRow], f: &dyn Fn(f64) -> String) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                f(r.value),
                fmt_opt(r.optim, f),
                fmt_opt(r.viol, f),
                f(r.delta),
                f(r.sigma_min_f),
                fmt_opt(r.dist_to_limit, f),
            ]
        })
        .collect()
}

fn render_table(header: &[&str], cells: &[Vec<String>]) -> String {
    let ncol = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in cells {
        for (j, cell) in row.iter().enumerate() {
            widths[j] = widths[j].max(cell.len());
        }
    }
    let mut out = String::new();
    for (j, h) in header.iter().enumerate() {
        out.push_str(&format!("{:>width$}", h, width = widths[j]));
        out.push_str(if j + 1 == ncol { "\n" } else { "  " });
    }
    for row in cells {
        for (j, cell) in row.iter().enumerate() {
            out.push_str(&format!("{:>width$}", cell, width = widths[j]));
            out.push_str(if j + 1 == ncol { "\n" } else { "  " });
        }
    }
    out
}

fn render_csv(header: &[&str], cells: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in cells {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Render one direction trace of an interval run.
pub fn render_trace(rows: &[TraceRow], format: Format) -> String {
    match format {
        Format::Table => render_table(&TRACE_HEADER, &trace_cells(rows, &fmt_table)),
        Format::Csv => render_csv(&TRACE_HEADER, &trace_cells(rows, &fmt_csv)),
    }
}

/// Render the full bidirectional interval report.
pub fn render_interval_report(rep: &IntervalReport, format: Format) -> String {
    let mut out = String::new();
    let verdict = match rep.verdict {
        Verdict::NonlinearitySubinterval => "NONLINEARITY_SUBINTERVAL",
        Verdict::SingletonConditionsFail => "SINGLETON_CONDITIONS_FAIL",
    };
    match format {
        Format::Table => {
            out.push_str(&format!("anchor      {}\n", fmt_table(rep.eps_bar)));
            out.push_str(&format!("alpha_hat   {}\n", fmt_table(rep.alpha_hat)));
            out.push_str(&format!("beta_hat    {}\n", fmt_table(rep.beta_hat)));
            out.push_str(&format!("verdict     {verdict}\n"));
            for note in &rep.annotations {
                out.push_str(&format!("note        {note}\n"));
            }
            out.push_str("\nbackward trace (alpha_k):\n");
            out.push_str(&render_trace(&rep.backward, format));
            out.push_str("\nforward trace (beta_k):\n");
            out.push_str(&render_trace(&rep.forward, format));
        }
        Format::Csv => {
            out.push_str("direction,k,value,Optim.,Viol.,delta,sigma_min(dF),dist_to_limit\n");
            for (name, rows) in [("backward", &rep.backward), ("forward", &rep.forward)] {
                for r in rows {
                    out.push_str(&format!(
                        "{name},{},{},{},{},{},{},{}\n",
                        r.k,
                        fmt_csv(r.value),
                        fmt_opt(r.optim, fmt_csv),
                        fmt_opt(r.viol, fmt_csv),
                        fmt_csv(r.delta),
                        fmt_csv(r.sigma_min_f),
                        fmt_opt(r.dist_to_limit, fmt_csv),
                    ));
                }
            }
            out.push_str(&format!(
                "# anchor={} alpha_hat={} beta_hat={} verdict={verdict}\n",
                fmt_csv(rep.eps_bar),
                fmt_csv(rep.alpha_hat),
                fmt_csv(rep.beta_hat)
            ));
        }
    }
    out
}

/// Render a grid scan.
pub fn render_grid_scan(scan: &GridScan, format: Format) -> String {
    let header = ["eps", "partition", "status"];
    let cells: Vec<Vec<String>> = scan
        .points
        .iter()
        .map(|p| {
            let (part, status) = match (&p.partition, &p.error) {
                (Some(part), _) => (part.display(), "ok".to_string()),
                (None, Some(e)) => ("-".to_string(), e.clone()),
                (None, None) => ("-".to_string(), "UNKNOWN".to_string()),
            };
            let f = match format {
                Format::Table => fmt_table(p.eps),
                Format::Csv => fmt_csv(p.eps),
            };
            vec![f, part, status]
        })
        .collect();
    let mut out = match format {
        Format::Table => render_table(&header, &cells),
        Format::Csv => render_csv(&header, &cells),
    };
    if !scan.change_cells.is_empty() {
        let spans: Vec<String> = scan
            .change_cells
            .iter()
            .map(|&i| {
                format!("({}, {})", fmt_table(scan.points[i].eps), fmt_table(scan.points[i + 1].eps))
            })
            .collect();
        out.push_str(&format!("partition changes inside cells: {}\n", spans.join(", ")));
    } else {
        out.push_str("no partition changes detected\n");
    }
    out
}

/// Render a derivative series as a (k, value-per-tested-block) table.
pub fn render_derivative_series(series: &DerivativeSeries, format: Format) -> String {
    let blocks: Vec<usize> = series
        .quantities
        .first()
        .map(|qs| qs.iter().map(|&(b, _)| b).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = vec!["k".to_string()];
    header.extend(blocks.iter().map(|b| format!("block{}", b + 1)));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let cells: Vec<Vec<String>> = series
        .quantities
        .iter()
        .enumerate()
        .map(|(idx, qs)| {
            let mut row = vec![(idx + 1).to_string()];
            let f = match format {
                Format::Table => fmt_table as fn(f64) -> String,
                Format::Csv => fmt_csv as fn(f64) -> String,
            };
            row.extend(qs.iter().map(|&(_, v)| f(v)));
            row
        })
        .collect();
    match format {
        Format::Table => render_table(&header_refs, &cells),
        Format::Csv => render_csv(&header_refs, &cells),
    }
}

/// Render value-function samples as two columns.
pub fn render_value_function(vf: &ValueFunction, format: Format) -> String {
    let header = ["eps", "psi"];
    let cells: Vec<Vec<String>> = vf
        .samples
        .iter()
        .map(|s| {
            let f = match format {
                Format::Table => fmt_table as fn(f64) -> String,
                Format::Csv => fmt_csv as fn(f64) -> String,
            };
            vec![
                f(s.eps),
                s.psi.map(f).unwrap_or_else(|| {
                    s.error.clone().unwrap_or_else(|| "unsolved".to_string())
                }),
            ]
        })
        .collect();
    match format {
        Format::Table => render_table(&header, &cells),
        Format::Csv => render_csv(&header, &cells),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_and_csv_share_the_numeric_payload() {
        let rows = vec![TraceRow {
            k: 1,
            value: 0.394746,
            optim: Some(3.3e-16),
            viol: Some(2.2e-16),
            delta: 0.271,
            sigma_min_f: 0.157,
            dist_to_limit: Some(0.3947),
        }];
        let table = render_trace(&rows, Format::Table);
        let csv = render_trace(&rows, Format::Csv);
        assert!(table.contains("0.394746"));
        // CSV payload parses back to the identical f64.
        let line = csv.lines().nth(1).unwrap();
        let val: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(val, 0.394746);
    }
}
