use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::objectives::MetricsReport;

/// Fold-averaged metrics of one table cell group, as fractions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCells {
    pub c_dice: f64,
    pub v_dice: f64,
    pub v_tpr: f64,
    pub v_fpr: f64,
}

impl MetricCells {
    pub const HEADERS: [&'static str; 4] = ["C-Dice", "V-Dice", "V-TPR", "V-FPR"];

    pub fn from_report(r: &MetricsReport) -> Self {
        Self {
            c_dice: r.c_dice,
            v_dice: r.v_dice,
            v_tpr: r.v_tpr,
            v_fpr: r.v_fpr,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.c_dice, self.v_dice, self.v_tpr, self.v_fpr]
    }

    /// Element-wise mean.
    pub fn mean(cells: &[MetricCells]) -> MetricCells {
        let n = cells.len().max(1) as f64;
        let mut sum = [0.0; 4];
        for c in cells {
            for (s, v) in sum.iter_mut().zip(c.values()) {
                *s += v;
            }
        }
        MetricCells {
            c_dice: sum[0] / n,
            v_dice: sum[1] / n,
            v_tpr: sum[2] / n,
            v_fpr: sum[3] / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    /// One group per client followed by the client average, or the failure.
    pub cells: Result<Vec<MetricCells>, String>,
}

impl TableRow {
    /// Averages per-fold client reports (`per_fold[f][c]`) over folds.
    pub fn from_folds(method: Method, per_fold: &[Vec<MetricsReport>]) -> Self {
        let clients = per_fold.first().map_or(0, Vec::len);
        let mut cells: Vec<MetricCells> = (0..clients)
            .map(|c| {
                let folds: Vec<MetricCells> = per_fold.iter().map(|f| MetricCells::from_report(&f[c])).collect();
                MetricCells::mean(&folds)
            })
            .collect();
        cells.push(MetricCells::mean(&cells));
        Self {
            method,
            cells: Ok(cells),
        }
    }

    /// The client-average group.
    pub fn average(&self) -> Option<&MetricCells> {
        self.cells.as_ref().ok().and_then(|c| c.last())
    }
}

/// Method × client comparison, reported as percentages with two decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub clients: usize,
    pub rows: Vec<TableRow>,
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl ComparisonTable {
    pub fn row(&self, method: Method) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    fn group_names(&self) -> Vec<String> {
        (0..self.clients).map(|c| c.to_string()).chain(["avg".to_string()]).collect()
    }

    /// Long format: one line per method and client group. Failed rows
    /// carry `NA` cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,client,c_dice,v_dice,v_tpr,v_fpr\n");
        for row in &self.rows {
            for (g, name) in self.group_names().iter().enumerate() {
                let vals: Vec<String> = match &row.cells {
                    Ok(cells) => cells[g].values().iter().map(|&v| pct(v)).collect(),
                    Err(_) => vec!["NA".into(); 4],
                };
                let _ = writeln!(s, "{},{},{}", row.method, name, vals.join(","));
            }
        }
        s
    }

    /// Aligned text with one line per method; failures are listed below.
    pub fn to_text(&self) -> String {
        let mut header = vec!["Method".to_string()];
        for g in self.group_names() {
            let label = if g == "avg" { "Avg".to_string() } else { format!("Client{g}") };
            header.extend(MetricCells::HEADERS.iter().map(|m| format!("{label} {m}")));
        }
        let mut lines: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let mut line = vec![row.method.to_string()];
            match &row.cells {
                Ok(cells) => line.extend(cells.iter().flat_map(|c| c.values()).map(pct)),
                Err(_) => line.extend(std::iter::repeat_n("NA".to_string(), (self.clients + 1) * 4)),
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for l in &lines {
            let cols: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, &w))| if i == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", cols.join("  ").trim_end());
        }
        for row in &self.rows {
            if let Err(e) = &row.cells {
                let _ = writeln!(s, "\n{} failed: {e}", row.method);
            }
        }
        s
    }
}
