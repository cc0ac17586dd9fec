//! Side-by-side comparison of evaluation reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::eval::{EvalReport, REPORT_FILE};

/// One row of the comparison: a metric and its value in each run.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub metric: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub runs: Vec<String>,
    pub rows: Vec<Row>,
}

/// Accepts a run directory or a report file.
fn report_path(run: &Path) -> PathBuf {
    if run.is_dir() {
        run.join(REPORT_FILE)
    } else {
        run.to_path_buf()
    }
}

pub fn compare(runs: &[PathBuf]) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(HarnessError::Usage("report needs at least one run".into()));
    }
    let reports = runs
        .iter()
        .map(|r| EvalReport::load(&report_path(r)))
        .collect::<Result<Vec<_>>>()?;
    let classes = reports.iter().map(|r| r.model.num_classes).max().unwrap_or(0);
    let mut rows = Vec::new();
    let mut push = |metric: String, f: &dyn Fn(&EvalReport) -> Option<f64>| {
        rows.push(Row {
            metric,
            values: reports.iter().map(f).collect(),
        });
    };
    for c in 0..classes {
        let class = move |r: &EvalReport| r.metrics.per_class.iter().find(|m| m.class_id == c).cloned();
        push(format!("class {c} auc_adds"), &|r| class(r).and_then(|m| m.auc_adds));
        push(format!("class {c} auc_add_s"), &|r| class(r).and_then(|m| m.auc_add_s));
    }
    push("mean auc_adds".into(), &|r| r.metrics.mean_auc_adds);
    push("mean auc_add_s".into(), &|r| r.metrics.mean_auc_add_s);
    push("mean auc_adds 0.1d".into(), &|r| r.metrics.mean_auc_adds_01d);
    push("mean auc_add_s 0.1d".into(), &|r| r.metrics.mean_auc_add_s_01d);
    push("cardinality_error".into(), &|r| r.metrics.cardinality_error);
    push("false_negative_rate".into(), &|r| r.metrics.false_negative_rate);
    push("ap".into(), &|r| Some(r.metrics.detection.ap));
    push("ap50".into(), &|r| Some(r.metrics.detection.ap50));
    push("ap75".into(), &|r| Some(r.metrics.detection.ap75));
    push("ar".into(), &|r| Some(r.metrics.detection.ar));
    Ok(Comparison {
        runs: runs.iter().map(|r| r.display().to_string()).collect(),
        rows,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

impl Comparison {
    /// Column headers: metric, each run, then `run_i - run_0` for i >= 1.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["metric".to_string()];
        h.extend(self.runs.iter().cloned());
        h.extend((1..self.runs.len()).map(|i| format!("delta {i}")));
        h
    }

    fn cells(&self, row: &Row) -> Vec<Option<f64>> {
        let mut out = row.values.clone();
        out.extend((1..row.values.len()).map(|i| delta(row.values[0], row.values[i])));
        out
    }

    pub fn to_text(&self) -> String {
        let mut table: Vec<Vec<String>> = vec![self.header()];
        for row in &self.rows {
            let mut line = vec![row.metric.clone()];
            line.extend(self.cells(row).into_iter().map(cell));
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &table {
            for (c, (text, w)) in line.iter().zip(&widths).enumerate() {
                if c == 0 {
                    let _ = write!(out, "{text:<w$}");
                } else {
                    let _ = write!(out, "  {text:>w$}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Same table as CSV; missing values are empty cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => HarnessError::io(path, io),
            other => HarnessError::malformed(path, format!("{other:?}")),
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(self.header()).map_err(err)?;
        for row in &self.rows {
            let mut line = vec![row.metric.clone()];
            line.extend(self.cells(row).into_iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(line).map_err(err)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }
}
