//! Class-incremental evaluation metrics over accuracy matrices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracies recorded after each task. `rows[t - 1][i - 1]` is the
/// accuracy on task `i`'s test split after training task `t`; `overall[t - 1]`
/// is the pooled accuracy over every class seen so far.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
    overall: Vec<f64>,
}

fn check_fraction(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Metrics(format!("accuracy {v} outside [0, 1]")));
    }
    Ok(())
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, overall: Vec<f64>) -> Result<Self> {
        if rows.len() != overall.len() {
            return Err(Error::Metrics(format!(
                "{} rows but {} overall entries",
                rows.len(),
                overall.len()
            )));
        }
        let mut m = Self::new();
        for (row, o) in rows.into_iter().zip(overall) {
            m.push_row(row, o)?;
        }
        Ok(m)
    }

    /// Appends the accuracies measured after the next task.
    pub fn push_row(&mut self, row: Vec<f64>, overall: f64) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Metrics(format!(
                "row {} must hold {} entries, got {}",
                self.rows.len() + 1,
                self.rows.len() + 1,
                row.len()
            )));
        }
        for &v in &row {
            check_fraction(v)?;
        }
        check_fraction(overall)?;
        self.rows.push(row);
        self.overall.push(overall);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn overall(&self) -> &[f64] {
        &self.overall
    }

    /// Accuracy on task `i` after task `t`, both 1-based.
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        if i == 0 || i > t {
            return None;
        }
        self.rows.get(t - 1).and_then(|r| r.get(i - 1)).copied()
    }

    /// Long-format CSV: `after_task,eval_task,accuracy`, with the pooled
    /// accuracy under `eval_task = all`.
    pub fn to_csv(&self, digest: &str) -> String {
        let mut out = String::from("config_digest,after_task,eval_task,accuracy\n");
        for (t, row) in self.rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{digest},{},{},{v:?}", t + 1, i + 1);
            }
            let _ = writeln!(out, "{digest},{},all,{:?}", t + 1, self.overall[t]);
        }
        out
    }
}

/// How `a_t` enters the average accuracy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAccuracy {
    /// Accuracy over all test examples of the seen classes.
    #[default]
    Pooled,
    /// Mean of the per-task accuracies in the row.
    TaskMean,
}

/// Which earlier steps count as the reference for forgetting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgettingWindow {
    /// Every step from `i` to `T - 1`.
    #[default]
    Range,
    /// Only steps `i` and `T - 1`.
    TwoPoint,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub step_accuracy: StepAccuracy,
    pub forgetting_window: ForgettingWindow,
}

fn step_values(m: &AccuracyMatrix, mode: StepAccuracy) -> Vec<f64> {
    match mode {
        StepAccuracy::Pooled => m.overall.clone(),
        StepAccuracy::TaskMean => m
            .rows
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect(),
    }
}

pub fn average_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    average_accuracy_with(m, StepAccuracy::Pooled)
}

pub fn average_accuracy_with(m: &AccuracyMatrix, mode: StepAccuracy) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Metrics("empty accuracy matrix".into()));
    }
    let v = step_values(m, mode);
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

pub fn last_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    last_accuracy_with(m, StepAccuracy::Pooled)
}

pub fn last_accuracy_with(m: &AccuracyMatrix, mode: StepAccuracy) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Metrics("empty accuracy matrix".into()));
    }
    Ok(*step_values(m, mode).last().expect("nonempty"))
}

/// Per-task forgetting for tasks `1..T`: the largest drop from any reference
/// step to the final step.
pub fn per_task_forgetting(m: &AccuracyMatrix, window: ForgettingWindow) -> Result<Vec<f64>> {
    let big_t = m.num_tasks();
    if big_t < 2 {
        return Err(Error::Metrics(format!(
            "forgetting needs at least 2 tasks, got {big_t}"
        )));
    }
    let last = &m.rows[big_t - 1];
    Ok((1..big_t)
        .map(|i| {
            let refs: Vec<usize> = match window {
                ForgettingWindow::Range => (i..big_t).collect(),
                ForgettingWindow::TwoPoint => vec![i, big_t - 1],
            };
            refs.into_iter()
                .map(|t| m.rows[t - 1][i - 1] - last[i - 1])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

pub fn forgetting_measure(m: &AccuracyMatrix) -> Result<f64> {
    forgetting_measure_with(m, ForgettingWindow::Range)
}

pub fn forgetting_measure_with(m: &AccuracyMatrix, window: ForgettingWindow) -> Result<f64> {
    let f = per_task_forgetting(m, window)?;
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aa: f64,
    pub la: f64,
    /// Absent for single-task runs.
    pub fm: Option<f64>,
    pub step_accuracy: Vec<f64>,
    pub per_task_forgetting: Vec<f64>,
}

pub fn metrics_report(m: &AccuracyMatrix, opts: MetricOptions) -> Result<MetricsReport> {
    let (fm, per_task_forgetting) = if m.num_tasks() >= 2 {
        let f = per_task_forgetting(m, opts.forgetting_window)?;
        (Some(f.iter().sum::<f64>() / f.len() as f64), f)
    } else {
        (None, Vec::new())
    };
    Ok(MetricsReport {
        aa: average_accuracy_with(m, opts.step_accuracy)?,
        la: last_accuracy_with(m, opts.step_accuracy)?,
        fm,
        step_accuracy: step_values(m, opts.step_accuracy),
        per_task_forgetting,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub aa: f64,
    pub la: f64,
    pub fm: Option<f64>,
}

/// Mean of `after - before` per metric over paired reports. FM is reported
/// raw, so a negative value means less forgetting.
pub fn avg_improvement(before: &[MetricsReport], after: &[MetricsReport]) -> Result<Improvement> {
    if before.len() != after.len() {
        return Err(Error::Metrics(format!(
            "{} baseline reports paired with {} treated reports",
            before.len(),
            after.len()
        )));
    }
    if before.is_empty() {
        return Err(Error::Metrics("no report pairs".into()));
    }
    let n = before.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| {
        before
            .iter()
            .zip(after)
            .map(|(b, a)| f(a) - f(b))
            .sum::<f64>()
            / n
    };
    let fm = if before.iter().chain(after).all(|r| r.fm.is_some()) {
        Some(mean(&|r| r.fm.expect("checked")))
    } else {
        None
    };
    Ok(Improvement {
        aa: mean(&|r| r.aa),
        la: mean(&|r| r.la),
        fm,
    })
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub aa: Summary,
    pub la: Summary,
    pub fm: Option<Summary>,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Metrics("nothing to aggregate".into()));
    }
    let aa: Vec<f64> = reports.iter().map(|r| r.aa).collect();
    let la: Vec<f64> = reports.iter().map(|r| r.la).collect();
    let fm: Option<Vec<f64>> = reports.iter().map(|r| r.fm).collect();
    Ok(AggregateReport {
        runs: reports.len(),
        aa: Summary::of(&aa).expect("nonempty"),
        la: Summary::of(&la).expect("nonempty"),
        fm: fm.and_then(|v| Summary::of(&v)),
    })
}

/// One line of a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub enum TableRow {
    Method {
        name: String,
        report: AggregateReport,
    },
    Improvement {
        name: String,
        delta: Improvement,
    },
}

/// Fixed-width table with columns AA, LA, FM in percent.
pub fn format_table(rows: &[TableRow]) -> String {
    let name_w = rows
        .iter()
        .map(|r| match r {
            TableRow::Method { name, .. } | TableRow::Improvement { name, .. } => name.len(),
        })
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let cell = |s: Option<Summary>| match s {
        Some(s) => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
        None => "-".to_string(),
    };
    let delta = |v: Option<f64>| match v {
        Some(v) => format!("{:+.2}", 100.0 * v),
        None => "-".to_string(),
    };
    let mut out = format!(
        "{:<name_w$}  {:>15}  {:>15}  {:>15}\n",
        "Method", "AA↑", "LA↑", "FM↓"
    );
    for r in rows {
        let (name, a, l, f) = match r {
            TableRow::Method { name, report } => (
                name,
                cell(Some(report.aa)),
                cell(Some(report.la)),
                cell(report.fm),
            ),
            TableRow::Improvement { name, delta: d } => {
                (name, delta(Some(d.aa)), delta(Some(d.la)), delta(d.fm))
            }
        };
        let _ = writeln!(out, "{name:<name_w$}  {a:>15}  {l:>15}  {f:>15}");
    }
    out
}
