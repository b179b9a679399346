//! CSV exports: cost-versus-step curves, AUC tables with significance tests,
//! policy heatmaps and training logs.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so parsing
//! an export reproduces the in-memory values exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::ddqn::{Evaluation, TrainingLogRow};
use crate::env::EpisodeRecord;
use crate::error::{Error, Result};
use crate::metrics::{mean_ci95, paired_t_test, Metric, TTest};
use crate::policies::PolicyKind;
use crate::transforms::center_columns;

fn float(v: f64) -> String {
    format!("{v}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-column acquisition CDF: entry `(j, t)` is the fraction of episodes
/// in which column `j` is observed by step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyHeatmap {
    values: Array2<f64>,
}

impl PolicyHeatmap {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.values.nrows()
    }

    pub fn budget(&self) -> usize {
        self.values.ncols() - 1
    }

    /// Whether row `column` is 0 up to some step and 1 afterwards.
    pub fn is_step_row(&self, column: usize) -> bool {
        let row = self.values.row(column);
        row.iter().all(|&v| v == 0.0 || v == 1.0)
            && row.windows(2).into_iter().all(|w| w[0] <= w[1])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = std::iter::once("column".to_string())
            .chain((0..=self.budget()).map(|t| format!("t{t}")))
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = self.values.rows().into_iter().enumerate().map(|(j, row)| {
            std::iter::once(j.to_string())
                .chain(row.iter().map(|&v| float(v)))
                .collect()
        });
        write_rows(path, &header, rows)
    }
}

/// The `k`-th action of an episode is acquired at step `k + 1`; the `L`
/// central columns are observed from step 0.
pub fn build_heatmap(
    sequences: &[&[usize]],
    width: usize,
    budget: usize,
    low_freq_count: usize,
) -> Result<PolicyHeatmap> {
    if sequences.is_empty() {
        return Err(Error::InvalidInput("no action sequences".into()));
    }
    if low_freq_count + budget > width {
        return Err(Error::Config(format!(
            "L + T = {} exceeds width {width}",
            low_freq_count + budget
        )));
    }
    let initial = center_columns(width, low_freq_count);
    let mut counts = Array2::<f64>::zeros((width, budget + 1));
    for (e, seq) in sequences.iter().enumerate() {
        if seq.len() > budget {
            return Err(Error::InvalidInput(format!(
                "episode {e} has {} actions, budget is {budget}",
                seq.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut first = vec![None; width];
        for j in initial.clone() {
            first[j] = Some(0);
        }
        for (k, &j) in seq.iter().enumerate() {
            if j >= width {
                return Err(Error::Index {
                    index: j,
                    len: width,
                });
            }
            if initial.contains(&j) || !seen.insert(j) {
                return Err(Error::InvalidInput(format!(
                    "episode {e} acquires column {j} twice"
                )));
            }
            first[j] = Some(k + 1);
        }
        for (j, step) in first.into_iter().enumerate() {
            if let Some(s) = step {
                counts.row_mut(j).iter_mut().skip(s).for_each(|c| *c += 1.0);
            }
        }
    }
    let n = sequences.len() as f64;
    Ok(PolicyHeatmap {
        values: counts.mapv(|c| c / n),
    })
}

pub const CURVE_HEADER: [&str; 8] = [
    "image_id",
    "step",
    "observed_columns",
    "acceleration",
    "mse",
    "nmse",
    "psnr",
    "ssim",
];

/// One row per image per step, `t = 0..=T`.
pub fn export_curves(
    path: &Path,
    curves: &[(&str, &EpisodeRecord<f64>)],
    width: usize,
    low_freq_count: usize,
) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::InvalidInput("no curves to export".into()));
    }
    let mut rows = Vec::new();
    for (id, record) in curves {
        let len = record.curves[0].values.len();
        for t in 0..len {
            let observed = low_freq_count + t;
            let mut row = vec![
                id.to_string(),
                t.to_string(),
                observed.to_string(),
                float(width as f64 / observed as f64),
            ];
            row.extend(
                Metric::ALL
                    .iter()
                    .map(|&m| float(record.curve(m).values[t])),
            );
            rows.push(row);
        }
    }
    write_rows(path, &CURVE_HEADER, rows)
}

/// Curves read back from [`export_curves`] output: `(image_id, values)` with
/// `values[k]` the curve of `Metric::ALL[k]`, in file order.
pub fn read_curves(path: &Path) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{}: bad field {i} on data row {line}",
                    path.display()
                ))
            })
        };
        let id = rec.get(0).unwrap_or_default().to_string();
        let values = (4..8).map(parse).collect::<Result<Vec<_>>>()?;
        if out.last().is_none_or(|(last, _)| *last != id) {
            out.push((id, vec![Vec::new(); 4]));
        }
        let entry = &mut out.last_mut().expect("pushed").1;
        for (curve, v) in entry.iter_mut().zip(values) {
            curve.push(v);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AucRow {
    pub metric: Metric,
    pub policy: String,
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

/// Paired comparison of one policy with the reference policy of a metric.
#[derive(Clone, Debug, PartialEq)]
pub struct SignificanceRow {
    pub metric: Metric,
    pub policy: String,
    pub reference: String,
    pub test: TTest<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucReport {
    pub rows: Vec<AucRow>,
    pub tests: Vec<SignificanceRow>,
}

impl AucReport {
    pub fn row(&self, metric: Metric, policy: &str) -> Option<&AucRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.policy == policy)
    }

    pub fn test(&self, metric: Metric, policy: &str) -> Option<&SignificanceRow> {
        self.tests
            .iter()
            .find(|r| r.metric == metric && r.policy == policy)
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        let rows = self.rows.iter().map(|r| {
            vec![
                r.metric.name().to_string(),
                r.policy.clone(),
                float(r.mean),
                float(r.ci95),
                r.n.to_string(),
            ]
        });
        write_rows(path, &["metric", "policy", "mean", "ci95", "n"], rows)
    }

    /// Empty `t` marks a zero-variance difference.
    pub fn write_significance(&self, path: &Path) -> Result<()> {
        let rows = self.tests.iter().map(|r| {
            vec![
                r.metric.name().to_string(),
                r.policy.clone(),
                r.reference.clone(),
                r.test.t().map(float).unwrap_or_default(),
                r.test.dof().to_string(),
            ]
        });
        write_rows(path, &["metric", "policy", "reference", "t", "dof"], rows)
    }

    /// Fixed-width console table.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:<6} {:<14} {:>14} {:>14}\n",
            "metric", "policy", "auc_mean", "ci95"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<6} {:<14} {:>14.6e} {:>14.6e}\n",
                r.metric.name(),
                r.policy,
                r.mean,
                r.ci95
            ));
        }
        s
    }
}

fn is_heuristic(name: &str) -> bool {
    name.parse::<PolicyKind>()
        .is_ok_and(PolicyKind::is_heuristic)
}

/// Per-metric mean and 95% interval of the per-image AUC for every policy,
/// plus paired t-tests of every other policy against the best heuristic
/// (the best policy overall when no heuristic was evaluated).
pub fn export_auc_table(evaluations: &[Evaluation]) -> Result<AucReport> {
    let first = evaluations
        .first()
        .ok_or_else(|| Error::InvalidInput("no evaluations".into()))?;
    if let Some(bad) = evaluations.iter().find(|e| e.image_ids != first.image_ids) {
        return Err(Error::Pairing(format!(
            "policy {} was evaluated on different images than {}",
            bad.policy, first.policy
        )));
    }
    let mut names = HashSet::new();
    if let Some(dup) = evaluations
        .iter()
        .find(|e| !names.insert(e.policy.as_str()))
    {
        return Err(Error::InvalidInput(format!(
            "policy {} listed twice",
            dup.policy
        )));
    }
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for metric in Metric::ALL {
        let mut means = Vec::new();
        for e in evaluations {
            let (mean, ci95) = mean_ci95(e.aucs(metric))?;
            means.push(mean);
            rows.push(AucRow {
                metric,
                policy: e.policy.clone(),
                mean,
                ci95,
                n: e.image_ids.len(),
            });
        }
        let better = |a: f64, b: f64| {
            if metric.higher_is_better() {
                a > b
            } else {
                a < b
            }
        };
        let pick = |filter: &dyn Fn(&Evaluation) -> bool| {
            evaluations
                .iter()
                .zip(&means)
                .filter(|(e, _)| filter(e))
                .fold(None::<(&Evaluation, f64)>, |best, (e, &m)| match best {
                    Some((_, b)) if !better(m, b) => best,
                    _ => Some((e, m)),
                })
                .map(|(e, _)| e)
        };
        let reference = pick(&|e| is_heuristic(&e.policy))
            .or_else(|| pick(&|_| true))
            .expect("non-empty");
        for e in evaluations.iter().filter(|e| e.policy != reference.policy) {
            tests.push(SignificanceRow {
                metric,
                policy: e.policy.clone(),
                reference: reference.policy.clone(),
                test: paired_t_test(e.aucs(metric), reference.aucs(metric))?,
            });
        }
    }
    Ok(AucReport { rows, tests })
}

pub fn write_training_log(path: &Path, rows: &[TrainingLogRow]) -> Result<()> {
    let rows = rows.iter().map(|r| {
        vec![
            r.env_steps.to_string(),
            float(r.eval_auc_mean),
            float(r.eval_auc_ci95),
            float(r.epsilon),
            r.loss_avg.map(float).unwrap_or_default(),
        ]
    });
    write_rows(
        path,
        &[
            "env_steps",
            "eval_auc_mean",
            "eval_auc_ci95",
            "epsilon",
            "loss_avg",
        ],
        rows,
    )
}

/// Writes `contents` followed by a newline, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{contents}").map_err(|e| Error::io(path, e))
}
