use std::path::Path;

use linbp_core::{GradientMode, Trajectory};

use crate::error::{CliError, Result};

pub const CSV_HEADER: [&str; 9] = [
    "experiment",
    "step",
    "seed",
    "method",
    "l1_dist",
    "loss",
    "grad_l2",
    "grad_linf",
    "acc",
];

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub experiment: String,
    pub step: usize,
    pub seed: u64,
    pub method: String,
    pub l1_dist: Option<f64>,
    pub loss: f64,
    pub grad_l2: f64,
    pub grad_linf: f64,
    pub acc: Option<f64>,
}

impl RunRecord {
    pub fn from_trajectory(experiment: &str, seed: u64, traj: &Trajectory) -> Vec<RunRecord> {
        traj.records
            .iter()
            .map(|r| RunRecord {
                experiment: experiment.to_string(),
                step: r.step,
                seed,
                method: traj.method.label(),
                l1_dist: r.l1_dist,
                loss: r.loss,
                grad_l2: r.grad_l2,
                grad_linf: r.grad_linf,
                acc: r.accuracy,
            })
            .collect()
    }

    /// A single-value row for the check subcommands: `step` indexes the case and
    /// `loss` carries the error being checked.
    pub fn check(
        experiment: &str,
        case: usize,
        seed: u64,
        mode: GradientMode,
        error: f64,
    ) -> RunRecord {
        RunRecord {
            experiment: experiment.to_string(),
            step: case,
            seed,
            method: mode.label(),
            l1_dist: None,
            loss: error,
            grad_l2: f64::NAN,
            grad_linf: f64::NAN,
            acc: None,
        }
    }

    fn fields(&self) -> [String; 9] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.experiment.clone(),
            self.step.to_string(),
            self.seed.to_string(),
            self.method.clone(),
            opt(self.l1_dist),
            self.loss.to_string(),
            self.grad_l2.to_string(),
            self.grad_linf.to_string(),
            opt(self.acc),
        ]
    }
}

/// Writes `records` sorted by (experiment, seed, step). The sort is stable, so
/// rows that tie keep their method order.
pub fn write_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rows: Vec<&RunRecord> = records.iter().collect();
    rows.sort_by(|a, b| (&a.experiment, a.seed, a.step).cmp(&(&b.experiment, b.seed, b.step)));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
