//! One-layer teacher–student training: full-batch gradient descent on
//! `½‖σ(Xw) − σ(Xw★)‖²`, stochastic paired trials and expected dynamics.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::closedform::{expected_grad_total, expected_loss};
use crate::error::{Error, Result};
use crate::grad::{grad_w_train, normalize_update, train_loss, GradientMode, NormalizeMode};
use crate::linalg::{gaussian_matrix, gaussian_vector, DenseMatrix, DenseVector, RngStream};
use crate::trajectory::{draw_checksum, SimulationResult, StepRecord, Trajectory, TrialRun};

/// How the per-sample terms of the loss are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossReduction {
    /// Plain sum over the `N` rows.
    Sum,
    /// Sum divided by `N`.
    #[default]
    Mean,
}

impl LossReduction {
    pub fn scale(self, n: usize) -> f64 {
        match self {
            LossReduction::Sum => 1.0,
            LossReduction::Mean => 1.0 / n as f64,
        }
    }
}

impl FromStr for LossReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(LossReduction::Sum),
            "mean" => Ok(LossReduction::Mean),
            _ => Err(Error::Config(format!("unknown loss reduction {s:?}"))),
        }
    }
}

impl fmt::Display for LossReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossReduction::Sum => "sum",
            LossReduction::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Sample count.
    pub n: usize,
    /// Input dimension.
    pub d: usize,
    pub eta: f64,
    pub iters: usize,
    pub trials: usize,
    /// Teacher weights drawn from `N(mu1, sigma1²)`.
    pub mu1: f64,
    pub sigma1: f64,
    /// Student start drawn from `N(0, sigma2²)`.
    pub sigma2: f64,
    pub normalize: NormalizeMode,
    pub reduction: LossReduction,
    pub methods: Vec<GradientMode>,
    pub seed: u64,
    pub record_iterates: bool,
}

impl TrainConfig {
    pub fn reference() -> Self {
        TrainConfig {
            n: 100,
            d: 10,
            eta: 0.001,
            iters: 10_000,
            trials: 10,
            mu1: 1.0,
            sigma1: 3.0,
            sigma2: 1.0,
            normalize: NormalizeMode::None,
            reduction: LossReduction::Mean,
            methods: vec![GradientMode::Bp, GradientMode::LinBp],
            seed: 7,
            record_iterates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if self.n == 0 || self.d == 0 {
            return bad("N and d must be positive");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be nonnegative");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.sigma1 >= 0.0 && self.sigma2 >= 0.0) || !self.mu1.is_finite() {
            return bad("distribution parameters must be finite, sigmas nonnegative");
        }
        if self.methods.is_empty() {
            return bad("no methods selected");
        }
        Ok(())
    }

    /// Row count seen by the expectations after the reduction: `N` for a sum,
    /// 1 for a mean.
    pub fn effective_rows(&self) -> f64 {
        self.n as f64 * self.reduction.scale(self.n)
    }
}

/// One trial's draws, in the order teacher, start, samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainDraws {
    pub w_star: DenseVector<f64>,
    pub w0: DenseVector<f64>,
    pub x: DenseMatrix<f64>,
    pub seed: u64,
}

impl TrainDraws {
    pub fn checksum(&self) -> u64 {
        draw_checksum([
            self.w_star.as_slice(),
            self.w0.as_slice(),
            self.x.as_slice(),
        ])
    }
}

pub fn sample_train_trial(config: &TrainConfig, trial: usize) -> Result<TrainDraws> {
    let stream = RngStream::new(config.seed, trial as u64);
    let mut rng = stream.rng();
    let w_star = gaussian_vector(config.d, config.mu1, config.sigma1, &mut rng)?;
    let w0 = gaussian_vector(config.d, 0.0, config.sigma2, &mut rng)?;
    let x = gaussian_matrix(config.n, config.d, 0.0, 1.0, &mut rng)?;
    Ok(TrainDraws {
        w_star,
        w0,
        x,
        seed: stream.stream_seed(),
    })
}

/// `w_t − η · normalize(∇)` with `∇` the reduced gradient. Returns the next
/// weights and `∇`.
pub fn train_step(
    x: &DenseMatrix<f64>,
    w_t: &DenseVector<f64>,
    w_star: &DenseVector<f64>,
    config: &TrainConfig,
    mode: GradientMode,
) -> Result<(DenseVector<f64>, DenseVector<f64>)> {
    let g = grad_w_train(x, w_t, w_star, mode)?.scale(config.reduction.scale(x.rows()));
    let mut next = w_t.clone();
    next.axpy(-config.eta, &normalize_update(&g, config.normalize));
    Ok((next, g))
}

fn record(
    step: usize,
    w: &DenseVector<f64>,
    w_star: &DenseVector<f64>,
    loss: f64,
    g: &DenseVector<f64>,
    keep: bool,
) -> StepRecord<f64> {
    StepRecord {
        step,
        l1_dist: Some((w_star - w).l1_norm()),
        loss,
        grad_l2: g.l2_norm(),
        grad_linf: g.linf_norm(),
        accuracy: None,
        iterate: keep.then(|| w.clone()),
    }
}

pub fn run_train_arm(
    draws: &TrainDraws,
    config: &TrainConfig,
    mode: GradientMode,
) -> Result<Trajectory<f64>> {
    let scale = config.reduction.scale(config.n);
    let mut traj = Trajectory::new(mode);
    let mut w = draws.w0.clone();
    for step in 0..=config.iters {
        let (next, g) = train_step(&draws.x, &w, &draws.w_star, config, mode)?;
        let loss = scale * train_loss(&draws.x, &w, &draws.w_star)?;
        traj.records.push(record(
            step,
            &w,
            &draws.w_star,
            loss,
            &g,
            config.record_iterates,
        ));
        w = next;
    }
    Ok(traj)
}

pub fn run_train_sim(config: &TrainConfig) -> Result<SimulationResult<f64>> {
    config.validate()?;
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let draws = sample_train_trial(config, trial)?;
            let mut run = TrialRun {
                trial,
                seed: draws.seed,
                checksums: Vec::new(),
                arms: Vec::new(),
            };
            for &mode in &config.methods {
                run.checksums.push(draws.checksum());
                run.arms.push(run_train_arm(&draws, config, mode)?);
            }
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationResult {
        methods: config.methods.clone(),
        trials,
    })
}

/// Deterministic iteration with the expected gradient over Gaussian samples,
/// at the effective row count of the configured reduction. Records carry iterates.
pub fn run_train_expected(
    config: &TrainConfig,
    w0: &DenseVector<f64>,
    w_star: &DenseVector<f64>,
) -> Result<Vec<Trajectory<f64>>> {
    config.validate()?;
    if w0.len() != config.d || w_star.len() != config.d {
        return Err(Error::dims(
            "run_train_expected",
            config.d,
            w0.len().min(w_star.len()),
        ));
    }
    let k = config.effective_rows();
    Ok(config
        .methods
        .iter()
        .map(|&mode| {
            let mut traj = Trajectory::new(mode);
            let mut w = w0.clone();
            for step in 0..=config.iters {
                let g = expected_grad_total(&w, w_star, k, mode);
                traj.records.push(record(
                    step,
                    &w,
                    w_star,
                    expected_loss(&w, w_star, k),
                    &g,
                    true,
                ));
                w.axpy(-config.eta, &normalize_update(&g, config.normalize));
            }
            traj
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            n: 12,
            d: 4,
            iters: 20,
            trials: 3,
            ..TrainConfig::reference()
        }
    }

    #[test]
    fn step_examples() {
        let c = small();
        let d = sample_train_trial(&c, 0).unwrap();
        let (next, g) = train_step(&d.x, &d.w_star, &d.w_star, &c, GradientMode::Bp).unwrap();
        assert_eq!(next, d.w_star);
        assert_eq!(g, DenseVector::zeros(4));
        let frozen = TrainConfig {
            eta: 0.0,
            ..c.clone()
        };
        assert_eq!(
            train_step(&d.x, &d.w0, &d.w_star, &frozen, GradientMode::LinBp)
                .unwrap()
                .0,
            d.w0
        );

        let sum = TrainConfig {
            reduction: LossReduction::Sum,
            ..c.clone()
        };
        let (next, _) = train_step(&d.x, &d.w0, &d.w_star, &sum, GradientMode::Bp).unwrap();
        let manual = &d.w0
            - &grad_w_train(&d.x, &d.w0, &d.w_star, GradientMode::Bp)
                .unwrap()
                .scale(c.eta);
        assert!(next.max_abs_diff(&manual) < 1e-15);
        let (next, _) = train_step(&d.x, &d.w0, &d.w_star, &c, GradientMode::Bp).unwrap();
        let manual = &d.w0
            - &grad_w_train(&d.x, &d.w0, &d.w_star, GradientMode::Bp)
                .unwrap()
                .scale(c.eta / 12.0);
        assert!(next.max_abs_diff(&manual) < 1e-15);
    }

    #[test]
    fn sim_shapes_and_pairing() {
        let c = small();
        let r = run_train_sim(&c).unwrap();
        assert_eq!(r, run_train_sim(&c).unwrap());
        for t in &r.trials {
            assert_eq!(t.checksums[0], t.checksums[1]);
            assert_eq!(t.arms[0].len(), 21);
            assert!(t
                .arms
                .iter()
                .flat_map(|a| &a.records)
                .all(|rec| rec.loss >= 0.0));
        }
        let zero = TrainConfig { iters: 0, ..c };
        let r = run_train_sim(&zero).unwrap();
        assert_eq!(r.mean_l1(GradientMode::Bp), r.mean_l1(GradientMode::LinBp));
    }

    #[test]
    fn reduction_parsing() {
        assert_eq!("sum".parse::<LossReduction>().unwrap(), LossReduction::Sum);
        assert!("avg".parse::<LossReduction>().is_err());
        assert_eq!(TrainConfig::reference().effective_rows(), 1.0);
    }
}
