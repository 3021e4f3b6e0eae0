//! White-box attack simulation on the two-layer network: stochastic paired
//! trials and deterministic expected dynamics, both with an l∞ clip box around
//! the starting point.

use rayon::prelude::*;

use crate::closedform::{expected_grad_total, expected_loss};
use crate::error::{Error, Result};
use crate::grad::{attack_loss, grad_x, normalize_update, GradientMode, NormalizeMode};
use crate::linalg::{gaussian_matrix, gaussian_vector, DenseMatrix, DenseVector, RngStream};
use crate::model::TwoLayerModel;
use crate::scalar::Scalar;
use crate::trajectory::{draw_checksum, SimulationResult, StepRecord, Trajectory, TrialRun};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub eta: f64,
    /// l∞ budget around the starting point.
    pub eps: f64,
    pub steps: usize,
    pub trials: usize,
    /// Optimum drawn from `N(mu1, sigma1²)` per coordinate.
    pub mu1: f64,
    pub sigma1: f64,
    /// Starting point drawn from `N(0, sigma2²)` per coordinate.
    pub sigma2: f64,
    pub normalize: NormalizeMode,
    /// One arm per entry, all run on the same draws.
    pub methods: Vec<GradientMode>,
    pub seed: u64,
    pub record_iterates: bool,
}

impl AttackConfig {
    /// Hyperparameters of the unnormalized white-box simulation.
    pub fn reference() -> Self {
        AttackConfig {
            d1: 100,
            d2: 20,
            d3: 10,
            eta: 0.001,
            eps: 0.25,
            steps: 100,
            trials: 10,
            mu1: 1.0,
            sigma1: 2.0,
            sigma2: 1.0,
            normalize: NormalizeMode::None,
            methods: vec![GradientMode::Bp, GradientMode::LinBp],
            seed: 7,
            record_iterates: false,
        }
    }

    /// `η ≥ 0` is accepted so that the zero-step case can be run.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("attack config: {m}")));
        if self.d1 == 0 || self.d2 == 0 || self.d3 == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
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
}

/// Everything one trial samples, drawn in the order optimum, start, `W`, `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackDraws {
    pub x_star: DenseVector<f64>,
    pub x0: DenseVector<f64>,
    pub model: TwoLayerModel<f64>,
    pub seed: u64,
}

impl AttackDraws {
    pub fn checksum(&self) -> u64 {
        draw_checksum([
            self.x_star.as_slice(),
            self.x0.as_slice(),
            self.model.w().as_slice(),
            self.model.v().as_slice(),
        ])
    }
}

/// Samples trial `trial` from stream `(config.seed, trial)`.
pub fn sample_attack_trial(config: &AttackConfig, trial: usize) -> Result<AttackDraws> {
    let stream = RngStream::new(config.seed, trial as u64);
    let mut rng = stream.rng();
    let x_star = gaussian_vector(config.d1, config.mu1, config.sigma1, &mut rng)?;
    let x0 = gaussian_vector(config.d1, 0.0, config.sigma2, &mut rng)?;
    let w: DenseMatrix<f64> = gaussian_matrix(config.d2, config.d1, 0.0, 1.0, &mut rng)?;
    let v = gaussian_matrix(config.d3, config.d2, 0.0, 1.0, &mut rng)?;
    Ok(AttackDraws {
        x_star,
        x0,
        model: TwoLayerModel::new(w, v)?,
        seed: stream.stream_seed(),
    })
}

/// Projects `candidate` onto the box `[center − ε, center + ε]`.
///
/// # Panics
/// On length mismatch.
pub fn clip<T: Scalar>(
    candidate: &DenseVector<T>,
    center: &DenseVector<T>,
    eps: T,
) -> DenseVector<T> {
    candidate.zip_map(center, |c, x0| c.max(x0 - eps).min(x0 + eps))
}

/// `clip(x_t − η · normalize(∇), x⁽⁰⁾, ε)`. Returns the next iterate and the raw
/// gradient at `x_t`.
pub fn attack_step(
    model: &TwoLayerModel<f64>,
    x_t: &DenseVector<f64>,
    x0: &DenseVector<f64>,
    x_star: &DenseVector<f64>,
    config: &AttackConfig,
    mode: GradientMode,
) -> Result<(DenseVector<f64>, DenseVector<f64>)> {
    let g = grad_x(model, x_t, x_star, mode)?;
    let mut next = x_t.clone();
    next.axpy(-config.eta, &normalize_update(&g, config.normalize));
    Ok((clip(&next, x0, config.eps), g))
}

fn record(
    step: usize,
    x: &DenseVector<f64>,
    x_star: &DenseVector<f64>,
    loss: f64,
    g: &DenseVector<f64>,
    keep: bool,
) -> StepRecord<f64> {
    StepRecord {
        step,
        l1_dist: Some((x_star - x).l1_norm()),
        loss,
        grad_l2: g.l2_norm(),
        grad_linf: g.linf_norm(),
        accuracy: None,
        iterate: keep.then(|| x.clone()),
    }
}

/// One arm of one trial. Records steps `0..=steps`; the gradient at the last
/// step is recorded but not applied.
pub fn run_attack_arm(
    draws: &AttackDraws,
    config: &AttackConfig,
    mode: GradientMode,
) -> Result<Trajectory<f64>> {
    let mut traj = Trajectory::new(mode);
    let mut x = draws.x0.clone();
    for step in 0..=config.steps {
        let (next, g) = attack_step(&draws.model, &x, &draws.x0, &draws.x_star, config, mode)?;
        let loss = attack_loss(&draws.model, &x, &draws.x_star)?;
        traj.records.push(record(
            step,
            &x,
            &draws.x_star,
            loss,
            &g,
            config.record_iterates,
        ));
        x = next;
    }
    Ok(traj)
}

/// Runs every method of `config` on `config.trials` paired trials in parallel.
pub fn run_attack_sim(config: &AttackConfig) -> Result<SimulationResult<f64>> {
    config.validate()?;
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let draws = sample_attack_trial(config, trial)?;
            let mut run = TrialRun {
                trial,
                seed: draws.seed,
                checksums: Vec::new(),
                arms: Vec::new(),
            };
            for &mode in &config.methods {
                run.checksums.push(draws.checksum());
                run.arms.push(run_attack_arm(&draws, config, mode)?);
            }
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationResult {
        methods: config.methods.clone(),
        trials,
    })
}

/// Deterministic iteration with the closed-form expected gradient (`k = d2`).
/// Every record carries its iterate. The loss column is the expected loss.
pub fn run_attack_expected(
    config: &AttackConfig,
    x0: &DenseVector<f64>,
    x_star: &DenseVector<f64>,
) -> Result<Vec<Trajectory<f64>>> {
    config.validate()?;
    if x0.len() != config.d1 || x_star.len() != config.d1 {
        return Err(Error::dims(
            "run_attack_expected",
            config.d1,
            x0.len().min(x_star.len()),
        ));
    }
    let k = config.d2 as f64;
    let eps = config.eps;
    Ok(config
        .methods
        .iter()
        .map(|&mode| {
            let mut traj = Trajectory::new(mode);
            let mut x = x0.clone();
            for step in 0..=config.steps {
                let g = expected_grad_total(&x, x_star, k, mode);
                traj.records.push(record(
                    step,
                    &x,
                    x_star,
                    expected_loss(&x, x_star, k),
                    &g,
                    true,
                ));
                let mut next = x.clone();
                next.axpy(-config.eta, &normalize_update(&g, config.normalize));
                x = clip(&next, x0, eps);
            }
            traj
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AttackConfig {
        AttackConfig {
            d1: 6,
            d2: 5,
            d3: 3,
            steps: 8,
            trials: 3,
            ..AttackConfig::reference()
        }
    }

    #[test]
    fn clip_examples() {
        let x0 = DenseVector::new(vec![0.0, 1.0, -1.0]);
        let inside = DenseVector::new(vec![0.1, 0.9, -1.2]);
        assert_eq!(clip(&inside, &x0, 0.25), inside);
        let far = x0.zip_map(&x0, |a, _| a + 0.5);
        assert!(clip(&far, &x0, 0.25).max_abs_diff(&x0.map(|a| a + 0.25)) < 1e-15);
        let wild = DenseVector::new(vec![5.0, -3.0, 0.0]);
        let once = clip(&wild, &x0, 0.25);
        assert_eq!(clip(&once, &x0, 0.25), once);
    }

    #[test]
    fn step_examples() {
        let c = small();
        let d = sample_attack_trial(&c, 0).unwrap();
        let frozen = AttackConfig {
            eta: 0.0,
            ..c.clone()
        };
        let (next, _) =
            attack_step(&d.model, &d.x0, &d.x0, &d.x_star, &frozen, GradientMode::Bp).unwrap();
        assert_eq!(next, d.x0);
        let (next, g) = attack_step(
            &d.model,
            &d.x_star,
            &d.x0,
            &d.x_star,
            &c,
            GradientMode::LinBp,
        )
        .unwrap();
        assert_eq!(g, DenseVector::zeros(6));
        assert_eq!(next, clip(&d.x_star, &d.x0, c.eps));

        let c = AttackConfig {
            eta: 0.05,
            normalize: NormalizeMode::L2,
            ..c
        };
        let (next, _) =
            attack_step(&d.model, &d.x0, &d.x0, &d.x_star, &c, GradientMode::Bp).unwrap();
        let g = grad_x(&d.model, &d.x0, &d.x_star, GradientMode::Bp).unwrap();
        let manual = clip(&(&d.x0 - &g.scale(0.05 / g.l2_norm())), &d.x0, c.eps);
        assert!(next.max_abs_diff(&manual) < 1e-15);
    }

    #[test]
    fn sim_is_deterministic_and_paired() {
        let c = small();
        let a = run_attack_sim(&c).unwrap();
        let b = run_attack_sim(&c).unwrap();
        assert_eq!(a, b);
        for t in &a.trials {
            assert_eq!(t.checksums[0], t.checksums[1]);
            assert_eq!(t.arms[0].records[0].l1_dist, t.arms[1].records[0].l1_dist);
            assert_eq!(t.arms[0].len(), c.steps + 1);
        }
        assert_ne!(a.trials[0].checksums[0], a.trials[1].checksums[0]);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig {
            eps: 0.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(AttackConfig {
            eta: -1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(AttackConfig {
            trials: 0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(AttackConfig {
            methods: vec![],
            ..small()
        }
        .validate()
        .is_err());
        assert!(small().validate().is_ok());
    }
}
