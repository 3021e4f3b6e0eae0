//! Expected gradients and losses over Gaussian weights, the sign-weighted
//! Gaussian expectation, the normal CDF and step-size constraint reports.
//!
//! The attack and training expectations share one shape. With `k` the number of
//! Gaussian rows (hidden width for the attack, sample count for training):
//!
//! ```text
//! BP:    (k/2)(x − x★) + (k/2π) p,   p = Θx★ − (‖x★‖/‖x‖) sinΘ · x
//! LinBP: (k/2)(x − x★)
//! ```

use crate::error::{Error, Result};
use crate::grad::GradientMode;
use crate::linalg::{angle_between, DenseVector};
use crate::scalar::Scalar;

/// Below this norm an iterate is treated as the origin by the total variants.
pub const DEGENERATE_NORM: f64 = 1e-12;

fn positive_norm<T: Scalar>(op: &'static str, name: &str, v: &DenseVector<T>) -> Result<T> {
    let n = v.l2_norm();
    if n > T::zero() && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::domain(
            op,
            format!("{name} must have positive finite norm"),
        ))
    }
}

fn same_len<T: Scalar>(op: &'static str, a: &DenseVector<T>, b: &DenseVector<T>) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::dims(op, a.len(), b.len()))
    }
}

/// `(d2/2π)[(π − Θ)x + ‖x‖ sinΘ · e]` with `Θ` the angle between `e` and `x`.
///
/// This is the stated closed form for `E[Wᵀ D(W,e) VᵀV D(W,x) W x]` over standard
/// Gaussian `W`. It carries no dependence on the readout width `d3`; see
/// [`expected_g_with_readout`] for the form that does.
pub fn lemma1_expectation<T: Scalar>(
    e: &DenseVector<T>,
    x: &DenseVector<T>,
    d2: usize,
) -> Result<DenseVector<T>> {
    const OP: &str = "lemma1_expectation";
    same_len(OP, e, x)?;
    let e_norm = e.l2_norm();
    if (e_norm - T::one()).abs() > T::lit(1e-9) || e_norm.is_nan() {
        return Err(Error::domain(
            OP,
            format!("e must be a unit vector, |e| = {e_norm}"),
        ));
    }
    let x_norm = positive_norm(OP, "x", x)?;
    let theta = angle_between(e, x)?;
    let k = T::lit(d2 as f64) / (T::TAU());
    let a = k * (T::PI() - theta);
    let b = k * x_norm * theta.sin();
    Ok(DenseVector::from_fn(x.len(), |i| a * x[i] + b * e[i]))
}

/// `d3 ·` [`lemma1_expectation`]: the expectation when the `d3 × d2` readout `V`
/// is standard Gaussian too, since `E[VᵀV] = d3 · I`.
pub fn expected_g_with_readout<T: Scalar>(
    e: &DenseVector<T>,
    x: &DenseVector<T>,
    d2: usize,
    d3: usize,
) -> Result<DenseVector<T>> {
    Ok(lemma1_expectation(e, x, d2)?.scale(T::lit(d3 as f64)))
}

/// `Θx★ − (‖x★‖/‖x‖) sinΘ · x`, the term by which the BP expectation leaves the
/// residual direction. Also computes `q` when called with `(w, w★)`.
///
/// Errors on zero-norm inputs. For `0 < ‖x‖ < 1e−12` the sine term is taken as 0.
pub fn correction_p<T: Scalar>(
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
) -> Result<DenseVector<T>> {
    const OP: &str = "correction_p";
    same_len(OP, x, x_star)?;
    positive_norm(OP, "x", x)?;
    positive_norm(OP, "x_star", x_star)?;
    Ok(correction_p_total(x, x_star))
}

/// [`correction_p`] extended to every input: a zero `x★` gives the zero vector,
/// and a zero `x` uses `Θ = π/2` with the sine term dropped.
///
/// # Panics
/// On length mismatch.
pub fn correction_p_total<T: Scalar>(
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
) -> DenseVector<T> {
    assert_eq!(x.len(), x_star.len(), "correction_p_total: length mismatch");
    let xs_norm = x_star.l2_norm();
    if xs_norm == T::zero() {
        return DenseVector::zeros(x.len());
    }
    let x_norm = x.l2_norm();
    let theta = if x_norm == T::zero() {
        T::FRAC_PI_2()
    } else {
        angle_between(x, x_star).expect("nonzero norms")
    };
    let mut p = x_star.scale(theta);
    if x_norm >= T::lit(DEGENERATE_NORM) {
        p.axpy(-(xs_norm / x_norm) * theta.sin(), x);
    }
    p
}

/// Expected gradient with `k` Gaussian rows, total over all inputs
/// (degenerate iterates per [`correction_p_total`]).
pub fn expected_grad_total<T: Scalar>(
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
    k: T,
    mode: GradientMode,
) -> DenseVector<T> {
    let mut g = (x - x_star).scale(k / T::lit(2.0));
    if mode.keeps_relu_derivative(1) {
        g.axpy(k / T::TAU(), &correction_p_total(x, x_star));
    }
    g
}

/// Expected attack input gradient over standard Gaussian `W` (`d2` rows) with a
/// single Gaussian readout row.
pub fn expected_grad_x<T: Scalar>(
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
    d2: usize,
    mode: GradientMode,
) -> Result<DenseVector<T>> {
    const OP: &str = "expected_grad_x";
    same_len(OP, x, x_star)?;
    positive_norm(OP, "x", x)?;
    positive_norm(OP, "x_star", x_star)?;
    Ok(expected_grad_total(x, x_star, T::lit(d2 as f64), mode))
}

/// Expected training gradient over `N` standard Gaussian sample rows.
pub fn expected_grad_w<T: Scalar>(
    w: &DenseVector<T>,
    w_star: &DenseVector<T>,
    n: usize,
    mode: GradientMode,
) -> Result<DenseVector<T>> {
    const OP: &str = "expected_grad_w";
    same_len(OP, w, w_star)?;
    positive_norm(OP, "w", w)?;
    positive_norm(OP, "w_star", w_star)?;
    Ok(expected_grad_total(w, w_star, T::lit(n as f64), mode))
}

/// `E ½ Σ_{rows r} (σ(rᵀx) − σ(rᵀx★))²` over `k` standard Gaussian rows:
/// `(k/2)[‖x‖²/2 + ‖x★‖²/2 − (‖x‖‖x★‖/π)(sinΘ + (π − Θ)cosΘ)]`.
///
/// Its gradient in `x` is the BP expected gradient. Total: a zero vector on
/// either side drops the cross term.
pub fn expected_loss<T: Scalar>(x: &DenseVector<T>, x_star: &DenseVector<T>, k: T) -> T {
    let (a, b) = (x.l2_norm(), x_star.l2_norm());
    let half = T::lit(0.5);
    let mut inner = half * (a * a + b * b);
    if a > T::zero() && b > T::zero() {
        let theta = angle_between(x, x_star).expect("nonzero norms");
        inner = inner - a * b / T::PI() * (theta.sin() + (T::PI() - theta) * theta.cos());
    }
    half * k * inner.max(T::zero())
}

/// `Φ(z)`, the standard normal CDF, via the complementary error function.
pub fn normal_cdf<T: Scalar>(z: T) -> T {
    T::lit(0.5 * libm::erfc(-z.as_f64() / std::f64::consts::SQRT_2))
}

/// Coefficients and distributions of `α = (u·a − v·b) sgn(a − b)` with
/// `a ~ N(μ1, σ1²)` and `b ~ N(μ2, σ2²)` independent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma2Params<T> {
    pub u: T,
    pub v: T,
    pub mu1: T,
    pub mu2: T,
    pub sigma1: T,
    pub sigma2: T,
}

impl<T: Scalar> Lemma2Params<T> {
    pub fn validate(&self) -> Result<()> {
        if self.sigma1 > T::zero() && self.sigma2 > T::zero() {
            Ok(())
        } else {
            Err(Error::domain(
                "lemma2",
                "standard deviations must be positive",
            ))
        }
    }

    /// One sample of `α` at the draws `a` (first law) and `b` (second law).
    pub fn alpha(&self, a: T, b: T) -> T {
        let diff = a - b;
        let sign = if diff > T::zero() {
            T::one()
        } else if diff < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        (self.u * a - self.v * b) * sign
    }
}

/// `E α = 2γ(uσ1² + vσ2²) + (uμ1 − vμ2)(2P − 1)`, with `P = P(b < a)`.
pub fn lemma2_expectation<T: Scalar>(p: &Lemma2Params<T>) -> Result<T> {
    p.validate()?;
    let var = p.sigma1 * p.sigma1 + p.sigma2 * p.sigma2;
    let dmu = p.mu1 - p.mu2;
    let gamma = (-(dmu * dmu) / (T::lit(2.0) * var)).exp() / (T::TAU() * var).sqrt();
    let prob = normal_cdf(dmu / var.sqrt());
    let two = T::lit(2.0);
    Ok(
        two * gamma * (p.u * p.sigma1 * p.sigma1 + p.v * p.sigma2 * p.sigma2)
            + (p.u * p.mu1 - p.v * p.mu2) * (two * prob - T::one()),
    )
}

/// Step-size constraint table: `cells[m − 1][i]` is the check at step `m`,
/// coordinate `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub cells: Vec<Vec<bool>>,
    pub overall: bool,
    /// `(m, i)` of the first failing cell in step-major order.
    pub first_violation: Option<(usize, usize)>,
}

impl ConstraintReport {
    pub fn steps(&self) -> usize {
        self.cells.len()
    }

    pub fn violations(&self) -> usize {
        self.cells.iter().flatten().filter(|&&ok| !ok).count()
    }

    /// Last step `m` such that every step `1..=m` holds in full.
    pub fn holds_through(&self) -> usize {
        self.cells
            .iter()
            .take_while(|row| row.iter().all(|&ok| ok))
            .count()
    }
}

/// For `m = 1..=t` (with `t + 1` iterates supplied) and each coordinate `i`:
///
/// `|Σ_{j<m} (ηk/2π)(1 − ηk/2)^{m−1−j} p_{j,i}| < |(1 − ηk/2)^m (x★_i − x⁽⁰⁾_i)|`
///
/// with `p_j` the correction vector at iterate `j`.
pub fn eta_constraint<T: Scalar>(
    trajectory: &[DenseVector<T>],
    x_star: &DenseVector<T>,
    eta: T,
    k: T,
) -> ConstraintReport {
    let Some(x0) = trajectory.first() else {
        return ConstraintReport {
            cells: Vec::new(),
            overall: true,
            first_violation: None,
        };
    };
    let rate = T::one() - eta * k / T::lit(2.0);
    let weight = eta * k / T::TAU();
    let gap = x_star - x0;
    let mut acc = DenseVector::zeros(x_star.len());
    let mut decay = T::one();
    let mut cells = Vec::with_capacity(trajectory.len() - 1);
    let mut first_violation = None;
    for (j, x) in trajectory[..trajectory.len() - 1].iter().enumerate() {
        let p = correction_p_total(x, x_star);
        acc = acc.zip_map(&p, |s, pi| rate * s + weight * pi);
        decay = decay * rate;
        let row: Vec<bool> = (0..gap.len())
            .map(|i| acc[i].abs() < (decay * gap[i]).abs())
            .collect();
        if first_violation.is_none() {
            if let Some(i) = row.iter().position(|&ok| !ok) {
                first_violation = Some((j + 1, i));
            }
        }
        cells.push(row);
    }
    ConstraintReport {
        overall: first_violation.is_none(),
        cells,
        first_violation,
    }
}

/// Attack form of [`eta_constraint`] with `k = d2`.
pub fn eta_constraint_attack<T: Scalar>(
    trajectory: &[DenseVector<T>],
    x_star: &DenseVector<T>,
    eta: T,
    d2: usize,
) -> ConstraintReport {
    eta_constraint(trajectory, x_star, eta, T::lit(d2 as f64))
}

/// Training form of [`eta_constraint`] with `k = N`.
pub fn eta_constraint_train<T: Scalar>(
    trajectory: &[DenseVector<T>],
    w_star: &DenseVector<T>,
    eta: T,
    n: usize,
) -> ConstraintReport {
    eta_constraint(trajectory, w_star, eta, T::lit(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_diff_grad;
    use crate::linalg::{gaussian_vector, RngStream};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn v(x: &[f64]) -> DenseVector<f64> {
        DenseVector::from_f64_slice(x)
    }

    fn simpson_cdf(z: f64) -> f64 {
        // ∫_0^z φ, composite Simpson with 20000 panels
        let n = 20_000;
        let h = z / n as f64;
        let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
        let mut s = phi(0.0) + phi(z);
        for i in 1..n {
            s += phi(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + s * h / 3.0
    }

    #[test]
    fn normal_cdf_examples() {
        assert_eq!(normal_cdf::<f64>(0.0), 0.5);
        assert!((normal_cdf::<f64>(1.96) - 0.9750021).abs() < 1e-6);
        for z in [-3.0, -1.2, 0.3, 0.7, 1.96, 2.5, 4.0] {
            assert!((normal_cdf(z) - simpson_cdf(z)).abs() < 1e-10, "z = {z}");
            assert!((normal_cdf(-z) - (1.0 - normal_cdf(z))).abs() < 1e-15);
        }
        let mut prev = 0.0;
        for i in 0..10_000 {
            let z = -8.0 + 16.0 * i as f64 / 9_999.0;
            let p = normal_cdf(z);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn gram_expectation_examples() {
        let x = v(&[1.0, -2.0, 2.0]);
        let e = x.scale(1.0 / 3.0);
        let aligned = lemma1_expectation(&e, &x, 5).unwrap();
        assert!(aligned.max_abs_diff(&x.scale(2.5)) < 1e-12);
        let opposite = lemma1_expectation(&-&e, &x, 5).unwrap();
        assert!(opposite.linf_norm() < 1e-12);
        assert!(lemma1_expectation(&x, &x, 5).is_err());
        assert!(lemma1_expectation(&e, &DenseVector::zeros(3), 5).is_err());
        let r = expected_g_with_readout(&e, &x, 5, 2).unwrap();
        assert!(r.max_abs_diff(&aligned.scale(2.0)) < 1e-12);
    }

    #[test]
    fn gram_expectation_homogeneous_in_x() {
        let mut rng = RngStream::new(11, 0).rng();
        let e = gaussian_vector::<f64, _>(4, 0.0, 1.0, &mut rng).unwrap();
        let e = e.scale(1.0 / e.l2_norm());
        let x = gaussian_vector(4, 0.0, 1.0, &mut rng).unwrap();
        let one = lemma1_expectation(&e, &x, 7).unwrap();
        let two = lemma1_expectation(&e, &x.scale(2.0), 7).unwrap();
        assert!(two.max_abs_diff(&one.scale(2.0)) < 1e-12);
    }

    #[test]
    fn correction_examples() {
        let xs = v(&[1.0, 2.0, -0.5]);
        assert!(correction_p(&xs.scale(3.0), &xs).unwrap().linf_norm() < 1e-12);
        let p = correction_p(&xs.scale(-2.0), &xs).unwrap();
        assert!(p.max_abs_diff(&xs.scale(PI)) < 1e-12);
        assert!(correction_p(&DenseVector::zeros(3), &xs).is_err());
        assert!(correction_p(&xs, &DenseVector::zeros(3)).is_err());
        let p0 = correction_p_total(&DenseVector::zeros(3), &xs);
        assert!(p0.max_abs_diff(&xs.scale(PI / 2.0)) < 1e-15);
        // below the threshold the sine term is dropped
        let tiny = v(&[1e-13, 0.0, 0.0]);
        let theta = angle_between(&tiny, &xs).unwrap();
        assert!(
            correction_p(&tiny, &xs)
                .unwrap()
                .max_abs_diff(&xs.scale(theta))
                < 1e-15
        );
    }

    #[test]
    fn bp_minus_linbp_is_the_scaled_correction() {
        let mut rng = RngStream::new(12, 0).rng();
        for _ in 0..20 {
            let x = gaussian_vector(6, 0.0, 1.0, &mut rng).unwrap();
            let xs = gaussian_vector(6, 1.0, 2.0, &mut rng).unwrap();
            let bp = expected_grad_x(&x, &xs, 20, GradientMode::Bp).unwrap();
            let lin = expected_grad_x(&x, &xs, 20, GradientMode::LinBp).unwrap();
            let p = correction_p(&x, &xs).unwrap().scale(20.0 / (2.0 * PI));
            assert!((&bp - &lin).max_abs_diff(&p) < 1e-12);
            assert!(lin.max_abs_diff(&(&x - &xs).scale(10.0)) < 1e-12);
            let w = expected_grad_w(&x, &xs, 20, GradientMode::Bp).unwrap();
            assert_eq!(w, bp);
        }
        let x = v(&[1.0, 2.0]);
        for mode in [GradientMode::Bp, GradientMode::LinBp] {
            assert_eq!(
                expected_grad_x(&x, &x, 5, mode).unwrap(),
                DenseVector::zeros(2)
            );
            assert_eq!(
                expected_grad_w(&x, &x, 5, mode).unwrap(),
                DenseVector::zeros(2)
            );
        }
        assert!(expected_grad_x(&DenseVector::zeros(2), &x, 5, GradientMode::Bp).is_err());
    }

    #[test]
    fn expected_loss_gradient_is_the_bp_expectation() {
        let mut rng = RngStream::new(13, 0).rng();
        for _ in 0..10 {
            let x = gaussian_vector(5, 0.0, 1.0, &mut rng).unwrap();
            let xs = gaussian_vector(5, 1.0, 2.0, &mut rng).unwrap();
            let fd = finite_diff_grad(|z: &DenseVector<f64>| expected_loss(z, &xs, 7.0), &x, 1e-6);
            let g = expected_grad_x(&x, &xs, 7, GradientMode::Bp).unwrap();
            assert!((&fd - &g).l2_norm() / g.l2_norm() < 1e-6);
        }
        let x = v(&[0.5, -1.0]);
        assert!(expected_loss(&x, &x, 3.0).abs() < 1e-12);
        assert!((expected_loss(&DenseVector::zeros(2), &x, 2.0) - 0.5 * 1.25).abs() < 1e-15);
    }

    #[test]
    fn sign_weighted_examples() {
        let p: Lemma2Params<f64> = Lemma2Params {
            u: 0.0,
            v: 0.0,
            mu1: 1.0,
            mu2: -0.5,
            sigma1: 2.0,
            sigma2: 1.0,
        };
        assert_eq!(lemma2_expectation(&p).unwrap(), 0.0);
        let p: Lemma2Params<f64> = Lemma2Params {
            u: 1.5,
            v: 0.5,
            mu1: 0.0,
            mu2: 0.0,
            sigma1: 2.0,
            sigma2: 1.0,
        };
        let var: f64 = 5.0;
        let gamma = 1.0 / (2.0 * PI * var).sqrt();
        let expect = 2.0 * gamma * (1.5 * 4.0 + 0.5 * 1.0);
        assert!((lemma2_expectation(&p).unwrap() - expect).abs() < 1e-15);
        let bad = Lemma2Params { sigma1: 0.0, ..p };
        assert!(lemma2_expectation(&bad).is_err());
        // u = v = 1: α = |a − b|, the folded-normal mean
        let p: Lemma2Params<f64> = Lemma2Params {
            u: 1.0,
            v: 1.0,
            mu1: 0.7,
            mu2: -0.2,
            sigma1: 1.0,
            sigma2: 0.5,
        };
        let (m, s) = (0.9_f64, 1.25_f64.sqrt());
        let folded = s * (2.0 / PI).sqrt() * (-m * m / (2.0 * s * s)).exp()
            + m * (1.0 - 2.0 * normal_cdf(-m / s));
        assert!((lemma2_expectation(&p).unwrap() - folded).abs() < 1e-14);
    }

    #[test]
    fn constraint_examples() {
        let xs = v(&[1.0, -2.0, 3.0]);
        let x0 = v(&[0.5, 0.5, 0.5]);
        let traj = vec![x0.clone(); 5];
        let r = eta_constraint_attack(&traj, &xs, 0.0, 20);
        assert!(r.overall);
        assert_eq!(r.steps(), 4);
        assert_eq!(r.holds_through(), 4);

        // a near-zero gap in the first coordinate cannot absorb the correction
        let near = vec![v(&[0.999, 0.5, 0.5]); 5];
        let r = eta_constraint_attack(&near, &xs, 10.0, 20);
        assert!(!r.overall);
        assert_eq!(r.first_violation, Some((1, 0)));
        let (m, i) = r.first_violation.unwrap();
        assert!(!r.cells[m - 1][i]);
        assert!(r.violations() > 0);

        let single = eta_constraint_train(&traj[..1], &xs, 0.1, 100);
        assert!(single.overall && single.cells.is_empty());
    }

    #[test]
    fn constraint_matches_direct_sum() {
        let mut rng = RngStream::new(14, 0).rng();
        let xs = gaussian_vector(4, 1.0, 2.0, &mut rng).unwrap();
        let traj: Vec<_> = (0..6)
            .map(|_| gaussian_vector(4, 0.0, 1.0, &mut rng).unwrap())
            .collect();
        let (eta, k) = (0.02, 20.0);
        let r = eta_constraint(&traj, &xs, eta, k);
        let rate: f64 = 1.0 - eta * k / 2.0;
        for m in 1..6 {
            for i in 0..4 {
                let lhs: f64 = (0..m)
                    .map(|j| {
                        eta * k / (2.0 * PI)
                            * rate.powi((m - 1 - j) as i32)
                            * correction_p(&traj[j], &xs).unwrap()[i]
                    })
                    .sum();
                let rhs = (rate.powi(m as i32) * (xs[i] - traj[0][i])).abs();
                assert_eq!(r.cells[m - 1][i], lhs.abs() < rhs, "m={m} i={i}");
            }
        }
    }

    proptest! {
        #[test]
        fn linbp_expectation_is_collinear_with_residual(
            x in proptest::collection::vec(-5.0f64..5.0, 3),
            xs in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let (x, xs) = (DenseVector::new(x), DenseVector::new(xs));
            prop_assume!(x.l2_norm() > 1e-3 && xs.l2_norm() > 1e-3 && (&x - &xs).l2_norm() > 1e-3);
            let g = expected_grad_x(&x, &xs, 9, GradientMode::LinBp).unwrap();
            let r = &x - &xs;
            let cos = g.dot(&r) / (g.l2_norm() * r.l2_norm());
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sign_weighted_positive_for_positive_coefficients(
            u in 0.01f64..5.0, vv in 0.01f64..5.0, mu1 in -5.0f64..5.0,
            s1 in 0.05f64..5.0, s2 in 0.05f64..5.0,
        ) {
            let p = Lemma2Params { u, v: vv, mu1, mu2: 0.0, sigma1: s1, sigma2: s2 };
            prop_assert!(lemma2_expectation(&p).unwrap() > 0.0);
        }
    }
}
