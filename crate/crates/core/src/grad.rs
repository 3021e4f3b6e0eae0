//! Closed-form BP and LinBP gradients.
//!
//! LinBP keeps the forward pass and replaces ReLU derivative factors with the
//! identity in the backward pass. [`GradientMode`] selects which factors are
//! kept: hidden layer `i` (1-based) keeps its factor under `LinBpFrom(m)` iff
//! `i <= m`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::model::{mlp_forward, relu_vec, MlpModel, ReluMask, TwoLayerModel};
use crate::scalar::Scalar;

/// Backward-pass rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradientMode {
    Bp,
    /// Every ReLU derivative replaced by the identity.
    LinBp,
    /// ReLU derivatives kept at layers `1..=m`, dropped from layer `m + 1` on.
    LinBpFrom(usize),
}

impl GradientMode {
    /// Whether the ReLU derivative at layer `layer` (1-based) survives.
    #[inline]
    pub fn keeps_relu_derivative(self, layer: usize) -> bool {
        match self {
            GradientMode::Bp => true,
            GradientMode::LinBp => false,
            GradientMode::LinBpFrom(m) => layer <= m,
        }
    }

    /// Method name used in CSV records: `bp`, `linbp` or `linbp-from-m`.
    pub fn label(self) -> String {
        match self {
            GradientMode::Bp => "bp".into(),
            GradientMode::LinBp => "linbp".into(),
            GradientMode::LinBpFrom(m) => format!("linbp-from-{m}"),
        }
    }
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for GradientMode {
    type Err = Error;

    /// Accepts `bp`, `linbp`, `linbp-from=M` and `linbp-from-M`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bp" => Ok(GradientMode::Bp),
            "linbp" => Ok(GradientMode::LinBp),
            _ => {
                let m = s
                    .strip_prefix("linbp-from=")
                    .or_else(|| s.strip_prefix("linbp-from-"))
                    .ok_or_else(|| Error::Config(format!("unknown gradient mode {s:?}")))?;
                m.parse()
                    .map(GradientMode::LinBpFrom)
                    .map_err(|_| Error::Config(format!("bad layer index in {s:?}")))
            }
        }
    }
}

/// How an update direction is rescaled before the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizeMode {
    #[default]
    None,
    L2,
    Linf,
    Sign,
}

impl FromStr for NormalizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormalizeMode::None),
            "l2" => Ok(NormalizeMode::L2),
            "linf" => Ok(NormalizeMode::Linf),
            "sign" => Ok(NormalizeMode::Sign),
            _ => Err(Error::Config(format!("unknown normalization {s:?}"))),
        }
    }
}

impl fmt::Display for NormalizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizeMode::None => "none",
            NormalizeMode::L2 => "l2",
            NormalizeMode::Linf => "linf",
            NormalizeMode::Sign => "sign",
        })
    }
}

/// `g/‖g‖₂`, `g/‖g‖_∞`, `sign(g)` or `g`. A zero vector is returned unchanged.
pub fn normalize_update<T: Scalar>(g: &DenseVector<T>, mode: NormalizeMode) -> DenseVector<T> {
    match mode {
        NormalizeMode::None => g.clone(),
        NormalizeMode::L2 | NormalizeMode::Linf => {
            let n = if mode == NormalizeMode::L2 {
                g.l2_norm()
            } else {
                g.linf_norm()
            };
            if n == T::zero() {
                g.clone()
            } else {
                g.scale(T::one() / n)
            }
        }
        NormalizeMode::Sign => g.map(|v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }),
    }
}

fn check_len<T: Scalar>(op: &'static str, expected: usize, v: &DenseVector<T>) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::dims(op, expected, v.len()))
    }
}

/// `½‖g(W,V,x) − g(W,V,x★)‖²`.
pub fn attack_loss<T: Scalar>(
    model: &TwoLayerModel<T>,
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
) -> Result<T> {
    let diff = &model.forward(x)? - &model.forward(x_star)?;
    Ok(T::lit(0.5) * diff.dot(&diff))
}

/// Input gradient of [`attack_loss`] under `mode`:
/// `Wᵀ D(W,x)? VᵀV (D(W,x)Wx − D(W,x★)Wx★)`, the mask in front kept only for BP.
pub fn grad_x<T: Scalar>(
    model: &TwoLayerModel<T>,
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
    mode: GradientMode,
) -> Result<DenseVector<T>> {
    check_len("grad_x", model.input_dim(), x)?;
    check_len("grad_x", model.input_dim(), x_star)?;
    let wx = model.w().matvec(x)?;
    let ws = model.w().matvec(x_star)?;
    let residual = &relu_vec(&wx) - &relu_vec(&ws);
    let back = model.v().matvec_t(&model.v().matvec(&residual)?)?;
    let back = if mode.keeps_relu_derivative(1) {
        ReluMask::from_preactivation(&wx).apply(&back)
    } else {
        back
    };
    model.w().matvec_t(&back)
}

pub fn grad_x_bp<T: Scalar>(
    model: &TwoLayerModel<T>,
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
) -> Result<DenseVector<T>> {
    grad_x(model, x, x_star, GradientMode::Bp)
}

pub fn grad_x_linbp<T: Scalar>(
    model: &TwoLayerModel<T>,
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
) -> Result<DenseVector<T>> {
    grad_x(model, x, x_star, GradientMode::LinBp)
}

/// `½‖σ(Xw) − σ(Xw★)‖²`.
pub fn train_loss<T: Scalar>(
    x: &DenseMatrix<T>,
    w: &DenseVector<T>,
    w_star: &DenseVector<T>,
) -> Result<T> {
    let diff = &relu_vec(&x.matvec(w)?) - &relu_vec(&x.matvec(w_star)?);
    Ok(T::lit(0.5) * diff.dot(&diff))
}

/// Weight gradient of [`train_loss`]: `Xᵀ D(X,w)? (D(X,w)Xw − D(X,w★)Xw★)`.
pub fn grad_w_train<T: Scalar>(
    x: &DenseMatrix<T>,
    w: &DenseVector<T>,
    w_star: &DenseVector<T>,
    mode: GradientMode,
) -> Result<DenseVector<T>> {
    check_len("grad_w_train", x.cols(), w)?;
    check_len("grad_w_train", x.cols(), w_star)?;
    let xw = x.matvec(w)?;
    let residual = &relu_vec(&xw) - &relu_vec(&x.matvec(w_star)?);
    let residual = if mode.keeps_relu_derivative(1) {
        ReluMask::from_preactivation(&xw).apply(&residual)
    } else {
        residual
    };
    x.matvec_t(&residual)
}

/// Loss attached to the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `½‖f − t‖²`
    SquaredError,
    /// `−Σ_k t_k log softmax(f)_k`
    SoftmaxCrossEntropy,
}

/// Loss value and `∂L/∂f` for one output vector.
pub fn loss_and_output_grad<T: Scalar>(
    output: &DenseVector<T>,
    target: &DenseVector<T>,
    kind: LossKind,
) -> Result<(T, DenseVector<T>)> {
    check_len("loss", output.len(), target)?;
    match kind {
        LossKind::SquaredError => {
            let diff = output - target;
            Ok((T::lit(0.5) * diff.dot(&diff), diff))
        }
        LossKind::SoftmaxCrossEntropy => {
            let log_p = log_softmax(output);
            let loss = -target.dot(&log_p);
            let mass: T = target.iter().copied().sum();
            let grad = DenseVector::from_fn(output.len(), |k| log_p[k].exp() * mass - target[k]);
            Ok((loss, grad))
        }
    }
}

pub fn log_softmax<T: Scalar>(z: &DenseVector<T>) -> DenseVector<T> {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    z.map(|v| v - lse)
}

/// Per-layer weight gradients of one example, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient<T> {
    /// `∇W_i`, same shape as `W_i`.
    pub weights: Vec<DenseMatrix<T>>,
    pub input: DenseVector<T>,
    pub loss: T,
    pub output: DenseVector<T>,
}

/// BP / LinBP gradients of an MLP for one example.
///
/// `∇W_i = σ(f_{i−1}(x)) δ_iᵀ` with `δ_d = ∂L/∂f_d` and
/// `δ_i = D_i (W_{i+1} δ_{i+1})`, where `D_i` is replaced by the identity when
/// `mode` drops the ReLU derivative of layer `i`.
pub fn mlp_grad_weights<T: Scalar>(
    model: &MlpModel<T>,
    x: &DenseVector<T>,
    target: &DenseVector<T>,
    loss: LossKind,
    mode: GradientMode,
) -> Result<MlpGradient<T>> {
    let (output, trace) = mlp_forward(model, x)?;
    let (loss_value, mut delta) = loss_and_output_grad(&output, target, loss)?;
    let d = model.depth();
    let mut grads = Vec::with_capacity(d);
    for i in (1..=d).rev() {
        grads.push(DenseMatrix::outer(&trace.post[i - 1], &delta));
        let back = model.weights()[i - 1].matvec(&delta)?;
        delta = if i > 1 && mode.keeps_relu_derivative(i - 1) {
            trace.mask(i - 1).apply(&back)
        } else {
            back
        };
    }
    grads.reverse();
    Ok(MlpGradient {
        weights: grads,
        input: delta,
        loss: loss_value,
        output,
    })
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h` per coordinate.
pub fn finite_diff_grad<T: Scalar>(
    f: impl Fn(&DenseVector<T>) -> T,
    x: &DenseVector<T>,
    h: T,
) -> DenseVector<T> {
    let mut probe = x.clone();
    DenseVector::from_fn(x.len(), |i| {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        (up - down) / (h + h)
    })
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn gradient_relative_error<T: Scalar>(
    analytic: &DenseVector<T>,
    numeric: &DenseVector<T>,
) -> T {
    let scale = analytic.l2_norm().max(numeric.l2_norm());
    if scale == T::zero() {
        return T::zero();
    }
    (analytic - numeric).l2_norm() / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, gaussian_vector, RngStream, StreamRng};

    fn v(x: &[f64]) -> DenseVector<f64> {
        DenseVector::from_f64_slice(x)
    }

    fn random_two_layer(
        rng: &mut StreamRng,
        d1: usize,
        d2: usize,
        d3: usize,
    ) -> TwoLayerModel<f64> {
        let w = gaussian_matrix(d2, d1, 0.0, 1.0, rng).unwrap();
        let vv = gaussian_matrix(d3, d2, 0.0, 1.0, rng).unwrap();
        TwoLayerModel::new(w, vv).unwrap()
    }

    #[test]
    fn mode_parsing_and_labels() {
        assert_eq!("bp".parse::<GradientMode>().unwrap(), GradientMode::Bp);
        assert_eq!(
            "linbp".parse::<GradientMode>().unwrap(),
            GradientMode::LinBp
        );
        assert_eq!(
            "linbp-from=3".parse::<GradientMode>().unwrap(),
            GradientMode::LinBpFrom(3)
        );
        assert_eq!(GradientMode::LinBpFrom(3).label(), "linbp-from-3");
        assert_eq!(
            GradientMode::LinBpFrom(3)
                .label()
                .parse::<GradientMode>()
                .unwrap(),
            GradientMode::LinBpFrom(3)
        );
        assert!("sgd".parse::<GradientMode>().is_err());
        assert!("linbp-from=x".parse::<GradientMode>().is_err());
        assert_eq!(
            "linf".parse::<NormalizeMode>().unwrap(),
            NormalizeMode::Linf
        );
        assert!("l3".parse::<NormalizeMode>().is_err());
    }

    #[test]
    fn normalize_examples() {
        let g = normalize_update(&v(&[3., 4.]), NormalizeMode::L2);
        assert!(g.max_abs_diff(&v(&[0.6, 0.8])) < 1e-15);
        assert_eq!(
            normalize_update(&v(&[3., -4.]), NormalizeMode::Linf),
            v(&[0.75, -1.0])
        );
        assert_eq!(
            normalize_update(&v(&[3., -4., 0.]), NormalizeMode::Sign),
            v(&[1., -1., 0.])
        );
        for mode in [
            NormalizeMode::None,
            NormalizeMode::L2,
            NormalizeMode::Linf,
            NormalizeMode::Sign,
        ] {
            assert_eq!(normalize_update(&v(&[0., 0.]), mode), v(&[0., 0.]));
        }
    }

    #[test]
    fn finite_diff_examples() {
        let x = v(&[1., 2.]);
        let g = finite_diff_grad(|z: &DenseVector<f64>| 0.5 * z.dot(z), &x, 1e-6);
        assert!(g.max_abs_diff(&x) < 1e-8);
        let a = v(&[3., -1.5, 0.25]);
        let g = finite_diff_grad(|z: &DenseVector<f64>| a.dot(z), &v(&[0.1, 0.2, 0.3]), 1e-6);
        assert!(g.max_abs_diff(&a) < 1e-9);
    }

    #[test]
    fn attack_loss_examples() {
        let mut rng = RngStream::new(1, 0).rng();
        let m = random_two_layer(&mut rng, 4, 6, 3);
        let x = gaussian_vector(4, 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(attack_loss(&m, &x, &x).unwrap(), 0.0);

        // outputs differing by a unit vector
        let id = DenseMatrix::<f64>::identity(2);
        let m = TwoLayerModel::new(id.clone(), id).unwrap();
        assert_eq!(attack_loss(&m, &v(&[1., 0.]), &v(&[0., 0.])).unwrap(), 0.5);

        let m = random_two_layer(&mut rng, 4, 6, 3);
        let xs = gaussian_vector(4, 0.0, 1.0, &mut rng).unwrap();
        let diff = &m.forward(&x).unwrap() - &m.forward(&xs).unwrap();
        let oracle = 0.5 * diff.l2_norm().powi(2);
        assert!((attack_loss(&m, &x, &xs).unwrap() - oracle).abs() < 1e-12);
        assert!(attack_loss(&m, &v(&[1.]), &xs).is_err());
    }

    #[test]
    fn input_gradients_vanish_at_the_optimum() {
        let mut rng = RngStream::new(2, 0).rng();
        let m = random_two_layer(&mut rng, 5, 7, 2);
        let x = gaussian_vector(5, 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(grad_x_bp(&m, &x, &x).unwrap(), DenseVector::zeros(5));
        assert_eq!(grad_x_linbp(&m, &x, &x).unwrap(), DenseVector::zeros(5));
    }

    #[test]
    fn linear_regime_matches_matrix_product() {
        // positive W and positive inputs make every pre-activation positive
        let mut rng = RngStream::new(3, 0).rng();
        let w: DenseMatrix<f64> = gaussian_matrix(6, 4, 0.0, 1.0, &mut rng).unwrap();
        let w = DenseMatrix::from_fn(6, 4, |i, j| w.get(i, j).abs() + 0.1);
        let vv: DenseMatrix<f64> = gaussian_matrix(3, 6, 0.0, 1.0, &mut rng).unwrap();
        let m = TwoLayerModel::new(w.clone(), vv.clone()).unwrap();
        let x = v(&[0.3, 1.2, 0.7, 2.0]);
        let xs = v(&[1.0, 0.1, 0.5, 0.9]);
        let gram = w
            .transpose()
            .matmul(&vv.transpose().matmul(&vv).unwrap())
            .unwrap()
            .matmul(&w)
            .unwrap();
        let oracle = gram.matvec(&(&x - &xs)).unwrap();
        let bp = grad_x_bp(&m, &x, &xs).unwrap();
        let lin = grad_x_linbp(&m, &x, &xs).unwrap();
        assert!(bp.max_abs_diff(&oracle) < 1e-10);
        assert_eq!(bp, lin);
    }

    #[test]
    fn linbp_input_gradient_matches_matrix_oracle() {
        let mut rng = RngStream::new(4, 0).rng();
        let m = random_two_layer(&mut rng, 5, 8, 3);
        let x = gaussian_vector(5, 0.0, 1.0, &mut rng).unwrap();
        let xs = gaussian_vector(5, 1.0, 2.0, &mut rng).unwrap();
        let dx = relu_mask_matrix(m.w(), &x);
        let ds = relu_mask_matrix(m.w(), &xs);
        let wt = m.w().transpose();
        let vtv = m.v().transpose().matmul(m.v()).unwrap();
        let inner = &dx.matmul(m.w()).unwrap().matvec(&x).unwrap()
            - &ds.matmul(m.w()).unwrap().matvec(&xs).unwrap();
        let lin_oracle = wt.matmul(&vtv).unwrap().matvec(&inner).unwrap();
        let bp_oracle = wt
            .matmul(&dx)
            .unwrap()
            .matmul(&vtv)
            .unwrap()
            .matvec(&inner)
            .unwrap();
        assert!(grad_x_linbp(&m, &x, &xs).unwrap().max_abs_diff(&lin_oracle) < 1e-10);
        assert!(grad_x_bp(&m, &x, &xs).unwrap().max_abs_diff(&bp_oracle) < 1e-10);

        // LinBP − BP = Wᵀ (I − D(W,x)) VᵀV (…)
        let i_minus_d =
            DenseMatrix::from_fn(8, 8, |i, j| if i == j { 1.0 - dx.get(i, i) } else { 0.0 });
        let diff_oracle = wt
            .matmul(&i_minus_d)
            .unwrap()
            .matmul(&vtv)
            .unwrap()
            .matvec(&inner)
            .unwrap();
        let diff = &grad_x_linbp(&m, &x, &xs).unwrap() - &grad_x_bp(&m, &x, &xs).unwrap();
        assert!(diff.max_abs_diff(&diff_oracle) < 1e-10);
    }

    fn relu_mask_matrix(w: &DenseMatrix<f64>, x: &DenseVector<f64>) -> DenseMatrix<f64> {
        let z = w.matvec(x).unwrap();
        DenseMatrix::from_fn(z.len(), z.len(), |i, j| {
            if i == j && z[i] > 0.0 {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn grad_x_bp_matches_finite_differences() {
        let mut rng = RngStream::new(5, 0).rng();
        let m = random_two_layer(&mut rng, 6, 9, 4);
        let x = gaussian_vector(6, 0.0, 1.0, &mut rng).unwrap();
        let xs = gaussian_vector(6, 1.0, 2.0, &mut rng).unwrap();
        let fd = finite_diff_grad(
            |z: &DenseVector<f64>| attack_loss(&m, z, &xs).unwrap(),
            &x,
            1e-6,
        );
        let g = grad_x_bp(&m, &x, &xs).unwrap();
        assert!(gradient_relative_error(&g, &fd) < 1e-5);
    }

    #[test]
    fn train_gradient_examples() {
        let mut rng = RngStream::new(6, 0).rng();
        let x: DenseMatrix<f64> = gaussian_matrix(20, 4, 0.0, 1.0, &mut rng).unwrap();
        let w = gaussian_vector(4, 0.0, 1.0, &mut rng).unwrap();
        for mode in [GradientMode::Bp, GradientMode::LinBp] {
            assert_eq!(
                grad_w_train(&x, &w, &w, mode).unwrap(),
                DenseVector::zeros(4)
            );
        }
        // positive rows and weights: both modes give XᵀX(w − w★)
        let xp = DenseMatrix::from_fn(20, 4, |i, j| x.get(i, j).abs() + 0.05);
        let wp = v(&[0.5, 1.0, 0.2, 0.7]);
        let ws = v(&[1.5, 0.1, 0.9, 0.3]);
        let oracle = xp.t_matmul(&xp).unwrap().matvec(&(&wp - &ws)).unwrap();
        for mode in [GradientMode::Bp, GradientMode::LinBp] {
            assert!(
                grad_w_train(&xp, &wp, &ws, mode)
                    .unwrap()
                    .max_abs_diff(&oracle)
                    < 1e-10
            );
        }
        let ws = gaussian_vector(4, 1.0, 3.0, &mut rng).unwrap();
        let fd = finite_diff_grad(
            |z: &DenseVector<f64>| train_loss(&x, z, &ws).unwrap(),
            &w,
            1e-6,
        );
        let g = grad_w_train(&x, &w, &ws, GradientMode::Bp).unwrap();
        assert!(gradient_relative_error(&g, &fd) < 1e-5);
        assert!(grad_w_train(&x, &v(&[1.0]), &ws, GradientMode::Bp).is_err());
    }

    #[test]
    fn two_layer_modes_follow_the_layer_rule() {
        let mut rng = RngStream::new(7, 0).rng();
        let m = random_two_layer(&mut rng, 5, 8, 3);
        let x = gaussian_vector(5, 0.0, 1.0, &mut rng).unwrap();
        let xs = gaussian_vector(5, 1.0, 2.0, &mut rng).unwrap();
        let bp = grad_x(&m, &x, &xs, GradientMode::Bp).unwrap();
        let lin = grad_x(&m, &x, &xs, GradientMode::LinBp).unwrap();
        assert_eq!(
            grad_x(&m, &x, &xs, GradientMode::LinBpFrom(0)).unwrap(),
            lin
        );
        assert_eq!(grad_x(&m, &x, &xs, GradientMode::LinBpFrom(2)).unwrap(), bp);
    }

    fn random_mlp(rng: &mut StreamRng, dims: &[usize]) -> MlpModel<f64> {
        let ws = dims
            .windows(2)
            .map(|p| gaussian_matrix(p[0], p[1], 0.0, 1.0 / (p[0] as f64).sqrt(), rng).unwrap())
            .collect();
        MlpModel::new(ws, dims.len() - 1).unwrap()
    }

    #[test]
    fn mlp_full_depth_linbp_is_bp() {
        let mut rng = RngStream::new(8, 0).rng();
        let m = random_mlp(&mut rng, &[5, 7, 6, 4]);
        let x = gaussian_vector(5, 0.0, 1.0, &mut rng).unwrap();
        let t = DenseVector::basis(4, 2);
        for loss in [LossKind::SquaredError, LossKind::SoftmaxCrossEntropy] {
            let bp = mlp_grad_weights(&m, &x, &t, loss, GradientMode::Bp).unwrap();
            let from_d = mlp_grad_weights(&m, &x, &t, loss, GradientMode::LinBpFrom(3)).unwrap();
            assert_eq!(bp, from_d);
            let lin = mlp_grad_weights(&m, &x, &t, loss, GradientMode::LinBp).unwrap();
            let from_0 = mlp_grad_weights(&m, &x, &t, loss, GradientMode::LinBpFrom(0)).unwrap();
            assert_eq!(lin, from_0);
            // the last layer never sees a ReLU derivative
            assert_eq!(bp.weights[2], lin.weights[2]);
        }
    }

    #[test]
    fn mlp_linbp_matches_linearized_chain() {
        // LinBP weight gradient = σ(f_{i−1}) (W_{i+1} ⋯ W_d ∂L/∂f_d)ᵀ
        let mut rng = RngStream::new(9, 0).rng();
        let m = random_mlp(&mut rng, &[4, 6, 5, 3]);
        let x = gaussian_vector(4, 0.0, 1.0, &mut rng).unwrap();
        let t = gaussian_vector(3, 0.0, 1.0, &mut rng).unwrap();
        let g = mlp_grad_weights(&m, &x, &t, LossKind::SquaredError, GradientMode::LinBp).unwrap();
        let (out, trace) = m.forward(&x).unwrap();
        let dl = &out - &t;
        let w = m.weights();
        let chain2 = w[2].matvec(&dl).unwrap();
        let chain1 = w[1].matvec(&chain2).unwrap();
        assert!(g.weights[1].max_abs_diff(&DenseMatrix::outer(&trace.post[1], &chain2)) < 1e-12);
        assert!(g.weights[0].max_abs_diff(&DenseMatrix::outer(&trace.post[0], &chain1)) < 1e-12);
        assert!(g.input.max_abs_diff(&w[0].matvec(&chain1).unwrap()) < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let z = v(&[1.0, -0.5, 2.0]);
        let t = DenseVector::basis(3, 0);
        let (loss, g) = loss_and_output_grad(&z, &t, LossKind::SoftmaxCrossEntropy).unwrap();
        let fd = finite_diff_grad(|q: &DenseVector<f64>| -log_softmax(q)[0], &z, 1e-6);
        assert!((loss + log_softmax(&z)[0]).abs() < 1e-15);
        assert!(g.max_abs_diff(&fd) < 1e-8);
        assert!(log_softmax(&v(&[1000.0, 0.0])).is_finite());
    }
}
