//! Forward passes for the two-layer attack network `V σ(W x)`, the one-layer
//! training network `σ(X w)` and general dense ReLU MLPs, plus ReLU masks.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::scalar::Scalar;

#[inline]
pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub fn relu_vec<T: Scalar>(v: &DenseVector<T>) -> DenseVector<T> {
    v.map(relu)
}

/// Diagonal of the 0/1 matrix `diag(z > 0)`. Exactly zero counts as inactive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReluMask(Vec<bool>);

impl ReluMask {
    pub fn from_preactivation<T: Scalar>(z: &DenseVector<T>) -> Self {
        ReluMask(z.iter().map(|&v| v > T::zero()).collect())
    }

    pub fn all_active(len: usize) -> Self {
        ReluMask(vec![true; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// `D v`
    pub fn apply<T: Scalar>(&self, v: &DenseVector<T>) -> DenseVector<T> {
        assert_eq!(self.len(), v.len(), "mask length mismatch");
        DenseVector::from_fn(v.len(), |i| if self.0[i] { v[i] } else { T::zero() })
    }

    /// The diagonal as a 0/1 vector.
    pub fn to_vector<T: Scalar>(&self) -> DenseVector<T> {
        DenseVector::from_fn(self.len(), |i| if self.0[i] { T::one() } else { T::zero() })
    }
}

/// `D(W, x) = diag(W x > 0)`.
pub fn relu_mask<T: Scalar>(w: &DenseMatrix<T>, x: &DenseVector<T>) -> Result<ReluMask> {
    Ok(ReluMask::from_preactivation(&w.matvec(x)?))
}

/// `g(W, V, x) = V σ(W x)` with `W: d2×d1`, `V: d3×d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerModel<T> {
    w: DenseMatrix<T>,
    v: DenseMatrix<T>,
}

impl<T: Scalar> TwoLayerModel<T> {
    pub fn new(w: DenseMatrix<T>, v: DenseMatrix<T>) -> Result<Self> {
        if v.cols() != w.rows() {
            return Err(Error::dims("TwoLayerModel::new", w.rows(), v.cols()));
        }
        Ok(TwoLayerModel { w, v })
    }

    pub fn w(&self) -> &DenseMatrix<T> {
        &self.w
    }

    pub fn v(&self) -> &DenseMatrix<T> {
        &self.v
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn forward(&self, x: &DenseVector<T>) -> Result<DenseVector<T>> {
        two_layer_forward(self, x)
    }
}

pub fn two_layer_forward<T: Scalar>(
    model: &TwoLayerModel<T>,
    x: &DenseVector<T>,
) -> Result<DenseVector<T>> {
    let hidden = relu_vec(&model.w.matvec(x)?);
    model.v.matvec(&hidden)
}

/// `σ(X w)`, one output per row of `X`.
pub fn one_layer_forward<T: Scalar>(
    x: &DenseMatrix<T>,
    w: &DenseVector<T>,
) -> Result<DenseVector<T>> {
    Ok(relu_vec(&x.matvec(w)?))
}

/// Dense ReLU network `W_dᵀ σ(W_{d−1}ᵀ ⋯ σ(W_1ᵀ x))`.
///
/// Layer `i` stores `W_i` with shape `(fan_in, fan_out)` and applies its
/// transpose, so `W_i.cols() == W_{i+1}.rows()`. The last layer is linear.
/// `linbp_from` is the layer index `m` from which LinBP drops ReLU derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    weights: Vec<DenseMatrix<T>>,
    linbp_from: usize,
}

impl<T: Scalar> MlpModel<T> {
    pub fn new(weights: Vec<DenseMatrix<T>>, linbp_from: usize) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for pair in weights.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::dims("MlpModel::new", pair[0].cols(), pair[1].rows()));
            }
        }
        if linbp_from > weights.len() {
            return Err(Error::Config(format!(
                "linbp_from = {linbp_from} exceeds depth {}",
                weights.len()
            )));
        }
        Ok(MlpModel {
            weights,
            linbp_from,
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn linbp_from(&self) -> usize {
        self.linbp_from
    }

    pub fn weights(&self) -> &[DenseMatrix<T>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [DenseMatrix<T>] {
        &mut self.weights
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.depth() - 1].cols()
    }

    /// Layer widths `[d_0, d_1, …, d_d]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.weights.iter().map(|w| w.cols()))
            .collect()
    }

    pub fn forward(&self, x: &DenseVector<T>) -> Result<(DenseVector<T>, ActivationTrace<T>)> {
        mlp_forward(self, x)
    }
}

/// Per-layer values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<T> {
    /// `f_1(x) … f_d(x)`
    pub pre: Vec<DenseVector<T>>,
    /// `σ(f_0(x)) = x, σ(f_1(x)) … σ(f_{d−1}(x))`
    pub post: Vec<DenseVector<T>>,
}

impl<T: Scalar> ActivationTrace<T> {
    pub fn output(&self) -> &DenseVector<T> {
        self.pre.last().expect("trace of an empty network")
    }

    /// Mask of hidden layer `i` (1-based, `i < d`).
    pub fn mask(&self, i: usize) -> ReluMask {
        ReluMask::from_preactivation(&self.pre[i - 1])
    }
}

pub fn mlp_forward<T: Scalar>(
    model: &MlpModel<T>,
    x: &DenseVector<T>,
) -> Result<(DenseVector<T>, ActivationTrace<T>)> {
    if x.len() != model.input_dim() {
        return Err(Error::dims("mlp_forward", model.input_dim(), x.len()));
    }
    let d = model.depth();
    let mut pre = Vec::with_capacity(d);
    let mut post = Vec::with_capacity(d);
    post.push(x.clone());
    for (i, w) in model.weights.iter().enumerate() {
        let f = w.matvec_t(&post[i])?;
        if i + 1 < d {
            post.push(relu_vec(&f));
        }
        pre.push(f);
    }
    let out = pre[d - 1].clone();
    Ok((out, ActivationTrace { pre, post }))
}

/// Serializes a matrix as `rows cols` followed by one line per row.
pub fn write_weight_text<T: Scalar>(m: &DenseMatrix<T>) -> String {
    let mut s = format!("{} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let line: Vec<String> = m
            .row(i)
            .iter()
            .map(|v| format!("{:e}", v.as_f64()))
            .collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

/// Parses the `rows cols` + row-major decimals weight format.
pub fn parse_weight_text<T: Scalar>(text: &str) -> Result<DenseMatrix<T>> {
    let mut tokens = text.split_whitespace();
    let mut dim = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Format(format!("missing {what} in weight header")))?
            .parse()
            .map_err(|e| Error::Format(format!("bad {what} in weight header: {e}")))
    };
    let rows = dim("rows")?;
    let cols = dim("cols")?;
    let values = tokens
        .map(|t| {
            t.parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Format(format!("bad weight entry {t:?}: {e}")))
        })
        .collect::<Result<Vec<T>>>()?;
    if values.len() != rows * cols {
        return Err(Error::Format(format!(
            "weight file declares {rows}x{cols} but holds {} entries",
            values.len()
        )));
    }
    DenseMatrix::new(rows, cols, values)
}
