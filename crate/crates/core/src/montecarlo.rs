//! Sharded Monte Carlo means with a deterministic reduction order.
//!
//! Draws are split across a fixed number of shards, each with its own
//! [`RngStream`], so the estimate depends only on `(seed, draws)` and not on the
//! thread schedule.

use rayon::prelude::*;

use crate::closedform::Lemma2Params;
use crate::error::Result;
use crate::grad::{grad_w_train, grad_x, GradientMode};
use crate::linalg::{
    gaussian_matrix, gaussian_vector, DenseMatrix, DenseVector, RngStream, StreamRng,
};
use crate::model::{relu_vec, ReluMask, TwoLayerModel};
use crate::scalar::Scalar;

const SHARDS: u64 = 16;

/// Mean of `sample` over `draws` evaluations.
pub fn mc_mean<T, F>(draws: usize, seed: u64, len: usize, sample: F) -> Result<DenseVector<T>>
where
    T: Scalar,
    F: Fn(&mut StreamRng) -> Result<DenseVector<T>> + Sync,
{
    let shards = SHARDS.min(draws.max(1) as u64);
    let partials: Vec<Result<DenseVector<T>>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let count =
                draws / shards as usize + usize::from((s as usize) < draws % shards as usize);
            let mut rng = RngStream::new(seed, s).rng();
            let mut acc = DenseVector::zeros(len);
            for _ in 0..count {
                acc.axpy(T::one(), &sample(&mut rng)?);
            }
            Ok(acc)
        })
        .collect();
    let mut total = DenseVector::zeros(len);
    for p in partials {
        total.axpy(T::one(), &p?);
    }
    Ok(total.scale(T::one() / T::lit(draws.max(1) as f64)))
}

/// `Wᵀ D(W,e) VᵀV D(W,x) W x` for one network.
pub fn masked_gram_product<T: Scalar>(
    model: &TwoLayerModel<T>,
    e: &DenseVector<T>,
    x: &DenseVector<T>,
) -> Result<DenseVector<T>> {
    let wx = model.w().matvec(x)?;
    let we = model.w().matvec(e)?;
    let h = relu_vec(&wx);
    let back = model.v().matvec_t(&model.v().matvec(&h)?)?;
    model
        .w()
        .matvec_t(&ReluMask::from_preactivation(&we).apply(&back))
}

fn sample_two_layer<T: Scalar>(
    rng: &mut StreamRng,
    d1: usize,
    d2: usize,
    d3: usize,
) -> Result<TwoLayerModel<T>> {
    let w = gaussian_matrix(d2, d1, T::zero(), T::one(), rng)?;
    let v = gaussian_matrix(d3, d2, T::zero(), T::one(), rng)?;
    TwoLayerModel::new(w, v)
}

/// Mean of [`masked_gram_product`] over standard Gaussian `W (d2×d1)`, `V (d3×d2)`.
pub fn mc_lemma1<T: Scalar>(
    e: &DenseVector<T>,
    x: &DenseVector<T>,
    d2: usize,
    d3: usize,
    draws: usize,
    seed: u64,
) -> Result<DenseVector<T>> {
    let d1 = x.len();
    mc_mean(draws, seed, d1, |rng| {
        masked_gram_product(&sample_two_layer(rng, d1, d2, d3)?, e, x)
    })
}

/// Mean attack input gradient over standard Gaussian networks.
pub fn mc_grad_x<T: Scalar>(
    x: &DenseVector<T>,
    x_star: &DenseVector<T>,
    d2: usize,
    d3: usize,
    mode: GradientMode,
    draws: usize,
    seed: u64,
) -> Result<DenseVector<T>> {
    let d1 = x.len();
    mc_mean(draws, seed, d1, |rng| {
        grad_x(&sample_two_layer(rng, d1, d2, d3)?, x, x_star, mode)
    })
}

/// Mean training gradient over standard Gaussian `N × d` sample matrices.
pub fn mc_grad_w<T: Scalar>(
    w: &DenseVector<T>,
    w_star: &DenseVector<T>,
    n: usize,
    mode: GradientMode,
    draws: usize,
    seed: u64,
) -> Result<DenseVector<T>> {
    let d = w.len();
    mc_mean(draws, seed, d, |rng| {
        let x: DenseMatrix<T> = gaussian_matrix(n, d, T::zero(), T::one(), rng)?;
        grad_w_train(&x, w, w_star, mode)
    })
}

/// Mean of `α` over paired draws.
pub fn mc_lemma2<T: Scalar>(p: &Lemma2Params<T>, draws: usize, seed: u64) -> Result<T> {
    p.validate()?;
    let m = mc_mean(draws, seed, 1, |rng| {
        let a = gaussian_vector(1, p.mu1, p.sigma1, rng)?[0];
        let b = gaussian_vector(1, p.mu2, p.sigma2, rng)?[0];
        Ok(DenseVector::new(vec![p.alpha(a, b)]))
    })?;
    Ok(m[0])
}
