//! Mini-batch training of a ReLU MLP classifier with BP or LinBP weight
//! gradients and mean softmax cross-entropy.
//!
//! Batches are processed as matrices: the per-example rule of
//! [`crate::grad::mlp_grad_weights`] summed over rows, then divided by the batch
//! size.

use crate::data::{batch_iter, LabeledDataset};
use crate::error::{Error, Result};
use crate::grad::{log_softmax, GradientMode};
use crate::linalg::{gaussian_matrix, DenseMatrix, DenseVector, RngStream};
use crate::model::MlpModel;
use crate::trajectory::{StepRecord, Trajectory};

/// Loss above which a run is flagged as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpTrainConfig {
    /// Layer widths from input to output, e.g. `[784, 400, 200, 100, 10]`.
    pub widths: Vec<usize>,
    pub eta: f64,
    pub batch: usize,
    pub epochs: usize,
    pub mode: GradientMode,
    /// Initialization uses stream `(seed, 0)`, batch order stream `(seed, 1)`.
    pub seed: u64,
}

impl MlpTrainConfig {
    pub fn reference(mode: GradientMode) -> Self {
        MlpTrainConfig {
            widths: vec![784, 400, 200, 100, 10],
            eta: 0.001,
            batch: 64,
            epochs: 2,
            mode,
            seed: 0,
        }
    }

    fn linbp_from(&self) -> Result<usize> {
        let depth = self.widths.len().saturating_sub(1);
        match self.mode {
            GradientMode::Bp => Ok(depth),
            GradientMode::LinBp => Ok(0),
            GradientMode::LinBpFrom(m) if m <= depth => Ok(m),
            GradientMode::LinBpFrom(m) => Err(Error::Config(format!(
                "linbp-from={m} exceeds network depth {depth}"
            ))),
        }
    }
}

/// Gaussian weights with standard deviation `1/√fan_in`.
pub fn init_mlp(widths: &[usize], linbp_from: usize, seed: u64) -> Result<MlpModel<f64>> {
    if widths.len() < 2 {
        return Err(Error::Config(
            "an MLP needs at least input and output widths".into(),
        ));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    let weights = widths
        .windows(2)
        .map(|p| gaussian_matrix(p[0], p[1], 0.0, 1.0 / (p[0] as f64).sqrt(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    MlpModel::new(weights, linbp_from)
}

/// Mean loss, correct-prediction count and per-layer gradients of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub correct: usize,
    pub grads: Vec<DenseMatrix<f64>>,
}

impl BatchGradient {
    /// l2 and l∞ norms of all layer gradients taken as one vector.
    pub fn norms(&self) -> (f64, f64) {
        let all = self.grads.iter().flat_map(|g| g.as_slice().iter().copied());
        let (sq, max) = all.fold((0.0, 0.0f64), |(s, m), v| (s + v * v, m.max(v.abs())));
        (sq.sqrt(), max)
    }
}

fn relu_in_place(m: &mut DenseMatrix<f64>) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}

type Layers = Vec<DenseMatrix<f64>>;

/// Row-wise forward pass. Returns the pre-activations of every layer.
fn forward_batch(model: &MlpModel<f64>, x: &DenseMatrix<f64>) -> Result<(Layers, Layers)> {
    let d = model.depth();
    let mut posts = vec![x.clone()];
    let mut pres = Vec::with_capacity(d);
    for (i, w) in model.weights().iter().enumerate() {
        let f = posts[i].matmul(w)?;
        if i + 1 < d {
            let mut h = f.clone();
            relu_in_place(&mut h);
            posts.push(h);
        }
        pres.push(f);
    }
    Ok((pres, posts))
}

/// Per-row log-softmax losses and argmax hits against `labels`.
fn score(logits: &DenseMatrix<f64>, labels: &[usize]) -> (Vec<DenseVector<f64>>, f64, usize) {
    let mut total = 0.0;
    let mut correct = 0;
    let logp: Vec<_> = (0..logits.rows())
        .map(|r| {
            let lp = log_softmax(&logits.row_vector(r));
            total -= lp[labels[r]];
            let best = (0..lp.len()).fold(0, |b, k| if lp[k] > lp[b] { k } else { b });
            correct += usize::from(best == labels[r]);
            lp
        })
        .collect();
    (logp, total, correct)
}

/// Mean softmax cross-entropy over the rows of `x` and its weight gradients
/// under `mode`.
pub fn batch_loss_and_grads(
    model: &MlpModel<f64>,
    x: &DenseMatrix<f64>,
    labels: &[usize],
    mode: GradientMode,
) -> Result<BatchGradient> {
    if x.rows() != labels.len() {
        return Err(Error::dims("batch_loss_and_grads", x.rows(), labels.len()));
    }
    let b = x.rows().max(1) as f64;
    let (pres, posts) = forward_batch(model, x)?;
    let d = model.depth();
    let (logp, total, correct) = score(&pres[d - 1], labels);
    let classes = model.output_dim();
    let mut delta = DenseMatrix::from_fn(x.rows(), classes, |r, k| {
        (logp[r][k].exp() - f64::from(u8::from(k == labels[r]))) / b
    });
    let mut grads = Vec::with_capacity(d);
    for i in (1..=d).rev() {
        grads.push(posts[i - 1].t_matmul(&delta)?);
        if i > 1 {
            let mut back = delta.matmul_t(&model.weights()[i - 1])?;
            if mode.keeps_relu_derivative(i - 1) {
                let pre = pres[i - 2].as_slice();
                back.as_mut_slice().iter_mut().zip(pre).for_each(|(v, &p)| {
                    if p <= 0.0 {
                        *v = 0.0
                    }
                });
            }
            delta = back;
        }
    }
    grads.reverse();
    Ok(BatchGradient {
        loss: total / b,
        correct,
        grads,
    })
}

/// Mean cross-entropy and accuracy over the whole dataset, in chunks.
pub fn evaluate(model: &MlpModel<f64>, ds: &LabeledDataset) -> Result<(f64, f64)> {
    const CHUNK: usize = 1000;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let (mut total, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(CHUNK) {
        let (x, y) = ds.gather(chunk);
        let (pres, _) = forward_batch(model, &x)?;
        let (_, t, c) = score(&pres[model.depth() - 1], &y);
        total += t;
        correct += c;
    }
    let n = ds.len().max(1) as f64;
    Ok((total / n, correct as f64 / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpRun {
    /// One record per epoch boundary, step 0 being the initialization. Loss and
    /// accuracy are over the full dataset. Gradient norms are the mean batch
    /// gradient norms of the epoch; at step 0, those of the first `batch` samples.
    pub trajectory: Trajectory<f64>,
    pub model: MlpModel<f64>,
}

fn is_divergent(loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_LOSS
}

/// Mini-batch gradient descent on `ds`. Two calls differing only in `mode`
/// share initialization and batch order.
pub fn mlp_train_loop(ds: &LabeledDataset, config: &MlpTrainConfig) -> Result<MlpRun> {
    let mut model = init_mlp(&config.widths, config.linbp_from()?, config.seed)?;
    if model.input_dim() != ds.input_dim() || model.output_dim() < ds.classes() {
        return Err(Error::dims(
            "mlp_train_loop",
            model.input_dim(),
            ds.input_dim(),
        ));
    }
    if config.batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mode = config.mode;
    let mut traj = Trajectory::new(mode);
    let head: Vec<usize> = (0..config.batch.min(ds.len())).collect();
    let (x, y) = ds.gather(&head);
    let (g_l2, g_linf) = batch_loss_and_grads(&model, &x, &y, mode)?.norms();
    let (loss, acc) = evaluate(&model, ds)?;
    traj.records.push(epoch_record(0, loss, acc, g_l2, g_linf));
    traj.diverged = is_divergent(loss);

    let mut order_rng = RngStream::new(config.seed, 1).rng();
    for epoch in 1..=config.epochs {
        if traj.diverged {
            break;
        }
        let batches = batch_iter(ds.len(), config.batch, &mut order_rng)?;
        let (mut sum_l2, mut sum_linf) = (0.0, 0.0);
        for idx in &batches {
            let (x, y) = ds.gather(idx);
            let bg = batch_loss_and_grads(&model, &x, &y, mode)?;
            let (l2, linf) = bg.norms();
            sum_l2 += l2;
            sum_linf += linf;
            if is_divergent(bg.loss) {
                traj.diverged = true;
            }
            for (w, g) in model.weights_mut().iter_mut().zip(&bg.grads) {
                w.axpy(-config.eta, g);
            }
        }
        let nb = batches.len().max(1) as f64;
        let (loss, acc) = evaluate(&model, ds)?;
        traj.diverged |= is_divergent(loss);
        traj.records
            .push(epoch_record(epoch, loss, acc, sum_l2 / nb, sum_linf / nb));
    }
    Ok(MlpRun {
        trajectory: traj,
        model,
    })
}

fn epoch_record(step: usize, loss: f64, acc: f64, l2: f64, linf: f64) -> StepRecord<f64> {
    StepRecord {
        step,
        l1_dist: None,
        loss,
        grad_l2: l2,
        grad_linf: linf,
        accuracy: Some(acc),
        iterate: None,
    }
}
