//! Per-step records shared by the simulators and the MLP loop.

use crate::grad::GradientMode;
use crate::linalg::DenseVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub step: usize,
    /// l1 distance to the optimum, when one exists.
    pub l1_dist: Option<T>,
    pub loss: T,
    /// Norms of the raw gradient at this step, before normalization.
    pub grad_l2: T,
    pub grad_linf: T,
    pub accuracy: Option<T>,
    pub iterate: Option<DenseVector<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub method: GradientMode,
    pub records: Vec<StepRecord<T>>,
    /// Set when the loss became non-finite or exceeded the divergence threshold.
    pub diverged: bool,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(method: GradientMode) -> Self {
        Trajectory {
            method,
            records: Vec::new(),
            diverged: false,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// l1 distances; missing values read as NaN.
    pub fn l1_series(&self) -> Vec<T> {
        self.records
            .iter()
            .map(|r| r.l1_dist.unwrap_or_else(T::nan))
            .collect()
    }

    pub fn loss_series(&self) -> Vec<T> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn iterates(&self) -> Option<Vec<DenseVector<T>>> {
        self.records.iter().map(|r| r.iterate.clone()).collect()
    }
}

/// Both arms of one paired trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun<T> {
    pub trial: usize,
    /// Seed of the trial's random stream, reported in CSV records.
    pub seed: u64,
    /// Checksum of the draws each arm consumed, one per arm.
    pub checksums: Vec<u64>,
    pub arms: Vec<Trajectory<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult<T> {
    pub methods: Vec<GradientMode>,
    pub trials: Vec<TrialRun<T>>,
}

impl<T: Scalar> SimulationResult<T> {
    fn arm_index(&self, method: GradientMode) -> Option<usize> {
        self.methods.iter().position(|&m| m == method)
    }

    /// Trial-averaged records for `method`, in trial order.
    pub fn mean_trajectory(&self, method: GradientMode) -> Option<Trajectory<T>> {
        let a = self.arm_index(method)?;
        let first = &self.trials.first()?.arms[a];
        let n = T::lit(self.trials.len() as f64);
        let mean = |f: &dyn Fn(&StepRecord<T>) -> T, s: usize| {
            self.trials
                .iter()
                .map(|t| f(&t.arms[a].records[s]))
                .sum::<T>()
                / n
        };
        let records = (0..first.len())
            .map(|s| StepRecord {
                step: first.records[s].step,
                l1_dist: first.records[s]
                    .l1_dist
                    .map(|_| mean(&|r| r.l1_dist.unwrap_or_else(T::nan), s)),
                loss: mean(&|r| r.loss, s),
                grad_l2: mean(&|r| r.grad_l2, s),
                grad_linf: mean(&|r| r.grad_linf, s),
                accuracy: first.records[s]
                    .accuracy
                    .map(|_| mean(&|r| r.accuracy.unwrap_or_else(T::nan), s)),
                iterate: None,
            })
            .collect();
        Some(Trajectory {
            method,
            records,
            diverged: self.trials.iter().any(|t| t.arms[a].diverged),
        })
    }

    /// Mean l1 distance per step for `method`.
    pub fn mean_l1(&self, method: GradientMode) -> Option<Vec<T>> {
        self.mean_trajectory(method).map(|t| t.l1_series())
    }

    /// Pooled ratio of mean gradient norms, `numer` over `denom`, across all trials
    /// and steps in `steps`. Returns `(l2 ratio, l∞ ratio)`.
    pub fn grad_norm_ratio(
        &self,
        numer: GradientMode,
        denom: GradientMode,
        steps: std::ops::Range<usize>,
    ) -> Option<(T, T)> {
        let (a, b) = (self.arm_index(numer)?, self.arm_index(denom)?);
        let mut sums = [T::zero(); 4];
        for t in &self.trials {
            for s in steps.clone() {
                let (ra, rb) = (t.arms[a].records.get(s)?, t.arms[b].records.get(s)?);
                sums[0] = sums[0] + ra.grad_l2;
                sums[1] = sums[1] + rb.grad_l2;
                sums[2] = sums[2] + ra.grad_linf;
                sums[3] = sums[3] + rb.grad_linf;
            }
        }
        Some((sums[0] / sums[1], sums[2] / sums[3]))
    }

    /// Fraction of trials in which `a`'s l1 distance never exceeds `b`'s.
    pub fn per_trial_ordering_rate(&self, a: GradientMode, b: GradientMode) -> Option<f64> {
        let (ia, ib) = (self.arm_index(a)?, self.arm_index(b)?);
        let ok = self
            .trials
            .iter()
            .filter(|t| {
                t.arms[ia]
                    .l1_series()
                    .iter()
                    .zip(t.arms[ib].l1_series())
                    .all(|(&x, y)| x <= y)
            })
            .count();
        Some(ok as f64 / self.trials.len().max(1) as f64)
    }
}

/// Order-sensitive checksum over the bit patterns of the given values.
pub fn draw_checksum<'a, T: Scalar>(parts: impl IntoIterator<Item = &'a [T]>) -> u64 {
    const FNV_PRIME: u64 = 0x100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &v in part {
            for byte in v.as_f64().to_bits().to_le_bytes() {
                h = (h ^ byte as u64).wrapping_mul(FNV_PRIME);
            }
        }
        h = (h ^ 0xff).wrapping_mul(FNV_PRIME);
    }
    h
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average<T: Scalar>(series: &[T], w: usize) -> Vec<T> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = T::zero();
    for i in 0..series.len() {
        acc = acc + series[i];
        if i >= w {
            acc = acc - series[i - w];
        }
        out.push(acc / T::lit((i + 1).min(w) as f64));
    }
    out
}
