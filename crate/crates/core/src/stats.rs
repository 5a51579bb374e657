//! Streaming means with batch-means standard errors.
//!
//! Trace-based samples are autocorrelated, so the naive i.i.d. standard
//! error is too small. Splitting the run into equal contiguous batches and
//! using the spread of batch means gives an honest error bar once batches
//! are much longer than the correlation time.

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct BatchMeans<T> {
    dim: usize,
    batch_len: u64,
    in_batch: u64,
    current: Vec<T>,
    batch_means: Vec<Vec<T>>,
}

/// Mean and standard error per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T> {
    pub mean: Vec<T>,
    pub std_err: Vec<T>,
    pub n_batches: usize,
}

impl<T: Scalar> Estimate<T> {
    /// Largest `|mean − target| / se` over components. Components with zero
    /// standard error count as zero when they match exactly and infinity
    /// otherwise.
    pub fn max_z_score(&self, target: &[T]) -> T {
        self.mean
            .iter()
            .zip(&self.std_err)
            .zip(target)
            .map(|((&m, &se), &t)| {
                let d = (m - t).abs();
                if se > T::zero() {
                    d / se
                } else if d == T::zero() {
                    T::zero()
                } else {
                    T::infinity()
                }
            })
            .fold(T::zero(), T::max)
    }

    /// Whether every component lies within `k` standard errors of `target`.
    pub fn within(&self, target: &[T], k: T) -> bool {
        self.max_z_score(target) <= k
    }
}

impl<T: Scalar> BatchMeans<T> {
    /// Accumulator expecting `total` samples split into `n_batches` batches.
    pub fn new(dim: usize, total: u64, n_batches: usize) -> Self {
        assert!(n_batches >= 2, "need at least two batches");
        let batch_len = (total / n_batches as u64).max(1);
        Self {
            dim,
            batch_len,
            in_batch: 0,
            current: vec![T::zero(); dim],
            batch_means: Vec::with_capacity(n_batches),
        }
    }

    pub fn push(&mut self, x: &[T]) {
        debug_assert_eq!(x.len(), self.dim);
        for (c, &v) in self.current.iter_mut().zip(x) {
            *c += v;
        }
        self.advance();
    }

    /// Push a sample that is zero except for the listed `(index, value)` pairs.
    pub fn push_sparse(&mut self, entries: impl IntoIterator<Item = (usize, T)>) {
        for (i, v) in entries {
            self.current[i] += v;
        }
        self.advance();
    }

    fn advance(&mut self) {
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            let n = T::of(self.batch_len as f64);
            self.batch_means.push(self.current.iter().map(|&s| s / n).collect());
            self.current.iter_mut().for_each(|c| *c = T::zero());
            self.in_batch = 0;
        }
    }

    /// Estimate over completed batches; a trailing partial batch is dropped.
    pub fn finish(&self) -> Estimate<T> {
        let b = self.batch_means.len();
        let bf = T::of(b as f64);
        let mut mean = vec![T::zero(); self.dim];
        for bm in &self.batch_means {
            for (m, &x) in mean.iter_mut().zip(bm) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= bf);
        let std_err = if b < 2 {
            vec![T::infinity(); self.dim]
        } else {
            (0..self.dim)
                .map(|i| {
                    let ss: T = self.batch_means.iter().map(|bm| (bm[i] - mean[i]).powi(2)).sum();
                    (ss / T::of((b - 1) as f64) / bf).sqrt()
                })
                .collect()
        };
        Estimate {
            mean,
            std_err,
            n_batches: b,
        }
    }
}
