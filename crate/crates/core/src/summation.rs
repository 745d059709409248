//! Compensated accumulation and thread-count independent reductions.
//!
//! Work is cut into fixed blocks whose boundaries depend only on the problem size.
//! Each block is summed sequentially with Neumaier compensation and the block totals
//! are combined in a fixed pairwise tree, so the result is the same for any number of
//! worker threads.

use num_complex::Complex64;
use rayon::prelude::*;
use std::ops::Range;

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated complex accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct ComplexSum {
    re: NeumaierSum,
    im: NeumaierSum,
}

impl ComplexSum {
    #[inline]
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<NeumaierSum>().value()
}

/// Items per reduction block.
pub const BLOCK: usize = 256;

fn blocks(len: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(BLOCK)).map(|b| b * BLOCK..((b + 1) * BLOCK).min(len)).collect()
}

/// Fixed-shape pairwise combination of partial sums.
pub fn tree_sum(parts: &[f64]) -> f64 {
    match parts.len() {
        0 => 0.0,
        1 => parts[0],
        n => {
            let mid = n.div_ceil(2);
            tree_sum(&parts[..mid]) + tree_sum(&parts[mid..])
        }
    }
}

/// `Σ_{i < len} term(i)`, deterministic regardless of the rayon pool size.
pub fn det_sum<F>(len: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let parts: Vec<f64> = blocks(len).into_par_iter().map(|r| r.map(&term).collect::<NeumaierSum>().value()).collect();
    tree_sum(&parts)
}

/// Evaluate `f` at every index in parallel; the output order is the index order.
pub fn par_map<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).into_par_iter().map(f).collect()
}
