//! Three-dimensional FFTs on cubic boxes and aperiodic lattice convolution.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::lattice::KernelTable;

/// In-place 3-D transform of an `m^3` row-major array (unnormalized).
pub struct Fft3 {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(m: usize, direction: FftDirection) -> Self {
        let fft = FftPlanner::new().plan_fft(m, direction);
        Self { m, fft }
    }

    pub fn process(&self, data: &mut [Complex64]) {
        let m = self.m;
        assert_eq!(data.len(), m * m * m);
        // last axis: contiguous lines
        data.par_chunks_mut(m * m).for_each(|plane| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
            self.fft.process_with_scratch(plane, &mut scratch);
        });
        // middle axis: strided lines inside each plane
        data.par_chunks_mut(m * m).for_each(|plane| {
            let mut line = vec![Complex64::new(0.0, 0.0); m];
            let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
            for k in 0..m {
                for j in 0..m {
                    line[j] = plane[j * m + k];
                }
                self.fft.process_with_scratch(&mut line, &mut scratch);
                for j in 0..m {
                    plane[j * m + k] = line[j];
                }
            }
        });
        // first axis: stride m^2
        let lines: Vec<Vec<Complex64>> = (0..m * m)
            .into_par_iter()
            .map(|jk| {
                let mut line: Vec<Complex64> = (0..m).map(|i| data[i * m * m + jk]).collect();
                let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
                self.fft.process_with_scratch(&mut line, &mut scratch);
                line
            })
            .collect();
        for (jk, line) in lines.into_iter().enumerate() {
            for (i, v) in line.into_iter().enumerate() {
                data[i * m * m + jk] = v;
            }
        }
    }
}

/// Signed FFT frequency index for position `k` of an `m`-point transform.
pub fn signed_frequency(k: usize, m: usize) -> f64 {
    if k <= m / 2 {
        k as f64
    } else {
        k as f64 - m as f64
    }
}

/// `(K * u)(x) = Σ_{y in box} K(x - y) u(y)` for an even lattice kernel, through a
/// zero-padded `(2n)^3` transform so that no wrap-around occurs.
pub struct LatticeConvolver {
    n: usize,
    forward: Fft3,
    inverse: Fft3,
    kernel_hat: Vec<Complex64>,
}

impl LatticeConvolver {
    pub fn new(table: &KernelTable) -> Self {
        let n = table.n;
        let m = 2 * n;
        let forward = Fft3::new(m, FftDirection::Forward);
        let inverse = Fft3::new(m, FftDirection::Inverse);
        let mut kernel_hat = vec![Complex64::new(0.0, 0.0); m * m * m];
        let wrap = |e: usize| if e < n { e } else { m - e };
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let (da, db, dc) = (wrap(a), wrap(b), wrap(c));
                    if da < n && db < n && dc < n {
                        kernel_hat[(a * m + b) * m + c] = Complex64::new(table.at(da, db, dc), 0.0);
                    }
                }
            }
        }
        forward.process(&mut kernel_hat);
        let norm = 1.0 / (m * m * m) as f64;
        kernel_hat.iter_mut().for_each(|v| *v *= norm);
        Self { n, forward, inverse, kernel_hat }
    }

    pub fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let m = 2 * n;
        assert_eq!(u.len(), n * n * n);
        let mut buf = vec![Complex64::new(0.0, 0.0); m * m * m];
        for i in 0..n {
            for j in 0..n {
                let src = (i * n + j) * n;
                let dst = (i * m + j) * m;
                buf[dst..dst + n].copy_from_slice(&u[src..src + n]);
            }
        }
        self.forward.process(&mut buf);
        buf.par_iter_mut().zip(self.kernel_hat.par_iter()).for_each(|(b, k)| *b *= k);
        self.inverse.process(&mut buf);
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                let src = (i * m + j) * m;
                out.extend_from_slice(&buf[src..src + n]);
            }
        }
        out
    }

    pub fn apply_real(&self, u: &[f64]) -> Vec<f64> {
        let z: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.apply(&z).into_iter().map(|v| v.re).collect()
    }
}
