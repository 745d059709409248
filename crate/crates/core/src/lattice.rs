//! Riesz-kernel tables on the integer lattice and the Epstein zeta function of `Z^3`.

use statrs::function::gamma::{gamma, gamma_ur};
use std::f64::consts::PI;

use crate::grid::Grid;

/// Upper incomplete gamma `Γ(a, x)` for `a ∈ (-1, 0) ∪ (0, ∞)`, `x > 0`.
fn upper_gamma(a: f64, x: f64) -> f64 {
    if a > 0.0 {
        gamma_ur(a, x) * gamma(a)
    } else {
        (upper_gamma(a + 1.0, x) - x.powf(a) * (-x).exp()) / a
    }
}

/// Analytically continued Epstein zeta `Z(a) = Σ'_{n ∈ Z^3} |n|^{-a}` for `a ∈ (0, 5) \ {3}`.
///
/// Uses the theta-function splitting at `t = 1`; the lattice sums converge like
/// `exp(-π |n|^2)`, so shells up to `|n_i| <= 4` are already exhaustive in double precision.
pub fn epstein_zeta(a: f64) -> f64 {
    assert!(a > 0.0 && a < 5.0 && a != 3.0, "Epstein zeta requested at a = {a}");
    const M: i64 = 4;
    let mut shells = vec![0u32; (3 * M * M + 1) as usize];
    for i in -M..=M {
        for j in -M..=M {
            for k in -M..=M {
                shells[(i * i + j * j + k * k) as usize] += 1;
            }
        }
    }
    let mut sum = 0.0;
    for (r2, &mult) in shells.iter().enumerate().skip(1).rev() {
        if mult == 0 {
            continue;
        }
        let x = PI * r2 as f64;
        let direct = upper_gamma(0.5 * a, x) * x.powf(-0.5 * a);
        let dual = upper_gamma(0.5 * (3.0 - a), x) * x.powf(-0.5 * (3.0 - a));
        sum += mult as f64 * (direct + dual);
    }
    let lambda = sum + 2.0 / (a - 3.0) - 2.0 / a;
    lambda * PI.powf(0.5 * a) / gamma(0.5 * a)
}

/// Partial lattice sum `Σ_{0 < |n| <= r} |n|^{-a}`.
pub fn lattice_ball_sum(a: f64, r: f64) -> f64 {
    let m = r.floor() as i64;
    let mut acc = 0.0;
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                let r2 = (i * i + j * j + k * k) as f64;
                if r2 > 0.0 && r2 <= r * r * (1.0 + 1e-12) {
                    acc += r2.powf(-0.5 * a);
                }
            }
        }
    }
    acc
}

/// Kernel values indexed by absolute lattice offset `(|di|, |dj|, |dk|)`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub n: usize,
    pub values: Vec<f64>,
}

impl KernelTable {
    /// `K(d) = (h|d|)^{-exponent}` for offsets whose length passes `keep`, zero otherwise.
    /// The zero offset is always zero.
    pub fn riesz(grid: &Grid, exponent: f64, keep: impl Fn(f64) -> bool) -> Self {
        let n = grid.n;
        let mut values = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i + j + k == 0 {
                        continue;
                    }
                    let r = grid.h * ((i * i + j * j + k * k) as f64).sqrt();
                    if keep(r) {
                        values[(i * n + j) * n + k] = r.powf(-exponent);
                    }
                }
            }
        }
        Self { n, values }
    }

    #[inline]
    pub fn at(&self, di: usize, dj: usize, dk: usize) -> f64 {
        self.values[(di * self.n + dj) * self.n + dk]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `S(x) = Σ_{y in box} K(x - y)` for every node, via a summed-area table of the
    /// signed offset table.
    pub fn in_box_sums(&self, grid: &Grid) -> Vec<f64> {
        let n = self.n;
        let m = 2 * n - 1;
        // prefix[(a+1, b+1, c+1)] = Σ over signed offsets with index <= (a, b, c)
        let p = m + 1;
        let mut prefix = vec![0.0; p * p * p];
        let at = |a: usize, b: usize, c: usize| (a * p + b) * p + c;
        for a in 0..m {
            for b in 0..m {
                let mut row = 0.0;
                for c in 0..m {
                    let d = |e: usize| (e as isize - (n as isize - 1)).unsigned_abs();
                    row += self.at(d(a), d(b), d(c));
                    prefix[at(a + 1, b + 1, c + 1)] = row + prefix[at(a + 1, b, c + 1)];
                }
            }
            for b in 1..p {
                for c in 1..p {
                    prefix[at(a + 1, b, c)] += prefix[at(a, b, c)];
                }
            }
        }
        let box_sum = |lo: [usize; 3], hi: [usize; 3]| {
            // inclusive-exclusive over [lo, hi) in prefix coordinates
            let mut s = 0.0;
            for corner in 0..8 {
                let pick = |bit: usize, axis: usize| if corner & bit != 0 { hi[axis] } else { lo[axis] };
                let v = prefix[at(pick(4, 0), pick(2, 1), pick(1, 2))];
                let sign = if (corner as u32).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                s -= sign * v;
            }
            s
        };
        (0..grid.len())
            .map(|idx| {
                let ijk = grid.unravel(idx);
                // offsets d = y - x range over [-i, n-1-i]; shifted index e = d + n - 1
                let lo = [n - 1 - ijk[0], n - 1 - ijk[1], n - 1 - ijk[2]];
                let hi = [2 * n - 1 - ijk[0], 2 * n - 1 - ijk[1], 2 * n - 1 - ijk[2]];
                box_sum(lo, hi)
            })
            .collect()
    }
}

/// Integer offsets within a ball of radius `r` cells.
pub fn ball_offsets(r_cells: f64) -> Vec<[i64; 3]> {
    let m = r_cells.floor() as i64;
    let mut out = Vec::new();
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                if ((i * i + j * j + k * k) as f64) <= r_cells * r_cells * (1.0 + 1e-12) {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}
