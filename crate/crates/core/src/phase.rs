//! Midpoint-rule magnetic phase and its separable factorisation for affine potentials.
//!
//! For `A(x) = M x + b` the angle `θ(x, y) = (x - y)·A((x + y)/2)` splits as
//! `φ(x) - φ(y) + (Mₐᵀ x)·y` with `φ(x) = ½ xᵀ Mₛ x + b·x` and `Mₛ`, `Mₐ` the symmetric
//! and antisymmetric parts of `M`. The pair engines exploit this to replace one
//! sine/cosine per pair by table lookups.

use num_complex::Complex64;

use crate::error::Result;
use crate::grid::Grid;
use crate::potential::{dot, mat_vec, MagneticPotential, Mat3};

/// `θ(x, y) = (x - y)·A((x + y)/2)`, evaluated literally.
pub fn phase_angle(potential: &MagneticPotential, x: [f64; 3], y: [f64; 3]) -> Result<f64> {
    let mid = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1]), 0.5 * (x[2] + y[2])];
    let a = potential.eval(mid)?;
    Ok(dot([x[0] - y[0], x[1] - y[1], x[2] - y[2]], a))
}

#[derive(Debug, Clone)]
pub(crate) enum PhaseModel {
    Trivial,
    Affine { sym: Mat3, anti: Mat3, offset: [f64; 3] },
    General(MagneticPotential),
}

impl PhaseModel {
    /// Checks that every midpoint of two nodes of `grid` can be evaluated.
    pub fn new(potential: &MagneticPotential, grid: &Grid) -> Result<Self> {
        if potential.is_zero() {
            return Ok(Self::Trivial);
        }
        match potential.affine_parts() {
            Some((m, offset)) => {
                let mut sym = [[0.0; 3]; 3];
                let mut anti = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        sym[i][j] = 0.5 * (m[i][j] + m[j][i]);
                        anti[i][j] = 0.5 * (m[i][j] - m[j][i]);
                    }
                }
                Ok(Self::Affine { sym, anti, offset })
            }
            None => {
                let (lo, hi) = (grid.node(0), grid.node(grid.len() - 1));
                potential.eval(lo)?;
                potential.eval(hi)?;
                Ok(Self::General(potential.clone()))
            }
        }
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, Self::Trivial)
    }

    pub fn theta(&self, x: [f64; 3], y: [f64; 3]) -> f64 {
        match self {
            Self::Trivial => 0.0,
            Self::Affine { sym, anti, offset } => {
                let m = [
                    [sym[0][0] + anti[0][0], sym[0][1] + anti[0][1], sym[0][2] + anti[0][2]],
                    [sym[1][0] + anti[1][0], sym[1][1] + anti[1][1], sym[1][2] + anti[1][2]],
                    [sym[2][0] + anti[2][0], sym[2][1] + anti[2][1], sym[2][2] + anti[2][2]],
                ];
                let mid = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1]), 0.5 * (x[2] + y[2])];
                let a = mat_vec(&m, mid);
                let a = [a[0] + offset[0], a[1] + offset[1], a[2] + offset[2]];
                dot([x[0] - y[0], x[1] - y[1], x[2] - y[2]], a)
            }
            Self::General(p) => phase_angle(p, x, y).expect("midpoints validated at construction"),
        }
    }

    /// `e^{-iθ(x, y)}`.
    pub fn omega(&self, x: [f64; 3], y: [f64; 3]) -> Complex64 {
        Complex64::from_polar(1.0, -self.theta(x, y))
    }

    /// Per-node gauge angle `φ(x)`; zero unless the potential is affine.
    pub fn gauge_angle(&self, x: [f64; 3]) -> f64 {
        match self {
            Self::Affine { sym, offset, .. } => 0.5 * dot(x, mat_vec(sym, x)) + dot(*offset, x),
            _ => 0.0,
        }
    }

    /// `Mₐᵀ x`, the per-axis frequencies of the cross term.
    pub fn cross_weights(&self, x: [f64; 3]) -> [f64; 3] {
        match self {
            Self::Affine { anti, .. } => {
                let mut w = [0.0; 3];
                for (a, wa) in w.iter_mut().enumerate() {
                    *wa = (0..3).map(|b| anti[b][a] * x[b]).sum();
                }
                w
            }
            _ => [0.0; 3],
        }
    }
}

/// Pair factors `E(x, y)` in twisted coordinates: `e^{-iθ(x,y)} = P(x) conj(P(y)) E(x, y)`
/// with `P(x) = e^{-iφ(x)}`.
pub(crate) enum RowFactors {
    Unit,
    Separable { ab: Vec<Complex64>, c: Vec<Complex64>, n: usize },
    Direct { x: [f64; 3] },
}

impl RowFactors {
    pub fn new(model: &PhaseModel, grid: &Grid, x: usize) -> Self {
        let xc = grid.node(x);
        match model {
            PhaseModel::Trivial => Self::Unit,
            PhaseModel::Affine { .. } => {
                let w = model.cross_weights(xc);
                if w == [0.0; 3] {
                    return Self::Unit;
                }
                let n = grid.n;
                let axis = |a: usize| -> Vec<Complex64> {
                    (0..n).map(|k| Complex64::from_polar(1.0, -w[a] * grid.axis_coord(a, k))).collect()
                };
                let (ea, eb, c) = (axis(0), axis(1), axis(2));
                let ab: Vec<Complex64> = ea.iter().flat_map(|a| eb.iter().map(move |b| a * b)).collect();
                Self::Separable { ab, c, n }
            }
            PhaseModel::General(_) => Self::Direct { x: xc },
        }
    }

    #[inline(always)]
    pub fn at(&self, model: &PhaseModel, grid: &Grid, y: [usize; 3]) -> Complex64 {
        match self {
            Self::Unit => Complex64::new(1.0, 0.0),
            Self::Separable { ab, c, n } => ab[y[0] * n + y[1]] * c[y[2]],
            Self::Direct { x } => {
                let yc = [grid.axis_coord(0, y[0]), grid.axis_coord(1, y[1]), grid.axis_coord(2, y[2])];
                model.omega(*x, yc)
            }
        }
    }
}
