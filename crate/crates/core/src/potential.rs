//! Magnetic vector potentials: closed-form affine kinds and trilinear tabulations.

use serde::{Deserialize, Serialize};

use crate::error::{FracmagError, Result};
use crate::grid::Grid;

pub type Mat3 = [[f64; 3]; 3];

pub(crate) fn mat_vec(m: &Mat3, x: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
        m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
        m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Vector potential sampled on a lattice and interpolated trilinearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPotential {
    pub grid: Grid,
    pub values: Vec<[f64; 3]>,
}

impl TabulatedPotential {
    pub fn new(grid: Grid, values: Vec<[f64; 3]>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FracmagError::domain(format!(
                "tabulation has {} samples for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FracmagError::domain("tabulated potential contains non-finite values"));
        }
        Ok(Self { grid, values })
    }

    pub fn sample(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        Self::new(grid, (0..grid.len()).map(|i| f(grid.node(i))).collect())
    }

    /// Trilinear interpolation inside the hull of the tabulation nodes.
    pub fn eval(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        let g = &self.grid;
        let top = (g.n - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let t = (x[a] - g.axis_coord(a, 0)) / g.h;
            let slack = 1e-9 * top;
            if !(t >= -slack && t <= top + slack) {
                return Err(FracmagError::OutOfBox { point: x });
            }
            let t = t.clamp(0.0, top);
            let i = (t.floor() as usize).min(g.n - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let bits = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let v = self.values[g.index(base[0] + bits[0], base[1] + bits[1], base[2] + bits[2])];
            for a in 0..3 {
                out[a] += w * v[a];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MagneticPotential {
    Zero,
    /// `A(x) = M x + b`.
    Linear {
        matrix: Mat3,
        offset: [f64; 3],
    },
    /// `A(x) = (b/2)(-x2, x1, 0)`, a uniform field of strength `b` along the third axis.
    ConstantField {
        strength: f64,
    },
    Tabulated(TabulatedPotential),
}

impl MagneticPotential {
    pub fn linear(matrix: Mat3, offset: [f64; 3]) -> Result<Self> {
        if matrix.iter().flatten().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(FracmagError::domain("linear potential must have finite coefficients"));
        }
        Ok(Self::Linear { matrix, offset })
    }

    pub fn constant_field(strength: f64) -> Result<Self> {
        if !strength.is_finite() {
            return Err(FracmagError::domain("field strength must be finite"));
        }
        Ok(Self::ConstantField { strength })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Linear { .. } => "linear",
            Self::ConstantField { .. } => "constant-field",
            Self::Tabulated(_) => "tabulated",
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Linear { matrix, offset } => matrix.iter().flatten().chain(offset.iter()).all(|&v| v == 0.0),
            Self::ConstantField { strength } => *strength == 0.0,
            Self::Tabulated(t) => t.values.iter().flatten().all(|&v| v == 0.0),
        }
    }

    /// `(M, b)` with `A(x) = M x + b` for the closed-form kinds.
    pub fn affine_parts(&self) -> Option<(Mat3, [f64; 3])> {
        match self {
            Self::Zero => Some(([[0.0; 3]; 3], [0.0; 3])),
            Self::Linear { matrix, offset } => Some((*matrix, *offset)),
            Self::ConstantField { strength } => {
                let c = 0.5 * strength;
                Some(([[0.0, -c, 0.0], [c, 0.0, 0.0], [0.0, 0.0, 0.0]], [0.0; 3]))
            }
            Self::Tabulated(_) => None,
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FracmagError::domain("potential evaluated at a non-finite point"));
        }
        match self {
            Self::Tabulated(t) => t.eval(x),
            _ => {
                let (m, b) = self.affine_parts().expect("closed-form kind");
                let mx = mat_vec(&m, x);
                Ok([mx[0] + b[0], mx[1] + b[1], mx[2] + b[2]])
            }
        }
    }

    /// The potential `x -> A(x + xi) + eta`.
    pub fn shift(&self, xi: [f64; 3], eta: [f64; 3]) -> Result<Self> {
        match self {
            Self::Tabulated(_) => Err(FracmagError::UnsupportedKind("tabulated")),
            Self::Zero if eta == [0.0; 3] => Ok(Self::Zero),
            Self::ConstantField { strength } => {
                let (_, b) = self.shifted_affine(xi, eta);
                if b == [0.0; 3] {
                    Ok(Self::ConstantField { strength: *strength })
                } else {
                    let (m, _) = self.affine_parts().expect("closed-form kind");
                    Self::linear(m, b)
                }
            }
            _ => {
                let (m, b) = self.shifted_affine(xi, eta);
                Self::linear(m, b)
            }
        }
    }

    fn shifted_affine(&self, xi: [f64; 3], eta: [f64; 3]) -> (Mat3, [f64; 3]) {
        let (m, b) = self.affine_parts().expect("closed-form kind");
        let mxi = mat_vec(&m, xi);
        (m, [mxi[0] + b[0] + eta[0], mxi[1] + b[1] + eta[1], mxi[2] + b[2] + eta[2]])
    }

    /// Largest `|A|` over an axis-aligned box; exact for affine kinds (convexity),
    /// the largest tabulated sample otherwise.
    pub fn max_norm_on_box(&self, lo: [f64; 3], hi: [f64; 3]) -> f64 {
        match self {
            Self::Tabulated(t) => t.values.iter().map(|v| dot(*v, *v).sqrt()).fold(0.0, f64::max),
            _ => (0..8)
                .map(|c| {
                    let x = [
                        if c & 4 != 0 { hi[0] } else { lo[0] },
                        if c & 2 != 0 { hi[1] } else { lo[1] },
                        if c & 1 != 0 { hi[2] } else { lo[2] },
                    ];
                    let a = self.eval(x).expect("affine kinds evaluate everywhere");
                    dot(a, a).sqrt()
                })
                .fold(0.0, f64::max),
        }
    }
}
