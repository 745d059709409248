//! Concentration-compactness tools: smooth cut-offs, the dichotomy splitter, the
//! cut-off energy estimate, gauge transformations and vanishing diagnostics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FracmagError, Result};
use crate::gagliardo::{localized_norm, seminorm_sq, sup_ball_mass, DensityField};
use crate::grid::{Field, Grid};
use crate::params::FractionalParams;
use crate::phase::PhaseModel;
use crate::potential::MagneticPotential;
use crate::quadrature::QuadPolicy;
use crate::summation::{det_sum, par_map};

/// Radial cut-off equal to one inside radius `r` and zero beyond `2r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutoff {
    pub field: Field,
    pub radius: f64,
    pub center: [f64; 3],
    /// Exact Lipschitz constant of the ramp, `15 / (8r)`.
    pub lipschitz: f64,
}

/// Quintic smoothstep ramp from 1 at `t = 0` to 0 at `t = 1` with vanishing first and
/// second derivatives at both ends.
pub fn quintic_ramp(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

pub fn cutoff(r: f64, center: [f64; 3], grid: &Grid) -> Result<Cutoff> {
    if !(r >= 2.0 * grid.h * (1.0 - 1e-12)) || !r.is_finite() {
        return Err(FracmagError::domain(format!("cut-off radius {r} is below 2h = {}", 2.0 * grid.h)));
    }
    let field = Field::from_real(*grid, |x| {
        let d = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>().sqrt();
        quintic_ramp((d - r) / r)
    });
    Ok(Cutoff { field, radius: r, center, lipschitz: 15.0 / (8.0 * r) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    #[serde(skip)]
    pub u1: Option<Field>,
    #[serde(skip)]
    pub u2: Option<Field>,
    /// Radial gap between the supports of the two pieces about the split centre.
    pub support_gap: f64,
    pub e1: f64,
    pub e2: f64,
    /// `‖u‖_{s,A}^2` of the unsplit field.
    pub total: f64,
    /// `‖u - u1 - u2‖_{s,A}`.
    pub remainder: f64,
    /// `|M(u) - M(u1) - M(u2)| / M(u)` with `M(v) = Σ |v|^p h^3`.
    pub mass_defect: f64,
    /// `|e1 + e2 - total|`.
    pub energy_defect: f64,
}

fn radii_about(grid: &Grid, xi: [f64; 3]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let x = grid.node(i);
            (0..3).map(|a| (x[a] - xi[a]).powi(2)).sum::<f64>().sqrt()
        })
        .collect()
}

/// Split `u` into an inner piece `φ_{R̄}(· - ξ) u` and an outer piece
/// `(1 - φ_{R_n/2}(· - ξ)) u` and measure how energy and mass divide.
#[allow(clippy::too_many_arguments)]
pub fn dichotomy_split(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u: &Field,
    xi: [f64; 3],
    r_bar: f64,
    r_n: f64,
    policy: &QuadPolicy,
) -> Result<SplitReport> {
    if !(r_n >= 4.0 * r_bar) {
        return Err(FracmagError::SupportOverlap { r_bar, r_n });
    }
    let g = u.grid();
    let inner = cutoff(r_bar, xi, g)?;
    let outer = cutoff(0.5 * r_n, xi, g)?;
    let w1: Vec<f64> = inner.field.values().iter().map(|v| v.re).collect();
    let w2: Vec<f64> = outer.field.values().iter().map(|v| 1.0 - v.re).collect();
    let u1 = u.multiplied(&w1);
    let u2 = u.multiplied(&w2);
    let rest = u.combine(1.0, &u1, -1.0)?.combine(1.0, &u2, -1.0)?;

    let radii = radii_about(g, xi);
    let reach = |f: &Field, pick: fn(f64, f64) -> f64, init: f64| {
        f.values().iter().zip(&radii).filter(|(v, _)| v.norm() > 0.0).fold(init, |m, (_, &r)| pick(m, r))
    };
    let geometric = 0.5 * r_n - 2.0 * r_bar;
    let support_gap = if u1.max_abs() > 0.0 && u2.max_abs() > 0.0 {
        (reach(&u2, f64::min, f64::INFINITY) - reach(&u1, f64::max, 0.0)).max(geometric)
    } else {
        geometric
    };

    let energy = |f: &Field| seminorm_sq(params, potential, f, policy).map(|e| e.total);
    let p = params.p();
    let (m, m1, m2) = (u.lp_norm_pow(p), u1.lp_norm_pow(p), u2.lp_norm_pow(p));
    let (e1, e2, total) = (energy(&u1)?, energy(&u2)?, energy(u)?);
    Ok(SplitReport {
        support_gap,
        e1,
        e2,
        total,
        remainder: energy(&rest)?.max(0.0).sqrt(),
        mass_defect: if m > 0.0 { (m - m1 - m2).abs() / m } else { 0.0 },
        energy_defect: (e1 + e2 - total).abs(),
        u1: Some(u1),
        u2: Some(u2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub constant: f64,
}

/// Constant of the cut-off estimate: near pairs are bounded through the Lipschitz
/// constant, far pairs through `|φ| <= 1`.
pub fn cutoff_constant(s: f64, lipschitz: f64) -> f64 {
    let shell = 4.0 * std::f64::consts::PI;
    let near = lipschitz * lipschitz / (2.0 - 2.0 * s);
    let far = 1.0 / (2.0 * s);
    f64::max(2.0, 2.0 * shell * (near + far))
}

/// Check `[φu]_{E1×E2} <= C min(∫_{E1}|u|^2, ∫_{E2}|u|^2) + C [u]_{E1×E2}`.
#[allow(clippy::too_many_arguments)]
pub fn verify_cutoff_estimate(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u: &Field,
    phi: &Field,
    lipschitz: f64,
    e1: &[usize],
    e2: &[usize],
    policy: &QuadPolicy,
) -> Result<CutoffEstimate> {
    if phi.grid() != u.grid() {
        return Err(FracmagError::GridMismatch);
    }
    if phi.values().iter().any(|v| v.im != 0.0 || !(0.0..=1.0).contains(&v.re)) {
        return Err(FracmagError::domain("cut-off values must be real and in [0, 1]"));
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(FracmagError::domain("Lipschitz constant must be finite and nonnegative"));
    }
    let weights: Vec<f64> = phi.values().iter().map(|v| v.re).collect();
    let phi_u = u.multiplied(&weights);
    let h3 = u.grid().cell_volume();
    let mass = |f: &Field, e: &[usize]| {
        let mut idx = e.to_vec();
        idx.sort_unstable();
        idx.dedup();
        h3 * det_sum(idx.len(), |k| f.values()[idx[k]].norm_sqr())
    };
    let seminorm = |f: &Field| -> Result<f64> {
        let with_mass = localized_norm(params, potential, f, e1, e2, policy)?;
        Ok((with_mass - if e2.is_empty() { 0.0 } else { mass(f, e1) }).max(0.0))
    };
    let lhs = seminorm(&phi_u)?;
    let constant = cutoff_constant(params.s(), lipschitz);
    let rhs = constant * mass(u, e1).min(mass(u, e2)) + constant * seminorm(u)?;
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(CutoffEstimate { lhs, rhs, ratio, constant })
}

/// Descriptor pairing a gauge-transformed field with its shifted potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeShift {
    pub xi: [f64; 3],
    pub eta: [f64; 3],
    pub cells: [i64; 3],
}

impl GaugeShift {
    /// `A(· + ξ) + η`.
    pub fn shifted_potential(&self, potential: &MagneticPotential) -> Result<MagneticPotential> {
        potential.shift(self.xi, self.eta)
    }
}

/// `v(x) = e^{iη·x} u(x + ξ)` with `ξ` a whole number of cells and periodic wrap.
pub fn gauge_transform(u: &Field, xi: [f64; 3], eta: [f64; 3]) -> Result<(Field, GaugeShift)> {
    let g = u.grid();
    let mut cells = [0i64; 3];
    for a in 0..3 {
        let c = xi[a] / g.h;
        if !c.is_finite() || (c - c.round()).abs() > 1e-9 * c.abs().max(1.0) {
            return Err(FracmagError::NonLatticeShift(xi));
        }
        cells[a] = c.round() as i64;
    }
    let shifted = u.translated_cells(cells);
    let values = shifted
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = g.node(i);
            v * Complex64::from_polar(1.0, eta[0] * x[0] + eta[1] * x[1] + eta[2] * x[2])
        })
        .collect();
    Ok((Field::new(*g, values)?, GaugeShift { xi, eta, cells }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanishingReport {
    pub radius: f64,
    /// `sup_ξ ∫_{B_R(ξ)} μ`.
    pub concentration: f64,
    /// `sup_ξ ∫_{B_R(ξ)} |u|^p`.
    pub lp_mass_sup: f64,
    pub lp_mass_total: f64,
}

pub fn vanishing_diagnostic(mu: &DensityField, radius: f64, p: f64, u: &Field) -> Result<VanishingReport> {
    if mu.grid != *u.grid() {
        return Err(FracmagError::GridMismatch);
    }
    if !(radius >= mu.grid.h * (1.0 - 1e-12)) {
        return Err(FracmagError::domain(format!("radius {radius} is below h = {}", mu.grid.h)));
    }
    let lp: Vec<f64> = u.values().iter().map(|v| v.norm().powf(p)).collect();
    let q = sup_ball_mass(&mu.grid, &mu.mu, &[radius])?[0].1;
    let l = sup_ball_mass(&mu.grid, &lp, &[radius])?[0].1;
    Ok(VanishingReport { radius, concentration: q, lp_mass_sup: l, lp_mass_total: u.lp_norm_pow(p) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiamagneticReport {
    pub pairs: u64,
    /// Largest `(||u(x)| - |u(y)|| - |e^{-iθ} u(x) - u(y)|) / (|u(x)| + |u(y)|)` over
    /// all pairs with a nonzero end point; zero or negative when the inequality holds.
    pub max_violation: f64,
    /// Smallest `Υ(x, y) / (|u(x)||u(y)|)`.
    pub min_upsilon: f64,
}

/// Pointwise diamagnetic inequality and sign of `Υ` over every unordered node pair.
pub fn diamagnetic_pointwise(potential: &MagneticPotential, u: &Field) -> Result<DiamagneticReport> {
    let g = u.grid();
    let phase = PhaseModel::new(potential, g)?;
    let vals = u.values();
    let rows: Vec<(f64, f64)> = par_map(g.len(), |x| {
        let xc = g.node(x);
        let mut worst = f64::NEG_INFINITY;
        let mut ups = f64::INFINITY;
        for y in x + 1..g.len() {
            let (a, b) = (vals[x], vals[y]);
            let scale = a.norm() + b.norm();
            if scale == 0.0 {
                continue;
            }
            let omega = phase.omega(xc, g.node(y));
            let lhs = (a.norm() - b.norm()).abs();
            let rhs = (omega * a - b).norm();
            worst = worst.max((lhs - rhs) / scale);
            let prod = a.norm() * b.norm();
            if prod > 0.0 {
                ups = ups.min(2.0 * (prod - (omega * a * b.conj()).re) / prod);
            }
        }
        (worst, ups)
    });
    let n = g.len() as u64;
    Ok(DiamagneticReport {
        pairs: n * (n - 1) / 2,
        max_violation: rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max).max(0.0),
        min_upsilon: rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
    })
}
