//! Pointwise pieces of the magnetic kernel and the nonexistence functional `Υ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FracmagError, Result};
use crate::grid::Field;
use crate::params::FractionalParams;
use crate::phase::{phase_angle, PhaseModel};
use crate::potential::MagneticPotential;
use crate::summation::{det_sum, NeumaierSum};

/// Phase `e^{-iθ(x,y)}` and Riesz weight `c_s |x - y|^{-3-2s}` of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub phase: Complex64,
    pub weight: f64,
}

pub fn kernel_sample(
    params: &FractionalParams,
    potential: &MagneticPotential,
    x: [f64; 3],
    y: [f64; 3],
) -> Result<KernelSample> {
    if x == y {
        return Err(FracmagError::Singularity(x));
    }
    let theta = phase_angle(potential, x, y)?;
    let r2: f64 = (0..3).map(|a| (x[a] - y[a]).powi(2)).sum();
    Ok(KernelSample {
        phase: Complex64::from_polar(1.0, -theta),
        weight: params.cs() * r2.powf(-0.5 * params.kernel_exponent()),
    })
}

#[inline]
fn upsilon_value(omega: Complex64, ux: Complex64, uy: Complex64) -> f64 {
    2.0 * (ux.norm() * uy.norm() - (omega * ux * uy.conj()).re)
}

/// `Υ(x, y) = 2 Re(|u(x)||u(y)| - e^{-iθ(x,y)} u(x) conj(u(y)))` at two nodes.
pub fn upsilon(potential: &MagneticPotential, u: &Field, x: usize, y: usize) -> Result<f64> {
    let g = u.grid();
    if x >= g.len() || y >= g.len() {
        return Err(FracmagError::domain("node index outside the grid"));
    }
    let (xc, yc) = (g.node(x), g.node(y));
    if x == y {
        return Err(FracmagError::Singularity(xc));
    }
    let omega = Complex64::from_polar(1.0, -phase_angle(potential, xc, yc)?);
    Ok(upsilon_value(omega, u.values()[x], u.values()[y]))
}

/// Fraction of sampled node pairs where `Υ` exceeds a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpsilonMeasure {
    pub fraction: f64,
    pub positive_pairs: u64,
    pub sampled_pairs: u64,
    /// Every `stride`-th node (flat order) is sampled; all pairs among them are visited.
    pub stride: usize,
    pub threshold: f64,
}

/// Largest number of sampled nodes in [`upsilon_positive_measure`].
pub const UPSILON_SAMPLE_NODES: usize = 4096;

pub fn upsilon_positive_measure(potential: &MagneticPotential, u: &Field, threshold: f64) -> Result<UpsilonMeasure> {
    if !(threshold >= 0.0) {
        return Err(FracmagError::domain("threshold must be nonnegative"));
    }
    let g = u.grid();
    let phase = PhaseModel::new(potential, g)?;
    let stride = g.len().div_ceil(UPSILON_SAMPLE_NODES);
    let nodes: Vec<usize> = (0..g.len()).step_by(stride).collect();
    let vals = u.values();
    let counts: Vec<u64> = crate::summation::par_map(nodes.len(), |a| {
        let x = nodes[a];
        let xc = g.node(x);
        nodes[a + 1..]
            .iter()
            .filter(|&&y| upsilon_value(phase.omega(xc, g.node(y)), vals[x], vals[y]) > threshold)
            .count() as u64
    });
    let positive: u64 = counts.iter().sum();
    let m = nodes.len() as u64;
    let sampled = m * m.saturating_sub(1) / 2;
    Ok(UpsilonMeasure {
        fraction: if sampled == 0 { 0.0 } else { positive as f64 / sampled as f64 },
        positive_pairs: positive,
        sampled_pairs: sampled,
        stride,
        threshold,
    })
}

/// `(c_s/2) Σ_{x ≠ y} Υ(x, y) |x - y|^{-3-2s} h^6` over all node pairs, and the smallest
/// `Υ` encountered relative to `|u(x)||u(y)|`.
pub fn upsilon_integral(params: &FractionalParams, potential: &MagneticPotential, u: &Field) -> Result<(f64, f64)> {
    let g = u.grid();
    let phase = PhaseModel::new(potential, g)?;
    let vals = u.values();
    let expo = params.kernel_exponent();
    let rows: Vec<(f64, f64)> = crate::summation::par_map(g.len(), |x| {
        let xc = g.node(x);
        let mut acc = NeumaierSum::new();
        let mut worst = f64::INFINITY;
        for y in 0..g.len() {
            if y == x {
                continue;
            }
            let yc = g.node(y);
            let ups = upsilon_value(phase.omega(xc, yc), vals[x], vals[y]);
            let scale = vals[x].norm() * vals[y].norm();
            if scale > 0.0 {
                worst = worst.min(ups / scale);
            }
            let r2: f64 = (0..3).map(|a| (xc[a] - yc[a]).powi(2)).sum();
            acc.add(ups * r2.powf(-0.5 * expo));
        }
        (acc.value(), worst)
    });
    let h3 = g.cell_volume();
    let total = det_sum(rows.len(), |i| rows[i].0) * 0.5 * params.cs() * h3 * h3;
    let worst = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    Ok((total, worst))
}
