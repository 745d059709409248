//! Magnetic Gagliardo energy, localized norms, the local energy density and the
//! concentration function.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FracmagError, Result};
use crate::fft::LatticeConvolver;
use crate::grid::{Field, Grid};
use crate::lattice::KernelTable;
use crate::params::FractionalParams;
use crate::potential::MagneticPotential;
use crate::quadrature::{Engine, QuadPolicy};
use crate::summation::det_sum;

/// Energy of a field split into its parts.
///
/// `gagliardo = pair_sum + exterior + singular_correction` and `total = l2 + gagliardo`.
/// `tail_bound` and `far_phase_bound` are error estimates and are never added.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub l2: f64,
    pub gagliardo: f64,
    pub pair_sum: f64,
    pub exterior: f64,
    pub singular_correction: f64,
    pub far_phase_bound: f64,
    pub tail_bound: f64,
    pub total: f64,
}

/// `c_s ∫_box |u(x)|^2 ∫_{|y - x| > dist(x, ∂box)} |x - y|^{-3-2s} dy dx`, an upper
/// estimate of the pairs with one point outside the box.
pub fn tail_bound(params: &FractionalParams, u: &Field) -> f64 {
    let g = u.grid();
    let s = params.s();
    let shell = 4.0 * std::f64::consts::PI / (2.0 * s);
    let vals = u.values();
    params.cs()
        * g.cell_volume()
        * det_sum(vals.len(), |x| vals[x].norm_sqr() * shell * g.distance_to_boundary(x).powf(-2.0 * s))
}

/// `[u]_{s,A}^2` and `‖u‖_{s,A}^2` on the box.
pub fn seminorm_sq(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u: &Field,
    policy: &QuadPolicy,
) -> Result<EnergyBreakdown> {
    let engine = Engine::new(params, potential, u.grid(), policy.stencil(u.grid())?)?;
    let parts = engine.energy(u)?;
    let l2 = u.l2_norm_sq();
    let gagliardo = parts.total();
    Ok(EnergyBreakdown {
        l2,
        gagliardo,
        pair_sum: parts.pair,
        exterior: parts.exterior,
        singular_correction: parts.singular,
        far_phase_bound: parts.far_bound,
        tail_bound: tail_bound(params, u),
        total: l2 + gagliardo,
    })
}

/// `∫_{E1} |u|^2 + (c_s/2) ∬_{E1×E2}` of the magnetic integrand.
///
/// Sets are lists of flat node indices; duplicates are ignored. Pairs with a point
/// outside the box never enter because both sets are sets of nodes.
pub fn localized_norm(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u: &Field,
    e1: &[usize],
    e2: &[usize],
    policy: &QuadPolicy,
) -> Result<f64> {
    if e1.is_empty() || e2.is_empty() {
        return Ok(0.0);
    }
    let engine = Engine::new(params, potential, u.grid(), policy.stencil(u.grid())?)?;
    engine.localized(u, e1, e2)
}

/// Local energy density `|u(x)|^2 + ∫ |e^{-iθ} u(x) - u(y)|^2 |x - y|^{-3-2s} dy`,
/// without the `c_s/2` prefactor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: Grid,
    pub mu: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != grid.len() {
            return Err(FracmagError::GridMismatch);
        }
        if mu.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FracmagError::domain("density must be finite and nonnegative"));
        }
        Ok(Self { grid, mu })
    }

    pub fn total_mass(&self) -> f64 {
        self.grid.cell_volume() * det_sum(self.mu.len(), |i| self.mu[i])
    }

    pub fn to_field(&self) -> Field {
        Field::from_parts_unchecked(self.grid, self.mu.iter().map(|&m| Complex64::new(m, 0.0)).collect())
    }
}

pub fn density(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u: &Field,
    policy: &QuadPolicy,
) -> Result<DensityField> {
    let engine = Engine::new(params, potential, u.grid(), policy.stencil(u.grid())?)?;
    DensityField::new(*u.grid(), engine.density(u)?)
}

/// `Σ_{|x - ξ| <= R} w(x) h^3` for every node `ξ`.
pub(crate) fn ball_sums(grid: &Grid, weights: &[f64], radius: f64) -> Vec<f64> {
    let n = grid.n;
    let cells = radius / grid.h;
    let mut table = KernelTable { n, values: vec![0.0; n * n * n] };
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if ((i * i + j * j + k * k) as f64) <= cells * cells * (1.0 + 1e-12) {
                    table.values[(i * n + j) * n + k] = 1.0;
                }
            }
        }
    }
    let h3 = grid.cell_volume();
    LatticeConvolver::new(&table).apply_real(weights).into_iter().map(|v| (v * h3).max(0.0)).collect()
}

/// Largest mass in a ball of radius `R` centred at a node, for each radius.
pub(crate) fn sup_ball_mass(grid: &Grid, weights: &[f64], radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(FracmagError::domain("radii must be positive"));
    }
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(FracmagError::domain("radii must be ascending"));
    }
    let total = grid.cell_volume() * det_sum(weights.len(), |i| weights[i]);
    let mut out = Vec::with_capacity(radii.len());
    let mut running = 0.0f64;
    for &r in radii {
        let q = if r >= grid.diameter() {
            total
        } else {
            ball_sums(grid, weights, r).into_iter().fold(0.0, f64::max).min(total)
        };
        // ball sums are nondecreasing in R; the running maximum only absorbs FFT rounding
        running = running.max(q);
        out.push((r, running));
    }
    Ok(out)
}

/// `Q(R) = max_ξ ∫_{B_R(ξ)} μ`.
pub fn concentration_function(mu: &DensityField, radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    sup_ball_mass(&mu.grid, &mu.mu, radii)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_field, Generator};
    use crate::quadrature::{EngineChoice, FarRule};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> FractionalParams {
        FractionalParams::new(0.5, 3.0).unwrap()
    }

    fn random_field(grid: Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = make_field(&grid, &Generator::Gaussian { width: grid.extent() / 6.0, center: [0.0; 3] }).unwrap();
        let vals = env
            .values()
            .iter()
            .map(|e| e * Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Field::new(grid, vals).unwrap()
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let g = Grid::centered(6, 6.0).unwrap();
        let e = seminorm_sq(&params(), &MagneticPotential::Zero, &Field::zeros(g), &QuadPolicy::default()).unwrap();
        assert_eq!((e.l2, e.gagliardo, e.total, e.tail_bound), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_field_has_zero_truncated_energy() {
        let g = Grid::centered(6, 6.0).unwrap();
        let u = Field::from_real(g, |_| 1.0);
        let policy = QuadPolicy::truncated().with_engine(EngineChoice::Direct);
        let e = seminorm_sq(&params(), &MagneticPotential::Zero, &u, &policy).unwrap();
        assert_eq!(e.gagliardo, 0.0);
        assert!(e.tail_bound > 0.0);
        let conv = seminorm_sq(&params(), &MagneticPotential::Zero, &u, &QuadPolicy::truncated()).unwrap();
        assert!(conv.gagliardo.abs() < 1e-10 * e.l2);
    }

    #[test]
    fn rejects_tiny_cutoff() {
        let g = Grid::centered(6, 6.0).unwrap();
        let policy = QuadPolicy::default().with_cutoff(FarRule::Drop, 1.5 * g.h);
        assert!(matches!(
            seminorm_sq(&params(), &MagneticPotential::Zero, &Field::zeros(g), &policy),
            Err(FracmagError::Policy(_))
        ));
    }

    #[test]
    fn full_localized_norm_equals_total() {
        let g = Grid::centered(8, 6.0).unwrap();
        let pot = MagneticPotential::constant_field(1.0).unwrap();
        let u = random_field(g, 9);
        let all: Vec<usize> = (0..g.len()).collect();
        for policy in [
            QuadPolicy::truncated(),
            QuadPolicy { exterior: crate::quadrature::ExteriorRule::Truncate, ..QuadPolicy::default() },
        ] {
            let total = seminorm_sq(&params(), &pot, &u, &policy).unwrap().total;
            let local = localized_norm(&params(), &pot, &u, &all, &all, &policy).unwrap();
            assert_relative_eq!(total, local, max_relative = 1e-12);
        }
        assert_eq!(localized_norm(&params(), &pot, &u, &[], &all, &QuadPolicy::default()).unwrap(), 0.0);
    }

    #[test]
    fn localized_norm_vanishes_off_support() {
        let g = Grid::centered(12, 12.0).unwrap();
        let u = make_field(&g, &Generator::Bump { center: [-3.0, 0.0, 0.0], radius: 2.0 }).unwrap();
        let far: Vec<usize> = (0..g.len()).filter(|&i| g.node(i)[0] > 1.0).collect();
        let v = localized_norm(&params(), &MagneticPotential::Zero, &u, &far, &far, &QuadPolicy::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn density_integrates_to_pair_sum() {
        let g = Grid::centered(8, 6.0).unwrap();
        let pot = MagneticPotential::constant_field(2.0).unwrap();
        let u = random_field(g, 10);
        let policy = QuadPolicy::truncated();
        let mu = density(&params(), &pot, &u, &policy).unwrap();
        let e = seminorm_sq(&params(), &pot, &u, &policy).unwrap();
        let expect = e.l2 + 2.0 / params().cs() * e.gagliardo;
        assert_relative_eq!(mu.total_mass(), expect, max_relative = 1e-10);
    }

    #[test]
    fn density_translates_with_the_field() {
        let g = Grid::centered(12, 12.0).unwrap();
        let u = make_field(&g, &Generator::Bump { center: [0.0; 3], radius: 3.0 }).unwrap();
        let shift = [2, -1, 1];
        let mu = density(&params(), &MagneticPotential::Zero, &u, &QuadPolicy::default()).unwrap();
        let mu_shift =
            density(&params(), &MagneticPotential::Zero, &u.translated_cells(shift), &QuadPolicy::default()).unwrap();
        let moved = mu.to_field().translated_cells(shift);
        let n = g.n as i64;
        for x in 0..g.len() {
            // nodes whose source was not wrapped around the box
            let ijk = g.unravel(x);
            if (0..3).all(|a| (0..n).contains(&(ijk[a] as i64 + shift[a]))) {
                let (a, b) = (moved.values()[x].re, mu_shift.mu[x]);
                assert!((a - b).abs() < 1e-10 * (1.0 + b), "node {x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gaussian_density_decreases_along_axes() {
        let g = Grid::new(12, 0.75, [0.375; 3]).unwrap();
        let u = make_field(&g, &Generator::Gaussian { width: 1.0, center: [0.375; 3] }).unwrap();
        let policy = QuadPolicy::truncated().with_engine(EngineChoice::Direct);
        let mu = density(&params(), &MagneticPotential::Zero, &u, &policy).unwrap();
        // brute-force oracle for the density at each node along the first axis through the peak
        let c = params();
        let expo = c.kernel_exponent();
        let brute = |x: usize| {
            let mut acc = u.values()[x].norm_sqr();
            for y in 0..g.len() {
                if y != x {
                    let (a, b) = (g.node(x), g.node(y));
                    let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                    acc += (u.values()[x] - u.values()[y]).norm_sqr() * r.powf(-expo) * g.cell_volume();
                }
            }
            acc
        };
        let line: Vec<usize> = (6..12).map(|i| g.index(i, 6, 6)).collect();
        for w in line.windows(2) {
            assert_relative_eq!(mu.mu[w[0]], brute(w[0]), max_relative = 1e-10);
            assert!(mu.mu[w[0]] > mu.mu[w[1]]);
        }
    }

    #[test]
    fn concentration_of_point_mass_and_zero() {
        let g = Grid::centered(8, 8.0).unwrap();
        let zero = DensityField::new(g, vec![0.0; g.len()]).unwrap();
        assert!(concentration_function(&zero, &[1.0, 2.0]).unwrap().iter().all(|(_, q)| *q == 0.0));
        let mut mu = vec![0.0; g.len()];
        mu[g.index(3, 4, 5)] = 2.0;
        let point = DensityField::new(g, mu).unwrap();
        let mass = 2.0 * g.cell_volume();
        for (_, q) in concentration_function(&point, &[g.h, 2.0 * g.h, 20.0]).unwrap() {
            assert_relative_eq!(q, mass, max_relative = 1e-12);
        }
        assert!(concentration_function(&point, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn two_bumps_concentrate_half_the_mass() {
        let g = Grid::centered(16, 16.0).unwrap();
        let d = 10.0;
        let u = make_field(&g, &Generator::TwoBumps { separation: d, radius: 2.0 }).unwrap();
        let weights: Vec<f64> = u.values().iter().map(|v| v.norm_sqr()).collect();
        let mu = DensityField::new(g, weights.clone()).unwrap();
        let r = 0.5 * d - 2.0 - 0.1;
        let q = concentration_function(&mu, &[r]).unwrap()[0].1;
        // brute force over every center
        let mut best = 0.0f64;
        for c in 0..g.len() {
            let cc = g.node(c);
            let mut acc = 0.0;
            for x in 0..g.len() {
                let xc = g.node(x);
                if (0..3).map(|a| (xc[a] - cc[a]).powi(2)).sum::<f64>() <= r * r {
                    acc += weights[x] * g.cell_volume();
                }
            }
            best = best.max(acc);
        }
        assert_relative_eq!(q, best, max_relative = 1e-12);
        assert_relative_eq!(q, 0.5 * mu.total_mass(), max_relative = 1e-2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn diamagnetic_inequality(seed in 0u64..1000, b in -3.0f64..3.0) {
            let g = Grid::centered(6, 5.0).unwrap();
            let u = random_field(g, seed);
            let pot = MagneticPotential::constant_field(b).unwrap();
            for policy in [QuadPolicy::default(), QuadPolicy::truncated()] {
                let mag = seminorm_sq(&params(), &pot, &u, &policy).unwrap().total;
                let flat = seminorm_sq(&params(), &MagneticPotential::Zero, &u.modulus(), &policy).unwrap().total;
                prop_assert!(mag >= flat - 1e-10 * flat);
            }
        }

        #[test]
        fn energy_grows_with_cutoff(seed in 0u64..1000) {
            let g = Grid::centered(7, 7.0).unwrap();
            let u = random_field(g, seed);
            let pot = MagneticPotential::constant_field(0.7).unwrap();
            let mut last = 0.0;
            for r in [2.0, 3.0, 4.5, 6.0, 20.0] {
                let policy = QuadPolicy::truncated().with_cutoff(FarRule::Drop, r);
                let e = seminorm_sq(&params(), &pot, &u, &policy).unwrap().gagliardo;
                prop_assert!(e >= last);
                last = e;
            }
        }

        #[test]
        fn energy_parts_are_consistent(seed in 0u64..1000) {
            let g = Grid::centered(6, 5.0).unwrap();
            let u = random_field(g, seed);
            let pot = MagneticPotential::constant_field(1.1).unwrap();
            let e = seminorm_sq(&params(), &pot, &u, &QuadPolicy::default()).unwrap();
            prop_assert!(e.l2 >= 0.0 && e.pair_sum >= 0.0 && e.exterior >= 0.0 && e.singular_correction >= 0.0);
            prop_assert_eq!(e.total, e.l2 + e.gagliardo);
        }
    }
}
