//! Constrained minimization of the magnetic energy on an `L^p` sphere.
//!
//! The flow is a projected gradient method: the energy gradient `2((-Δ)^s_A u + u)` is
//! made tangent to the constraint surface, a step is taken, the iterate is optionally
//! averaged over spherical shells and then rescaled back onto the sphere. Steps that
//! raise the energy are halved and retried.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{FracmagError, Result};
use crate::gagliardo::{seminorm_sq, sup_ball_mass};
use crate::grid::{make_field, Field, Generator, Grid};
use crate::lattice::{epstein_zeta, lattice_ball_sum};
use crate::operator::{apply_operator, OperatorForm, OperatorPolicy};
use crate::params::FractionalParams;
use crate::potential::MagneticPotential;
use crate::quadrature::{Engine, QuadPolicy};
use crate::summation::det_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Mass `λ` in `Σ |u|^p h^3 = λ`; the exponent is taken from the parameters.
    pub mass: f64,
}

impl Default for Constraint {
    fn default() -> Self {
        Self { mass: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Initial step; `None` picks one from a bound on the discrete operator norm.
    pub step: Option<f64>,
    pub max_iter: usize,
    /// Stop when the relative energy decrease of an accepted step falls below this.
    pub tol: f64,
    pub radial: bool,
    /// Far-field, singular and exterior rules. The far rule is always exact here so
    /// that the gradient is the derivative of the energy being minimized.
    pub policy: QuadPolicy,
    /// Consecutive rejected halvings before the run is declared stalled.
    pub max_backtracks: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            step: None,
            max_iter: 2000,
            tol: 1e-10,
            radial: false,
            policy: QuadPolicy::default(),
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    /// No decrease found even after repeated step halving; the iterate is stationary
    /// to rounding.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub constraint_residual: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizationResult {
    pub level: f64,
    #[serde(skip)]
    pub minimizer: Option<Field>,
    pub lagrange: f64,
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// `|Σ|u|^p h^3 - λ| / λ` at exit.
    pub constraint_residual: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub final_step: f64,
    pub mass: f64,
    pub exponent: f64,
    pub critical: bool,
    pub warning: Option<String>,
    /// `(R, sup_ξ ∫_{B_R(ξ)} μ)` of the final iterate; filled for critical runs.
    pub concentration: Option<Vec<(f64, f64)>>,
}

impl MinimizationResult {
    pub fn field(&self) -> Result<&Field> {
        self.minimizer.as_ref().ok_or(FracmagError::ZeroField)
    }
}

/// Orthogonal projection onto functions radial about the grid centre.
struct ShellAverager {
    shell_of: Vec<usize>,
    counts: Vec<f64>,
}

impl ShellAverager {
    fn new(grid: &Grid) -> Self {
        let n = grid.n as i64;
        let mut keys = BTreeMap::new();
        let mut raw = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let ijk = grid.unravel(idx);
            // 4|x - c|^2 / h^2 is an exact integer
            let key: i64 = ijk.iter().map(|&i| (2 * i as i64 - (n - 1)).pow(2)).sum();
            let next = keys.len();
            raw.push(*keys.entry(key).or_insert(next));
        }
        let mut counts = vec![0.0; keys.len()];
        for &s in &raw {
            counts[s] += 1.0;
        }
        Self { shell_of: raw, counts }
    }

    fn project(&self, values: &mut [Complex64]) {
        let mut sums = vec![Complex64::new(0.0, 0.0); self.counts.len()];
        for (v, &s) in values.iter().zip(&self.shell_of) {
            sums[s] += v;
        }
        for (v, &s) in values.iter_mut().zip(&self.shell_of) {
            *v = sums[s] / self.counts[s];
        }
    }
}

/// Radial average of a field about the grid centre.
pub fn radial_projection(u: &Field) -> Field {
    let mut values = u.values().to_vec();
    ShellAverager::new(u.grid()).project(&mut values);
    Field::from_parts_unchecked(*u.grid(), values)
}

/// Default starting point: a Gaussian of width `L/6` about the grid centre, optionally
/// perturbed by seeded complex noise of relative size `noise`.
pub fn initial_field(grid: &Grid, seed: u64, noise: f64) -> Result<Field> {
    let base = make_field(grid, &Generator::Gaussian { width: grid.extent() / 6.0, center: grid.center })?;
    if noise == 0.0 {
        return Ok(base);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = base
        .values()
        .iter()
        .map(|v| v * Complex64::new(1.0 + noise * rng.gen_range(-1.0..1.0), noise * rng.gen_range(-1.0..1.0)))
        .collect();
    Field::new(*grid, values)
}

struct Flow<'a> {
    engine: Engine,
    params: &'a FractionalParams,
    h3: f64,
    with_l2: bool,
}

impl Flow<'_> {
    /// Energy and the (untangented) gradient `2(L u + u)`.
    fn evaluate(&self, u: &[Complex64]) -> Result<(f64, Vec<Complex64>)> {
        let field = Field::from_parts_unchecked(self.engine.grid, u.to_vec());
        let lu = self.engine.operator(&field)?;
        let grad: Vec<Complex64> = if self.with_l2 {
            lu.iter().zip(u).map(|(a, b)| (a + b) * 2.0).collect()
        } else {
            lu.iter().map(|a| a * 2.0).collect()
        };
        // the energy is the quadratic form of the operator: E = Re Σ (Lu + u) ū h^3
        let energy = 0.5 * self.h3 * det_sum(u.len(), |x| (grad[x] * u[x].conj()).re);
        Ok((energy, grad))
    }

    fn lp_mass(&self, u: &[Complex64]) -> f64 {
        let p = self.params.p();
        self.h3 * det_sum(u.len(), |x| u[x].norm().powf(p))
    }

    fn rescale(&self, u: &mut [Complex64], mass: f64) -> Result<()> {
        let m = self.lp_mass(u);
        if !(m > 0.0 && m.is_finite()) {
            return Err(FracmagError::ZeroField);
        }
        let c = (mass / m).powf(1.0 / self.params.p());
        u.iter_mut().for_each(|v| *v *= c);
        Ok(())
    }

    /// Component of the gradient tangent to `{Σ|u|^p h^3 = const}`.
    fn tangent(&self, u: &[Complex64], grad: &[Complex64]) -> Vec<Complex64> {
        let p = self.params.p();
        let normal: Vec<Complex64> = u.iter().map(|v| v * (p * v.norm().powf(p - 2.0))).collect();
        let gn = det_sum(u.len(), |x| (grad[x] * normal[x].conj()).re);
        let nn = det_sum(u.len(), |x| normal[x].norm_sqr());
        let mu = if nn > 0.0 { gn / nn } else { 0.0 };
        grad.iter().zip(&normal).map(|(g, n)| g - n * mu).collect()
    }
}

/// Bound on the largest eigenvalue of the discrete operator, from the row sums of the
/// kernel and of the correction terms.
fn operator_norm_bound(params: &FractionalParams, grid: &Grid, policy: &QuadPolicy) -> f64 {
    let h = grid.h;
    let s = params.s();
    let alpha = params.kernel_exponent();
    let row = params.cs() * h.powf(-2.0 * s) * epstein_zeta(alpha);
    let edge = match policy.singular {
        crate::quadrature::SingularRule::Exclude => 0.0,
        crate::quadrature::SingularRule::ZetaCorrected => {
            let z = epstein_zeta(1.0 + 2.0 * s) - lattice_ball_sum(1.0 + 2.0 * s, 0.5);
            12.0 * (0.5 * params.cs() * z / 3.0).abs() * h.powf(-2.0 * s)
        }
    };
    3.0 * row + edge
}

fn run_flow(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u0: &Field,
    constraint: &Constraint,
    options: &MinimizeOptions,
    with_l2: bool,
) -> Result<MinimizationResult> {
    if !(constraint.mass > 0.0 && constraint.mass.is_finite()) {
        return Err(FracmagError::domain("constraint mass must be positive"));
    }
    if let Some(t) = options.step {
        if !(t > 0.0 && t.is_finite()) {
            return Err(FracmagError::domain("step must be positive"));
        }
    }
    if !(options.tol >= 0.0) {
        return Err(FracmagError::domain("tolerance must be nonnegative"));
    }
    let grid = *u0.grid();
    let stencil = OperatorPolicy::matching(&options.policy).stencil(&grid)?;
    let flow =
        Flow { engine: Engine::new(params, potential, &grid, stencil)?, params, h3: grid.cell_volume(), with_l2 };
    let shells = options.radial.then(|| ShellAverager::new(&grid));
    let mass = constraint.mass;

    let mut u = u0.values().to_vec();
    if let Some(sh) = &shells {
        sh.project(&mut u);
    }
    flow.rescale(&mut u, mass)?;
    let (mut energy, mut grad) = flow.evaluate(&u)?;
    let mut tangent = flow.tangent(&u, &grad);
    let grad_norm_of = |t: &[Complex64]| (flow.h3 * det_sum(t.len(), |x| t[x].norm_sqr())).sqrt();
    let residual_of = |u: &[Complex64]| (flow.lp_mass(u) - mass).abs() / mass;

    let mut tau = options.step.unwrap_or_else(|| {
        let bound = operator_norm_bound(params, &grid, &options.policy) + if with_l2 { 1.0 } else { 0.0 };
        0.9 / bound
    });
    let mut trace =
        vec![TraceRow { iter: 0, energy, constraint_residual: residual_of(&u), grad_norm: grad_norm_of(&tangent) }];
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    'outer: while iterations < options.max_iter {
        let mut backtracks = 0;
        loop {
            let mut trial: Vec<Complex64> = u.iter().zip(&tangent).map(|(a, g)| a - g * tau).collect();
            if let Some(sh) = &shells {
                sh.project(&mut trial);
            }
            flow.rescale(&mut trial, mass)?;
            let (e_new, g_new) = flow.evaluate(&trial)?;
            if e_new <= energy {
                let decrease = (energy - e_new) / energy.abs().max(f64::MIN_POSITIVE);
                u = trial;
                energy = e_new;
                grad = g_new;
                tangent = flow.tangent(&u, &grad);
                iterations += 1;
                trace.push(TraceRow {
                    iter: iterations,
                    energy,
                    constraint_residual: residual_of(&u),
                    grad_norm: grad_norm_of(&tangent),
                });
                if decrease < options.tol {
                    stop = StopReason::Tolerance;
                    break 'outer;
                }
                break;
            }
            tau *= 0.5;
            backtracks += 1;
            if backtracks > options.max_backtracks {
                stop = StopReason::Stalled;
                break 'outer;
            }
        }
    }
    let last = *trace.last().expect("trace starts with the initial point");
    let minimizer = Field::new(grid, u)?;
    Ok(MinimizationResult {
        level: energy,
        lagrange: energy / mass,
        iterations,
        energy_trace: trace.iter().map(|r| r.energy).collect(),
        constraint_residual: last.constraint_residual,
        grad_norm: last.grad_norm,
        trace,
        converged: stop != StopReason::MaxIterations,
        stop_reason: stop,
        final_step: tau,
        mass,
        exponent: params.p(),
        critical: !with_l2,
        warning: None,
        concentration: None,
        minimizer: Some(minimizer),
    })
}

/// Minimize `‖u‖_{s,A}^2` over `Σ|u|^p h^3 = λ`.
///
/// Running out of iterations is not an error: the best iterate is returned with
/// `converged = false`.
pub fn minimize(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u0: &Field,
    constraint: &Constraint,
    options: &MinimizeOptions,
) -> Result<MinimizationResult> {
    run_flow(params, potential, u0, constraint, options, true)
}

/// Radii `h, 2h, 4h, …` up to the box diameter.
fn concentration_radii(grid: &Grid) -> Vec<f64> {
    let mut radii = Vec::new();
    let mut r = grid.h;
    while r < grid.diameter() {
        radii.push(r);
        r *= 2.0;
    }
    radii.push(grid.diameter());
    radii
}

/// Minimize the seminorm alone over `Σ|u|^{p*} h^3 = 1`, `p* = 6/(3-2s)`.
///
/// The infimum is in general not attained and iterates may concentrate, so the result
/// always carries a warning and the concentration function of the final iterate.
pub fn critical_level(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u0: &Field,
    options: &MinimizeOptions,
) -> Result<MinimizationResult> {
    if !params.is_critical() {
        return Err(FracmagError::domain(format!("critical level needs p = {} (got {})", params.p_crit(), params.p())));
    }
    let mut result = run_flow(params, potential, u0, &Constraint { mass: 1.0 }, options, false)?;
    let grid = *u0.grid();
    let mu = crate::gagliardo::density(params, potential, result.field()?, &options.policy)?;
    result.concentration = Some(sup_ball_mass(&grid, &mu.mu, &concentration_radii(&grid))?);
    result.warning = Some("critical level: the infimum need not be attained; iterates may concentrate".to_string());
    Ok(result)
}

/// `w = λ^{1/(p-2)} u`, a solution of `(-Δ)^s_A w + w = |w|^{p-2} w` when `u` is a
/// constrained minimizer with multiplier `λ`.
pub fn remove_multiplier(result: &MinimizationResult, params: &FractionalParams) -> Result<Field> {
    let p = params.p();
    if !(p > 2.0) {
        return Err(FracmagError::domain(format!("multiplier removal needs p > 2, got {p}")));
    }
    if !(result.lagrange > 0.0) {
        return Err(FracmagError::domain("multiplier must be positive"));
    }
    Ok(result.field()?.scaled(result.lagrange.powf(1.0 / (p - 2.0))))
}

/// Relative `L^2` norm of `(-Δ)^s_A w + w - |w|^{p-2} w` (without `+ w` when
/// `critical`) over nodes at least `margin` away from the boundary.
pub fn pde_residual(
    params: &FractionalParams,
    potential: &MagneticPotential,
    w: &Field,
    critical: bool,
    margin: f64,
    policy: &QuadPolicy,
) -> Result<f64> {
    let op = OperatorPolicy { form: OperatorForm::PrincipalValue, ..OperatorPolicy::matching(policy) };
    let lw = apply_operator(params, potential, w, &op)?.field;
    let p = params.p();
    let g = w.grid();
    let (mut num, mut den) = (0.0, 0.0);
    for x in 0..g.len() {
        if g.distance_to_boundary(x) < margin {
            continue;
        }
        let v = w.values()[x];
        let nonlinear = v * v.norm().powf(p - 2.0);
        let lhs = lw.values()[x] + if critical { Complex64::new(0.0, 0.0) } else { v };
        num += (lhs - nonlinear).norm_sqr();
        den += nonlinear.norm_sqr();
    }
    if den == 0.0 {
        return Err(FracmagError::ZeroField);
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub sigma: f64,
    pub seminorm_sq: f64,
    pub nonmagnetic_ref: f64,
}

/// `[u_σ]^2_{s,A}` for `u_σ(x) = σ^{-(3-2s)/2} u(x/σ)`.
///
/// `u_σ` lives on the lattice scaled by `σ` about the origin, so its nodal values are
/// those of `u` times `σ^{-(3-2s)/2}` and no interpolation is involved.
pub fn sigma_scaling_curve(
    params: &FractionalParams,
    potential: &MagneticPotential,
    u: &Field,
    sigmas: &[f64],
    policy: &QuadPolicy,
) -> Result<Vec<SigmaPoint>> {
    if let Some(bad) = sigmas.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(FracmagError::domain(format!("sigma = {bad} outside (0, 1]")));
    }
    let g = u.grid();
    let reference = seminorm_sq(params, &MagneticPotential::Zero, u, policy)?.gagliardo;
    let decay = 0.5 * (3.0 - 2.0 * params.s());
    sigmas
        .iter()
        .map(|&sigma| {
            let scaled_grid = Grid::new(g.n, sigma * g.h, g.center.map(|c| sigma * c))?;
            let u_sigma = u.relabeled(scaled_grid)?.scaled(sigma.powf(-decay));
            let value = seminorm_sq(params, potential, &u_sigma, policy)?.gagliardo;
            Ok(SigmaPoint { sigma, seminorm_sq: value, nonmagnetic_ref: reference })
        })
        .collect()
}
