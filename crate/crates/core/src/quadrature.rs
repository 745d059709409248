//! Lattice quadrature shared by the energy, the operator and the density.
//!
//! The double integral is discretised as a sum over ordered node pairs with weight
//! `h^6`. Two optional corrections lift the plain truncated sum to second order:
//!
//! * the exterior rule extends the field by zero outside the box and adds the exact
//!   lattice sum of the kernel over all outside nodes, so that the energy equals the
//!   whole-lattice energy of the zero-extended field;
//! * the singular rule replaces the excluded self-cell by its leading Taylor term,
//!   `-(c_s/2) Z(1+2s)/3 h^{2-2s} ∫ |∇_A u|^2`, where `Z` is the analytically continued
//!   Epstein zeta function of the integer lattice. The discrete covariant gradient is
//!   taken along nearest-neighbour edges with the same midpoint phase.
//!
//! The operator is the exact gradient of the discrete energy, so the weak and the
//! pointwise forms agree to rounding.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FracmagError, Result};
use crate::fft::LatticeConvolver;
use crate::grid::{Field, Grid};
use crate::lattice::{epstein_zeta, lattice_ball_sum, KernelTable};
use crate::params::FractionalParams;
use crate::phase::{PhaseModel, RowFactors};
use crate::potential::MagneticPotential;
use crate::summation::{det_sum, par_map, NeumaierSum};

/// Treatment of pairs farther apart than the cutoff radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarRule {
    /// Same integrand for every pair.
    #[default]
    Exact,
    /// Phase set to one beyond the cutoff (evaluated by FFT) plus a reported error bound.
    FastFar,
    /// Pairs beyond the cutoff are omitted.
    Drop,
}

/// Treatment of the excluded self-cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularRule {
    Exclude,
    #[default]
    ZetaCorrected,
}

/// Treatment of pairs with one point outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExteriorRule {
    Truncate,
    #[default]
    ZeroExtension,
}

/// Pair engine selection. `Auto` uses the FFT convolution whenever the phase is trivial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    #[default]
    Auto,
    Direct,
    Convolution,
}

/// Quadrature policy of the energy engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadPolicy {
    pub far: FarRule,
    /// Cutoff radius; defaults to the box half-width.
    pub r_cut: Option<f64>,
    pub singular: SingularRule,
    pub exterior: ExteriorRule,
    pub engine: EngineChoice,
    /// Visit each unordered pair once and double it.
    pub half_pairs: bool,
}

impl Default for QuadPolicy {
    fn default() -> Self {
        Self {
            far: FarRule::Exact,
            r_cut: None,
            singular: SingularRule::ZetaCorrected,
            exterior: ExteriorRule::ZeroExtension,
            engine: EngineChoice::Auto,
            half_pairs: true,
        }
    }
}

impl QuadPolicy {
    /// Plain pair sum over the box with the self-pairs excluded and no corrections.
    pub fn truncated() -> Self {
        Self { singular: SingularRule::Exclude, exterior: ExteriorRule::Truncate, ..Self::default() }
    }

    pub fn with_engine(self, engine: EngineChoice) -> Self {
        Self { engine, ..self }
    }

    pub fn with_cutoff(self, far: FarRule, r_cut: f64) -> Self {
        Self { far, r_cut: Some(r_cut), ..self }
    }

    pub fn r_cut(&self, grid: &Grid) -> Result<f64> {
        let r = self.r_cut.unwrap_or(grid.half_width());
        if !(r >= 2.0 * grid.h * (1.0 - 1e-12)) {
            return Err(FracmagError::Policy(format!("R_cut = {r} is below 2h = {}", 2.0 * grid.h)));
        }
        Ok(r)
    }

    pub(crate) fn stencil(&self, grid: &Grid) -> Result<Stencil> {
        let r_cut = self.r_cut(grid)?;
        let (near_cut, far, exterior_cut) = match self.far {
            FarRule::Exact => (f64::INFINITY, false, f64::INFINITY),
            FarRule::FastFar => (r_cut, true, f64::INFINITY),
            FarRule::Drop => (r_cut, false, r_cut),
        };
        Ok(Stencil {
            exclusion: 0.5 * grid.h,
            near_cut,
            far,
            exterior_cut,
            exterior: self.exterior,
            singular: self.singular,
            engine: self.engine,
            half_pairs: self.half_pairs,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    /// Pairs closer than or at this distance are excluded.
    pub exclusion: f64,
    /// Largest pair distance in the near table.
    pub near_cut: f64,
    /// Pairs beyond `near_cut` are summed with a trivial phase.
    pub far: bool,
    /// Exterior lattice points are counted up to this distance.
    pub exterior_cut: f64,
    pub exterior: ExteriorRule,
    pub singular: SingularRule,
    pub engine: EngineChoice,
    pub half_pairs: bool,
}

struct FarPart {
    table: KernelTable,
    sums: Vec<f64>,
    conv: LatticeConvolver,
    moment: LatticeConvolver,
    max_potential: f64,
}

/// Energy split into its quadrature contributions, each with the `c_s/2` or `c_s`
/// prefactor already applied.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct EnergyParts {
    pub pair: f64,
    pub exterior: f64,
    pub singular: f64,
    pub far_bound: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.pair + self.exterior + self.singular
    }
}

pub(crate) struct Engine {
    pub grid: Grid,
    pub cs: f64,
    pub stencil: Stencil,
    pub phase: PhaseModel,
    near: KernelTable,
    near_sums: Vec<f64>,
    near_conv: Option<LatticeConvolver>,
    far: Option<FarPart>,
    kappa: Option<Vec<f64>>,
    edge_coef: Option<f64>,
    gauge: Option<Vec<Complex64>>,
}

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

impl Engine {
    pub fn new(
        params: &FractionalParams,
        potential: &MagneticPotential,
        grid: &Grid,
        stencil: Stencil,
    ) -> Result<Self> {
        let phase = PhaseModel::new(potential, grid)?;
        let convolution = match stencil.engine {
            EngineChoice::Auto => phase.is_trivial(),
            EngineChoice::Direct => false,
            EngineChoice::Convolution if phase.is_trivial() => true,
            EngineChoice::Convolution => {
                return Err(FracmagError::Policy("the convolution engine needs a zero potential".into()))
            }
        };
        let s = params.s();
        let expo = params.kernel_exponent();
        let h = grid.h;
        let (excl, near_cut) = (stencil.exclusion, stencil.near_cut);
        let near = KernelTable::riesz(grid, expo, |r| r > excl && r <= near_cut);
        let near_sums = near.in_box_sums(grid);
        let near_conv = convolution.then(|| LatticeConvolver::new(&near));

        let far = if stencil.far {
            let table = KernelTable::riesz(grid, expo, |r| r > near_cut.max(excl));
            let mut moment = table.clone();
            for (idx, v) in moment.values.iter_mut().enumerate() {
                let n = grid.n;
                let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
                *v *= h * ((i * i + j * j + k * k) as f64).sqrt();
            }
            let (lo, hi) = grid.bounds();
            Some(FarPart {
                sums: table.in_box_sums(grid),
                conv: LatticeConvolver::new(&table),
                moment: LatticeConvolver::new(&moment),
                max_potential: potential.max_norm_on_box(lo, hi),
                table,
            })
        } else {
            None
        };

        let kappa = match stencil.exterior {
            ExteriorRule::Truncate => None,
            ExteriorRule::ZeroExtension => {
                // lattice sum of the kernel over every node the stencil reaches
                let inner = lattice_ball_sum(expo, excl / h);
                let whole = if stencil.exterior_cut.is_finite() {
                    lattice_ball_sum(expo, stencil.exterior_cut / h) - inner
                } else {
                    epstein_zeta(expo) - inner
                } * h.powf(-expo);
                let h3 = grid.cell_volume();
                Some(
                    (0..grid.len())
                        .map(|x| {
                            let inside = near_sums[x] + far.as_ref().map_or(0.0, |f| f.sums[x]);
                            (h3 * (whole - inside)).max(0.0)
                        })
                        .collect(),
                )
            }
        };

        let edge_coef = match stencil.singular {
            SingularRule::Exclude => None,
            SingularRule::ZetaCorrected => {
                let z = epstein_zeta(1.0 + 2.0 * s) - lattice_ball_sum(1.0 + 2.0 * s, excl / h);
                Some(-0.5 * params.cs() * z / 3.0 * h.powf(2.0 - 2.0 * s))
            }
        };

        let gauge = match &phase {
            PhaseModel::Affine { .. } => {
                Some((0..grid.len()).map(|x| Complex64::from_polar(1.0, -phase.gauge_angle(grid.node(x)))).collect())
            }
            _ => None,
        };

        Ok(Self {
            grid: *grid,
            cs: params.cs(),
            stencil,
            phase,
            near,
            near_sums,
            near_conv,
            far,
            kappa,
            edge_coef,
            gauge,
        })
    }

    #[cfg(test)]
    pub fn uses_convolution(&self) -> bool {
        self.near_conv.is_some()
    }

    pub fn check_grid(&self, u: &Field) -> Result<()> {
        if u.grid() != &self.grid {
            return Err(FracmagError::GridMismatch);
        }
        Ok(())
    }

    fn twist(&self, u: &[Complex64]) -> Vec<Complex64> {
        match &self.gauge {
            Some(p) => u.iter().zip(p).map(|(a, b)| a * b).collect(),
            None => u.to_vec(),
        }
    }

    fn untwist(&self, x: usize, v: Complex64) -> Complex64 {
        match &self.gauge {
            Some(p) => v * p[x].conj(),
            None => v,
        }
    }

    /// Calls `f(y, K(x - y), E(x, y))` for every node `y >= y_start` with a nonzero kernel.
    #[inline(always)]
    fn visit_row<F: FnMut(usize, f64, Complex64)>(&self, x: usize, y_start: usize, mut f: F) {
        let g = &self.grid;
        let n = g.n;
        let xa = g.unravel(x);
        let row = RowFactors::new(&self.phase, g, x);
        if y_start >= g.len() {
            return;
        }
        let [mut i, mut j, mut k] = g.unravel(y_start);
        for y in y_start..g.len() {
            let kv = self.near.at(xa[0].abs_diff(i), xa[1].abs_diff(j), xa[2].abs_diff(k));
            if kv != 0.0 {
                f(y, kv, row.at(&self.phase, g, [i, j, k]));
            }
            k += 1;
            if k == n {
                k = 0;
                j += 1;
                if j == n {
                    j = 0;
                    i += 1;
                }
            }
        }
    }

    fn row_start(&self, x: usize) -> usize {
        if self.stencil.half_pairs {
            x + 1
        } else {
            0
        }
    }

    fn pair_factor(&self) -> f64 {
        if self.stencil.half_pairs {
            2.0
        } else {
            1.0
        }
    }

    /// `Σ_{x ≠ y} |ω u(x) - u(y)|^2 K` over the near table.
    fn near_pair_energy(&self, u: &[Complex64]) -> f64 {
        if let Some(conv) = &self.near_conv {
            let ku = conv.apply(u);
            return det_sum(u.len(), |x| 2.0 * u[x].norm_sqr() * self.near_sums[x] - 2.0 * (u[x].conj() * ku[x]).re);
        }
        let ut = self.twist(u);
        self.pair_factor()
            * det_sum(ut.len(), |x| {
                let ux = ut[x];
                let mut acc = NeumaierSum::new();
                self.visit_row(x, self.row_start(x), |y, kv, e| acc.add((ux * e - ut[y]).norm_sqr() * kv));
                acc.value()
            })
    }

    fn near_pair_bilinear(&self, u: &[Complex64], v: &[Complex64]) -> f64 {
        if let Some(conv) = &self.near_conv {
            let (ku, kv) = (conv.apply(u), conv.apply(v));
            return det_sum(u.len(), |x| {
                let diag = 2.0 * (u[x] * v[x].conj()).re * self.near_sums[x];
                diag - ((v[x].conj() * ku[x]).re + (u[x].conj() * kv[x]).re)
            });
        }
        let (ut, vt) = (self.twist(u), self.twist(v));
        self.pair_factor()
            * det_sum(ut.len(), |x| {
                let (ux, vx) = (ut[x], vt[x]);
                let mut acc = NeumaierSum::new();
                self.visit_row(x, self.row_start(x), |y, kv, e| {
                    let (du, dv) = (ux * e - ut[y], vx * e - vt[y]);
                    acc.add((du.re * dv.re + du.im * dv.im) * kv)
                });
                acc.value()
            })
    }

    fn near_pair_density(&self, u: &[Complex64]) -> Vec<f64> {
        if let Some(conv) = &self.near_conv {
            let ku = conv.apply(u);
            let modsq: Vec<f64> = u.iter().map(|v| v.norm_sqr()).collect();
            let km = conv.apply_real(&modsq);
            return (0..u.len())
                .map(|x| (modsq[x] * self.near_sums[x] - 2.0 * (u[x].conj() * ku[x]).re + km[x]).max(0.0))
                .collect();
        }
        let ut = self.twist(u);
        par_map(ut.len(), |x| {
            let ux = ut[x];
            let mut acc = NeumaierSum::new();
            self.visit_row(x, 0, |y, kv, e| acc.add((ux * e - ut[y]).norm_sqr() * kv));
            acc.value()
        })
    }

    /// `Σ_y (u(x) - e^{iθ(x,y)} u(y)) K(x - y)` at one node, direct evaluation.
    fn near_operator_at(&self, ut: &[Complex64], x: usize) -> Complex64 {
        let ux = ut[x];
        let (mut re, mut im) = (NeumaierSum::new(), NeumaierSum::new());
        self.visit_row(x, 0, |y, kv, e| {
            let d = (ux - e.conj() * ut[y]) * kv;
            re.add(d.re);
            im.add(d.im);
        });
        self.untwist(x, Complex64::new(re.value(), im.value()))
    }

    fn near_operator(&self, u: &[Complex64]) -> Vec<Complex64> {
        if let Some(conv) = &self.near_conv {
            let ku = conv.apply(u);
            return (0..u.len()).map(|x| u[x] * self.near_sums[x] - ku[x]).collect();
        }
        let ut = self.twist(u);
        par_map(ut.len(), |x| self.near_operator_at(&ut, x))
    }

    fn far_terms(&self, u: &[Complex64]) -> (f64, f64) {
        let Some(far) = &self.far else { return (0.0, 0.0) };
        let ku = far.conv.apply(u);
        let energy = det_sum(u.len(), |x| 2.0 * u[x].norm_sqr() * far.sums[x] - 2.0 * (u[x].conj() * ku[x]).re);
        let modulus: Vec<f64> = u.iter().map(|v| v.norm()).collect();
        let km = far.moment.apply_real(&modulus);
        let bound = far.max_potential * det_sum(u.len(), |x| modulus[x] * km[x]);
        (energy, bound)
    }

    fn far_bilinear(&self, u: &[Complex64], v: &[Complex64]) -> f64 {
        let Some(far) = &self.far else { return 0.0 };
        let (ku, kv) = (far.conv.apply(u), far.conv.apply(v));
        det_sum(u.len(), |x| {
            2.0 * (u[x] * v[x].conj()).re * far.sums[x] - ((v[x].conj() * ku[x]).re + (u[x].conj() * kv[x]).re)
        })
    }

    fn far_density(&self, u: &[Complex64]) -> Option<Vec<f64>> {
        let far = self.far.as_ref()?;
        let ku = far.conv.apply(u);
        let modsq: Vec<f64> = u.iter().map(|v| v.norm_sqr()).collect();
        let km = far.conv.apply_real(&modsq);
        Some((0..u.len()).map(|x| (modsq[x] * far.sums[x] - 2.0 * (u[x].conj() * ku[x]).re + km[x]).max(0.0)).collect())
    }

    fn missing_neighbours(&self, x: usize) -> usize {
        let n = self.grid.n;
        self.grid.unravel(x).iter().map(|&i| usize::from(i == 0) + usize::from(i == n - 1)).sum()
    }

    fn forward_neighbours(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        let g = &self.grid;
        let ijk = g.unravel(x);
        (0..3).filter_map(move |a| {
            let mut t = ijk;
            t[a] += 1;
            (t[a] < g.n).then(|| g.index(t[0], t[1], t[2]))
        })
    }

    fn neighbours(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        let g = &self.grid;
        let ijk = g.unravel(x);
        (0..6).filter_map(move |m| {
            let (a, up) = (m / 2, m % 2 == 1);
            let mut t = ijk;
            if up {
                t[a] += 1;
                (t[a] < g.n).then(|| g.index(t[0], t[1], t[2]))
            } else {
                (t[a] > 0).then(|| {
                    t[a] -= 1;
                    g.index(t[0], t[1], t[2])
                })
            }
        })
    }

    fn zero_extended(&self) -> bool {
        self.stencil.exterior == ExteriorRule::ZeroExtension
    }

    /// `Σ_edges Re[(ω u(x) - u(y)) conj(ω v(x) - v(y))]`, boundary edges included under
    /// zero extension.
    fn edge_bilinear(&self, u: &[Complex64], v: &[Complex64]) -> f64 {
        let g = &self.grid;
        det_sum(u.len(), |x| {
            let xc = g.node(x);
            let mut acc = NeumaierSum::new();
            for y in self.forward_neighbours(x) {
                let w = self.phase.omega(xc, g.node(y));
                let (du, dv) = (w * u[x] - u[y], w * v[x] - v[y]);
                acc.add(du.re * dv.re + du.im * dv.im);
            }
            if self.zero_extended() {
                acc.add(self.missing_neighbours(x) as f64 * (u[x] * v[x].conj()).re);
            }
            acc.value()
        })
    }

    fn edge_operator_at(&self, u: &[Complex64], x: usize) -> Complex64 {
        let g = &self.grid;
        let xc = g.node(x);
        let mut acc = czero();
        for y in self.neighbours(x) {
            acc += u[x] - self.phase.omega(xc, g.node(y)).conj() * u[y];
        }
        if self.zero_extended() {
            acc += u[x] * self.missing_neighbours(x) as f64;
        }
        acc
    }

    fn edge_density_at(&self, u: &[Complex64], x: usize) -> f64 {
        let g = &self.grid;
        let xc = g.node(x);
        let mut acc = 0.0;
        for y in self.neighbours(x) {
            acc += (self.phase.omega(xc, g.node(y)) * u[x] - u[y]).norm_sqr();
        }
        if self.zero_extended() {
            acc += self.missing_neighbours(x) as f64 * u[x].norm_sqr();
        }
        acc
    }

    pub fn energy(&self, u: &Field) -> Result<EnergyParts> {
        self.check_grid(u)?;
        let u = u.values();
        let (h, cs) = (self.grid.h, self.cs);
        let h3 = self.grid.cell_volume();
        let (far_energy, far_bound) = self.far_terms(u);
        let pair = 0.5 * cs * h3 * h3 * (self.near_pair_energy(u) + far_energy);
        let exterior = self.kappa.as_ref().map_or(0.0, |k| cs * h3 * det_sum(u.len(), |x| k[x] * u[x].norm_sqr()));
        let singular = self.edge_coef.map_or(0.0, |a| a * h * self.edge_bilinear(u, u));
        Ok(EnergyParts { pair, exterior, singular, far_bound: cs * h3 * h3 * far_bound })
    }

    pub fn bilinear(&self, u: &Field, v: &Field) -> Result<f64> {
        self.check_grid(u)?;
        self.check_grid(v)?;
        let (u, v) = (u.values(), v.values());
        let (h, cs) = (self.grid.h, self.cs);
        let h3 = self.grid.cell_volume();
        let pair = 0.5 * cs * h3 * h3 * (self.near_pair_bilinear(u, v) + self.far_bilinear(u, v));
        let exterior =
            self.kappa.as_ref().map_or(0.0, |k| cs * h3 * det_sum(u.len(), |x| k[x] * (u[x] * v[x].conj()).re));
        let singular = self.edge_coef.map_or(0.0, |a| a * h * self.edge_bilinear(u, v));
        Ok(pair + exterior + singular)
    }

    /// Per-node density without the `c_s/2` prefactor, including `|u|^2`.
    pub fn density(&self, u: &Field) -> Result<Vec<f64>> {
        self.check_grid(u)?;
        let u = u.values();
        let h = self.grid.h;
        let h3 = self.grid.cell_volume();
        let near = self.near_pair_density(u);
        let far = self.far_density(u);
        Ok((0..u.len())
            .map(|x| {
                let m2 = u[x].norm_sqr();
                let mut mu = m2 + h3 * (near[x] + far.as_ref().map_or(0.0, |f| f[x]));
                if let Some(k) = &self.kappa {
                    mu += k[x] * m2;
                }
                if let Some(a) = self.edge_coef {
                    mu += a / (self.cs * h * h) * self.edge_density_at(u, x);
                }
                mu
            })
            .collect())
    }

    fn local_terms(&self, u: &[Complex64], x: usize) -> Complex64 {
        let h = self.grid.h;
        let mut out = czero();
        if let Some(k) = &self.kappa {
            out += u[x] * (self.cs * k[x]);
        }
        if let Some(a) = self.edge_coef {
            out += self.edge_operator_at(u, x) * (a / (h * h));
        }
        out
    }

    /// Principal-value form at every node.
    pub fn operator(&self, u: &Field) -> Result<Vec<Complex64>> {
        self.check_grid(u)?;
        let u = u.values();
        let scale = self.cs * self.grid.cell_volume();
        let near = self.near_operator(u);
        Ok(par_map(u.len(), |x| near[x] * scale + self.local_terms(u, x)))
    }

    /// Principal-value form at selected nodes by direct summation.
    pub fn operator_at(&self, u: &Field, nodes: &[usize]) -> Result<Vec<Complex64>> {
        self.check_grid(u)?;
        let u = u.values();
        let ut = self.twist(u);
        let scale = self.cs * self.grid.cell_volume();
        nodes
            .iter()
            .map(|&x| {
                if x >= u.len() {
                    return Err(FracmagError::domain(format!("node {x} outside the grid")));
                }
                Ok(self.near_operator_at(&ut, x) * scale + self.local_terms(u, x))
            })
            .collect()
    }

    /// Symmetric second-difference form at one node.
    pub fn symmetric_at(&self, u: &Field, ut: &[Complex64], x: usize) -> Result<Complex64> {
        if self.grid.ring_depth(x) < 1 {
            return Err(FracmagError::NotInterior(x));
        }
        let g = &self.grid;
        let n = g.n as isize;
        let vals = u.values();
        let xa = g.unravel(x);
        let row = RowFactors::new(&self.phase, g, x);
        let ux = ut[x];
        let zero_ext = self.zero_extended();
        let (mut sym_re, mut sym_im) = (NeumaierSum::new(), NeumaierSum::new());
        let (mut one_re, mut one_im) = (NeumaierSum::new(), NeumaierSum::new());
        self.visit_row(x, 0, |y, kv, e| {
            let ya = g.unravel(y);
            let z = [
                2 * xa[0] as isize - ya[0] as isize,
                2 * xa[1] as isize - ya[1] as isize,
                2 * xa[2] as isize - ya[2] as isize,
            ];
            let near_y = e.conj() * ut[y];
            if z.iter().all(|&c| c >= 0 && c < n) {
                let za = [z[0] as usize, z[1] as usize, z[2] as usize];
                let near_z = row.at(&self.phase, g, za).conj() * ut[g.index(za[0], za[1], za[2])];
                let d = (near_y + near_z - ux * 2.0) * kv;
                sym_re.add(d.re);
                sym_im.add(d.im);
            } else if zero_ext {
                let d = (ux - near_y) * kv;
                one_re.add(d.re);
                one_im.add(d.im);
            }
        });
        let h3 = g.cell_volume();
        let sym = Complex64::new(sym_re.value(), sym_im.value()) * (-0.5 * self.cs * h3);
        let one = Complex64::new(one_re.value(), one_im.value()) * (self.cs * h3);
        Ok(self.untwist(x, sym + one) + self.local_terms(vals, x))
    }

    /// `∫_{E1} |u|^2 + (c_s/2) Σ_{x ∈ E1, y ∈ E2} |ω u(x) - u(y)|^2 K h^6`, with the
    /// self-cell correction restricted to edges joining the two sets.
    pub fn localized(&self, u: &Field, e1: &[usize], e2: &[usize]) -> Result<f64> {
        self.check_grid(u)?;
        let g = &self.grid;
        let n_nodes = g.len();
        if let Some(&bad) = e1.iter().chain(e2).find(|&&i| i >= n_nodes) {
            return Err(FracmagError::domain(format!("node {bad} outside the grid")));
        }
        let dedup = |e: &[usize]| {
            let mut v = e.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let (e1, e2) = (dedup(e1), dedup(e2));
        let mut in2 = vec![false; n_nodes];
        e2.iter().for_each(|&i| in2[i] = true);
        let vals = u.values();
        let h3 = g.cell_volume();
        let l2 = h3 * det_sum(e1.len(), |a| vals[e1[a]].norm_sqr());
        let pairs = det_sum(e1.len(), |a| {
            let x = e1[a];
            let xa = g.unravel(x);
            let xc = g.node(x);
            let mut acc = NeumaierSum::new();
            for &y in &e2 {
                let ya = g.unravel(y);
                let d = [xa[0].abs_diff(ya[0]), xa[1].abs_diff(ya[1]), xa[2].abs_diff(ya[2])];
                let kn = self.near.at(d[0], d[1], d[2]);
                if kn != 0.0 {
                    acc.add((self.phase.omega(xc, g.node(y)) * vals[x] - vals[y]).norm_sqr() * kn);
                }
                if let Some(far) = &self.far {
                    let kf = far.table.at(d[0], d[1], d[2]);
                    if kf != 0.0 {
                        acc.add((vals[x] - vals[y]).norm_sqr() * kf);
                    }
                }
            }
            acc.value()
        });
        let singular = self.edge_coef.map_or(0.0, |a| {
            let xc = |x: usize| g.node(x);
            0.5 * a
                * g.h
                * det_sum(e1.len(), |k| {
                    let x = e1[k];
                    self.neighbours(x)
                        .filter(|&y| in2[y])
                        .map(|y| (self.phase.omega(xc(x), xc(y)) * vals[x] - vals[y]).norm_sqr())
                        .sum::<f64>()
                })
        });
        Ok(l2 + 0.5 * self.cs * h3 * h3 * pairs + singular)
    }

    pub fn twisted(&self, u: &Field) -> Vec<Complex64> {
        self.twist(u.values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_field, Generator};
    use approx::assert_relative_eq;

    fn random_field(grid: Grid, seed: u64) -> Field {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let env = make_field(&grid, &Generator::Gaussian { width: grid.extent() / 5.0, center: [0.0; 3] }).unwrap();
        let vals = env
            .values()
            .iter()
            .map(|e| e * Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Field::new(grid, vals).unwrap()
    }

    fn engine(pot: &MagneticPotential, grid: &Grid, policy: QuadPolicy) -> Engine {
        let params = FractionalParams::new(0.4, 2.5).unwrap();
        Engine::new(&params, pot, grid, policy.stencil(grid).unwrap()).unwrap()
    }

    #[test]
    fn convolution_and_direct_engines_agree() {
        let g = Grid::centered(8, 6.0).unwrap();
        let u = random_field(g, 1);
        let v = random_field(g, 2);
        for base in [QuadPolicy::default(), QuadPolicy::truncated()] {
            let d = engine(&MagneticPotential::Zero, &g, base.with_engine(EngineChoice::Direct));
            let c = engine(&MagneticPotential::Zero, &g, base.with_engine(EngineChoice::Convolution));
            assert!(c.uses_convolution() && !d.uses_convolution());
            assert_relative_eq!(d.energy(&u).unwrap().total(), c.energy(&u).unwrap().total(), max_relative = 1e-11);
            assert_relative_eq!(d.bilinear(&u, &v).unwrap(), c.bilinear(&u, &v).unwrap(), max_relative = 1e-10);
            let (od, oc) = (d.operator(&u).unwrap(), c.operator(&u).unwrap());
            let scale = od.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (a, b) in od.iter().zip(&oc) {
                assert!((a - b).norm() < 1e-11 * scale);
            }
            let (md, mc) = (d.density(&u).unwrap(), c.density(&u).unwrap());
            for (a, b) in md.iter().zip(&mc) {
                assert_relative_eq!(a, b, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn operator_is_the_gradient_of_the_energy() {
        let g = Grid::centered(7, 5.0).unwrap();
        let pot = MagneticPotential::constant_field(1.5).unwrap();
        for policy in [QuadPolicy::default(), QuadPolicy::truncated()] {
            let e = engine(&pot, &g, policy);
            let u = random_field(g, 3);
            let v = random_field(g, 4);
            let lu = e.operator(&u).unwrap();
            let weak: f64 = lu.iter().zip(v.values()).map(|(a, b)| (a * b.conj()).re).sum::<f64>() * g.cell_volume();
            assert_relative_eq!(weak, e.bilinear(&u, &v).unwrap(), max_relative = 1e-10);
            assert_relative_eq!(e.bilinear(&u, &u).unwrap(), e.energy(&u).unwrap().total(), max_relative = 1e-12);
        }
    }

    #[test]
    fn half_pairs_reproduce_full_pairs() {
        let g = Grid::centered(7, 5.0).unwrap();
        let pot = MagneticPotential::constant_field(2.0).unwrap();
        let u = random_field(g, 5);
        let full = engine(&pot, &g, QuadPolicy { half_pairs: false, ..QuadPolicy::default() });
        let half = engine(&pot, &g, QuadPolicy::default());
        assert_relative_eq!(full.energy(&u).unwrap().pair, half.energy(&u).unwrap().pair, max_relative = 1e-12);
    }

    #[test]
    fn zero_extension_is_translation_invariant() {
        // a field that fits well inside two boxes differing by whole cells has the same energy
        let g = Grid::centered(9, 9.0).unwrap();
        let u = make_field(&g, &Generator::Bump { center: [0.0; 3], radius: 2.5 }).unwrap();
        let shifted = u.translated_cells([1, -2, 1]);
        let e = engine(&MagneticPotential::Zero, &g, QuadPolicy::default());
        assert_relative_eq!(e.energy(&u).unwrap().total(), e.energy(&shifted).unwrap().total(), max_relative = 1e-11);
    }

    #[test]
    fn symmetric_form_matches_principal_value_under_zero_extension() {
        let g = Grid::centered(7, 5.0).unwrap();
        let pot = MagneticPotential::constant_field(1.0).unwrap();
        let e = engine(&pot, &g, QuadPolicy::default());
        let u = random_field(g, 6);
        let pv = e.operator(&u).unwrap();
        let ut = e.twisted(&u);
        for x in 0..g.len() {
            match e.symmetric_at(&u, &ut, x) {
                Ok(v) => assert!((v - pv[x]).norm() < 1e-10 * (1.0 + pv[x].norm())),
                Err(FracmagError::NotInterior(_)) => assert_eq!(g.ring_depth(x), 0),
                Err(other) => panic!("{other}"),
            }
        }
    }

    #[test]
    fn fast_far_bound_covers_the_phase_error() {
        let g = Grid::centered(8, 6.0).unwrap();
        let pot = MagneticPotential::constant_field(0.8).unwrap();
        let u = random_field(g, 7);
        let exact = engine(&pot, &g, QuadPolicy::default()).energy(&u).unwrap();
        let fast = engine(&pot, &g, QuadPolicy::default().with_cutoff(FarRule::FastFar, 2.0)).energy(&u).unwrap();
        assert!(fast.far_bound > 0.0);
        assert!((exact.total() - fast.total()).abs() <= fast.far_bound);
    }
}
