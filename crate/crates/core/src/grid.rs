//! Uniform cubic lattices, complex fields sampled on them, and field generators.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FracmagError, Result};

/// Uniform cubic lattice with `n` nodes per axis and spacing `h`.
///
/// Node `(i, j, k)` sits at `center + h * (idx - (n - 1) / 2)` per axis and owns the
/// cell of side `h` around it, so the cells tile the box `center ± n h / 2`.
/// Flat indices are row-major with `x` slowest: `(i * n + j) * n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub h: f64,
    pub center: [f64; 3],
}

impl Grid {
    pub fn new(n: usize, h: f64, center: [f64; 3]) -> Result<Self> {
        if n < 4 {
            return Err(FracmagError::domain(format!("grid needs n >= 4, got {n}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(FracmagError::domain(format!("grid spacing must be positive, got {h}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(FracmagError::domain("grid center must be finite"));
        }
        Ok(Self { n, h, center })
    }

    /// Grid of extent `extent` centred at the origin.
    pub fn centered(n: usize, extent: f64) -> Result<Self> {
        Self::new(n, extent / n as f64, [0.0; 3])
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn extent(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.extent()
    }

    pub fn diameter(&self) -> f64 {
        3f64.sqrt() * self.extent()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    /// Coordinate of node index `i` along `axis`.
    #[inline]
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        self.center[axis] + self.h * (i as f64 - 0.5 * (self.n as f64 - 1.0))
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.axis_coord(axis, i)).collect()
    }

    #[inline]
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unravel(idx);
        [self.axis_coord(0, i), self.axis_coord(1, j), self.axis_coord(2, k)]
    }

    /// Lower and upper corners of the cell box.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let hw = self.half_width();
        let c = self.center;
        ([c[0] - hw, c[1] - hw, c[2] - hw], [c[0] + hw, c[1] + hw, c[2] + hw])
    }

    /// Distance from a node to the nearest face of the cell box.
    pub fn distance_to_boundary(&self, idx: usize) -> f64 {
        let (lo, hi) = self.bounds();
        let x = self.node(idx);
        (0..3).map(|a| (x[a] - lo[a]).min(hi[a] - x[a])).fold(f64::INFINITY, f64::min)
    }

    /// Index of the node nearest to `x`, clamped into the grid.
    pub fn nearest_node(&self, x: [f64; 3]) -> usize {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let t = (x[a] - self.center[a]) / self.h + 0.5 * (self.n as f64 - 1.0);
            ijk[a] = t.round().clamp(0.0, self.n as f64 - 1.0) as usize;
        }
        self.index(ijk[0], ijk[1], ijk[2])
    }

    /// Number of index layers between a node and the outermost layer.
    pub fn ring_depth(&self, idx: usize) -> usize {
        let n = self.n;
        self.unravel(idx).iter().map(|&i| i.min(n - 1 - i)).min().unwrap_or(0)
    }

    pub fn same_lattice(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Complex field sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FracmagError::domain(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(FracmagError::domain("field contains non-finite values"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Self { grid, values }
    }

    pub fn from_real(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `∫ |u|^2` with the cell volume as weight.
    pub fn l2_norm_sq(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    /// `∫ |u|^p`.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.norm().powf(p)).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn modulus(&self) -> Field {
        let values = self.values.iter().map(|v| Complex64::new(v.norm(), 0.0)).collect();
        Field { grid: self.grid, values }
    }

    pub fn scaled(&self, factor: f64) -> Field {
        let values = self.values.iter().map(|v| v * factor).collect();
        Field { grid: self.grid, values }
    }

    /// Pointwise `self * other` for a real multiplier field.
    pub fn multiplied(&self, weights: &[f64]) -> Field {
        assert_eq!(weights.len(), self.len());
        let values = self.values.iter().zip(weights).map(|(v, w)| v * w).collect();
        Field { grid: self.grid, values }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        if self.grid != other.grid {
            return Err(FracmagError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x * a + y * b).collect();
        Ok(Field { grid: self.grid, values })
    }

    /// Same nodal values, read on another lattice.
    pub fn relabeled(&self, grid: Grid) -> Result<Field> {
        if grid.n != self.grid.n {
            return Err(FracmagError::GridMismatch);
        }
        Ok(Field { grid, values: self.values.clone() })
    }

    /// Cyclic lattice translation: `result(x) = self(x + shift * h)` with periodic wrap.
    pub fn translated_cells(&self, shift: [i64; 3]) -> Field {
        let n = self.grid.n as i64;
        let mut values = vec![Complex64::new(0.0, 0.0); self.len()];
        for (idx, out) in values.iter_mut().enumerate() {
            let ijk = self.grid.unravel(idx);
            let src: Vec<usize> = (0..3).map(|a| (ijk[a] as i64 + shift[a]).rem_euclid(n) as usize).collect();
            *out = self.values[self.grid.index(src[0], src[1], src[2])];
        }
        Field { grid: self.grid, values }
    }
}

fn dist2(x: [f64; 3], c: [f64; 3]) -> f64 {
    (0..3).map(|a| (x[a] - c[a]).powi(2)).sum()
}

/// Smooth compactly supported bump with peak value 1.
pub fn bump_profile(r: f64, radius: f64) -> f64 {
    let t = r / radius;
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

fn default_center() -> [f64; 3] {
    [0.0; 3]
}

/// Recipes understood by [`make_field`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// `exp(-|x - center|^2 / (2 width^2))`, peak 1.
    Gaussian {
        width: f64,
        #[serde(default = "default_center")]
        center: [f64; 3],
    },
    /// Compact bump `exp(1 - 1/(1 - r^2/R^2))` supported in the ball of radius `radius`.
    Bump { center: [f64; 3], radius: f64 },
    /// `d_s (ε / (ε^2 + |x - z|^2))^{(3-2s)/2}`.
    TalentiBubble { z: [f64; 3], epsilon: f64, d_s: f64, s: f64 },
    /// Two bumps at `grid center ± separation/2` along the first axis.
    TwoBumps { separation: f64, radius: f64 },
    /// `exp(i η·x)` times a base generator.
    PlaneWavePhase { eta: [f64; 3], base: Box<Generator> },
}

impl Generator {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FracmagError::domain(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            Generator::Gaussian { width, .. } => positive(*width, "gaussian width"),
            Generator::Bump { radius, .. } => positive(*radius, "bump radius"),
            Generator::TalentiBubble { epsilon, d_s, s, .. } => {
                positive(*epsilon, "bubble epsilon")?;
                positive(*d_s, "bubble amplitude d_s")?;
                if !(*s > 0.0 && *s < 1.0) {
                    return Err(FracmagError::domain(format!("bubble order s = {s} outside (0,1)")));
                }
                Ok(())
            }
            Generator::TwoBumps { separation, radius } => {
                positive(*separation, "bump separation")?;
                positive(*radius, "bump radius")?;
                if 2.0 * radius >= *separation {
                    return Err(FracmagError::domain("two bumps of this radius would overlap"));
                }
                Ok(())
            }
            Generator::PlaneWavePhase { base, .. } => base.validate(),
        }
    }

    fn eval(&self, grid: &Grid, x: [f64; 3]) -> Complex64 {
        match self {
            Generator::Gaussian { width, center } => {
                Complex64::new((-dist2(x, *center) / (2.0 * width * width)).exp(), 0.0)
            }
            Generator::Bump { center, radius } => Complex64::new(bump_profile(dist2(x, *center).sqrt(), *radius), 0.0),
            Generator::TalentiBubble { z, epsilon, d_s, s } => {
                let q = epsilon / (epsilon * epsilon + dist2(x, *z));
                Complex64::new(d_s * q.powf(0.5 * (3.0 - 2.0 * s)), 0.0)
            }
            Generator::TwoBumps { separation, radius } => {
                let c = grid.center;
                let left = [c[0] - 0.5 * separation, c[1], c[2]];
                let right = [c[0] + 0.5 * separation, c[1], c[2]];
                Complex64::new(
                    bump_profile(dist2(x, left).sqrt(), *radius) + bump_profile(dist2(x, right).sqrt(), *radius),
                    0.0,
                )
            }
            Generator::PlaneWavePhase { eta, base } => {
                let phase = eta[0] * x[0] + eta[1] * x[1] + eta[2] * x[2];
                base.eval(grid, x) * Complex64::from_polar(1.0, phase)
            }
        }
    }
}

/// Sample a generator on every node of `grid`.
pub fn make_field(grid: &Grid, generator: &Generator) -> Result<Field> {
    generator.validate()?;
    let field = Field::from_fn(*grid, |x| generator.eval(grid, x));
    Field::new(field.grid, field.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn node_coordinates_are_symmetric_about_center() {
        let g = Grid::new(5, 0.5, [1.0, -2.0, 0.0]).unwrap();
        assert_eq!(g.node(g.index(2, 2, 2)), [1.0, -2.0, 0.0]);
        assert_eq!(g.axis_coord(0, 0), 0.0);
        assert_eq!(g.axis_coord(0, 4), 2.0);
        assert_eq!(g.len(), 125);
        assert_eq!(g.unravel(g.index(1, 3, 4)), [1, 3, 4]);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(3, 1.0, [0.0; 3]).is_err());
        assert!(Grid::new(8, 0.0, [0.0; 3]).is_err());
        assert!(Grid::new(8, 1.0, [f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn field_length_is_checked() {
        let g = Grid::centered(4, 4.0).unwrap();
        assert!(Field::new(g, vec![Complex64::new(0.0, 0.0); 63]).is_err());
        assert!(Field::new(g, vec![Complex64::new(f64::INFINITY, 0.0); 64]).is_err());
    }

    #[test]
    fn gaussian_peak_is_one() {
        let g = Grid::new(5, 1.0, [0.0; 3]).unwrap();
        let u = make_field(&g, &Generator::Gaussian { width: 1.0, center: [0.0; 3] }).unwrap();
        assert_eq!(u.values()[g.index(2, 2, 2)].re, 1.0);
    }

    #[test]
    fn talenti_bubble_values() {
        let s = 0.3;
        let g = Grid::new(5, 1.0, [0.0; 3]).unwrap();
        let gen = Generator::TalentiBubble { z: [0.0; 3], epsilon: 1.0, d_s: 1.0, s };
        let u = make_field(&g, &gen).unwrap();
        assert_relative_eq!(u.values()[g.index(2, 2, 2)].re, 1.0);
        assert_relative_eq!(u.values()[g.index(3, 2, 2)].re, 2f64.powf(-(3.0 - 2.0 * s) / 2.0), max_relative = 1e-14);
    }

    #[test]
    fn two_bumps_have_disjoint_supports() {
        let g = Grid::centered(24, 12.0).unwrap();
        let h = g.h;
        let sep = 8.0 * h;
        let both = make_field(&g, &Generator::TwoBumps { separation: sep, radius: 3.0 * h }).unwrap();
        let left = make_field(&g, &Generator::Bump { center: [-0.5 * sep, 0.0, 0.0], radius: 3.0 * h }).unwrap();
        let right = make_field(&g, &Generator::Bump { center: [0.5 * sep, 0.0, 0.0], radius: 3.0 * h }).unwrap();
        for i in 0..g.len() {
            assert_eq!(left.values()[i] * right.values()[i], Complex64::new(0.0, 0.0));
            assert_eq!(both.values()[i], left.values()[i] + right.values()[i]);
        }
        assert!(make_field(&g, &Generator::TwoBumps { separation: sep, radius: 0.5 * sep }).is_err());
    }

    #[test]
    fn plane_wave_keeps_modulus() {
        let g = Grid::centered(6, 6.0).unwrap();
        let base = Generator::Gaussian { width: 1.5, center: [0.0; 3] };
        let u = make_field(&g, &base).unwrap();
        let v = make_field(&g, &Generator::PlaneWavePhase { eta: [0.3, -1.0, 2.0], base: Box::new(base) }).unwrap();
        for (a, b) in u.values().iter().zip(v.values()) {
            assert_relative_eq!(a.norm(), b.norm(), max_relative = 1e-14);
        }
    }

    #[test]
    fn cyclic_translation_roundtrips() {
        let g = Grid::centered(6, 6.0).unwrap();
        let u = Field::from_fn(g, |x| Complex64::new(x[0] + 2.0 * x[1], x[2]));
        let back = u.translated_cells([2, -1, 5]).translated_cells([-2, 1, -5]);
        assert_eq!(u, back);
    }

    proptest! {
        #[test]
        fn generated_fields_are_finite(n in 4usize..10, extent in 1.0f64..20.0,
                                       width in 0.1f64..5.0, eps in 0.05f64..3.0, s in 0.05f64..0.95) {
            let g = Grid::centered(n, extent).unwrap();
            for gen in [
                Generator::Gaussian { width, center: [0.1, 0.0, -0.2] },
                Generator::Bump { center: [0.0; 3], radius: width },
                Generator::TalentiBubble { z: [0.0; 3], epsilon: eps, d_s: 1.3, s },
            ] {
                let u = make_field(&g, &gen).unwrap();
                prop_assert_eq!(u.len(), n * n * n);
                prop_assert!(u.values().iter().all(|v| v.re.is_finite() && v.im.is_finite()));
            }
        }
    }
}
