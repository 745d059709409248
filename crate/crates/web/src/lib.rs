//! Browser demo bindings. Each export is a thin wrapper over a plain function so the
//! numerics can be tested natively; the wrappers only translate errors.
//!
//! All demos use a centred Gaussian `exp(-|x|^2 / (2 w^2))` on an `n^3` lattice of side
//! `extent`, in a uniform field of strength `b` along the third axis.

use fracmag_core::groundstate::sigma_scaling_curve;
use fracmag_core::operator::{apply_operator, OperatorPolicy};
use fracmag_core::{
    make_field, seminorm_sq, Field, FractionalParams, Generator, Grid, MagneticPotential, QuadPolicy, Result,
};
use wasm_bindgen::prelude::*;

/// Lattices above this size make the page unresponsive.
pub const MAX_NODES_PER_AXIS: usize = 32;

fn setup(s: f64, b: f64, n: usize, extent: f64, width: f64) -> Result<(FractionalParams, MagneticPotential, Field)> {
    if n > MAX_NODES_PER_AXIS {
        return Err(fracmag_core::FracmagError::Domain(format!("at most {MAX_NODES_PER_AXIS} nodes per axis")));
    }
    let params = FractionalParams::critical(s)?;
    let grid = Grid::centered(n, extent)?;
    let u = make_field(&grid, &Generator::Gaussian { width, center: [0.0; 3] })?;
    Ok((params, MagneticPotential::constant_field(b)?, u))
}

/// `[magnetic seminorm^2, seminorm^2 without field, L^2 norm^2]`.
pub fn energies(s: f64, b: f64, n: usize, extent: f64, width: f64) -> Result<Vec<f64>> {
    let (params, potential, u) = setup(s, b, n, extent, width)?;
    let policy = QuadPolicy::default();
    let magnetic = seminorm_sq(&params, &potential, &u, &policy)?;
    let flat = seminorm_sq(&params, &MagneticPotential::Zero, &u, &policy)?;
    Ok(vec![magnetic.gagliardo, flat.gagliardo, magnetic.l2])
}

/// Seminorm of `σ^{-(3-2s)/2} u(x/σ)` for each `σ`, as `[σ, value]` pairs flattened.
pub fn sigma_curve(s: f64, b: f64, n: usize, extent: f64, width: f64, sigmas: &[f64]) -> Result<Vec<f64>> {
    let (params, potential, u) = setup(s, b, n, extent, width)?;
    let curve = sigma_scaling_curve(&params, &potential, &u, sigmas, &QuadPolicy::default())?;
    Ok(curve.iter().flat_map(|p| [p.sigma, p.seminorm_sq]).collect())
}

/// Operator along the first axis through the centre, as `[x, u, Re Lu, Im Lu]` rows
/// flattened.
pub fn operator_profile(s: f64, b: f64, n: usize, extent: f64, width: f64) -> Result<Vec<f64>> {
    let (params, potential, u) = setup(s, b, n, extent, width)?;
    let out = apply_operator(&params, &potential, &u, &OperatorPolicy::default())?;
    let g = *u.grid();
    let mid = n / 2;
    Ok((0..n)
        .flat_map(|i| {
            let idx = g.index(i, mid, mid);
            let lu = out.field.values()[idx];
            [g.node(idx)[0], u.values()[idx].re, lu.re, lu.im]
        })
        .collect())
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = energies)]
pub fn energies_js(s: f64, b: f64, n: usize, extent: f64, width: f64) -> std::result::Result<Vec<f64>, JsError> {
    js(energies(s, b, n, extent, width))
}

#[wasm_bindgen(js_name = sigmaCurve)]
pub fn sigma_curve_js(
    s: f64,
    b: f64,
    n: usize,
    extent: f64,
    width: f64,
    sigmas: Vec<f64>,
) -> std::result::Result<Vec<f64>, JsError> {
    js(sigma_curve(s, b, n, extent, width, &sigmas))
}

#[wasm_bindgen(js_name = operatorProfile)]
pub fn operator_profile_js(
    s: f64,
    b: f64,
    n: usize,
    extent: f64,
    width: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    js(operator_profile(s, b, n, extent, width))
}
