//! Fractional magnetic Laplacian toolkit: magnetic Gagliardo energies, the pointwise
//! operator, constrained ground states and concentration-compactness diagnostics on
//! uniform cubic lattices.

// `!(x >= bound)` is used on purpose so that NaN inputs are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cclab;
pub mod error;
pub mod fft;
pub mod gagliardo;
pub mod grid;
pub mod groundstate;
pub mod io;
pub mod kernel;
pub mod lattice;
pub mod operator;
pub mod params;
pub mod phase;
pub mod potential;
pub mod quadrature;
pub mod summation;

pub use cclab::{
    cutoff, diamagnetic_pointwise, dichotomy_split, gauge_transform, vanishing_diagnostic, verify_cutoff_estimate,
    SplitReport,
};
pub use error::{FracmagError, Result};
pub use gagliardo::{concentration_function, density, localized_norm, seminorm_sq, DensityField, EnergyBreakdown};
pub use grid::{make_field, Field, Generator, Grid};
pub use groundstate::{
    critical_level, minimize, remove_multiplier, sigma_scaling_curve, Constraint, MinimizationResult, MinimizeOptions,
};
pub use kernel::{kernel_sample, upsilon, upsilon_positive_measure, KernelSample};
pub use operator::{
    apply_operator, apply_operator_at, bilinear_form, calibrate_talenti, fourier_apply_s, OperatorForm, OperatorPolicy,
};
pub use params::{critical_exponent, cs_constant, FractionalParams};
pub use potential::{MagneticPotential, TabulatedPotential};
pub use quadrature::{EngineChoice, ExteriorRule, FarRule, QuadPolicy, SingularRule};
