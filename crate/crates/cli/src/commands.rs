//! One function per workflow. Each writes its outputs into the run directory and
//! returns an error only after everything it could write has been written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fracmag_core::cclab::{cutoff, diamagnetic_pointwise, dichotomy_split, gauge_transform, verify_cutoff_estimate};
use fracmag_core::gagliardo::{concentration_function, density, seminorm_sq};
use fracmag_core::groundstate::{
    critical_level, initial_field, minimize, sigma_scaling_curve, Constraint, MinimizeOptions,
};
use fracmag_core::io::{load_snapshot, save_snapshot, FieldMetadata};
use fracmag_core::kernel::{upsilon_integral, upsilon_positive_measure};
use fracmag_core::operator::{apply_operator, calibrate_talenti, CalibrationOptions, OperatorForm, OperatorPolicy};
use fracmag_core::quadrature::{EngineChoice, QuadPolicy};
use fracmag_core::{make_field, Field, Generator, MagneticPotential, MinimizationResult};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_list, parse_vec3, RunConfig, Workflow};
use crate::error::CliError;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_manifest(cfg: &RunConfig, config_file: Option<&Path>, threads: usize) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    let manifest = json!({
        "tool": "fracmag",
        "version": env!("CARGO_PKG_VERSION"),
        "workflow": cfg.workflow,
        "config_file": config_file,
        "threads": threads,
        "seed": cfg.seed,
        "params": { "s": cfg.params.s(), "p": cfg.params.p(), "critical": cfg.params.is_critical() },
        "potential": cfg.potential,
        "grid": cfg.grid,
        "policy": cfg.policy,
        "field": cfg.field,
        "generator": cfg.generator,
        "options": cfg.options,
    });
    write_json(&cfg.out.join("manifest.json"), &manifest)
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.workflow {
        Workflow::Seminorm => run_seminorm(cfg),
        Workflow::Apply => run_apply(cfg),
        Workflow::Minimize | Workflow::Critical => run_minimize(cfg),
        Workflow::SigmaCurve => run_sigma_curve(cfg),
        Workflow::Split => run_split(cfg),
        Workflow::Verify => run_verify(cfg),
        Workflow::Calibrate => run_calibrate(cfg),
    }
}

fn load_field(path: &Path) -> Result<Field, CliError> {
    load_snapshot(path).map(|(f, _)| f).map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))
}

/// The input field: a snapshot, the configured generator, or a Gaussian of width L/8.
fn input_field(cfg: &RunConfig) -> Result<Field, CliError> {
    if let Some(path) = &cfg.field {
        return load_field(path);
    }
    let grid = cfg.grid.expect("grid is resolved whenever no field file is given");
    let generator =
        cfg.generator.clone().unwrap_or(Generator::Gaussian { width: grid.extent() / 8.0, center: grid.center });
    Ok(make_field(&grid, &generator)?)
}

fn metadata(cfg: &RunConfig, field: &Field, role: &str) -> FieldMetadata {
    FieldMetadata {
        grid: *field.grid(),
        s: cfg.params.s(),
        p: cfg.params.p(),
        potential: Some(cfg.potential.clone()),
        generator: cfg.generator.clone(),
        role: role.to_string(),
    }
}

fn concentration_radii(field: &Field) -> Vec<f64> {
    let g = field.grid();
    let mut radii = Vec::new();
    let mut r = g.h;
    while r < g.diameter() {
        radii.push(r);
        r *= 2.0;
    }
    radii.push(g.diameter());
    radii
}

fn run_seminorm(cfg: &RunConfig) -> Result<(), CliError> {
    let u = input_field(cfg)?;
    let energy = seminorm_sq(&cfg.params, &cfg.potential, &u, &cfg.policy)?;
    let mut report = serde_json::to_value(energy)?;
    if cfg.options.density.unwrap_or(false) {
        let mu = density(&cfg.params, &cfg.potential, &u, &cfg.policy)?;
        let q = concentration_function(&mu, &concentration_radii(&u))?;
        report["density_mass"] = json!(mu.total_mass());
        report["concentration"] = json!(q);
        save_snapshot(&cfg.out.join("density.fmag"), &mu.to_field(), &metadata(cfg, &u, "density"))?;
    }
    write_json(&cfg.out.join("energy.json"), &report)
}

fn operator_policy(cfg: &RunConfig) -> OperatorPolicy {
    let form = match cfg.options.form.as_deref() {
        Some("sd") => OperatorForm::SymmetricDifference,
        _ => OperatorForm::PrincipalValue,
    };
    OperatorPolicy {
        form,
        epsilon: cfg.options.epsilon,
        r_cut: cfg.policy.r_cut,
        ..OperatorPolicy::matching(&cfg.policy)
    }
}

fn run_apply(cfg: &RunConfig) -> Result<(), CliError> {
    let u = input_field(cfg)?;
    let out = apply_operator(&cfg.params, &cfg.potential, &u, &operator_policy(cfg))?;
    save_snapshot(&cfg.out.join("operator.fmag"), &out.field, &metadata(cfg, &u, "operator"))?;
    let report = json!({
        "form": out.form,
        "nodes": out.valid.len(),
        "invalid_nodes": out.invalid_count(),
        "max_abs": out.field.max_abs(),
    });
    write_json(&cfg.out.join("operator.json"), &report)
}

pub fn trace_csv(result: &MinimizationResult) -> String {
    let mut csv = String::from("iter,energy,constraint_residual,grad_norm\n");
    for r in &result.trace {
        csv.push_str(&format!("{},{},{},{}\n", r.iter, r.energy, r.constraint_residual, r.grad_norm));
    }
    csv
}

fn run_minimize(cfg: &RunConfig) -> Result<(), CliError> {
    let o = &cfg.options;
    let u0 = match (&cfg.field, &cfg.generator) {
        (None, None) => {
            let grid = cfg.grid.expect("grid is resolved whenever no field file is given");
            initial_field(&grid, cfg.seed, o.noise.unwrap_or(0.1))?
        }
        _ => input_field(cfg)?,
    };
    let defaults = MinimizeOptions::default();
    let options = MinimizeOptions {
        step: o.step,
        max_iter: o.max_iter.unwrap_or(defaults.max_iter),
        tol: o.tol.unwrap_or(defaults.tol),
        radial: o.radial.unwrap_or(false),
        policy: cfg.policy,
        ..defaults
    };
    let result = if cfg.workflow == Workflow::Critical {
        critical_level(&cfg.params, &cfg.potential, &u0, &options)?
    } else {
        let constraint = Constraint { mass: o.mass.unwrap_or(1.0) };
        minimize(&cfg.params, &cfg.potential, &u0, &constraint, &options)?
    };
    save_snapshot(&cfg.out.join("minimizer.fmag"), result.field()?, &metadata(cfg, &u0, "minimizer"))?;
    write_text(&cfg.out.join("trace.csv"), &trace_csv(&result))?;
    write_json(&cfg.out.join("result.json"), &result)?;
    if let Some(warning) = &result.warning {
        eprintln!("fracmag: warning: {warning}");
    }
    // a critical run is capped by design and reports concentration instead
    if !result.converged && cfg.workflow == Workflow::Minimize {
        return Err(CliError::Numerical(format!(
            "no convergence within {} iterations (final step size {:e})",
            result.iterations, result.final_step
        )));
    }
    Ok(())
}

fn run_sigma_curve(cfg: &RunConfig) -> Result<(), CliError> {
    let u = input_field(cfg)?;
    let sigmas = match &cfg.options.sigmas {
        Some(text) => parse_list("sigmas", text)?,
        None => vec![1.0, 0.5, 0.25, 0.125],
    };
    let curve = sigma_scaling_curve(&cfg.params, &cfg.potential, &u, &sigmas, &cfg.policy)?;
    let mut csv = String::from("sigma,seminorm_sq,nonmagnetic_ref\n");
    for p in &curve {
        csv.push_str(&format!("{},{},{}\n", p.sigma, p.seminorm_sq, p.nonmagnetic_ref));
    }
    write_json(&cfg.out.join("sigma_curve.json"), &curve)?;
    write_text(&cfg.out.join("sigma_curve.csv"), &csv)
}

/// Field list for batch splitting; relative paths are taken from the list's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchList {
    fields: Vec<PathBuf>,
}

fn run_split(cfg: &RunConfig) -> Result<(), CliError> {
    let o = &cfg.options;
    let (r_bar, r_n) = (o.r_bar.unwrap_or_default(), o.r_n.unwrap_or_default());
    let split = |u: &Field| {
        let xi = match &o.xi {
            Some(t) => parse_vec3("xi", t)?,
            None => u.grid().center,
        };
        Ok::<_, CliError>(dichotomy_split(&cfg.params, &cfg.potential, u, xi, r_bar, r_n, &cfg.policy)?)
    };
    if let Some(list) = &o.batch {
        let text = std::fs::read_to_string(list)?;
        let batch: BatchList = serde_json::from_str(&text)
            .map_err(|e| CliError::Numerical(format!("{}: {}", list.display(), crate::plotdata::located(&text, &e))))?;
        let base = list.parent().unwrap_or(Path::new("."));
        let mut reports = Vec::new();
        for path in &batch.fields {
            let path = base.join(path);
            let report = split(&load_field(&path)?)?;
            reports.push(json!({ "field": path, "report": report }));
        }
        return write_json(&cfg.out.join("split.json"), &reports);
    }
    let u = input_field(cfg)?;
    let report = split(&u)?;
    if let (Some(u1), Some(u2)) = (&report.u1, &report.u2) {
        save_snapshot(&cfg.out.join("u1.fmag"), u1, &metadata(cfg, &u, "split-inner"))?;
        save_snapshot(&cfg.out.join("u2.fmag"), u2, &metadata(cfg, &u, "split-outer"))?;
    }
    write_json(&cfg.out.join("split.json"), &report)
}

const DIAMAGNETIC_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-10;

fn boundary_fraction(u: &Field) -> f64 {
    let g = u.grid();
    let edge: f64 = (0..g.len()).filter(|&x| g.ring_depth(x) == 0).map(|x| u.values()[x].norm_sqr()).sum();
    let total = u.l2_norm_sq() / g.cell_volume();
    if total > 0.0 {
        edge / total
    } else {
        0.0
    }
}

fn run_verify(cfg: &RunConfig) -> Result<(), CliError> {
    let u = input_field(cfg)?;
    let g = *u.grid();
    let suite = cfg.options.suite.as_deref().unwrap_or_default();
    let (pass, report) = match suite {
        "diamagnetic" => {
            let r = diamagnetic_pointwise(&cfg.potential, &u)?;
            let pass = r.max_violation <= DIAMAGNETIC_TOL;
            (pass, json!({ "report": r, "tolerance": DIAMAGNETIC_TOL }))
        }
        "gauge" => {
            let xi = match &cfg.options.xi {
                Some(t) => parse_vec3("xi", t)?,
                None => [2.0 * g.h, -g.h, g.h],
            };
            // η = -M ξ keeps the shifted potential equal to the original one
            let eta = match cfg.potential.affine_parts() {
                Some((m, _)) => [0, 1, 2].map(|a| -(0..3).map(|b| m[a][b] * xi[b]).sum::<f64>()),
                None if cfg.potential.is_zero() => [0.0; 3],
                None => {
                    return Err(CliError::Validation("`potential`: the gauge suite needs an affine potential".into()))
                }
            };
            let (v, shift) = gauge_transform(&u, xi, eta)?;
            let shifted = shift.shifted_potential(&cfg.potential)?;
            let nu = seminorm_sq(&cfg.params, &cfg.potential, &u, &cfg.policy)?.total;
            let nv = seminorm_sq(&cfg.params, &shifted, &v, &cfg.policy)?.total;
            let rel = (nu - nv).abs() / nu.abs().max(f64::MIN_POSITIVE);
            let edge = boundary_fraction(&u).max(boundary_fraction(&v));
            let pass = rel <= IDENTITY_TOL && edge <= IDENTITY_TOL;
            let report = json!({
                "shift": shift, "norm_sq": nu, "shifted_norm_sq": nv, "relative_difference": rel,
                "boundary_fraction": edge, "tolerance": IDENTITY_TOL,
            });
            (pass, report)
        }
        "upsilon" => {
            // the identity is exact for plain pair sums, so no exterior or self-cell terms
            let policy = QuadPolicy::truncated().with_engine(EngineChoice::Direct);
            let magnetic = seminorm_sq(&cfg.params, &cfg.potential, &u, &policy)?.gagliardo;
            let flat = seminorm_sq(&cfg.params, &MagneticPotential::Zero, &u.modulus(), &policy)?.gagliardo;
            let (ups, min_ratio) = upsilon_integral(&cfg.params, &cfg.potential, &u)?;
            let err = (magnetic - flat - ups).abs() / magnetic.abs().max(f64::MIN_POSITIVE);
            let measure = upsilon_positive_measure(&cfg.potential, &u, 1e-10)?;
            let pass = err <= IDENTITY_TOL && min_ratio >= -DIAMAGNETIC_TOL;
            let report = json!({
                "magnetic": magnetic, "nonmagnetic_modulus": flat, "upsilon_integral": ups,
                "identity_error": err, "min_upsilon_ratio": min_ratio, "positive_measure": measure,
                "tolerance": IDENTITY_TOL,
            });
            (pass, report)
        }
        "cutoff" => {
            let center = match &cfg.options.xi {
                Some(t) => parse_vec3("xi", t)?,
                None => g.center,
            };
            let radius = cfg.options.r_bar.unwrap_or((g.extent() / 8.0).max(2.0 * g.h));
            let phi = cutoff(radius, center, &g)?;
            let dist = |i: usize| {
                let x = g.node(i);
                (0..3).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>().sqrt()
            };
            let e1: Vec<usize> = (0..g.len()).filter(|&i| dist(i) <= radius).collect();
            let e2: Vec<usize> = (0..g.len()).filter(|&i| dist(i) > radius).collect();
            let est = verify_cutoff_estimate(
                &cfg.params,
                &cfg.potential,
                &u,
                &phi.field,
                phi.lipschitz,
                &e1,
                &e2,
                &cfg.policy,
            )?;
            (est.ratio <= 1.0, json!({ "radius": radius, "center": center, "estimate": est }))
        }
        other => return Err(CliError::Validation(format!("`suite`: unknown suite `{other}`"))),
    };
    write_json(&cfg.out.join("verify.json"), &json!({ "suite": suite, "pass": pass, "details": report }))?;
    if !pass {
        return Err(CliError::Numerical(format!("verification suite `{suite}` failed; see verify.json")));
    }
    Ok(())
}

fn run_calibrate(cfg: &RunConfig) -> Result<(), CliError> {
    let defaults = CalibrationOptions::default();
    let options = CalibrationOptions {
        n: cfg.calibration_n.unwrap_or(defaults.n),
        extent: cfg.calibration_extent.unwrap_or(defaults.extent),
        max_residual: cfg.options.tol.unwrap_or(defaults.max_residual),
    };
    let cal = calibrate_talenti(&cfg.params, &options)?;
    write_json(&cfg.out.join("calibration.json"), &cal)
}
