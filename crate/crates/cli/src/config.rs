//! Run configuration: a TOML file with flat top-level keys and one optional section per
//! workflow, merged with command-line flags (flags win).

use std::path::{Path, PathBuf};

use fracmag_core::quadrature::{EngineChoice, ExteriorRule, FarRule, QuadPolicy, SingularRule};
use fracmag_core::{FractionalParams, Generator, Grid, MagneticPotential};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Values common to every workflow. Every field is optional so that a file and the
/// flags can each supply part of it.
#[derive(Debug, Clone, Default, Deserialize, Serialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Common {
    /// Fractional order s in (0, 1).
    #[arg(long)]
    pub s: Option<f64>,
    /// Lebesgue exponent p in (2, 6/(3-2s)]; defaults to the critical exponent.
    #[arg(long)]
    pub p: Option<f64>,
    /// zero | constant-field:B | linear:m11,...,m33[,b1,b2,b3]
    #[arg(long, allow_hyphen_values = true)]
    pub potential: Option<String>,
    /// Nodes per axis.
    #[arg(long)]
    pub n: Option<usize>,
    /// Box side length; defaults to n/2.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub extent: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 for all cores. FRACMAG_THREADS overrides this.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input field (FMAG1); replaces the generator.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// gaussian:W | bump:R | talenti:EPS,D | two-bumps:D,R
    #[arg(long)]
    pub generator: Option<String>,
    /// Plane-wave modulation e^{i eta.x} applied to the generated field: e1,e2,e3.
    #[arg(long, allow_hyphen_values = true)]
    pub phase: Option<String>,
    /// exact | fast-far | drop
    #[arg(long)]
    pub far: Option<String>,
    #[arg(long)]
    pub r_cut: Option<f64>,
    /// zeta | exclude
    #[arg(long)]
    pub singular: Option<String>,
    /// zero-extension | truncate
    #[arg(long)]
    pub exterior: Option<String>,
    /// auto | direct | convolution
    #[arg(long)]
    pub engine: Option<String>,
}

macro_rules! merge_fields {
    ($flags:expr, $file:expr, $($f:ident),*) => {
        $( if $flags.$f.is_none() { $flags.$f = $file.$f.clone(); } )*
    };
}

impl Common {
    pub fn merged_with(mut self, file: &Common) -> Common {
        merge_fields!(
            self, file, s, p, potential, n, extent, out, threads, seed, field, generator, phase, far, r_cut, singular,
            exterior, engine
        );
        self
    }
}

/// Workflow options; which ones apply depends on the subcommand.
#[derive(Debug, Clone, Default, Deserialize, Serialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct WorkflowOptions {
    /// Target mass of the L^p constraint.
    #[arg(long)]
    pub mass: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Restrict to fields radial about the grid centre.
    #[arg(long)]
    pub radial: Option<bool>,
    /// Relative size of the seeded noise on the default initial field.
    #[arg(long)]
    pub noise: Option<f64>,
    /// pv | sd
    #[arg(long)]
    pub form: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated scale factors in (0, 1].
    #[arg(long)]
    pub sigmas: Option<String>,
    /// Split centre x,y,z.
    #[arg(long, allow_hyphen_values = true)]
    pub xi: Option<String>,
    #[arg(long)]
    pub r_bar: Option<f64>,
    #[arg(long)]
    pub r_n: Option<f64>,
    /// diamagnetic | gauge | upsilon | cutoff
    #[arg(long)]
    pub suite: Option<String>,
    /// Also write the energy density and its concentration function.
    #[arg(long)]
    pub density: Option<bool>,
    /// JSON list `{"fields": [...]}` of snapshots to split in one run.
    #[arg(long)]
    pub batch: Option<PathBuf>,
}

impl WorkflowOptions {
    pub fn merged_with(mut self, file: &WorkflowOptions) -> WorkflowOptions {
        merge_fields!(
            self, file, mass, tol, max_iter, step, radial, noise, form, epsilon, sigmas, xi, r_bar, r_n, suite,
            density, batch
        );
        self
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(flatten)]
    pub common: Common,
    #[serde(default)]
    pub seminorm: WorkflowOptions,
    #[serde(default)]
    pub apply: WorkflowOptions,
    #[serde(default)]
    pub minimize: WorkflowOptions,
    #[serde(default)]
    pub critical: WorkflowOptions,
    #[serde(default, rename = "sigma-curve")]
    pub sigma_curve: WorkflowOptions,
    #[serde(default)]
    pub split: WorkflowOptions,
    #[serde(default)]
    pub verify: WorkflowOptions,
    #[serde(default)]
    pub calibrate: WorkflowOptions,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn section(&self, workflow: Workflow) -> &WorkflowOptions {
        match workflow {
            Workflow::Seminorm => &self.seminorm,
            Workflow::Apply => &self.apply,
            Workflow::Minimize => &self.minimize,
            Workflow::Critical => &self.critical,
            Workflow::SigmaCurve => &self.sigma_curve,
            Workflow::Split => &self.split,
            Workflow::Verify => &self.verify,
            Workflow::Calibrate => &self.calibrate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Workflow {
    Seminorm,
    Apply,
    Minimize,
    Critical,
    SigmaCurve,
    Split,
    Verify,
    Calibrate,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub workflow: Workflow,
    pub params: FractionalParams,
    pub potential: MagneticPotential,
    pub grid: Option<Grid>,
    pub policy: QuadPolicy,
    pub field: Option<PathBuf>,
    pub generator: Option<Generator>,
    pub options: WorkflowOptions,
    pub out: PathBuf,
    pub threads: usize,
    pub seed: u64,
    /// Lattice of the calibration workflow, which builds its own grid.
    pub calibration_n: Option<usize>,
    pub calibration_extent: Option<f64>,
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("`{path}`: {msg}"))
}

fn missing(flag: &str) -> CliError {
    CliError::Validation(format!("missing required value `--{flag}`"))
}

pub fn parse_list(path: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| invalid(path, format!("`{t}` is not a number ({e})"))))
        .collect()
}

pub fn parse_vec3(path: &str, text: &str) -> Result<[f64; 3], CliError> {
    let v = parse_list(path, text)?;
    <[f64; 3]>::try_from(v).map_err(|_| invalid(path, "expected three comma-separated numbers"))
}

pub fn parse_potential(text: &str) -> Result<MagneticPotential, CliError> {
    let (kind, args) = text.split_once(':').unwrap_or((text, ""));
    let potential = match kind.trim() {
        "zero" => Ok(MagneticPotential::Zero),
        "constant-field" => {
            let b = parse_list("potential", args)?;
            match b.as_slice() {
                [b] => MagneticPotential::constant_field(*b),
                _ => return Err(invalid("potential", "constant-field takes one strength")),
            }
        }
        "linear" => {
            let v = parse_list("potential", args)?;
            if v.len() != 9 && v.len() != 12 {
                return Err(invalid("potential", "linear takes 9 matrix entries and optionally 3 offset entries"));
            }
            let m = [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]];
            let b = if v.len() == 12 { [v[9], v[10], v[11]] } else { [0.0; 3] };
            MagneticPotential::linear(m, b)
        }
        other => return Err(invalid("potential", format!("unknown kind `{other}`"))),
    };
    potential.map_err(|e| invalid("potential", e))
}

pub fn parse_generator(text: &str, s: f64, phase: Option<[f64; 3]>) -> Result<Generator, CliError> {
    let (kind, args) = text.split_once(':').unwrap_or((text, ""));
    let v = if args.is_empty() { vec![] } else { parse_list("generator", args)? };
    let base = match (kind.trim(), v.as_slice()) {
        ("gaussian", [w]) => Generator::Gaussian { width: *w, center: [0.0; 3] },
        ("bump", [r]) => Generator::Bump { center: [0.0; 3], radius: *r },
        ("talenti", [eps, d]) => Generator::TalentiBubble { z: [0.0; 3], epsilon: *eps, d_s: *d, s },
        ("two-bumps", [d, r]) => Generator::TwoBumps { separation: *d, radius: *r },
        (k, _) => return Err(invalid("generator", format!("cannot parse `{k}` with {} argument(s)", v.len()))),
    };
    Ok(match phase {
        Some(eta) => Generator::PlaneWavePhase { eta, base: Box::new(base) },
        None => base,
    })
}

fn parse_policy(c: &Common) -> Result<QuadPolicy, CliError> {
    let mut policy = QuadPolicy::default();
    if let Some(f) = &c.far {
        policy.far = match f.as_str() {
            "exact" => FarRule::Exact,
            "fast-far" => FarRule::FastFar,
            "drop" => FarRule::Drop,
            o => return Err(invalid("far", format!("unknown rule `{o}`"))),
        };
    }
    policy.r_cut = c.r_cut;
    if let Some(f) = &c.singular {
        policy.singular = match f.as_str() {
            "zeta" => SingularRule::ZetaCorrected,
            "exclude" => SingularRule::Exclude,
            o => return Err(invalid("singular", format!("unknown rule `{o}`"))),
        };
    }
    if let Some(f) = &c.exterior {
        policy.exterior = match f.as_str() {
            "zero-extension" => ExteriorRule::ZeroExtension,
            "truncate" => ExteriorRule::Truncate,
            o => return Err(invalid("exterior", format!("unknown rule `{o}`"))),
        };
    }
    if let Some(f) = &c.engine {
        policy.engine = match f.as_str() {
            "auto" => EngineChoice::Auto,
            "direct" => EngineChoice::Direct,
            "convolution" => EngineChoice::Convolution,
            o => return Err(invalid("engine", format!("unknown engine `{o}`"))),
        };
    }
    Ok(policy)
}

/// Thread count: FRACMAG_THREADS, then the config, then 0 (all cores).
pub fn resolve_threads(configured: Option<usize>) -> Result<usize, CliError> {
    match std::env::var("FRACMAG_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| invalid("FRACMAG_THREADS", format!("`{v}` is not a thread count"))),
        Err(_) => Ok(configured.unwrap_or(0)),
    }
}

impl RunConfig {
    pub fn resolve(workflow: Workflow, common: Common, options: WorkflowOptions) -> Result<Self, CliError> {
        let s = common.s.ok_or_else(|| missing("s"))?;
        let params = match (workflow, common.p) {
            (Workflow::Critical, Some(p)) => {
                let crit = FractionalParams::critical(s).map_err(|e| invalid("s", e))?;
                if (p - crit.p()).abs() > 1e-12 * crit.p() {
                    return Err(invalid("p", format!("the critical workflow needs p = {}", crit.p())));
                }
                crit
            }
            (_, None) => FractionalParams::critical(s).map_err(|e| invalid("s", e))?,
            (_, Some(p)) => FractionalParams::new(s, p).map_err(|e| invalid("p", e))?,
        };
        let potential = parse_potential(common.potential.as_deref().unwrap_or("zero"))?;
        let batch = workflow == Workflow::Split && options.batch.is_some();
        let grid = if workflow == Workflow::Calibrate || common.field.is_some() || batch {
            None
        } else {
            let n = common.n.ok_or_else(|| missing("n"))?;
            // spacing 1/2 unless the box side is given
            let l = common.extent.unwrap_or(0.5 * n as f64);
            Some(Grid::centered(n, l).map_err(|e| invalid("n", e))?)
        };
        let phase = common.phase.as_deref().map(|t| parse_vec3("phase", t)).transpose()?;
        let generator = common.generator.as_deref().map(|g| parse_generator(g, s, phase)).transpose()?;
        if let (Some(g), Some(grid)) = (&generator, &grid) {
            fracmag_core::make_field(grid, g).map_err(|e| invalid("generator", e))?;
        }
        let policy = parse_policy(&common)?;
        if let Some(grid) = &grid {
            policy.r_cut(grid).map_err(|e| invalid("r_cut", e))?;
        }
        validate_options(workflow, &options)?;
        Ok(RunConfig {
            workflow,
            params,
            potential,
            grid,
            policy,
            field: common.field,
            generator,
            options,
            out: common.out.unwrap_or_else(|| PathBuf::from("fracmag-out")),
            threads: resolve_threads(common.threads)?,
            seed: common.seed.unwrap_or(0),
            calibration_n: common.n,
            calibration_extent: common.extent,
        })
    }
}

fn validate_options(workflow: Workflow, o: &WorkflowOptions) -> Result<(), CliError> {
    let positive = |name: &str, v: Option<f64>| match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(invalid(name, "must be positive")),
        _ => Ok(()),
    };
    positive("mass", o.mass)?;
    positive("step", o.step)?;
    positive("epsilon", o.epsilon)?;
    positive("r_bar", o.r_bar)?;
    positive("r_n", o.r_n)?;
    if let Some(t) = o.tol {
        if !(t >= 0.0) {
            return Err(invalid("tol", "must be nonnegative"));
        }
    }
    if let Some(n) = o.noise {
        if !(0.0..1.0).contains(&n) {
            return Err(invalid("noise", "must lie in [0, 1)"));
        }
    }
    if let Some(f) = &o.form {
        if f != "pv" && f != "sd" {
            return Err(invalid("form", "expected `pv` or `sd`"));
        }
    }
    if let Some(text) = &o.sigmas {
        let v = parse_list("sigmas", text)?;
        if v.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(invalid("sigmas", "values must lie in (0, 1]"));
        }
    }
    if let Some(xi) = &o.xi {
        parse_vec3("xi", xi)?;
    }
    match workflow {
        Workflow::Split => {
            o.r_bar.ok_or_else(|| missing("r-bar"))?;
            o.r_n.ok_or_else(|| missing("r-n"))?;
        }
        Workflow::Verify => {
            let suite = o.suite.as_deref().ok_or_else(|| missing("suite"))?;
            if !["diamagnetic", "gauge", "upsilon", "cutoff"].contains(&suite) {
                return Err(invalid("suite", format!("unknown suite `{suite}`")));
            }
        }
        _ => {}
    }
    Ok(())
}
