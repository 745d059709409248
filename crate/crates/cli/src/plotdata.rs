//! Tidy CSV extraction from result files. Inputs are parsed completely before anything
//! is written, so a bad input leaves no partial output behind.

use std::collections::BTreeMap;
use std::path::Path;

use fracmag_core::groundstate::SigmaPoint;
use fracmag_core::io::parse_fmag;
use fracmag_core::MinimizationResult;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::commands::trace_csv;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Trace,
    SigmaCurve,
    Concentration,
    RadialProfile,
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Trace => "trace.csv",
            PlotKind::SigmaCurve => "sigma_curve.csv",
            PlotKind::Concentration => "concentration.csv",
            PlotKind::RadialProfile => "radial_profile.csv",
        }
    }
}

/// Byte offset of a JSON error, with serde's line and column for humans.
pub fn located(text: &str, err: &serde_json::Error) -> String {
    let offset: usize = text.split_inclusive('\n').take(err.line().saturating_sub(1)).map(str::len).sum::<usize>()
        + err.column().saturating_sub(1);
    format!("parse error at byte {offset} (line {}, column {}): {err}", err.line(), err.column())
}

fn parse_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T, CliError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        CliError::Numerical(format!("{}: parse error at byte {}: not UTF-8", path.display(), e.valid_up_to()))
    })?;
    serde_json::from_str(text).map_err(|e| CliError::Numerical(format!("{}: {}", path.display(), located(text, &e))))
}

/// Any result file carrying a concentration function.
#[derive(Deserialize)]
struct WithConcentration {
    concentration: Option<Vec<(f64, f64)>>,
}

fn radial_profile(path: &Path, bytes: &[u8]) -> Result<String, CliError> {
    let (field, _) = parse_fmag(bytes).map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))?;
    let g = field.grid();
    let n = g.n as i64;
    // 4|x - c|^2 / h^2 is an integer, so shells are keyed exactly
    let mut shells: BTreeMap<i64, (f64, f64, f64, usize)> = BTreeMap::new();
    for (idx, v) in field.values().iter().enumerate() {
        let key: i64 = g.unravel(idx).iter().map(|&i| (2 * i as i64 - (n - 1)).pow(2)).sum();
        let e = shells.entry(key).or_default();
        e.0 += v.norm();
        e.1 += v.re;
        e.2 += v.im;
        e.3 += 1;
    }
    let mut csv = String::from("radius,modulus,re,im\n");
    for (key, (m, re, im, count)) in shells {
        let c = count as f64;
        let r = 0.5 * g.h * (key as f64).sqrt();
        csv.push_str(&format!("{r},{},{},{}\n", m / c, re / c, im / c));
    }
    Ok(csv)
}

/// Build the CSV text for `kind` from `input`.
pub fn render(kind: PlotKind, input: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(input)?;
    if bytes.is_empty() {
        return Err(CliError::Numerical(format!("{}: parse error at byte 0: empty file", input.display())));
    }
    match kind {
        PlotKind::Trace => {
            let result: MinimizationResult = parse_json(input, &bytes)?;
            Ok(trace_csv(&result))
        }
        PlotKind::SigmaCurve => {
            let curve: Vec<SigmaPoint> = parse_json(input, &bytes)?;
            let mut csv = String::from("sigma,seminorm_sq,nonmagnetic_ref\n");
            for p in &curve {
                csv.push_str(&format!("{},{},{}\n", p.sigma, p.seminorm_sq, p.nonmagnetic_ref));
            }
            Ok(csv)
        }
        PlotKind::Concentration => {
            let data: WithConcentration = parse_json(input, &bytes)?;
            let points = data.concentration.ok_or_else(|| {
                CliError::Numerical(format!("{}: no `concentration` entry in this result", input.display()))
            })?;
            let mut csv = String::from("radius,concentration\n");
            for (r, q) in points {
                csv.push_str(&format!("{r},{q}\n"));
            }
            Ok(csv)
        }
        PlotKind::RadialProfile => radial_profile(input, &bytes),
    }
}
