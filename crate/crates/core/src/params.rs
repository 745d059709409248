//! Fractional order, Lebesgue exponent and the derived normalisation constants.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

use crate::error::{FracmagError, Result};

/// Normalisation constant of the singular-integral form of `(-Δ)^s` in three dimensions,
/// `s 2^{2s} Γ((3+2s)/2) / (π^{3/2} Γ(1-s))`.
pub fn cs_constant(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(FracmagError::domain(format!("s = {s} is outside (0, 1)")));
    }
    Ok(s * 4f64.powf(s) * gamma((3.0 + 2.0 * s) / 2.0) / (PI.powf(1.5) * gamma(1.0 - s)))
}

/// Critical Sobolev exponent `6 / (3 - 2s)`.
pub fn critical_exponent(s: f64) -> f64 {
    6.0 / (3.0 - 2.0 * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct FractionalParams {
    s: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    s: f64,
    p: f64,
}

impl TryFrom<RawParams> for FractionalParams {
    type Error = FracmagError;
    fn try_from(raw: RawParams) -> Result<Self> {
        FractionalParams::new(raw.s, raw.p)
    }
}

impl From<FractionalParams> for RawParams {
    fn from(p: FractionalParams) -> Self {
        RawParams { s: p.s, p: p.p }
    }
}

impl FractionalParams {
    /// `0 < s < 1` and `2 < p <= 6/(3-2s)`.
    pub fn new(s: f64, p: f64) -> Result<Self> {
        cs_constant(s)?;
        let crit = critical_exponent(s);
        // the critical exponent itself is accepted up to rounding of 6/(3-2s)
        if !(p > 2.0 && p <= crit * (1.0 + 4.0 * f64::EPSILON)) {
            return Err(FracmagError::domain(format!("p = {p} is outside (2, {crit}] for s = {s}")));
        }
        Ok(Self { s, p: p.min(crit) })
    }

    /// Parameters on the critical constraint `p = 6/(3-2s)`.
    pub fn critical(s: f64) -> Result<Self> {
        cs_constant(s)?;
        Ok(Self { s, p: critical_exponent(s) })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn cs(&self) -> f64 {
        cs_constant(self.s).expect("validated at construction")
    }

    pub fn p_crit(&self) -> f64 {
        critical_exponent(self.s)
    }

    pub fn is_critical(&self) -> bool {
        (self.p - self.p_crit()).abs() <= 8.0 * f64::EPSILON * self.p_crit()
    }

    /// Riesz kernel exponent `3 + 2s`.
    pub fn kernel_exponent(&self) -> f64 {
        3.0 + 2.0 * self.s
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(self.s, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn half_order_constant_is_inverse_pi_squared() {
        assert_relative_eq!(cs_constant(0.5).unwrap(), 1.0 / (PI * PI), max_relative = 1e-12);
    }

    #[test]
    fn constant_matches_high_precision_values() {
        // 30-digit evaluations of the Gamma-function formula
        assert_relative_eq!(cs_constant(0.75).unwrap(), 0.119050567376701818348306196752, max_relative = 1e-12);
        assert_relative_eq!(cs_constant(0.25).unwrap(), 0.047620226950680727339322478701, max_relative = 1e-12);
    }

    #[test]
    fn constant_vanishes_at_zero_order() {
        let tiny = cs_constant(1e-9).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-8);
    }

    #[test]
    fn constant_rejects_out_of_range_orders() {
        for s in [0.0, 1.0, -0.3, 1.5, f64::NAN] {
            assert!(cs_constant(s).is_err(), "s = {s}");
        }
    }

    #[test]
    fn constant_is_positive_and_continuous() {
        let mut prev = cs_constant(0.01).unwrap();
        for k in 2..100 {
            let s = k as f64 * 0.01;
            let c = cs_constant(s).unwrap();
            assert!(c > 0.0);
            // derivative of the formula stays below ~1 on [0.01, 0.99]
            assert!((c - prev).abs() < 0.05, "jump at s = {s}");
            prev = c;
        }
    }

    #[test]
    fn exponent_range_is_enforced() {
        assert!(FractionalParams::new(0.5, 3.0).is_ok());
        assert!(FractionalParams::new(0.5, 2.0).is_err());
        assert!(FractionalParams::new(0.5, 3.0001).is_err());
        let crit = FractionalParams::critical(0.5).unwrap();
        assert!(crit.is_critical());
        assert_eq!(crit.p(), 3.0);
    }

    #[test]
    fn params_roundtrip_json_with_validation() {
        let p = FractionalParams::new(0.3, 2.5).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: FractionalParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
        assert!(serde_json::from_str::<FractionalParams>(r#"{"s":1.2,"p":2.5}"#).is_err());
    }
}
