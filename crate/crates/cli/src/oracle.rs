//! Closed-form variance curves printed as `t,value` CSV.

use fluctuant_core::outheory::{variance_oracle_drift, variance_oracle_fbm};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// `C(D, χ)·t^{3/2}`.
    Fbm,
    /// Occupation-time variance under a drift `a′`, at `D = ½`.
    Drift,
}

pub fn table(kind: OracleKind, d: f64, chi: f64, drift: f64, times: &[f64]) -> String {
    let mut out = String::from("t,value\n");
    for &t in times {
        let v = match kind {
            OracleKind::Fbm => variance_oracle_fbm(t, d, chi),
            OracleKind::Drift => variance_oracle_drift(t, drift, chi),
        };
        out.push_str(&format!("{t:?},{v:?}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_drift_matches_fbm_at_half() {
        let a = table(OracleKind::Fbm, 0.5, 0.25, 0.0, &[1.0, 2.0]);
        let b = table(OracleKind::Drift, 0.5, 0.25, 0.0, &[1.0, 2.0]);
        let parse = |s: &str| -> Vec<f64> { s.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect() };
        for (x, y) in parse(&a).iter().zip(parse(&b)) {
            assert!((x - y).abs() < 1e-9 * x);
        }
    }
}
