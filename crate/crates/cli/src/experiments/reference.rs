//! Spectral OU simulation against the closed-form variance oracles.

use anyhow::Result;
use fluctuant_core::outheory::{fbm_amplitude, variance_oracle_drift, variance_oracle_fbm, z_epsilon_ou, SpectralOU};
use fluctuant_core::stats::MeanEstimate;
use serde::{Deserialize, Serialize};

use super::{check_times, column, push_raw, push_summary, raw_table, summary_table, Context};
use crate::config::ConfigError;
use crate::report::{num, Report, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuReference {
    pub d: f64,
    pub sigma2: f64,
    pub eps: f64,
    pub length: f64,
    /// Mode count; raised to the resolution floor for `eps` when smaller.
    pub modes: usize,
    pub times: Vec<f64>,
    pub tol: f64,
    pub quadrature_tol: f64,
}

impl Default for OuReference {
    fn default() -> Self {
        Self {
            d: 0.5,
            sigma2: 0.25,
            eps: 0.05,
            length: 64.0,
            modes: 20480,
            times: vec![1.0, 2.0, 4.0],
            tol: 0.05,
            quadrature_tol: 1e-8,
        }
    }
}

impl OuReference {
    fn process(&self) -> fluctuant_core::Result<SpectralOU> {
        let modes = self.modes.max(SpectralOU::modes_for(self.length, self.eps));
        SpectralOU::new(self.length, modes, self.d, self.sigma2, 0.0)
    }

    pub(crate) fn validate(&self) -> Result<(), ConfigError> {
        check_times("experiment.times", &self.times)?;
        let ou = self.process().map_err(|e| ConfigError::from_core("experiment", &e))?;
        ou.check_resolution(self.eps).map_err(|e| ConfigError::new("experiment.eps", e.to_string()))
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "ou-reference";
        let mut report = Report::new(name);
        let spot = variance_oracle_drift(1.0, 0.0, 1.0);
        let closed = fbm_amplitude(0.5, 1.0);
        report.set("quadrature_spot", spot);
        report.verdicts.push(Verdict::absolute(name, "quadrature:chi=1,t=1", spot, closed, self.quadrature_tol));
        let ou = self.process()?;
        let chi = ou.stationary_variance();
        let out = z_epsilon_ou(&ou, &[self.eps], &self.times, ctx.trajectories, &ctx.src, ctx.workers)?;
        let paths: Vec<Vec<f64>> = out.into_iter().map(|mut p| p.swap_remove(0)).collect();
        report.raw = raw_table();
        push_raw(&mut report.raw, "z", &self.times, &paths);
        report.summary = summary_table();
        report.set("modes", ou.modes as f64);
        report.set("chi", chi);
        for (k, &t) in self.times.iter().enumerate() {
            let col = column(&paths, k);
            let est = MeanEstimate::second_moment(&col)?;
            push_summary(&mut report.summary, "z", self.eps, t, &col, &est);
            let oracle = variance_oracle_fbm(t, self.d, chi);
            report.set(format!("second_moment[{}]", num(t)), est.mean);
            report.set(format!("oracle[{}]", num(t)), oracle);
            report.series.entry("second_moment".into()).or_default().push((t, est));
            report.verdicts.push(Verdict::relative(name, format!("t={}", num(t)), est.mean, oracle, self.tol));
        }
        Ok(report)
    }
}
