//! Λ^{n,f}(u) against the quadratic field A^{n,ε}(u).

use anyhow::Result;
use fluctuant_core::fields::{LambdaObserver, Observer, QuadraticFieldObserver};
use fluctuant_core::localfn::LocalFunction;
use fluctuant_core::stats::{bound_ratio, scaling_exponent, MeanEstimate};
use fluctuant_core::{ModelParams, TestFunction};
use serde::{Deserialize, Serialize};

use super::{check_eps, column, combine, push_raw, push_summary, raw_table, samples, summary_table, Context};
use crate::config::ConfigError;
use crate::report::{Report, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Grid in microscopic box sizes ℓ = εn.
    SecondOrder,
    /// Grid in ε, with the Cauchy check on A^ε.
    Extensive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticFields {
    pub f: LocalFunction,
    pub u: TestFunction,
    pub t: f64,
    pub eps: Vec<f64>,
    pub min_slope: f64,
}

impl Default for QuadraticFields {
    fn default() -> Self {
        Self {
            f: LocalFunction::occupation(0).center(0.5).mul(&LocalFunction::occupation(1).center(0.5)).expect("valid"),
            u: TestFunction::Bump {
                center: 0.0,
                width: 1.0,
            },
            t: 1.0,
            eps: vec![1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0],
            min_slope: 0.8,
        }
    }
}

impl QuadraticFields {
    pub(crate) fn validate(&self, params: &ModelParams) -> Result<(), ConfigError> {
        if !(self.t > 0.0) {
            return Err(ConfigError::new("experiment.t", "must be positive"));
        }
        check_eps("experiment.eps", &self.eps, params)?;
        if self.eps.len() < 3 {
            return Err(ConfigError::new("experiment.eps", "need at least three widths"));
        }
        if self.eps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::new("experiment.eps", "widths must be increasing"));
        }
        for &e in &self.eps {
            QuadraticFieldObserver::new("a", e, &self.u, params).map_err(|err| ConfigError::new("experiment.u", err.to_string()))?;
        }
        LambdaObserver::new("l", self.f.clone(), &self.u, params)
            .and_then(|o| o.quadratic_regime(params.rho, 1e-12))
            .map_err(|err| ConfigError::new("experiment.f", err.to_string()))?;
        Ok(())
    }

    pub(crate) fn run(&self, ctx: &Context, mode: Mode) -> Result<Report> {
        let name = match mode {
            Mode::SecondOrder => "second-bg",
            Mode::Extensive => "extensive",
        };
        let p = ctx.params.clone();
        let (f, u, eps) = (self.f.clone(), self.u.clone(), self.eps.clone());
        let records = ctx.simulate(&[self.t], || {
            let mut obs: Vec<Box<dyn Observer>> =
                vec![Box::new(LambdaObserver::new("lambda", f.clone(), &u, &p)?.quadratic_regime(p.rho, 1e-12)?)];
            for (i, &e) in eps.iter().enumerate() {
                obs.push(Box::new(QuadraticFieldObserver::new(format!("a_{i}"), e, &u, &p)?));
            }
            Ok(obs)
        })?;
        let half = self.f.phi().d2(p.rho) / 2.0;
        let norm = self.u.discrete_norm_sq(p.n, p.ring_size)?;
        let n = p.n as f64;
        let t = self.t;
        let lambda = samples(&records, "lambda");
        let a: Vec<Vec<Vec<f64>>> = (0..self.eps.len()).map(|i| samples(&records, &format!("a_{i}"))).collect();
        let mut report = Report::new(name);
        report.raw = raw_table();
        report.summary = summary_table();
        push_raw(&mut report.raw, "lambda", &[t], &lambda);
        report.set("half_phi_second", half);
        report.set("discrete_norm_sq", norm);
        let mut lhs = Vec::new();
        let mut grid = Vec::new();
        for (i, &e) in self.eps.iter().enumerate() {
            let d = combine(&lambda, &a[i], half);
            let col = column(&d, 0);
            let est = MeanEstimate::second_moment(&col)?;
            push_raw(&mut report.raw, &format!("a[{e:?}]"), &[t], &a[i]);
            let g = match mode {
                Mode::SecondOrder => (e * n).floor(),
                Mode::Extensive => e,
            };
            push_summary(&mut report.summary, "difference", g, t, &col, &est);
            grid.push(g);
            lhs.push(est);
        }
        let br = match mode {
            Mode::SecondOrder => {
                // scaled form of c(Tℓ + T²/ℓ²)Σ h² with T = tn², h_x = u(x/n)
                let sum_h2 = norm * n;
                bound_ratio(&grid, &lhs, |l| (t * n * n * l + (t * n * n).powi(2) / (l * l)) * sum_h2 / n.powi(4))?
            }
            Mode::Extensive => bound_ratio(&grid, &lhs, |e| (e * t + t * t / (e * e * n)) * norm)?,
        };
        report.set("fitted_c", br.fitted_c);
        report.set("spread", br.spread);
        report.series.insert("difference".into(), grid.iter().cloned().zip(lhs.iter().cloned()).collect());
        let label = if mode == Mode::SecondOrder { "ell" } else { "eps" };
        report.verdicts.extend(Verdict::from_ratio(name, label, &br));
        if mode == Mode::Extensive {
            let mut pts = Vec::new();
            let mut cauchy = Vec::new();
            for i in 1..self.eps.len() {
                let d = combine(&a[i], &a[i - 1], 1.0);
                let col = column(&d, 0);
                let est = MeanEstimate::second_moment(&col)?;
                push_summary(&mut report.summary, "cauchy", self.eps[i], t, &col, &est);
                pts.push((self.eps[i], est.mean));
                cauchy.push((self.eps[i], est));
            }
            report.series.insert("cauchy".into(), cauchy);
            let fit = scaling_exponent(&pts)?;
            report.set("cauchy_slope", fit.slope);
            report.verdicts.push(Verdict::at_least(name, "cauchy:slope", fit.slope, self.min_slope));
        }
        Ok(report)
    }
}
