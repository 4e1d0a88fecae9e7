//! Downstream analysis of multiply-imputed linked data: logistic regression
//! per imputation and Rubin's combining rules.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::ExtraColumns;
use crate::error::{LinkError, Result};
use crate::sampler::PosteriorSample;

/// Degrees of freedom used when the between-imputation variance vanishes.
pub const NU_CAP: f64 = 1e6;
/// Coefficient magnitude treated as divergence under separation.
pub const COEF_CAP: f64 = 30.0;
/// Linear predictor magnitude at which a fitted probability counts as
/// numerically 0 or 1. Newton can stall there on quasi-separated data
/// before any coefficient reaches [`COEF_CAP`].
pub const ETA_SATURATION: f64 = 15.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    /// Inverse observed information, row-major p x p.
    pub covariance: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// A coefficient diverged and was capped.
    pub separated: bool,
}

impl LogisticFit {
    pub fn variance(&self, k: usize) -> f64 {
        let p = self.coefficients.len();
        self.covariance[k * p + k]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn design(x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != p) {
        return Err(LinkError::Contract("design matrix rows differ in length".into()));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| x[i][j]))
}

/// Bernoulli log-likelihood of `beta`.
pub fn logistic_log_likelihood(x: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            // log σ(η) = −log(1 + e^{−η}), computed stably.
            let log1pexp = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            yi * -log1pexp(-eta) + (1.0 - yi) * -log1pexp(eta)
        })
        .sum()
}

/// Score vector X'(y − p).
pub fn logistic_gradient(x: &[Vec<f64>], y: &[f64], beta: &[f64]) -> Vec<f64> {
    let p = beta.len();
    let mut g = vec![0.0; p];
    for (row, &yi) in x.iter().zip(y) {
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let r = yi - sigmoid(eta);
        for k in 0..p {
            g[k] += row[k] * r;
        }
    }
    g
}

/// Fits a logistic regression by IRLS (Newton) until the score norm falls
/// below 1e-8 or 50 iterations. `x` must include the intercept column.
pub fn fit_logistic(x: &[Vec<f64>], y: &[f64]) -> Result<LogisticFit> {
    let xm = design(x)?;
    let (n, p) = xm.shape();
    if y.len() != n {
        return Err(LinkError::Contract(format!("{n} design rows but {} outcomes", y.len())));
    }
    if n <= p {
        return Err(LinkError::Contract(format!("need more rows ({n}) than coefficients ({p})")));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(LinkError::Contract("outcomes must be 0 or 1".into()));
    }
    for j in 0..p {
        let col = xm.column(j);
        let constant = col.iter().all(|&v| v == col[0]);
        if constant && !(col[0] == 1.0 && j == 0) {
            return Err(LinkError::Contract(format!("design column {j} is constant")));
        }
    }
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(p);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let information = |beta: &DVector<f64>| -> (DMatrix<f64>, DVector<f64>) {
        let eta = &xm * beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| m * (1.0 - m));
        let mut xw = xm.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        (xm.transpose() * xw, xm.transpose() * (&yv - mu))
    };
    while iterations < 50 {
        let (info, grad) = information(&beta);
        if grad.norm() < 1e-8 {
            converged = true;
            break;
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| info.clone().lu().solve(&grad))
            .ok_or_else(|| LinkError::Numerical("singular information matrix".into()))?;
        beta += step;
        iterations += 1;
        if beta.iter().any(|b| b.abs() > COEF_CAP) {
            separated = true;
            beta.iter_mut().for_each(|b| *b = b.clamp(-COEF_CAP, COEF_CAP));
            break;
        }
    }
    if !converged && !separated {
        let (_, grad) = information(&beta);
        converged = grad.norm() < 1e-8;
    }
    separated |= (&xm * &beta).iter().any(|eta| eta.abs() > ETA_SATURATION);
    let (info, _) = information(&beta);
    let cov = info
        .clone()
        .try_inverse()
        .ok_or_else(|| LinkError::Numerical("information matrix is not invertible".into()))?;
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        covariance: cov.transpose().iter().copied().collect(),
        iterations,
        converged,
        separated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub m: usize,
    pub q_bar: f64,
    pub u_bar: f64,
    pub b: f64,
    pub t: f64,
    pub nu: f64,
    pub level: f64,
    pub ci: (f64, f64),
    /// ν hit the cap because the between-imputation variance vanished.
    pub nu_capped: bool,
}

/// Rubin's rules with the Student-t reference distribution.
pub fn rubin_combine(estimates: &[f64], variances: &[f64], level: f64) -> Result<MiEstimate> {
    let m = estimates.len();
    if m < 2 || variances.len() != m {
        return Err(LinkError::Contract(format!(
            "need at least two paired estimates and variances, got {m} and {}",
            variances.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(LinkError::Contract(format!("confidence level {level} outside (0, 1)")));
    }
    let mf = m as f64;
    let q_bar = estimates.iter().sum::<f64>() / mf;
    let u_bar = variances.iter().sum::<f64>() / mf;
    let b = estimates.iter().map(|q| (q - q_bar).powi(2)).sum::<f64>() / (mf - 1.0);
    let t = u_bar + (1.0 + 1.0 / mf) * b;
    let (nu, nu_capped) = if b > 0.0 && t > 0.0 {
        let lambda = (1.0 + 1.0 / mf) * b / t;
        let nu = (mf - 1.0) / (lambda * lambda);
        (nu.min(NU_CAP), nu > NU_CAP)
    } else {
        (NU_CAP, true)
    };
    let half = if t > 0.0 {
        let dist = StudentsT::new(0.0, 1.0, nu).map_err(|e| LinkError::Numerical(e.to_string()))?;
        dist.inverse_cdf(0.5 + level / 2.0) * t.sqrt()
    } else {
        0.0
    };
    Ok(MiEstimate {
        m,
        q_bar,
        u_bar,
        b,
        t,
        nu,
        level,
        ci: (q_bar - half, q_bar + half),
        nu_capped,
    })
}

/// Columns used to build each imputed analysis dataset. The outcome is read
/// from file 2; exposure and covariates from file 1, falling back to file 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSpec {
    pub outcome: String,
    pub exposure: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub exposure: String,
    pub log_or: MiEstimate,
    pub odds_ratio: f64,
    pub ci: (f64, f64),
    pub separated_imputations: usize,
}

enum Source {
    File1(usize),
    File2(usize),
}

fn locate(name: &str, e1: &ExtraColumns, e2: &ExtraColumns) -> Result<Source> {
    e1.column(name)
        .map(Source::File1)
        .or_else(|| e2.column(name).map(Source::File2))
        .ok_or_else(|| LinkError::Config(format!("analysis column '{name}' is in neither file")))
}

fn parse_cell(raw: &str, name: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| LinkError::Schema(format!("column '{name}': '{raw}' is not numeric")))
}

/// Builds the linked analysis dataset of one imputation.
pub fn linked_design(
    sample: &PosteriorSample,
    e1: &ExtraColumns,
    e2: &ExtraColumns,
    spec: &AnalysisSpec,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let outcome = e2
        .column(&spec.outcome)
        .ok_or_else(|| LinkError::Config(format!("outcome column '{}' is not in file 2", spec.outcome)))?;
    let predictors: Vec<(String, Source)> = std::iter::once(&spec.exposure)
        .chain(&spec.covariates)
        .map(|name| locate(name, e1, e2).map(|s| (name.clone(), s)))
        .collect::<Result<_>>()?;
    let mut x = Vec::with_capacity(sample.links.len());
    let mut y = Vec::with_capacity(sample.links.len());
    for l in &sample.links {
        let mut row = vec![1.0];
        for (name, source) in &predictors {
            let raw = match *source {
                Source::File1(c) => e1.get(l.s, l.i, c),
                Source::File2(c) => e2.get(l.t, l.j, c),
            };
            row.push(parse_cell(raw, name)?);
        }
        x.push(row);
        y.push(parse_cell(e2.get(l.t, l.j, outcome), &spec.outcome)?);
    }
    Ok((x, y))
}

/// Fits the analysis model on every imputation and combines the exposure's
/// log odds ratio.
pub fn analyze_imputations(
    samples: &[PosteriorSample],
    e1: &ExtraColumns,
    e2: &ExtraColumns,
    spec: &AnalysisSpec,
) -> Result<OddsRatio> {
    let fits: Vec<LogisticFit> = samples
        .par_iter()
        .map(|s| {
            let (x, y) = linked_design(s, e1, e2, spec)?;
            fit_logistic(&x, &y)
        })
        .collect::<Result<_>>()?;
    let estimates: Vec<f64> = fits.iter().map(|f| f.coefficients[1]).collect();
    let variances: Vec<f64> = fits.iter().map(|f| f.variance(1)).collect();
    let log_or = rubin_combine(&estimates, &variances, spec.level)?;
    Ok(OddsRatio {
        exposure: spec.exposure.clone(),
        odds_ratio: log_or.q_bar.exp(),
        ci: (log_or.ci.0.exp(), log_or.ci.1.exp()),
        separated_imputations: fits.iter().filter(|f| f.separated).count(),
        log_or,
    })
}

/// Combined total link count across imputations. A count carries no
/// within-imputation variance, so every U is 0 and T = (1 + 1/m) B.
pub fn link_count_summary(samples: &[PosteriorSample], level: f64) -> Result<MiEstimate> {
    let counts: Vec<f64> = samples.iter().map(|s| s.link_count() as f64).collect();
    rubin_combine(&counts, &vec![0.0; counts.len()], level)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rubin_two_imputation_fixture() {
        let est = rubin_combine(&[1.0, 3.0], &[1.0, 1.0], 0.95).unwrap();
        assert_eq!(est.q_bar, 2.0);
        assert_eq!(est.b, 2.0);
        assert_eq!(est.t, 4.0);
        assert!((est.nu - 16.0 / 9.0).abs() < 1e-12);
        assert!(!est.nu_capped);
    }

    #[test]
    fn identical_imputations_cap_nu() {
        let est = rubin_combine(&[0.4; 5], &[0.1; 5], 0.95).unwrap();
        assert_eq!(est.t, est.u_bar);
        assert!(est.nu_capped);
        assert_eq!(est.nu, NU_CAP);
        // Near-normal interval.
        let half = (est.ci.1 - est.ci.0) / 2.0;
        assert!((half - 1.959964 * 0.1f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn rubin_needs_two() {
        assert!(rubin_combine(&[1.0], &[1.0], 0.95).is_err());
    }

    #[test]
    fn intercept_only_half_ones() {
        let x = vec![vec![1.0]; 10];
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn two_by_two_log_odds_ratio() {
        // Odds 20:10 at x=0 and 10:20 at x=1, so OR = (10*10)/(20*20).
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (xv, ones, zeros) in [(0.0, 20, 10), (1.0, 10, 20)] {
            for _ in 0..ones {
                x.push(vec![1.0, xv]);
                y.push(1.0);
            }
            for _ in 0..zeros {
                x.push(vec![1.0, xv]);
                y.push(0.0);
            }
        }
        let fit = fit_logistic(&x, &y).unwrap();
        assert!((fit.coefficients[1] - (100.0f64 / 400.0).ln()).abs() < 1e-8);
        // Closed-form variance of a log odds ratio: Σ 1/cell.
        let var = 1.0 / 10.0 + 1.0 / 20.0 + 1.0 / 20.0 + 1.0 / 10.0;
        assert!((fit.variance(1) - var).abs() < 1e-8);
    }

    #[test]
    fn separation_is_flagged() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| f64::from(i >= 10)).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(fit.separated);
        assert!(fit.coefficients.iter().all(|b| b.abs() <= COEF_CAP));
    }

    #[test]
    fn quasi_separation_is_flagged() {
        // Every exposed unit has outcome 0; the unexposed group is mixed.
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![1.0, f64::from(i < 4)]).collect();
        let y: Vec<f64> = (0..12).map(|i| f64::from(i >= 4 && i % 2 == 0)).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(fit.separated);
        assert!(fit.variance(1) > 1e4);
    }

    #[test]
    fn constant_covariate_is_rejected() {
        let x = vec![vec![1.0, 2.0]; 5];
        assert!(fit_logistic(&x, &[0.0, 1.0, 0.0, 1.0, 1.0]).is_err());
    }
}
