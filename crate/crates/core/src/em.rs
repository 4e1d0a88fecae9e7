//! Two-class Fellegi-Sunter mixture fitted by EM over weighted agreement
//! patterns.

use serde::{Deserialize, Serialize};

use crate::error::{LinkError, Result};
use crate::model::PROB_FLOOR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsParams {
    /// m-probabilities: per variable, per level, among matches.
    pub m: Vec<Vec<f64>>,
    /// u-probabilities among non-matches.
    pub u: Vec<Vec<f64>>,
    /// Match proportion.
    pub p: f64,
}

impl FsParams {
    /// Matches lean on the highest level, non-matches on the lowest.
    pub fn default_init(level_counts: &[u8]) -> Self {
        let skewed = |high: bool| -> Vec<Vec<f64>> {
            level_counts
                .iter()
                .map(|&l| {
                    let l = l as usize;
                    let rest = 0.1 / (l - 1) as f64;
                    let mut v = vec![rest; l];
                    v[if high { l - 1 } else { 0 }] = 0.9;
                    v
                })
                .collect()
        };
        FsParams {
            m: skewed(true),
            u: skewed(false),
            p: 0.01,
        }
    }

    /// log(m/u) of one variable at one level.
    pub fn log_odds(&self, var: usize, level: u8) -> f64 {
        (self.m[var][level as usize] / self.u[var][level as usize]).ln()
    }
}

#[derive(Clone, Debug)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Option<FsParams>,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-8,
            max_iter: 500,
            init: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub params: FsParams,
    /// Observed-data log-likelihood, starting at the initial parameters.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when every pattern is identical and the classes are not identifiable.
    pub degenerate: bool,
}

fn component_probs(params: &FsParams, levels: &[u8]) -> (f64, f64) {
    let mut pm = params.p;
    let mut pu = 1.0 - params.p;
    for (k, &l) in levels.iter().enumerate() {
        pm *= params.m[k][l as usize];
        pu *= params.u[k][l as usize];
    }
    (pm, pu)
}

fn observed_log_likelihood(params: &FsParams, patterns: &[(Vec<u8>, f64)]) -> f64 {
    patterns
        .iter()
        .map(|(levels, w)| {
            let (pm, pu) = component_probs(params, levels);
            w * (pm + pu).ln()
        })
        .sum()
}

fn clamp_normalize(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.max(PROB_FLOOR);
    }
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Fits the mixture to `(levels, weight)` patterns.
pub fn em_mixture(level_counts: &[u8], patterns: &[(Vec<u8>, f64)], options: &EmOptions) -> Result<EmFit> {
    let total: f64 = patterns.iter().map(|(_, w)| w).sum();
    if patterns.is_empty() || !(total > 0.0) {
        return Err(LinkError::Contract("EM needs at least one weighted pattern".into()));
    }
    if !(options.tol > 0.0) {
        return Err(LinkError::Contract("EM tolerance must be positive".into()));
    }
    if let Some((levels, _)) = patterns
        .iter()
        .find(|(l, _)| l.len() != level_counts.len() || l.iter().zip(level_counts).any(|(a, b)| a >= b))
    {
        return Err(LinkError::Contract(format!("pattern {levels:?} does not fit the level counts")));
    }
    let mut params = options
        .init
        .clone()
        .unwrap_or_else(|| FsParams::default_init(level_counts));
    let first = patterns.iter().find(|(_, w)| *w > 0.0).map(|(l, _)| l);
    let degenerate = patterns.iter().filter(|(_, w)| *w > 0.0).all(|(l, _)| Some(l) == first);

    let mut trace = vec![observed_log_likelihood(&params, patterns)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        let mut m_acc: Vec<Vec<f64>> = level_counts.iter().map(|&l| vec![0.0; l as usize]).collect();
        let mut u_acc = m_acc.clone();
        let mut match_mass = 0.0;
        for (levels, w) in patterns {
            let (pm, pu) = component_probs(&params, levels);
            let g = pm / (pm + pu);
            let (wm, wu) = (w * g, w * (1.0 - g));
            match_mass += wm;
            for (k, &l) in levels.iter().enumerate() {
                m_acc[k][l as usize] += wm;
                u_acc[k][l as usize] += wu;
            }
        }
        for v in m_acc.iter_mut().chain(u_acc.iter_mut()) {
            let sum: f64 = v.iter().sum();
            if sum > 0.0 {
                v.iter_mut().for_each(|x| *x /= sum);
            } else {
                let n = v.len() as f64;
                v.iter_mut().for_each(|x| *x = 1.0 / n);
            }
            clamp_normalize(v);
        }
        params = FsParams {
            m: m_acc,
            u: u_acc,
            p: (match_mass / total).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR),
        };
        iterations += 1;
        let ll = observed_log_likelihood(&params, patterns);
        let prev = *trace.last().expect("trace is non-empty");
        trace.push(ll);
        if (ll - prev).abs() <= options.tol * (1.0 + prev.abs()) {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        params,
        log_likelihood: trace,
        iterations,
        converged,
        degenerate,
    })
}
