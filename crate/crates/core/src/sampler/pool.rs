//! Proposal pool: one pre-computed matching per block pair, used to propose
//! record links whenever a block move creates a new linked pair.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::assignment::solve_assignment;
use crate::comparison::{ComparisonCube, MASKED};
use crate::em::{em_mixture, EmOptions};
use crate::error::Result;
use crate::model::Matching;

#[derive(Clone, Debug)]
pub struct ProposalPool {
    entries: Vec<Matching>,
    blocks2: usize,
    /// Whether entries are exchanged with sampled matchings after burn-in.
    pub adaptive: bool,
}

impl ProposalPool {
    pub fn from_entries(entries: Vec<Matching>, blocks2: usize, adaptive: bool) -> Self {
        assert_eq!(entries.len() % blocks2.max(1), 0);
        ProposalPool {
            entries,
            blocks2,
            adaptive,
        }
    }

    pub fn get(&self, s: usize, t: usize) -> &Matching {
        &self.entries[s * self.blocks2 + t]
    }

    /// Stores `m` for (s, t) and returns the previous entry.
    pub fn replace(&mut self, s: usize, t: usize, m: Matching) -> Matching {
        std::mem::replace(&mut self.entries[s * self.blocks2 + t], m)
    }

    pub fn entries(&self) -> &[Matching] {
        &self.entries
    }
}

/// Summary of the EM fit behind a pool.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PoolSummary {
    pub em_iterations: usize,
    pub em_converged: bool,
    pub em_degenerate: bool,
    pub match_proportion: f64,
    /// log(m/u) of each record-level pattern, by pattern id.
    pub pattern_weights: Vec<f64>,
    pub pooled_links: usize,
    /// Block pairs whose record pairs fed the refined record-level fit
    /// (0 when the joint fit was used directly).
    pub refined_block_pairs: usize,
}

/// Fits a Fellegi-Sunter mixture to the joint block+record agreement
/// patterns, then solves one assignment per block pair on record-level
/// log-odds. Pairs with non-positive log-odds are dropped.
///
/// On blocked data the joint fit's match class tends to pick out agreeing
/// block pairs rather than agreeing records, so the record-level weights
/// come from a second fit restricted to record pairs of block pairs whose
/// block-level posterior favours a match. Without such pairs the joint fit
/// is used as is.
pub fn build_proposal_pool(cube: &ComparisonCube, adaptive: bool) -> Result<(ProposalPool, PoolSummary)> {
    let (s_n, t_n) = (cube.blocks1(), cube.blocks2());
    let p = cube.block_level_counts().len();
    let k = cube.record_level_counts().len();
    let empty = |s: usize, t: usize| Matching::empty(cube.sizes1()[s], cube.sizes2()[t]);

    let mut joint: BTreeMap<(Vec<u8>, u32), f64> = BTreeMap::new();
    for s in 0..s_n {
        for t in 0..t_n {
            if !cube.block_allowed(s, t) {
                continue;
            }
            let gamma_b = cube.block_levels(s, t);
            for &(id, n) in &cube.pair(s, t).histogram {
                *joint.entry((gamma_b.to_vec(), id)).or_insert(0.0) += n as f64;
            }
        }
    }
    if k == 0 || joint.is_empty() {
        let entries = (0..s_n).flat_map(|s| (0..t_n).map(move |t| (s, t))).map(|(s, t)| empty(s, t)).collect();
        return Ok((ProposalPool::from_entries(entries, t_n, adaptive), PoolSummary::default()));
    }

    let levels: Vec<u8> = cube
        .block_level_counts()
        .iter()
        .chain(cube.record_level_counts())
        .copied()
        .collect();
    let patterns: Vec<(Vec<u8>, f64)> = joint
        .into_iter()
        .map(|((mut gamma, id), w)| {
            gamma.extend_from_slice(cube.pattern(id));
            (gamma, w)
        })
        .collect();
    let fit = em_mixture(&levels, &patterns, &EmOptions::default())?;
    let prior_logit = (fit.params.p / (1.0 - fit.params.p)).ln();
    let likely: Vec<(usize, usize)> = (0..s_n)
        .flat_map(|s| (0..t_n).map(move |t| (s, t)))
        .filter(|&(s, t)| {
            cube.block_allowed(s, t)
                && prior_logit
                    + cube
                        .block_levels(s, t)
                        .iter()
                        .enumerate()
                        .map(|(pp, &l)| fit.params.log_odds(pp, l))
                        .sum::<f64>()
                    > 0.0
        })
        .collect();
    let refined = if p > 0 && !likely.is_empty() {
        let mut hist: BTreeMap<u32, f64> = BTreeMap::new();
        for &(s, t) in &likely {
            for &(id, n) in &cube.pair(s, t).histogram {
                *hist.entry(id).or_insert(0.0) += n as f64;
            }
        }
        let record_patterns: Vec<(Vec<u8>, f64)> =
            hist.into_iter().map(|(id, w)| (cube.pattern(id).to_vec(), w)).collect();
        let inner = em_mixture(cube.record_level_counts(), &record_patterns, &EmOptions::default())?;
        (!inner.degenerate).then_some(inner)
    } else {
        None
    };
    let (weights, used, refined_block_pairs): (Vec<f64>, _, usize) = match refined {
        Some(inner) => {
            let w = (0..cube.pattern_count() as u32)
                .map(|id| {
                    cube.pattern(id)
                        .iter()
                        .enumerate()
                        .map(|(kk, &l)| inner.params.log_odds(kk, l))
                        .sum()
                })
                .collect();
            (w, inner, likely.len())
        }
        None => {
            let w = (0..cube.pattern_count() as u32)
                .map(|id| {
                    cube.pattern(id)
                        .iter()
                        .enumerate()
                        .map(|(kk, &l)| fit.params.log_odds(p + kk, l))
                        .sum()
                })
                .collect();
            (w, fit, 0)
        }
    };

    let coords: Vec<(usize, usize)> = (0..s_n).flat_map(|s| (0..t_n).map(move |t| (s, t))).collect();
    let entries: Vec<Matching> = coords
        .par_iter()
        .map(|&(s, t)| {
            let pair = cube.pair(s, t);
            let w: Vec<f64> = pair
                .codes
                .iter()
                .map(|&c| if c == MASKED { 0.0 } else { weights[c as usize].max(0.0) })
                .collect();
            let mut m = empty(s, t);
            if !cube.block_allowed(s, t) || w.iter().all(|&x| x <= 0.0) {
                return m;
            }
            for (i, j) in solve_assignment(&w, pair.rows, pair.cols).into_iter().enumerate() {
                if let Some(j) = j {
                    if w[i * pair.cols + j] > 0.0 {
                        m.link(i, j);
                    }
                }
            }
            m
        })
        .collect();
    let summary = PoolSummary {
        em_iterations: used.iterations,
        em_converged: used.converged,
        em_degenerate: used.degenerate,
        match_proportion: used.params.p,
        pattern_weights: weights,
        pooled_links: entries.iter().map(Matching::len).sum(),
        refined_block_pairs,
    };
    Ok((ProposalPool::from_entries(entries, t_n, adaptive), summary))
}
