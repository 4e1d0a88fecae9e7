//! Metropolis-Hastings block moves.
//!
//! For file-1 block s linked to t, a block r != t is drawn uniformly. If r is
//! free, s moves to r (type 1); if r belongs to q, s and q exchange partners
//! (type 2). Newly linked pairs take their matching from the proposal pool.
//!
//! In swap mode the pool entries of unlinked pairs are treated as auxiliary
//! variables with a uniform distribution over partial matchings, and the
//! matchings leaving a linked pair are written back into the pool. The move
//! is then an involution and the acceptance ratio picks up the ratio of
//! partial-matching counts, which is exactly 1 when block sizes agree. In
//! fixed mode the pool is never modified and no count correction is applied.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::comparison::ComparisonCube;
use crate::model::{log_prior_linkage, BlockAssignment, LinkageState, LogTables, Matching};
use crate::sampler::pool::ProposalPool;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveType {
    Relink,
    Swap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Fixed,
    Exchange,
}

/// Which likelihood terms enter the acceptance ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveLikelihood {
    /// Block and record terms plus the linkage prior.
    Joint,
    /// Block-level terms only.
    BlockOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveOutcome {
    pub kind: MoveType,
    pub accepted: bool,
    pub log_ratio: f64,
    /// Change in the full log-likelihood when accepted (0 otherwise).
    pub delta_loglik: f64,
}

/// log of the number of partial one-to-one matchings of an n1 x n2 pair,
/// Σ_k C(n1,k) C(n2,k) k!.
pub fn log_partial_matchings(n1: usize, n2: usize) -> f64 {
    let lf = |n: usize| ln_gamma(n as f64 + 1.0);
    let terms: Vec<f64> = (0..=n1.min(n2))
        .map(|k| lf(n1) - lf(n1 - k) + lf(n2) - lf(n2 - k) - lf(k))
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

pub struct BlockMoveContext<'a> {
    pub cube: &'a ComparisonCube,
    pub tables: &'a LogTables,
    pub alpha_pi: f64,
    pub beta_pi: f64,
    pub pool_mode: PoolMode,
    pub likelihood: MoveLikelihood,
    /// log_partial_matchings per block pair (row-major), used in exchange mode.
    pub log_matchings: &'a [f64],
}

impl BlockMoveContext<'_> {
    fn prior(&self, m: &Matching) -> f64 {
        log_prior_linkage(m.len(), m.rows(), m.cols(), self.alpha_pi, self.beta_pi)
            .expect("matching fits its block pair")
    }

    fn linked(&self, s: usize, t: usize, m: &Matching) -> (f64, f64) {
        let cube = self.cube;
        match self.likelihood {
            MoveLikelihood::Joint => (self.tables.linked_term(cube, s, t, m), self.prior(m)),
            MoveLikelihood::BlockOnly => (self.tables.block_match[cube.pair_index(s, t)], 0.0),
        }
    }

    fn unlinked(&self, s: usize, t: usize) -> f64 {
        match self.likelihood {
            MoveLikelihood::Joint => self.tables.unlinked_term(self.cube, s, t),
            MoveLikelihood::BlockOnly => self.tables.block_nonmatch[self.cube.pair_index(s, t)],
        }
    }

    fn log_m(&self, s: usize, t: usize) -> f64 {
        match self.pool_mode {
            PoolMode::Fixed => 0.0,
            PoolMode::Exchange => self.log_matchings[self.cube.pair_index(s, t)],
        }
    }

    /// Likelihood delta that the full (joint) model would see, for bookkeeping.
    fn joint_delta(&self, gained: &[(usize, usize, &Matching)], lost: &[(usize, usize, &Matching)]) -> f64 {
        let (cube, tables) = (self.cube, self.tables);
        gained
            .iter()
            .map(|&(s, t, m)| tables.linked_term(cube, s, t, m) - tables.unlinked_term(cube, s, t))
            .sum::<f64>()
            - lost
                .iter()
                .map(|&(s, t, m)| tables.linked_term(cube, s, t, m) - tables.unlinked_term(cube, s, t))
                .sum::<f64>()
    }
}

/// Draws r uniformly from the T - 1 blocks other than t.
pub fn propose_block<R: Rng + ?Sized>(t: usize, blocks2: usize, rng: &mut R) -> Option<usize> {
    if blocks2 < 2 {
        return None;
    }
    let r = rng.random_range(0..blocks2 - 1);
    Some(if r >= t { r + 1 } else { r })
}

/// One block-move proposal for file-1 block `s`. On acceptance B, C and (in
/// exchange mode) the pool are updated in place.
pub fn mh_block_move<R: Rng + ?Sized>(
    s: usize,
    b: &mut BlockAssignment,
    c: &mut LinkageState,
    pool: &mut ProposalPool,
    ctx: &BlockMoveContext<'_>,
    rng: &mut R,
) -> Option<MoveOutcome> {
    let t = b.partner(s);
    let r = propose_block(t, b.blocks2(), rng)?;
    let cube = ctx.cube;
    let reject = |kind| MoveOutcome {
        kind,
        accepted: false,
        log_ratio: f64::NEG_INFINITY,
        delta_loglik: 0.0,
    };
    match b.owner(r) {
        None => {
            if !cube.block_allowed(s, r) {
                return Some(reject(MoveType::Relink));
            }
            let proposed = pool.get(s, r);
            let current = &c.matchings[s];
            let (l_new, p_new) = ctx.linked(s, r, proposed);
            let (l_old, p_old) = ctx.linked(s, t, current);
            let log_ratio = l_new + p_new - ctx.unlinked(s, r) + ctx.unlinked(s, t) - l_old - p_old
                + ctx.log_m(s, r)
                - ctx.log_m(s, t);
            let accepted = rng.random::<f64>().ln() < log_ratio;
            let mut delta = 0.0;
            if accepted {
                delta = ctx.joint_delta(&[(s, r, proposed)], &[(s, t, current)]);
                let incoming = proposed.clone();
                let outgoing = std::mem::replace(&mut c.matchings[s], incoming);
                if ctx.pool_mode == PoolMode::Exchange {
                    pool.replace(s, t, outgoing);
                }
                b.relink(s, r);
            }
            Some(MoveOutcome {
                kind: MoveType::Relink,
                accepted,
                log_ratio,
                delta_loglik: delta,
            })
        }
        Some(q) => {
            if !cube.block_allowed(s, r) || !cube.block_allowed(q, t) {
                return Some(reject(MoveType::Swap));
            }
            let (new_sr, new_qt) = (pool.get(s, r), pool.get(q, t));
            let (old_st, old_qr) = (&c.matchings[s], &c.matchings[q]);
            let (l1, p1) = ctx.linked(s, r, new_sr);
            let (l2, p2) = ctx.linked(q, t, new_qt);
            let (l3, p3) = ctx.linked(s, t, old_st);
            let (l4, p4) = ctx.linked(q, r, old_qr);
            let log_ratio = (l1 + p1 + l2 + p2) - (l3 + p3 + l4 + p4) - ctx.unlinked(s, r) - ctx.unlinked(q, t)
                + ctx.unlinked(s, t)
                + ctx.unlinked(q, r)
                + ctx.log_m(s, r)
                + ctx.log_m(q, t)
                - ctx.log_m(s, t)
                - ctx.log_m(q, r);
            let accepted = rng.random::<f64>().ln() < log_ratio;
            let mut delta = 0.0;
            if accepted {
                delta = ctx.joint_delta(&[(s, r, new_sr), (q, t, new_qt)], &[(s, t, old_st), (q, r, old_qr)]);
                let (in_s, in_q) = (new_sr.clone(), new_qt.clone());
                let out_s = std::mem::replace(&mut c.matchings[s], in_s);
                let out_q = std::mem::replace(&mut c.matchings[q], in_q);
                if ctx.pool_mode == PoolMode::Exchange {
                    pool.replace(s, t, out_s);
                    pool.replace(q, r, out_q);
                }
                b.swap(s, q);
            }
            Some(MoveOutcome {
                kind: MoveType::Swap,
                accepted,
                log_ratio,
                delta_loglik: delta,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_matching_counts() {
        assert!((log_partial_matchings(2, 2).exp() - 7.0).abs() < 1e-9);
        assert!((log_partial_matchings(1, 2).exp() - 3.0).abs() < 1e-9);
        assert!((log_partial_matchings(3, 3).exp() - 34.0).abs() < 1e-9);
        assert!(log_partial_matchings(0, 5).abs() < 1e-12);
    }

    #[test]
    fn proposals_skip_the_current_block() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut seen = [0usize; 4];
        for _ in 0..4000 {
            seen[propose_block(2, 4, &mut rng).unwrap()] += 1;
        }
        assert_eq!(seen[2], 0);
        assert!(seen.iter().enumerate().filter(|&(k, _)| k != 2).all(|(_, &n)| n > 1200));
        assert_eq!(propose_block(0, 1, &mut rng), None);
    }
}
