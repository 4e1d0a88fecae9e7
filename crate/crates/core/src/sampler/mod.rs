//! The MLBRL sampler: record-link Gibbs sweeps, block moves and the
//! proposal pool.

pub mod block;
pub mod chain;
pub mod pool;
pub mod record;

pub use block::{log_partial_matchings, mh_block_move, BlockMoveContext, MoveLikelihood, MoveOutcome, MoveType, PoolMode};
pub use chain::{
    run_on_cube, ChainConfig, ChainDiagnostics, ChainOutput, Link, Method, MoveCounts, PosteriorSample, Sampler,
};
pub use pool::{build_proposal_pool, PoolSummary, ProposalPool};
pub use record::{no_link_weight, record_full_conditional, sweep_record_links, LinkChoice, SweepKernel, SweepStats};

use crate::comparison::{build_comparison_cube, BlockedFile, Schema};
use crate::error::Result;
use crate::model::Hyperparams;

/// Jointly samples block pairings and record links.
pub fn run_mlbrl(
    f1: &BlockedFile,
    f2: &BlockedFile,
    schema: &Schema,
    hyper: &Hyperparams,
    chain: &ChainConfig,
) -> Result<ChainOutput> {
    chain.validate()?;
    let cube = build_comparison_cube(f1, f2, schema)?;
    run_on_cube(&cube, hyper, chain, Method::Mlbrl)
}
