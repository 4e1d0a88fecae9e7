//! The MCMC driver shared by MLBRL, CIBRL and BRL.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::solve_assignment;
use crate::comparison::{ComparisonCube, CubeDiagnostics};
use crate::error::{LinkError, Result};
use crate::model::{
    draw_from_counts, BlockAssignment, Hyperparams, LevelCounts, LinkageState, LogTables, MixtureClass, ModelParams,
};
use crate::rng::{substream, Stream};
use crate::sampler::block::{
    log_partial_matchings, mh_block_move, BlockMoveContext, MoveLikelihood, MoveType, PoolMode,
};
use crate::sampler::pool::{build_proposal_pool, PoolSummary, ProposalPool};
use crate::sampler::record::SweepKernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mlbrl,
    Cibrl,
    Brl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mlbrl, Method::Cibrl, Method::Brl];

    pub fn is_blocked(self) -> bool {
        self != Method::Brl
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mlbrl => "mlbrl",
            Method::Cibrl => "cibrl",
            Method::Brl => "brl",
        })
    }
}

impl FromStr for Method {
    type Err = LinkError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlbrl" => Ok(Method::Mlbrl),
            "cibrl" => Ok(Method::Cibrl),
            "brl" => Ok(Method::Brl),
            other => Err(LinkError::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub iterations: usize,
    /// Defaults to half of `iterations`.
    pub burn_in: Option<usize>,
    /// Record sweeps per linked pair per iteration.
    pub sweeps: usize,
    pub thin: usize,
    pub seed: u64,
    /// Exchange pool entries with sampled matchings after burn-in.
    pub adaptive_pool: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 2000,
            burn_in: None,
            sweeps: 25,
            thin: 1,
            seed: 0,
            adaptive_pool: true,
        }
    }
}

impl ChainConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(LinkError::Config("iterations must be positive".into()));
        }
        if self.burn_in() >= self.iterations {
            return Err(LinkError::Config(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in(),
                self.iterations
            )));
        }
        if self.sweeps == 0 || self.thin == 0 {
            return Err(LinkError::Config("sweeps and thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether iteration `v` is emitted.
    pub fn keeps(&self, v: usize) -> bool {
        v >= self.burn_in() && (v - self.burn_in()) % self.thin == 0
    }
}

/// A record link `(s, t, i, j)`: record i of file-1 block s with record j of
/// file-2 block t.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct Link {
    pub s: usize,
    pub t: usize,
    pub i: usize,
    pub j: usize,
}

impl From<[usize; 4]> for Link {
    fn from([s, t, i, j]: [usize; 4]) -> Self {
        Link { s, t, i, j }
    }
}

impl From<Link> for [usize; 4] {
    fn from(l: Link) -> Self {
        [l.s, l.t, l.i, l.j]
    }
}

/// One emitted draw. `blocks` is absent for unblocked (BRL) output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub iteration: usize,
    pub blocks: Option<Vec<(usize, usize)>>,
    pub links: Vec<Link>,
    /// n_m per block pair holding at least one link: `(s, t, n_m)`.
    pub link_counts: Vec<(usize, usize, usize)>,
    pub log_likelihood: f64,
    pub params: ModelParams,
}

impl PosteriorSample {
    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Recomputes `link_counts` from `links`.
    pub fn tally_links(links: &[Link]) -> Vec<(usize, usize, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for l in links {
            *counts.entry((l.s, l.t)).or_insert(0) += 1;
        }
        counts.into_iter().map(|((s, t), n)| (s, t, n)).collect()
    }

    /// Swaps the roles of the two files.
    pub fn transposed(mut self) -> Self {
        if let Some(blocks) = self.blocks.as_mut() {
            for p in blocks.iter_mut() {
                *p = (p.1, p.0);
            }
            blocks.sort_unstable();
        }
        for l in self.links.iter_mut() {
            *l = Link {
                s: l.t,
                t: l.s,
                i: l.j,
                j: l.i,
            };
        }
        self.links.sort_unstable();
        self.link_counts = Self::tally_links(&self.links);
        self
    }

    /// Structural check: one-to-one blocks and links, links inside linked blocks.
    pub fn is_consistent(&self) -> bool {
        use std::collections::HashSet;
        let mut rows = HashSet::new();
        let mut cols = HashSet::new();
        let links_ok = self
            .links
            .iter()
            .all(|l| rows.insert((l.s, l.i)) && cols.insert((l.t, l.j)));
        let blocks_ok = match &self.blocks {
            None => true,
            Some(blocks) => {
                let mut ss = HashSet::new();
                let mut ts = HashSet::new();
                let pairs: HashSet<_> = blocks.iter().copied().collect();
                blocks.iter().all(|&(s, t)| ss.insert(s) && ts.insert(t))
                    && self.links.iter().all(|l| pairs.contains(&(l.s, l.t)))
            }
        };
        links_ok && blocks_ok
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MoveCounts {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveCounts {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ChainDiagnostics {
    pub method: Option<Method>,
    pub iterations: usize,
    pub relink_moves: MoveCounts,
    pub swap_moves: MoveCounts,
    pub record_changes: u64,
    /// Log-likelihood after each iteration.
    pub log_likelihood_trace: Vec<f64>,
    /// Total link count after each iteration.
    pub link_count_trace: Vec<usize>,
    pub pool: PoolSummary,
    pub cube: CubeDiagnostics,
    pub candidate_pairs: u64,
    pub transposed: bool,
}

/// Cached per-block-pair level counts for fast parameter updates.
struct PairStats {
    block_total: Vec<Vec<u64>>,
    record_total: Vec<Vec<u64>>,
    /// Per block pair, per record variable, per level.
    record_pair: Vec<Vec<Vec<u64>>>,
}

impl PairStats {
    fn new(cube: &ComparisonCube) -> Self {
        let zeros = |levels: &[u8]| -> Vec<Vec<u64>> { levels.iter().map(|&l| vec![0; l as usize]).collect() };
        let mut block_total = zeros(cube.block_level_counts());
        let mut record_total = zeros(cube.record_level_counts());
        let mut record_pair = Vec::with_capacity(cube.blocks1() * cube.blocks2());
        for s in 0..cube.blocks1() {
            for t in 0..cube.blocks2() {
                let mut counts = zeros(cube.record_level_counts());
                if cube.block_allowed(s, t) {
                    for (p, &l) in cube.block_levels(s, t).iter().enumerate() {
                        block_total[p][l as usize] += 1;
                    }
                    for &(id, n) in &cube.pair(s, t).histogram {
                        for (k, &l) in cube.pattern(id).iter().enumerate() {
                            counts[k][l as usize] += n as u64;
                            record_total[k][l as usize] += n as u64;
                        }
                    }
                }
                record_pair.push(counts);
            }
        }
        PairStats {
            block_total,
            record_total,
            record_pair,
        }
    }

    fn counts(&self, cube: &ComparisonCube, b: &BlockAssignment, c: &LinkageState) -> LevelCounts {
        let mut out = LevelCounts::zeros(cube);
        let mut linked_records = out.record_match.clone();
        for (s, t) in b.pairs() {
            for (p, &l) in cube.block_levels(s, t).iter().enumerate() {
                out.block_match[p][l as usize] += 1;
            }
            for (k, levels) in self.record_pair[cube.pair_index(s, t)].iter().enumerate() {
                for (l, &n) in levels.iter().enumerate() {
                    linked_records[k][l] += n;
                }
            }
            let pair = cube.pair(s, t);
            for (i, j) in c.matchings[s].links() {
                for (k, &l) in cube.pattern(pair.code(i, j)).iter().enumerate() {
                    out.record_match[k][l as usize] += 1;
                }
            }
        }
        let minus = |a: &[Vec<u64>], b: &[Vec<u64>]| -> Vec<Vec<u64>> {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
        };
        out.block_nonmatch = minus(&self.block_total, &out.block_match);
        out.record_nonmatch = minus(&linked_records, &out.record_match);
        out.record_nonblock = minus(&self.record_total, &linked_records);
        out
    }
}

/// The sampler state and kernels for one chain on one comparison cube.
pub struct Sampler<'a> {
    cube: &'a ComparisonCube,
    hyper: Hyperparams,
    config: ChainConfig,
    method: Method,
    stats: PairStats,
    log_matchings: Vec<f64>,
    blocks: BlockAssignment,
    links: LinkageState,
    pool: ProposalPool,
    params: ModelParams,
    tables: LogTables,
    kernel: SweepKernel,
    frozen: bool,
    loglik: f64,
    accepted_moves: u64,
    diagnostics: ChainDiagnostics,
}

/// Random admissible injective block assignment.
fn initial_blocks(cube: &ComparisonCube, seed: u64) -> Result<BlockAssignment> {
    use rand::Rng;
    let mut rng = substream(seed, Stream::Initial, &[0]);
    let (s_n, t_n) = (cube.blocks1(), cube.blocks2());
    if s_n > t_n {
        return Err(LinkError::Contract(format!("{s_n} file-1 blocks exceed {t_n} file-2 blocks")));
    }
    let weights: Vec<f64> = (0..s_n * t_n)
        .map(|st| {
            if cube.block_allowed(st / t_n, st % t_n) {
                1.0 + rng.random::<f64>()
            } else {
                0.0
            }
        })
        .collect();
    let assignment = solve_assignment(&weights, s_n, t_n);
    let s_to_t: Vec<usize> = assignment.into_iter().map(|t| t.expect("n1 <= n2")).collect();
    if s_to_t.iter().enumerate().any(|(s, &t)| !cube.block_allowed(s, t)) {
        return Err(LinkError::Config(
            "forced-agreement filters leave no admissible one-to-one block assignment".into(),
        ));
    }
    BlockAssignment::new(s_to_t, t_n)
}

impl<'a> Sampler<'a> {
    /// Builds the proposal pool and a random initial state. MLBRL and CIBRL
    /// start each linked pair from its pool entry; BRL starts empty.
    pub fn new(cube: &'a ComparisonCube, hyper: Hyperparams, config: ChainConfig, method: Method) -> Result<Self> {
        config.validate()?;
        hyper.validate(cube)?;
        let (pool, summary) = if method == Method::Brl {
            let entries = vec![crate::model::Matching::empty(cube.sizes1()[0], cube.sizes2()[0])];
            (ProposalPool::from_entries(entries, 1, false), PoolSummary::default())
        } else {
            build_proposal_pool(cube, config.adaptive_pool)?
        };
        let blocks = if method == Method::Brl {
            BlockAssignment::identity(1, 1)?
        } else {
            initial_blocks(cube, config.seed)?
        };
        let links = if method == Method::Brl {
            LinkageState::empty(&blocks, cube)
        } else {
            LinkageState {
                matchings: blocks.pairs().map(|(s, t)| pool.get(s, t).clone()).collect(),
            }
        };
        let params = ModelParams::uniform(cube);
        let tables = LogTables::new(&params, cube);
        let kernel = SweepKernel::new(&tables.pattern_ratio, hyper.alpha_pi, hyper.beta_pi);
        let log_matchings = (0..cube.blocks1())
            .flat_map(|s| (0..cube.blocks2()).map(move |t| (s, t)))
            .map(|(s, t)| log_partial_matchings(cube.sizes1()[s], cube.sizes2()[t]))
            .collect();
        let loglik = tables.log_likelihood(&blocks, &links, cube);
        let diagnostics = ChainDiagnostics {
            method: Some(method),
            pool: summary,
            cube: cube.diagnostics().clone(),
            candidate_pairs: cube.candidate_pairs(),
            ..Default::default()
        };
        Ok(Sampler {
            cube,
            hyper,
            config,
            method,
            stats: PairStats::new(cube),
            log_matchings,
            blocks,
            links,
            pool,
            params,
            tables,
            kernel,
            frozen: false,
            loglik,
            accepted_moves: 0,
            diagnostics,
        })
    }

    /// Fixes Θ for every later iteration (parameter draws are skipped).
    pub fn freeze_params(&mut self, params: ModelParams) -> Result<()> {
        params.validate(self.cube)?;
        self.install_params(params);
        self.frozen = true;
        Ok(())
    }

    /// Replaces the current (B, C) state.
    pub fn set_state(&mut self, blocks: BlockAssignment, links: LinkageState) -> Result<()> {
        links.check(&blocks, self.cube)?;
        self.blocks = blocks;
        self.links = links;
        self.loglik = self.tables.log_likelihood(&self.blocks, &self.links, self.cube);
        Ok(())
    }

    pub fn blocks(&self) -> &BlockAssignment {
        &self.blocks
    }

    pub fn links(&self) -> &LinkageState {
        &self.links
    }

    pub fn pool(&self) -> &ProposalPool {
        &self.pool
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Incrementally maintained log-likelihood.
    pub fn log_likelihood(&self) -> f64 {
        self.loglik
    }

    /// Accepted block moves plus changed record links so far.
    pub fn accepted_moves(&self) -> u64 {
        self.accepted_moves
    }

    pub fn diagnostics(&self) -> &ChainDiagnostics {
        &self.diagnostics
    }

    /// Level counts of the current state by class.
    pub fn level_counts(&self) -> LevelCounts {
        self.stats.counts(self.cube, &self.blocks, &self.links)
    }

    fn install_params(&mut self, params: ModelParams) {
        self.params = params;
        self.tables = LogTables::new(&self.params, self.cube);
        self.kernel = SweepKernel::new(&self.tables.pattern_ratio, self.hyper.alpha_pi, self.hyper.beta_pi);
        self.loglik = self.tables.log_likelihood(&self.blocks, &self.links, self.cube);
    }

    fn draw_params(&mut self, stream: Stream, classes: &[MixtureClass], v: usize) {
        if self.frozen {
            return;
        }
        let counts = self.level_counts();
        let mut rng = substream(self.config.seed, stream, &[v as u64]);
        let params = draw_from_counts(&counts, &self.hyper, classes, &self.params, &mut rng);
        self.install_params(params);
    }

    fn sweep_linked(&mut self, v: usize) {
        let sweeps = if self.method == Method::Brl { 1 } else { self.config.sweeps };
        let (cube, kernel, seed) = (self.cube, &self.kernel, self.config.seed);
        let blocks = &self.blocks;
        let results: Vec<_> = self
            .links
            .matchings
            .par_iter_mut()
            .enumerate()
            .map(|(s, m)| {
                let t = blocks.partner(s);
                let mut rng = substream(seed, Stream::RecordSweep, &[v as u64, s as u64, t as u64]);
                crate::sampler::record::sweep_record_links(m, cube.pair(s, t), kernel, sweeps, &mut rng)
            })
            .collect();
        for r in results {
            self.loglik += r.delta;
            self.accepted_moves += r.changes as u64;
            self.diagnostics.record_changes += r.changes as u64;
        }
    }

    fn block_moves(&mut self, v: usize, likelihood: MoveLikelihood) {
        if self.cube.blocks2() < 2 {
            return;
        }
        let exchange = self.method == Method::Mlbrl && self.pool.adaptive && v >= self.config.burn_in();
        let ctx = BlockMoveContext {
            cube: self.cube,
            tables: &self.tables,
            alpha_pi: self.hyper.alpha_pi,
            beta_pi: self.hyper.beta_pi,
            pool_mode: if exchange { PoolMode::Exchange } else { PoolMode::Fixed },
            likelihood,
            log_matchings: &self.log_matchings,
        };
        let mut rng = substream(self.config.seed, Stream::BlockMove, &[v as u64]);
        for s in 0..self.cube.blocks1() {
            let Some(outcome) = mh_block_move(s, &mut self.blocks, &mut self.links, &mut self.pool, &ctx, &mut rng)
            else {
                continue;
            };
            let counter = match outcome.kind {
                MoveType::Relink => &mut self.diagnostics.relink_moves,
                MoveType::Swap => &mut self.diagnostics.swap_moves,
            };
            counter.proposed += 1;
            if outcome.accepted {
                counter.accepted += 1;
                self.accepted_moves += 1;
                self.loglik += outcome.delta_loglik;
            }
        }
    }

    /// One full iteration `v`.
    pub fn step(&mut self, v: usize) -> Result<()> {
        match self.method {
            Method::Mlbrl => {
                self.draw_params(Stream::Params, &MixtureClass::ALL, v);
                self.sweep_linked(v);
                self.block_moves(v, MoveLikelihood::Joint);
            }
            Method::Cibrl => {
                self.draw_params(
                    Stream::BlockParams,
                    &[MixtureClass::BlockMatch, MixtureClass::BlockNonmatch],
                    v,
                );
                self.block_moves(v, MoveLikelihood::BlockOnly);
                self.draw_params(
                    Stream::Params,
                    &[MixtureClass::RecordMatch, MixtureClass::RecordNonmatch, MixtureClass::RecordNonblock],
                    v,
                );
                self.sweep_linked(v);
            }
            Method::Brl => {
                self.draw_params(Stream::Params, &MixtureClass::ALL, v);
                self.sweep_linked(v);
            }
        }
        if !self.loglik.is_finite() {
            return Err(LinkError::Numerical(format!("log-likelihood became {} at iteration {v}", self.loglik)));
        }
        self.diagnostics.iterations = v + 1;
        self.diagnostics.log_likelihood_trace.push(self.loglik);
        self.diagnostics.link_count_trace.push(self.links.link_count());
        Ok(())
    }

    /// The current state as a sample in this cube's orientation.
    pub fn sample(&self, iteration: usize) -> PosteriorSample {
        let mut links = Vec::with_capacity(self.links.link_count());
        for (s, t) in self.blocks.pairs() {
            links.extend(self.links.matchings[s].links().map(|(i, j)| Link { s, t, i, j }));
        }
        PosteriorSample {
            iteration,
            blocks: Some(self.blocks.pairs().collect()),
            link_counts: PosteriorSample::tally_links(&links),
            links,
            log_likelihood: self.loglik,
            params: self.params.clone(),
        }
    }

    /// Runs every configured iteration and collects the kept samples.
    pub fn run(mut self) -> Result<ChainOutput> {
        let mut samples = Vec::new();
        for v in 0..self.config.iterations {
            self.step(v)?;
            if self.config.keeps(v) {
                samples.push(self.sample(v));
            }
        }
        Ok(ChainOutput {
            samples,
            diagnostics: self.diagnostics,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub samples: Vec<PosteriorSample>,
    pub diagnostics: ChainDiagnostics,
}

/// Runs MLBRL (or CIBRL) on a prepared cube. When file 1 has more blocks
/// than file 2 the roles are swapped internally and outputs re-inverted.
pub fn run_on_cube(cube: &ComparisonCube, hyper: &Hyperparams, chain: &ChainConfig, method: Method) -> Result<ChainOutput> {
    if method == Method::Brl {
        return Err(LinkError::Config("BRL runs on the flattened cube; use run_brl".into()));
    }
    if cube.blocks1() > cube.blocks2() {
        let flipped = cube.transposed();
        let mut out = Sampler::new(&flipped, hyper.clone(), chain.clone(), method)?.run()?;
        out.samples = out.samples.into_iter().map(PosteriorSample::transposed).collect();
        out.diagnostics.transposed = true;
        return Ok(out);
    }
    Sampler::new(cube, hyper.clone(), chain.clone(), method)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = ChainConfig::default();
        assert_eq!(c.burn_in(), 1000);
        c.validate().unwrap();
        let bad = ChainConfig {
            burn_in: Some(2000),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ChainConfig {
            sweeps: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let c = ChainConfig {
            iterations: 10,
            burn_in: Some(4),
            thin: 3,
            ..Default::default()
        };
        let kept: Vec<_> = (0..10).filter(|&v| c.keeps(v)).collect();
        assert_eq!(kept, vec![4, 7]);
    }

    #[test]
    fn links_serialize_as_tuples() {
        let l = Link { s: 1, t: 2, i: 3, j: 4 };
        assert_eq!(serde_json::to_string(&l).unwrap(), "[1,2,3,4]");
        let back: Link = serde_json::from_str("[1,2,3,4]").unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("MLBRL".parse::<Method>().unwrap(), Method::Mlbrl);
        assert!("xyz".parse::<Method>().is_err());
        assert_eq!(Method::Cibrl.to_string(), "cibrl");
    }
}
