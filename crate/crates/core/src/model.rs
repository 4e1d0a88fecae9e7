//! Latent structures, the mixture likelihood, the linkage prior and
//! conjugate parameter updates.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::comparison::{ComparisonCube, MASKED};
use crate::error::{LinkError, Result};

/// Lower/upper clamp applied to every drawn probability.
pub const PROB_FLOOR: f64 = 1e-12;

/// The block assignment B: an injective map from file-1 blocks to file-2 blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockAssignment {
    s_to_t: Vec<usize>,
    t_to_s: Vec<Option<usize>>,
}

impl BlockAssignment {
    pub fn new(s_to_t: Vec<usize>, blocks2: usize) -> Result<Self> {
        let mut t_to_s = vec![None; blocks2];
        for (s, &t) in s_to_t.iter().enumerate() {
            let slot = t_to_s.get_mut(t).ok_or_else(|| {
                LinkError::Contract(format!("block {s} assigned to {t}, but only {blocks2} blocks exist"))
            })?;
            if let Some(prev) = slot.replace(s) {
                return Err(LinkError::Contract(format!(
                    "blocks {prev} and {s} are both assigned to block {t}"
                )));
            }
        }
        Ok(BlockAssignment { s_to_t, t_to_s })
    }

    pub fn identity(blocks1: usize, blocks2: usize) -> Result<Self> {
        Self::new((0..blocks1).collect(), blocks2)
    }

    pub fn blocks1(&self) -> usize {
        self.s_to_t.len()
    }

    pub fn blocks2(&self) -> usize {
        self.t_to_s.len()
    }

    #[inline]
    pub fn partner(&self, s: usize) -> usize {
        self.s_to_t[s]
    }

    #[inline]
    pub fn owner(&self, t: usize) -> Option<usize> {
        self.t_to_s[t]
    }

    pub fn is_linked(&self, s: usize, t: usize) -> bool {
        self.s_to_t[s] == t
    }

    /// Linked pairs `(s, t)` in file-1 order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.s_to_t.iter().copied().enumerate()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.s_to_t
    }

    /// Moves block s onto the currently free block r.
    pub fn relink(&mut self, s: usize, r: usize) {
        debug_assert!(self.t_to_s[r].is_none());
        let t = self.s_to_t[s];
        self.t_to_s[t] = None;
        self.t_to_s[r] = Some(s);
        self.s_to_t[s] = r;
    }

    /// Exchanges the partners of s and q.
    pub fn swap(&mut self, s: usize, q: usize) {
        let (t, r) = (self.s_to_t[s], self.s_to_t[q]);
        self.s_to_t[s] = r;
        self.s_to_t[q] = t;
        self.t_to_s[r] = Some(s);
        self.t_to_s[t] = Some(q);
    }
}

/// A partial one-to-one matching between the rows and columns of one block pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    row_to_col: Vec<Option<u32>>,
    col_to_row: Vec<Option<u32>>,
    len: usize,
}

impl Matching {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Matching {
            row_to_col: vec![None; rows],
            col_to_row: vec![None; cols],
            len: 0,
        }
    }

    pub fn from_links(rows: usize, cols: usize, links: &[(usize, usize)]) -> Result<Self> {
        let mut m = Matching::empty(rows, cols);
        for &(i, j) in links {
            if i >= rows || j >= cols {
                return Err(LinkError::Contract(format!(
                    "link ({i}, {j}) outside a {rows}x{cols} block pair"
                )));
            }
            if m.row_to_col[i].is_some() || m.col_to_row[j].is_some() {
                return Err(LinkError::Contract(format!("link ({i}, {j}) breaks one-to-one")));
            }
            m.link(i, j);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.row_to_col.len()
    }

    pub fn cols(&self) -> usize {
        self.col_to_row.len()
    }

    /// Number of links n_m.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn col_of(&self, i: usize) -> Option<usize> {
        self.row_to_col[i].map(|j| j as usize)
    }

    #[inline]
    pub fn row_of(&self, j: usize) -> Option<usize> {
        self.col_to_row[j].map(|i| i as usize)
    }

    #[inline]
    pub fn col_is_free(&self, j: usize) -> bool {
        self.col_to_row[j].is_none()
    }

    pub fn link(&mut self, i: usize, j: usize) {
        debug_assert!(self.row_to_col[i].is_none() && self.col_to_row[j].is_none());
        self.row_to_col[i] = Some(j as u32);
        self.col_to_row[j] = Some(i as u32);
        self.len += 1;
    }

    pub fn unlink_row(&mut self, i: usize) -> Option<usize> {
        let j = self.row_to_col[i].take()? as usize;
        self.col_to_row[j] = None;
        self.len -= 1;
        Some(j)
    }

    /// Links as `(row, col)` in row order.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j as usize)))
    }

    pub fn transposed(&self) -> Matching {
        Matching {
            row_to_col: self.col_to_row.clone(),
            col_to_row: self.row_to_col.clone(),
            len: self.len,
        }
    }

    /// Checks the two index maps agree with each other and with `len`.
    pub fn is_consistent(&self) -> bool {
        let forward = self.links().all(|(i, j)| self.row_of(j) == Some(i));
        let backward = self
            .col_to_row
            .iter()
            .enumerate()
            .all(|(j, i)| i.is_none_or(|i| self.col_of(i as usize) == Some(j)));
        forward && backward && self.links().count() == self.len
    }
}

/// The linkage structure C: one matching per file-1 block, between that
/// block and its current partner. Unlinked block pairs carry no links.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkageState {
    pub matchings: Vec<Matching>,
}

impl LinkageState {
    pub fn empty(b: &BlockAssignment, cube: &ComparisonCube) -> Self {
        LinkageState {
            matchings: b
                .pairs()
                .map(|(s, t)| Matching::empty(cube.sizes1()[s], cube.sizes2()[t]))
                .collect(),
        }
    }

    pub fn link_count(&self) -> usize {
        self.matchings.iter().map(Matching::len).sum()
    }

    /// Verifies C is consistent with B and the cube (dimensions, one-to-one,
    /// no masked links).
    pub fn check(&self, b: &BlockAssignment, cube: &ComparisonCube) -> Result<()> {
        if self.matchings.len() != b.blocks1() || b.blocks1() != cube.blocks1() {
            return Err(LinkError::Contract(format!(
                "linkage has {} matchings for {} blocks",
                self.matchings.len(),
                b.blocks1()
            )));
        }
        for (s, t) in b.pairs() {
            let m = &self.matchings[s];
            if m.rows() != cube.sizes1()[s] || m.cols() != cube.sizes2()[t] {
                return Err(LinkError::Contract(format!(
                    "matching for ({s}, {t}) is {}x{}, block pair is {}x{}",
                    m.rows(),
                    m.cols(),
                    cube.sizes1()[s],
                    cube.sizes2()[t]
                )));
            }
            if !m.is_consistent() {
                return Err(LinkError::Contract(format!("matching for ({s}, {t}) is not one-to-one")));
            }
            if !cube.block_allowed(s, t) {
                return Err(LinkError::Contract(format!("block pair ({s}, {t}) is excluded by a filter")));
            }
            let pair = cube.pair(s, t);
            if let Some((i, j)) = m.links().find(|&(i, j)| pair.code(i, j) == MASKED) {
                return Err(LinkError::Contract(format!(
                    "record pair ({i}, {j}) in block pair ({s}, {t}) is excluded by a filter"
                )));
            }
        }
        Ok(())
    }
}

/// Θ: per-variable probability vectors over agreement levels for the five
/// mixture classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub block_match: Vec<Vec<f64>>,
    pub block_nonmatch: Vec<Vec<f64>>,
    pub record_match: Vec<Vec<f64>>,
    pub record_nonmatch: Vec<Vec<f64>>,
    pub record_nonblock: Vec<Vec<f64>>,
}

fn uniform_vectors(levels: &[u8]) -> Vec<Vec<f64>> {
    levels.iter().map(|&l| vec![1.0 / l as f64; l as usize]).collect()
}

impl ModelParams {
    pub fn uniform(cube: &ComparisonCube) -> Self {
        let b = uniform_vectors(cube.block_level_counts());
        let r = uniform_vectors(cube.record_level_counts());
        ModelParams {
            block_match: b.clone(),
            block_nonmatch: b,
            record_match: r.clone(),
            record_nonmatch: r.clone(),
            record_nonblock: r,
        }
    }

    pub fn class(&self, class: MixtureClass) -> &[Vec<f64>] {
        match class {
            MixtureClass::BlockMatch => &self.block_match,
            MixtureClass::BlockNonmatch => &self.block_nonmatch,
            MixtureClass::RecordMatch => &self.record_match,
            MixtureClass::RecordNonmatch => &self.record_nonmatch,
            MixtureClass::RecordNonblock => &self.record_nonblock,
        }
    }

    fn class_mut(&mut self, class: MixtureClass) -> &mut Vec<Vec<f64>> {
        match class {
            MixtureClass::BlockMatch => &mut self.block_match,
            MixtureClass::BlockNonmatch => &mut self.block_nonmatch,
            MixtureClass::RecordMatch => &mut self.record_match,
            MixtureClass::RecordNonmatch => &mut self.record_nonmatch,
            MixtureClass::RecordNonblock => &mut self.record_nonblock,
        }
    }

    /// Checks arity against the cube and that every vector is a probability vector.
    pub fn validate(&self, cube: &ComparisonCube) -> Result<()> {
        for class in MixtureClass::ALL {
            let expected = class.level_counts(cube);
            let vectors = self.class(class);
            if vectors.len() != expected.len()
                || vectors.iter().zip(expected).any(|(v, &l)| v.len() != l as usize)
            {
                return Err(LinkError::Contract(format!("{class:?} parameters do not match the schema")));
            }
            for v in vectors {
                let sum: f64 = v.iter().sum();
                if v.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(LinkError::Contract(format!("{class:?} vector {v:?} is not a distribution")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixtureClass {
    BlockMatch,
    BlockNonmatch,
    RecordMatch,
    RecordNonmatch,
    RecordNonblock,
}

impl MixtureClass {
    pub const ALL: [MixtureClass; 5] = [
        MixtureClass::BlockMatch,
        MixtureClass::BlockNonmatch,
        MixtureClass::RecordMatch,
        MixtureClass::RecordNonmatch,
        MixtureClass::RecordNonblock,
    ];

    pub fn is_block(self) -> bool {
        matches!(self, MixtureClass::BlockMatch | MixtureClass::BlockNonmatch)
    }

    fn level_counts(self, cube: &ComparisonCube) -> &[u8] {
        if self.is_block() {
            cube.block_level_counts()
        } else {
            cube.record_level_counts()
        }
    }
}

/// Prior hyperparameters. Each class defaults to a symmetric Dirichlet with
/// concentration `concentration`; explicit per-variable vectors override it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub alpha_pi: f64,
    pub beta_pi: f64,
    pub concentration: f64,
    pub block_match: Option<Vec<Vec<f64>>>,
    pub block_nonmatch: Option<Vec<Vec<f64>>>,
    pub record_match: Option<Vec<Vec<f64>>>,
    pub record_nonmatch: Option<Vec<Vec<f64>>>,
    pub record_nonblock: Option<Vec<Vec<f64>>>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha_pi: 1.0,
            beta_pi: 1.0,
            concentration: 1.0,
            block_match: None,
            block_nonmatch: None,
            record_match: None,
            record_nonmatch: None,
            record_nonblock: None,
        }
    }
}

impl Hyperparams {
    fn explicit(&self, class: MixtureClass) -> Option<&Vec<Vec<f64>>> {
        match class {
            MixtureClass::BlockMatch => self.block_match.as_ref(),
            MixtureClass::BlockNonmatch => self.block_nonmatch.as_ref(),
            MixtureClass::RecordMatch => self.record_match.as_ref(),
            MixtureClass::RecordNonmatch => self.record_nonmatch.as_ref(),
            MixtureClass::RecordNonblock => self.record_nonblock.as_ref(),
        }
    }

    /// Prior concentration vector for variable `var` of `class`.
    pub fn prior(&self, class: MixtureClass, var: usize, levels: usize) -> Vec<f64> {
        match self.explicit(class) {
            Some(v) => v[var].clone(),
            None => vec![self.concentration; levels],
        }
    }

    pub fn validate(&self, cube: &ComparisonCube) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.alpha_pi) || !positive(self.beta_pi) || !positive(self.concentration) {
            return Err(LinkError::Config("hyperparameters must be positive and finite".into()));
        }
        for class in MixtureClass::ALL {
            if let Some(vectors) = self.explicit(class) {
                let levels = class.level_counts(cube);
                let shape_ok = vectors.len() == levels.len()
                    && vectors.iter().zip(levels).all(|(v, &l)| v.len() == l as usize);
                if !shape_ok || vectors.iter().flatten().any(|&x| !positive(x)) {
                    return Err(LinkError::Config(format!(
                        "{class:?} prior must hold one positive vector per variable and level"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Σ over variables of log θ[variable][level]. A zero probability at an
/// observed level yields negative infinity.
pub fn log_component_density(levels: &[u8], theta: &[Vec<f64>]) -> Result<f64> {
    if levels.len() != theta.len() {
        return Err(LinkError::Contract(format!(
            "agreement vector has {} entries, parameters have {}",
            levels.len(),
            theta.len()
        )));
    }
    levels
        .iter()
        .zip(theta)
        .map(|(&l, probs)| {
            probs
                .get(l as usize)
                .map(|p| p.ln())
                .ok_or_else(|| LinkError::Contract(format!("level {l} out of range")))
        })
        .sum()
}

/// Log-likelihood of the cube given (B, C, Θ), computed from scratch by
/// visiting every comparison. Block pairs and record pairs excluded by
/// forced-agreement filters contribute nothing.
pub fn log_joint_likelihood(
    b: &BlockAssignment,
    c: &LinkageState,
    theta: &ModelParams,
    cube: &ComparisonCube,
) -> Result<f64> {
    c.check(b, cube)?;
    let mut total = 0.0;
    for s in 0..cube.blocks1() {
        for t in 0..cube.blocks2() {
            if !cube.block_allowed(s, t) {
                continue;
            }
            let linked = b.is_linked(s, t);
            let gamma_b = cube.block_levels(s, t);
            total += if linked {
                log_component_density(gamma_b, &theta.block_match)?
            } else {
                log_component_density(gamma_b, &theta.block_nonmatch)?
            };
            for i in 0..cube.sizes1()[s] {
                let partner = if linked { c.matchings[s].col_of(i) } else { None };
                for j in 0..cube.sizes2()[t] {
                    let Some(gamma_c) = cube.record_levels(s, t, i, j) else {
                        continue;
                    };
                    let class = match (linked, partner == Some(j)) {
                        (false, _) => &theta.record_nonblock,
                        (true, true) => &theta.record_match,
                        (true, false) => &theta.record_nonmatch,
                    };
                    total += log_component_density(gamma_c, class)?;
                }
            }
        }
    }
    Ok(total)
}

/// Log of the beta-binomial linkage prior for one specific matching with
/// `n_m` links in an `n1 x n2` block pair, with π integrated out.
pub fn log_prior_linkage(n_m: usize, n1: usize, n2: usize, alpha: f64, beta: f64) -> Result<f64> {
    let (lo, hi) = (n1.min(n2), n1.max(n2));
    if n_m > lo {
        return Err(LinkError::Contract(format!(
            "{n_m} links cannot fit in a {n1}x{n2} block pair"
        )));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(LinkError::Contract("alpha_pi and beta_pi must be positive".into()));
    }
    let (n, lo, hi) = (n_m as f64, lo as f64, hi as f64);
    Ok(ln_gamma(hi - n + 1.0) - ln_gamma(hi + 1.0) + ln_gamma(alpha + beta)
        - ln_gamma(alpha)
        - ln_gamma(beta)
        + ln_gamma(n + alpha)
        + ln_gamma(lo - n + beta)
        - ln_gamma(lo + alpha + beta))
}

/// Per-class, per-variable, per-level comparison counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelCounts {
    pub block_match: Vec<Vec<u64>>,
    pub block_nonmatch: Vec<Vec<u64>>,
    pub record_match: Vec<Vec<u64>>,
    pub record_nonmatch: Vec<Vec<u64>>,
    pub record_nonblock: Vec<Vec<u64>>,
}

fn zero_counts(levels: &[u8]) -> Vec<Vec<u64>> {
    levels.iter().map(|&l| vec![0; l as usize]).collect()
}

impl LevelCounts {
    pub fn zeros(cube: &ComparisonCube) -> Self {
        let b = zero_counts(cube.block_level_counts());
        let r = zero_counts(cube.record_level_counts());
        LevelCounts {
            block_match: b.clone(),
            block_nonmatch: b,
            record_match: r.clone(),
            record_nonmatch: r.clone(),
            record_nonblock: r,
        }
    }

    pub fn class(&self, class: MixtureClass) -> &[Vec<u64>] {
        match class {
            MixtureClass::BlockMatch => &self.block_match,
            MixtureClass::BlockNonmatch => &self.block_nonmatch,
            MixtureClass::RecordMatch => &self.record_match,
            MixtureClass::RecordNonmatch => &self.record_nonmatch,
            MixtureClass::RecordNonblock => &self.record_nonblock,
        }
    }

    /// Tallies every comparison into its mixture class by direct traversal.
    pub fn tally(b: &BlockAssignment, c: &LinkageState, cube: &ComparisonCube) -> Result<Self> {
        c.check(b, cube)?;
        let mut counts = LevelCounts::zeros(cube);
        let bump = |target: &mut Vec<Vec<u64>>, levels: &[u8]| {
            for (k, &l) in levels.iter().enumerate() {
                target[k][l as usize] += 1;
            }
        };
        for s in 0..cube.blocks1() {
            for t in 0..cube.blocks2() {
                if !cube.block_allowed(s, t) {
                    continue;
                }
                let linked = b.is_linked(s, t);
                if linked {
                    bump(&mut counts.block_match, cube.block_levels(s, t));
                } else {
                    bump(&mut counts.block_nonmatch, cube.block_levels(s, t));
                }
                for i in 0..cube.sizes1()[s] {
                    let partner = if linked { c.matchings[s].col_of(i) } else { None };
                    for j in 0..cube.sizes2()[t] {
                        if let Some(levels) = cube.record_levels(s, t, i, j) {
                            let target = match (linked, partner == Some(j)) {
                                (false, _) => &mut counts.record_nonblock,
                                (true, true) => &mut counts.record_match,
                                (true, false) => &mut counts.record_nonmatch,
                            };
                            bump(target, levels);
                        }
                    }
                }
            }
        }
        Ok(counts)
    }
}

/// Draws from Dirichlet(alpha) via independent gamma variates, clamped away
/// from 0 and 1.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let sum: f64 = draws.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        // All gammas underflowed (tiny shapes): fall back to the prior mean.
        let total: f64 = alpha.iter().sum();
        draws = alpha.iter().map(|a| a / total).collect();
    } else {
        draws.iter_mut().for_each(|d| *d /= sum);
    }
    for d in draws.iter_mut() {
        *d = d.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    }
    let sum: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|d| *d /= sum);
    draws
}

/// Conjugate draw of the selected classes of Θ given their counts; other
/// classes keep their values from `base`.
pub fn draw_from_counts<R: Rng + ?Sized>(
    counts: &LevelCounts,
    hyper: &Hyperparams,
    classes: &[MixtureClass],
    base: &ModelParams,
    rng: &mut R,
) -> ModelParams {
    let mut out = base.clone();
    for &class in classes {
        let target = out.class_mut(class);
        for (var, level_counts) in counts.class(class).iter().enumerate() {
            let mut alpha = hyper.prior(class, var, level_counts.len());
            for (a, &n) in alpha.iter_mut().zip(level_counts) {
                *a += n as f64;
            }
            target[var] = sample_dirichlet(&alpha, rng);
        }
    }
    out
}

/// Draws Θ from its full conditional given (B, C).
pub fn sample_parameters<R: Rng + ?Sized>(
    b: &BlockAssignment,
    c: &LinkageState,
    cube: &ComparisonCube,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<ModelParams> {
    let counts = LevelCounts::tally(b, c, cube)?;
    Ok(draw_from_counts(
        &counts,
        hyper,
        &MixtureClass::ALL,
        &ModelParams::uniform(cube),
        rng,
    ))
}

/// Log-space lookup tables derived from one Θ draw.
#[derive(Clone, Debug)]
pub struct LogTables {
    /// Σ_p log θ_BM per block pair (row-major S x T).
    pub block_match: Vec<f64>,
    /// Σ_p log θ_BU per block pair.
    pub block_nonmatch: Vec<f64>,
    /// log θ_CM(γ) − log θ_CU(γ) per record pattern.
    pub pattern_ratio: Vec<f64>,
    /// Σ over unmasked record pairs of log θ_CU, per block pair.
    pub pair_nonmatch: Vec<f64>,
    /// Σ over unmasked record pairs of log θ_CNB, per block pair.
    pub pair_nonblock: Vec<f64>,
}

impl LogTables {
    pub fn new(theta: &ModelParams, cube: &ComparisonCube) -> Self {
        let k = cube.record_level_counts().len();
        let log_of = |class: &[Vec<f64>], levels: &[u8]| -> f64 {
            levels.iter().zip(class).map(|(&l, p)| p[l as usize].ln()).sum()
        };
        let patterns = cube.pattern_count();
        let mut log_cu = Vec::with_capacity(patterns);
        let mut log_cnb = Vec::with_capacity(patterns);
        let mut ratio = Vec::with_capacity(patterns);
        for id in 0..patterns as u32 {
            let levels = if k == 0 { &[][..] } else { cube.pattern(id) };
            let cu = log_of(&theta.record_nonmatch, levels);
            log_cu.push(cu);
            log_cnb.push(log_of(&theta.record_nonblock, levels));
            ratio.push(log_of(&theta.record_match, levels) - cu);
        }
        let pairs = cube.blocks1() * cube.blocks2();
        let mut tables = LogTables {
            block_match: Vec::with_capacity(pairs),
            block_nonmatch: Vec::with_capacity(pairs),
            pattern_ratio: ratio,
            pair_nonmatch: Vec::with_capacity(pairs),
            pair_nonblock: Vec::with_capacity(pairs),
        };
        for s in 0..cube.blocks1() {
            for t in 0..cube.blocks2() {
                let gamma_b = cube.block_levels(s, t);
                tables.block_match.push(log_of(&theta.block_match, gamma_b));
                tables.block_nonmatch.push(log_of(&theta.block_nonmatch, gamma_b));
                let hist = &cube.pair(s, t).histogram;
                tables
                    .pair_nonmatch
                    .push(hist.iter().map(|&(id, n)| n as f64 * log_cu[id as usize]).sum());
                tables
                    .pair_nonblock
                    .push(hist.iter().map(|&(id, n)| n as f64 * log_cnb[id as usize]).sum());
            }
        }
        tables
    }

    /// Σ over links of the θ_CM/θ_CU log ratio.
    pub fn link_ratio_sum(&self, cube: &ComparisonCube, s: usize, t: usize, m: &Matching) -> f64 {
        let pair = cube.pair(s, t);
        m.links().map(|(i, j)| self.pattern_ratio[pair.code(i, j) as usize]).sum()
    }

    /// Likelihood contribution of (s, t) when linked with matching `m`.
    pub fn linked_term(&self, cube: &ComparisonCube, s: usize, t: usize, m: &Matching) -> f64 {
        let st = cube.pair_index(s, t);
        self.block_match[st] + self.pair_nonmatch[st] + self.link_ratio_sum(cube, s, t, m)
    }

    /// Likelihood contribution of (s, t) when unlinked.
    pub fn unlinked_term(&self, cube: &ComparisonCube, s: usize, t: usize) -> f64 {
        let st = cube.pair_index(s, t);
        self.block_nonmatch[st] + self.pair_nonblock[st]
    }

    /// Full log-likelihood from the cached per-pair sums.
    pub fn log_likelihood(&self, b: &BlockAssignment, c: &LinkageState, cube: &ComparisonCube) -> f64 {
        let mut total = 0.0;
        for s in 0..cube.blocks1() {
            for t in 0..cube.blocks2() {
                if !cube.block_allowed(s, t) {
                    continue;
                }
                total += if b.is_linked(s, t) {
                    self.linked_term(cube, s, t, &c.matchings[s])
                } else {
                    self.unlinked_term(cube, s, t)
                };
            }
        }
        total
    }
}
