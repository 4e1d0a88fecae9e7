//! Gibbs updates of record links inside one linked block pair.

use rand::Rng;

use crate::comparison::{PairComparisons, MASKED};
use crate::model::Matching;

/// Outcome for one row of file 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkChoice {
    Link(usize),
    NoLink,
}

/// Weight of "no link" relative to a candidate with likelihood ratio 1,
/// given `n` links among the other rows:
/// `(max - n)(min - n + beta - 1) / (n + alpha)`.
///
/// Swapping the roles of the two files leaves the closed form unchanged
/// because the prior depends on the sizes only through `min` and `max`.
pub fn no_link_weight(n: usize, n1: usize, n2: usize, alpha: f64, beta: f64) -> f64 {
    let (lo, hi) = (n1.min(n2) as f64, n1.max(n2) as f64);
    let n = n as f64;
    (hi - n) * (lo - n + beta - 1.0) / (n + alpha)
}

/// Full conditional of row `i` given every other row's link. `m` must not
/// contain a link for row `i`. `ratio` holds log(θ_CM/θ_CU) per pattern id.
pub fn record_full_conditional(
    i: usize,
    m: &Matching,
    pair: &PairComparisons,
    ratio: &[f64],
    alpha: f64,
    beta: f64,
) -> Vec<(LinkChoice, f64)> {
    debug_assert!(m.col_of(i).is_none(), "row {i} must be unlinked");
    let row = pair.row(i);
    let mut logw: Vec<(LinkChoice, f64)> = row
        .iter()
        .enumerate()
        .filter(|&(j, &code)| code != MASKED && m.col_is_free(j))
        .map(|(j, &code)| (LinkChoice::Link(j), ratio[code as usize]))
        .collect();
    if logw.is_empty() {
        return vec![(LinkChoice::NoLink, 1.0)];
    }
    let w0 = no_link_weight(m.len(), m.rows(), m.cols(), alpha, beta);
    logw.push((LinkChoice::NoLink, w0.ln()));
    let top = logw.iter().map(|&(_, w)| w).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logw.iter().map(|&(_, w)| (w - top).exp()).sum();
    logw.into_iter()
        .map(|(c, w)| (c, (w - top).exp() / total))
        .collect()
}

/// Per-Θ lookup for fast sweeps: linear-scale ratios relative to the
/// largest pattern ratio.
#[derive(Clone, Debug)]
pub struct SweepKernel {
    ratio: Vec<f64>,
    scaled: Vec<f64>,
    top: f64,
    alpha: f64,
    beta: f64,
}

/// Net effect of a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepStats {
    /// Rows whose link changed.
    pub changes: usize,
    /// Change in Σ log(θ_CM/θ_CU) over links, i.e. in the log-likelihood.
    pub delta: f64,
}

impl SweepKernel {
    pub fn new(ratio: &[f64], alpha: f64, beta: f64) -> Self {
        let top = ratio.iter().copied().fold(0.0, f64::max);
        SweepKernel {
            ratio: ratio.to_vec(),
            scaled: ratio.iter().map(|r| (r - top).exp()).collect(),
            top,
            alpha,
            beta,
        }
    }

    pub fn ratio(&self, code: u32) -> f64 {
        self.ratio[code as usize]
    }

    /// One pass over every row of file 1, in order.
    pub fn sweep<R: Rng + ?Sized>(&self, m: &mut Matching, pair: &PairComparisons, rng: &mut R) -> SweepStats {
        let mut stats = SweepStats::default();
        for i in 0..m.rows() {
            let old = m.unlink_row(i);
            let new = self.draw(i, m, pair, rng);
            if let Some(j) = new {
                m.link(i, j);
            }
            if old != new {
                stats.changes += 1;
                if let Some(j) = old {
                    stats.delta -= self.ratio(pair.code(i, j));
                }
                if let Some(j) = new {
                    stats.delta += self.ratio(pair.code(i, j));
                }
            }
        }
        stats
    }

    fn draw<R: Rng + ?Sized>(&self, i: usize, m: &Matching, pair: &PairComparisons, rng: &mut R) -> Option<usize> {
        let row = pair.row(i);
        let mut link_total = 0.0;
        let mut candidates = 0usize;
        for (j, &code) in row.iter().enumerate() {
            if code != MASKED && m.col_is_free(j) {
                link_total += self.scaled[code as usize];
                candidates += 1;
            }
        }
        if candidates == 0 {
            return None;
        }
        let w0 = no_link_weight(m.len(), m.rows(), m.cols(), self.alpha, self.beta);
        let log_none = w0.ln() - self.top;
        if log_none < -700.0 || log_none > 700.0 || link_total < 1e-300 {
            return self.draw_log_domain(i, m, pair, rng);
        }
        let none = log_none.exp();
        let mut u = rng.random::<f64>() * (link_total + none);
        if u >= link_total {
            return None;
        }
        let mut last = None;
        for (j, &code) in row.iter().enumerate() {
            if code != MASKED && m.col_is_free(j) {
                u -= self.scaled[code as usize];
                last = Some(j);
                if u < 0.0 {
                    return last;
                }
            }
        }
        last
    }

    fn draw_log_domain<R: Rng + ?Sized>(
        &self,
        i: usize,
        m: &Matching,
        pair: &PairComparisons,
        rng: &mut R,
    ) -> Option<usize> {
        let probs = record_full_conditional(i, m, pair, &self.ratio, self.alpha, self.beta);
        let mut u = rng.random::<f64>();
        for &(choice, p) in &probs {
            u -= p;
            if u < 0.0 {
                return match choice {
                    LinkChoice::Link(j) => Some(j),
                    LinkChoice::NoLink => None,
                };
            }
        }
        None
    }
}

/// Runs `sweeps` passes over a linked pair.
pub fn sweep_record_links<R: Rng + ?Sized>(
    m: &mut Matching,
    pair: &PairComparisons,
    kernel: &SweepKernel,
    sweeps: usize,
    rng: &mut R,
) -> SweepStats {
    let mut total = SweepStats::default();
    for _ in 0..sweeps {
        let s = kernel.sweep(m, pair, rng);
        total.changes += s.changes;
        total.delta += s.delta;
    }
    total
}
