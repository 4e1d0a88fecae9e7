//! Synthetic two-file linkage problems, error injection, scoring and the
//! replicated study harness.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::baselines::{run_brl, run_cibrl, DEFAULT_BRL_CAP};
use crate::comparison::{Block, BlockedFile, ComparisonKind, ComparisonSpec, Record, Schema, Value};
use crate::data::{Dataset, ExtraColumns};
use crate::error::{LinkError, Result};
use crate::model::Hyperparams;
use crate::rng::{derive_seed, substream, Stream};
use crate::sampler::{run_mlbrl, ChainConfig, ChainOutput, Link, Method, PosteriorSample};

pub const REGIONS: [&str; 4] = ["Northeast", "Midwest", "South", "West"];
pub const INCOME_THRESHOLD: f64 = 500.0;
const REFERENCE_MONTH: i64 = 2020 * 12 + 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub blocks1: usize,
    pub blocks2: usize,
    pub records1: usize,
    pub records2: usize,
    pub links_per_pair: usize,
    pub region_error: f64,
    pub income_error: f64,
    pub dob_error: f64,
    /// Compare DOB down to the day (4 levels) instead of year/month (3 levels).
    pub day_included: bool,
    /// Standard deviation of age in years (mean 30).
    pub age_sd: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            blocks1: 30,
            blocks2: 40,
            records1: 20,
            records2: 30,
            links_per_pair: 15,
            region_error: 0.0,
            income_error: 0.0,
            dob_error: 0.0,
            day_included: false,
            age_sd: 2.0,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks1 == 0 || self.records1 == 0 || self.records2 == 0 {
            return Err(LinkError::Config("block counts and sizes must be positive".into()));
        }
        if self.blocks1 > self.blocks2 {
            return Err(LinkError::Config(format!(
                "file 1 has {} blocks, more than file 2's {}",
                self.blocks1, self.blocks2
            )));
        }
        if !(self.age_sd > 0.0 && self.age_sd.is_finite()) {
            return Err(LinkError::Config(format!("age_sd must be positive, got {}", self.age_sd)));
        }
        if self.links_per_pair > self.records1.min(self.records2) {
            return Err(LinkError::Config(format!(
                "{} links do not fit {}x{} blocks",
                self.links_per_pair, self.records1, self.records2
            )));
        }
        for (name, eps) in [
            ("region_error", self.region_error),
            ("income_error", self.income_error),
            ("dob_error", self.dob_error),
        ] {
            if !(0.0..1.0).contains(&eps) {
                return Err(LinkError::Config(format!("{name} must lie in [0, 1), got {eps}")));
            }
        }
        Ok(())
    }
}

/// The comparison schema matching generated files.
pub fn simulation_schema(day_included: bool) -> Schema {
    Schema {
        block: vec![
            ComparisonSpec::new("region", ComparisonKind::BinaryExact),
            ComparisonSpec::new("status", ComparisonKind::BinaryExact),
            ComparisonSpec::new("trauma", ComparisonKind::BinaryExact),
            ComparisonSpec::new(
                "income",
                ComparisonKind::NumericAbsolute {
                    threshold: INCOME_THRESHOLD,
                },
            ),
        ],
        record: vec![
            ComparisonSpec::new(
                "dob",
                ComparisonKind::OrdinalMultilevel {
                    levels: if day_included { 4 } else { 3 },
                },
            ),
            ComparisonSpec::new("gender", ComparisonKind::BinaryExact),
        ],
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// True block pairs `(s, t)`.
    pub blocks: Vec<(usize, usize)>,
    pub links: Vec<Link>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub f1: Dataset,
    pub f2: Dataset,
    pub truth: GroundTruth,
}

fn days_in_month(year: i64, month: i64) -> i64 {
    match month {
        2 if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

fn bernoulli_text<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Value {
    Value::Text(if rng.random::<f64>() < p { "1" } else { "0" }.into())
}

fn draw_block_values<R: Rng + ?Sized>(rng: &mut R) -> Vec<Value> {
    let income: f64 = Normal::new(50_000.0, 10_000.0).expect("valid normal").sample(rng);
    vec![
        Value::Text(REGIONS[rng.random_range(0..REGIONS.len())].into()),
        bernoulli_text(0.8, rng),
        bernoulli_text(0.5, rng),
        Value::Number((income * 100.0).round() / 100.0),
    ]
}

fn draw_record_values<R: Rng + ?Sized>(day_included: bool, age_sd: f64, rng: &mut R) -> Vec<Value> {
    let age: f64 = Normal::new(30.0, age_sd).expect("valid normal").sample(rng);
    let birth = REFERENCE_MONTH - (age * 12.0).round() as i64;
    let (year, month) = (birth.div_euclid(12), birth.rem_euclid(12) + 1);
    let day = rng.random_range(1..=days_in_month(year, month));
    let dob = if day_included {
        vec![Some(year), Some(month), Some(day)]
    } else {
        vec![Some(year), Some(month)]
    };
    vec![Value::Parts(dob), bernoulli_text(0.5, rng)]
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Coefficients of the outcome model used for the extra analysis columns:
/// logit P(outcome = 1) = OUTCOME_INTERCEPT + OUTCOME_SLOPE * severity.
pub const OUTCOME_INTERCEPT: f64 = -0.5;
pub const OUTCOME_SLOPE: f64 = 1.0;
const SEVERITY_RATE: f64 = 0.4;

/// Generates both files and the truth. True block pairs share block-level
/// values; true links share record-level values. File 1 carries a
/// `severity` column and file 2 an `outcome` column driven by the linked
/// partner's severity.
pub fn generate_dataset(cfg: &SimulationConfig, rng: &mut ChaCha8Rng) -> Result<SimulatedData> {
    cfg.validate()?;
    let (s_n, t_n) = (cfg.blocks1, cfg.blocks2);
    let mut targets: Vec<usize> = (0..t_n).collect();
    targets.shuffle(rng);
    targets.truncate(s_n);

    let block_values2: Vec<Vec<Value>> = (0..t_n).map(|_| draw_block_values(rng)).collect();
    let mut blocks1 = Vec::with_capacity(s_n);
    let mut blocks2: Vec<Block> = block_values2
        .iter()
        .enumerate()
        .map(|(t, values)| Block {
            id: format!("H{t:03}"),
            values: values.clone(),
            records: Vec::new(),
        })
        .collect();
    let mut sev1: Vec<Vec<u8>> = vec![Vec::new(); s_n];
    let mut out2: Vec<Vec<u8>> = vec![Vec::new(); t_n];
    // (record values, severity, partner slot in the other file)
    let mut pending2: Vec<Vec<(Vec<Value>, u8, Option<usize>)>> = vec![Vec::new(); t_n];
    let mut links = Vec::new();

    for (s, &t) in targets.iter().enumerate() {
        let mut rows1: Vec<(Vec<Value>, u8, Option<usize>)> = Vec::with_capacity(cfg.records1);
        for k in 0..cfg.records1 {
            let values = draw_record_values(cfg.day_included, cfg.age_sd, rng);
            let severity = u8::from(rng.random::<f64>() < SEVERITY_RATE);
            let partner = (k < cfg.links_per_pair).then_some(k);
            if partner.is_some() {
                pending2[t].push((values.clone(), severity, Some(k)));
            }
            rows1.push((values, severity, partner));
        }
        // Shuffle file-1 records and remember where each shared entity went.
        rows1.shuffle(rng);
        let mut position_of_entity = vec![0usize; cfg.links_per_pair];
        for (i, row) in rows1.iter().enumerate() {
            if let Some(k) = row.2 {
                position_of_entity[k] = i;
            }
        }
        for row in pending2[t].iter_mut() {
            row.2 = row.2.map(|k| position_of_entity[k]);
        }
        blocks1.push(Block {
            id: format!("F{s:03}"),
            values: block_values2[t].clone(),
            records: rows1
                .iter()
                .enumerate()
                .map(|(i, row)| Record {
                    id: format!("a{s:03}_{i:03}"),
                    values: row.0.clone(),
                })
                .collect(),
        });
        sev1[s] = rows1.iter().map(|r| r.1).collect();
    }
    for t in 0..t_n {
        while pending2[t].len() < cfg.records2 {
            let values = draw_record_values(cfg.day_included, cfg.age_sd, rng);
            let severity = u8::from(rng.random::<f64>() < SEVERITY_RATE);
            pending2[t].push((values, severity, None));
        }
        pending2[t].shuffle(rng);
        let owner = targets.iter().position(|&x| x == t);
        for (j, (values, severity, partner)) in pending2[t].iter().enumerate() {
            if let (Some(s), Some(i)) = (owner, partner) {
                links.push(Link { s, t, i: *i, j });
            }
            let p = logistic(OUTCOME_INTERCEPT + OUTCOME_SLOPE * *severity as f64);
            out2[t].push(u8::from(rng.random::<f64>() < p));
            blocks2[t].records.push(Record {
                id: format!("b{t:03}_{j:03}"),
                values: values.clone(),
            });
        }
    }
    links.sort_unstable();
    let extras = |name: &str, cols: Vec<Vec<u8>>| ExtraColumns {
        names: vec![name.to_owned()],
        values: cols
            .into_iter()
            .map(|b| b.into_iter().map(|x| vec![x.to_string()]).collect())
            .collect(),
    };
    Ok(SimulatedData {
        f1: Dataset {
            file: BlockedFile {
                id: "f1".into(),
                blocks: blocks1,
            },
            extras: extras("severity", sev1),
        },
        f2: Dataset {
            file: BlockedFile {
                id: "f2".into(),
                blocks: blocks2,
            },
            extras: extras("outcome", out2),
        },
        truth: GroundTruth {
            blocks: targets.into_iter().enumerate().collect(),
            links,
        },
    })
}

/// Standard deviation of the Income noise that makes a threshold-500
/// comparison flip with probability `eps`.
pub fn income_noise_sd(eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(LinkError::Config(format!("income error must lie in [0, 1), got {eps}")));
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    let z = StdNormal::standard().inverse_cdf(1.0 - eps / 2.0);
    Ok(INCOME_THRESHOLD / z)
}

/// Perturbs file 1: Region resampled uniformly (possibly to the same value)
/// with probability ε_Region, Gaussian noise on Income, and the DOB month of
/// truly linked records moved to a different month with probability ε_DOB
/// (day clamped to the new month's length).
pub fn inject_errors(
    f1: &BlockedFile,
    truth: &GroundTruth,
    cfg: &SimulationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BlockedFile> {
    cfg.validate()?;
    let sd = income_noise_sd(cfg.income_error)?;
    let mut out = f1.clone();
    for block in out.blocks.iter_mut() {
        if rng.random::<f64>() < cfg.region_error {
            block.values[0] = Value::Text(REGIONS[rng.random_range(0..REGIONS.len())].into());
        }
        if sd > 0.0 {
            if let Value::Number(x) = &mut block.values[3] {
                *x += Normal::new(0.0, sd).expect("positive sd").sample(rng);
            }
        }
    }
    if cfg.dob_error > 0.0 {
        let linked: HashSet<(usize, usize)> = truth.links.iter().map(|l| (l.s, l.i)).collect();
        for (s, block) in out.blocks.iter_mut().enumerate() {
            for (i, rec) in block.records.iter_mut().enumerate() {
                if !linked.contains(&(s, i)) || rng.random::<f64>() >= cfg.dob_error {
                    continue;
                }
                if let Value::Parts(parts) = &mut rec.values[0] {
                    if let (Some(year), Some(month)) = (parts[0], parts[1]) {
                        let shift = rng.random_range(1..12);
                        let new_month = (month - 1 + shift) % 12 + 1;
                        parts[1] = Some(new_month);
                        if let Some(Some(day)) = parts.get_mut(2) {
                            *day = (*day).min(days_in_month(year, new_month));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Generates a replicate and applies its configured errors.
pub fn simulate(cfg: &SimulationConfig) -> Result<SimulatedData> {
    let mut rng = substream(cfg.seed, Stream::Generate, &[]);
    let mut data = generate_dataset(cfg, &mut rng)?;
    let mut err_rng = substream(cfg.seed, Stream::Errors, &[]);
    data.f1.file = inject_errors(&data.f1.file, &data.truth, cfg, &mut err_rng)?;
    Ok(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkageMetrics {
    pub tpr: f64,
    pub ppv: f64,
    pub f1: f64,
    /// Block accuracy; absent for unblocked output.
    pub acc: Option<f64>,
    /// Set when no links were declared and PPV was reported as 0.
    pub ppv_undefined: bool,
}

/// Scores one sample against the truth.
pub fn evaluate_sample(sample: &PosteriorSample, truth: &GroundTruth) -> LinkageMetrics {
    let true_links: HashSet<&Link> = truth.links.iter().collect();
    let hits = sample.links.iter().filter(|l| true_links.contains(l)).count() as f64;
    let tpr = if truth.links.is_empty() {
        0.0
    } else {
        hits / truth.links.len() as f64
    };
    let ppv_undefined = sample.links.is_empty();
    let ppv = if ppv_undefined {
        0.0
    } else {
        hits / sample.links.len() as f64
    };
    let f1 = if tpr + ppv > 0.0 {
        2.0 * tpr * ppv / (tpr + ppv)
    } else {
        0.0
    };
    let acc = sample.blocks.as_ref().map(|blocks| {
        let pairs: HashSet<&(usize, usize)> = blocks.iter().collect();
        let correct = truth.blocks.iter().filter(|p| pairs.contains(p)).count();
        correct as f64 / truth.blocks.len().max(1) as f64
    });
    LinkageMetrics {
        tpr,
        ppv,
        f1,
        acc,
        ppv_undefined,
    }
}

/// Mean of per-sample metrics.
pub fn average_metrics(samples: &[PosteriorSample], truth: &GroundTruth) -> LinkageMetrics {
    let n = samples.len().max(1) as f64;
    let scored: Vec<LinkageMetrics> = samples.iter().map(|s| evaluate_sample(s, truth)).collect();
    let mean = |f: &dyn Fn(&LinkageMetrics) -> f64| scored.iter().map(f).sum::<f64>() / n;
    let acc = scored
        .iter()
        .map(|m| m.acc)
        .collect::<Option<Vec<f64>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / n);
    LinkageMetrics {
        tpr: mean(&|m| m.tpr),
        ppv: mean(&|m| m.ppv),
        f1: mean(&|m| m.f1),
        acc,
        ppv_undefined: scored.iter().any(|m| m.ppv_undefined),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCell {
    pub region: f64,
    pub income: f64,
    pub dob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Sizes and DOB mode; the error rates and seed here are ignored.
    pub base: SimulationConfig,
    pub cells: Vec<ErrorCell>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub chain: ChainConfig,
    pub hyper: Hyperparams,
    pub seed: u64,
    pub brl_cap: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let rates = [0.0, 0.2, 0.4];
        let mut cells = Vec::with_capacity(27);
        for region in rates {
            for income in rates {
                for dob in rates {
                    cells.push(ErrorCell { region, income, dob });
                }
            }
        }
        StudyConfig {
            base: SimulationConfig::default(),
            cells,
            replicates: 10,
            methods: Method::ALL.to_vec(),
            chain: ChainConfig::default(),
            hyper: Hyperparams::default(),
            seed: 0,
            brl_cap: DEFAULT_BRL_CAP,
        }
    }
}

/// Averaged metrics for one (cell, method), with Monte-Carlo standard deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub region_error: f64,
    pub income_error: f64,
    pub dob_error: f64,
    pub method: Method,
    pub tpr: f64,
    pub tpr_sd: f64,
    pub ppv: f64,
    pub ppv_sd: f64,
    pub f1: f64,
    pub f1_sd: f64,
    pub acc: Option<f64>,
    pub acc_sd: Option<f64>,
    pub replicates: usize,
}

/// Runs one method on one simulated replicate.
pub fn run_method(
    method: Method,
    data: &SimulatedData,
    schema: &Schema,
    hyper: &Hyperparams,
    chain: &ChainConfig,
    brl_cap: u64,
) -> Result<ChainOutput> {
    let (f1, f2) = (&data.f1.file, &data.f2.file);
    match method {
        Method::Mlbrl => run_mlbrl(f1, f2, schema, hyper, chain),
        Method::Cibrl => run_cibrl(f1, f2, schema, hyper, chain),
        Method::Brl => run_brl(f1, f2, schema, hyper, chain, brl_cap),
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Per-replicate averaged metrics for every (cell, replicate, method).
pub fn run_replicates(cfg: &StudyConfig) -> Result<Vec<(usize, Method, LinkageMetrics)>> {
    if cfg.replicates == 0 || cfg.methods.is_empty() || cfg.cells.is_empty() {
        return Err(LinkError::Config("study needs cells, methods and at least one replicate".into()));
    }
    cfg.chain.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.cells.len())
        .flat_map(|c| (0..cfg.replicates).map(move |r| (c, r)))
        .collect();
    let schema = simulation_schema(cfg.base.day_included);
    let results: Vec<Vec<(usize, Method, LinkageMetrics)>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let cell = cfg.cells[c];
            let sim = SimulationConfig {
                region_error: cell.region,
                income_error: cell.income,
                dob_error: cell.dob,
                seed: derive_seed(cfg.seed, Stream::Replicate, &[c as u64, r as u64]),
                ..cfg.base.clone()
            };
            let data = simulate(&sim)?;
            cfg.methods
                .iter()
                .enumerate()
                .map(|(k, &method)| {
                    let chain = ChainConfig {
                        seed: derive_seed(sim.seed, Stream::Method, &[k as u64]),
                        ..cfg.chain.clone()
                    };
                    let out = run_method(method, &data, &schema, &cfg.hyper, &chain, cfg.brl_cap)?;
                    Ok((c, method, average_metrics(&out.samples, &data.truth)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Orchestrates generate, inject, link and evaluate over the grid.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    let results = run_replicates(cfg)?;
    Ok(summarize_study(cfg, &results))
}

pub fn summarize_study(cfg: &StudyConfig, results: &[(usize, Method, LinkageMetrics)]) -> Vec<StudyRow> {
    let mut rows = Vec::new();
    for (c, cell) in cfg.cells.iter().enumerate() {
        for &method in &cfg.methods {
            let ms: Vec<&LinkageMetrics> = results
                .iter()
                .filter(|(cc, m, _)| *cc == c && *m == method)
                .map(|(_, _, x)| x)
                .collect();
            let col = |f: &dyn Fn(&LinkageMetrics) -> f64| mean_sd(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
            let (tpr, tpr_sd) = col(&|m| m.tpr);
            let (ppv, ppv_sd) = col(&|m| m.ppv);
            let (f1, f1_sd) = col(&|m| m.f1);
            let acc: Option<Vec<f64>> = ms.iter().map(|m| m.acc).collect();
            let (acc, acc_sd) = match acc {
                Some(v) if !v.is_empty() => {
                    let (a, s) = mean_sd(&v);
                    (Some(a), Some(s))
                }
                _ => (None, None),
            };
            rows.push(StudyRow {
                region_error: cell.region,
                income_error: cell.income,
                dob_error: cell.dob,
                method,
                tpr,
                tpr_sd,
                ppv,
                ppv_sd,
                f1,
                f1_sd,
                acc,
                acc_sd,
                replicates: ms.len(),
            });
        }
    }
    rows
}
