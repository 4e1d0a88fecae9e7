use std::path::{Path, PathBuf};

use anyhow::Result;
use mlbrl_core::output::{
    block_log_probabilities, link_log_probabilities, read_samples_jsonl, write_block_matrix, write_link_matrix,
    write_samples_jsonl,
};
use mlbrl_core::simulation::run_replicates;
use mlbrl_core::simulation::summarize_study;
use mlbrl_core::{
    analyze_imputations, evaluate_sample, link_count_summary, read_blocked_csv, run_brl, run_cibrl, run_mlbrl,
    simulate as generate, simulation_schema, write_blocked_csv, AnalysisSpec, ChainConfig, Dataset, Hyperparams,
    LinkError, LinkageMetrics, Method, PosteriorSample, SimulationConfig, StudyConfig, DEFAULT_BRL_CAP,
};
use serde::{Deserialize, Serialize};

use crate::files::{create_out, input_path, load_config, read_schema, read_truth, write_json, write_truth, Dims, Manifest};
use crate::{Common, Invalid};

/// Input-file flags shared by `link` and `analyze`.
pub struct Inputs {
    pub f1: Option<PathBuf>,
    pub f2: Option<PathBuf>,
    pub schema: Option<PathBuf>,
}

fn dims(f1: &Dataset, f2: &Dataset) -> Dims {
    Dims {
        blocks1: f1.file.block_count(),
        blocks2: f2.file.block_count(),
        records1: f1.file.record_count(),
        records2: f2.file.record_count(),
    }
}

pub fn simulate(common: &Common, seed: Option<u64>) -> Result<()> {
    let mut cfg: SimulationConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let data = generate(&cfg)?;
    let schema = simulation_schema(cfg.day_included);
    let out = &common.out;
    create_out(out)?;
    write_blocked_csv(&out.join("f1.csv"), &data.f1, &schema)?;
    write_blocked_csv(&out.join("f2.csv"), &data.f2, &schema)?;
    write_json(&out.join("schema.json"), &schema)?;
    write_truth(out, &data.truth, &data.f1.file, &data.f2.file)?;
    let mut manifest = Manifest::new("simulate", Some(cfg.seed), &cfg)?;
    manifest.dims = Some(dims(&data.f1, &data.f2));
    manifest.write(out)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub f1: Option<PathBuf>,
    pub f2: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub method: Option<Method>,
    pub chain: ChainConfig,
    pub hyper: Hyperparams,
    /// Candidate record pair cap for BRL.
    pub brl_cap: Option<u64>,
    /// Skip the log-probability matrices.
    pub skip_matrices: bool,
}

fn load_inputs(inputs: Inputs, f1: &Option<PathBuf>, f2: &Option<PathBuf>, schema: &Option<PathBuf>) -> Result<[PathBuf; 3]> {
    Ok([
        input_path(inputs.f1, f1, "file 1")?,
        input_path(inputs.f2, f2, "file 2")?,
        input_path(inputs.schema, schema, "schema")?,
    ])
}

pub fn link(common: &Common, seed: Option<u64>, method: Option<Method>, inputs: Inputs) -> Result<()> {
    let mut cfg: LinkConfig = load_config(common.config.as_deref())?;
    let [f1_path, f2_path, schema_path] = load_inputs(inputs, &cfg.f1, &cfg.f2, &cfg.schema)?;
    cfg.f1 = Some(f1_path.clone());
    cfg.f2 = Some(f2_path.clone());
    cfg.schema = Some(schema_path.clone());
    if let Some(m) = method {
        cfg.method = Some(m);
    }
    let method = *cfg.method.get_or_insert(Method::Mlbrl);
    if let Some(seed) = seed {
        cfg.chain.seed = seed;
    }
    let cap = *cfg.brl_cap.get_or_insert(DEFAULT_BRL_CAP);
    cfg.chain.validate()?;

    let schema = read_schema(&schema_path)?;
    let f1 = read_blocked_csv(&f1_path, "f1", &schema)?;
    let f2 = read_blocked_csv(&f2_path, "f2", &schema)?;
    let (a, b) = (&f1.file, &f2.file);
    let result = match method {
        Method::Mlbrl => run_mlbrl(a, b, &schema, &cfg.hyper, &cfg.chain),
        Method::Cibrl => run_cibrl(a, b, &schema, &cfg.hyper, &cfg.chain),
        Method::Brl => run_brl(a, b, &schema, &cfg.hyper, &cfg.chain, cap),
    };
    let mut manifest = Manifest::new("link", Some(cfg.chain.seed), &cfg)?;
    manifest.dims = Some(dims(&f1, &f2));
    let out = &common.out;
    let output = match result {
        Ok(output) => output,
        Err(err @ LinkError::Numerical(_)) => {
            create_out(out)?;
            write_json(
                &out.join("diagnostics.json"),
                &serde_json::json!({ "status": "numerical-degeneracy", "error": err.to_string() }),
            )?;
            manifest.write(out)?;
            return Err(err.into());
        }
        Err(err) => return Err(err.into()),
    };

    create_out(out)?;
    write_samples_jsonl(&out.join("samples.jsonl"), &output.samples)?;
    write_json(&out.join("diagnostics.json"), &output.diagnostics)?;
    if !cfg.skip_matrices {
        if method.is_blocked() {
            let (s, t) = (a.block_count(), b.block_count());
            write_block_matrix(&out.join("block_logprob.csv"), &block_log_probabilities(&output.samples, s, t), t)?;
        }
        write_link_matrix(&out.join("link_logprob.csv"), &link_log_probabilities(&output.samples))?;
    }
    manifest.candidate_pairs = Some(output.diagnostics.candidate_pairs);
    manifest.write(out)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub samples: Option<PathBuf>,
    /// Directory holding the truth files.
    pub truth: Option<PathBuf>,
}

fn check_sample_dims(samples: &[PosteriorSample], d: &Dims) -> Result<()> {
    for smp in samples {
        let pairs = smp.blocks.iter().flatten().copied();
        let link_pairs = smp.links.iter().map(|l| (l.s, l.t));
        if let Some((s, t)) = pairs.chain(link_pairs).find(|&(s, t)| s >= d.blocks1 || t >= d.blocks2) {
            return Err(Invalid(format!(
                "sample {} refers to block pair ({s}, {t}) outside {} x {} blocks",
                smp.iteration, d.blocks1, d.blocks2
            ))
            .into());
        }
    }
    Ok(())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn write_metrics(path: &Path, rows: &[(usize, LinkageMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "tpr", "ppv", "f1", "acc"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for (it, m) in rows {
        w.write_record([it.to_string(), m.tpr.to_string(), m.ppv.to_string(), m.f1.to_string(), opt(m.acc)])?;
    }
    let column = |f: &dyn Fn(&LinkageMetrics) -> f64| mean_sd(&rows.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
    let (tpr, ppv, f1) = (column(&|m| m.tpr), column(&|m| m.ppv), column(&|m| m.f1));
    let acc: Option<Vec<f64>> = rows.iter().map(|(_, m)| m.acc).collect();
    let acc = acc.map(|v| mean_sd(&v));
    w.write_record([
        "mean".into(),
        tpr.0.to_string(),
        ppv.0.to_string(),
        f1.0.to_string(),
        opt(acc.map(|a| a.0)),
    ])?;
    w.write_record([
        "sd".into(),
        tpr.1.to_string(),
        ppv.1.to_string(),
        f1.1.to_string(),
        opt(acc.map(|a| a.1)),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn evaluate(common: &Common, samples: Option<PathBuf>, truth: Option<PathBuf>) -> Result<()> {
    let mut cfg: EvaluateConfig = load_config(common.config.as_deref())?;
    let samples_path = input_path(samples, &cfg.samples, "samples")?;
    let truth_dir = input_path(truth, &cfg.truth, "truth directory")?;
    cfg.samples = Some(samples_path.clone());
    cfg.truth = Some(truth_dir.clone());

    let samples = read_samples_jsonl(&samples_path)?;
    if samples.is_empty() {
        return Err(Invalid(format!("{} holds no samples", samples_path.display())).into());
    }
    let (truth, truth_dims) = read_truth(&truth_dir)?;
    if let Some(d) = &truth_dims {
        check_sample_dims(&samples, d)?;
    }
    let rows: Vec<(usize, LinkageMetrics)> = samples.iter().map(|s| (s.iteration, evaluate_sample(s, &truth))).collect();

    let out = &common.out;
    create_out(out)?;
    write_metrics(&out.join("metrics.csv"), &rows)?;
    let mut manifest = Manifest::new("evaluate", None, &cfg)?;
    manifest.dims = truth_dims;
    manifest.write(out)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub samples: Option<PathBuf>,
    pub f1: Option<PathBuf>,
    pub f2: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// One odds ratio per entry. Empty means the simulated `outcome` on `severity`.
    pub analyses: Vec<AnalysisSpec>,
}

fn check_links_fit(samples: &[PosteriorSample], f1: &Dataset, f2: &Dataset) -> Result<()> {
    let fits = |file: &mlbrl_core::BlockedFile, s: usize, i: usize| s < file.blocks.len() && i < file.blocks[s].records.len();
    for smp in samples {
        if let Some(l) = smp.links.iter().find(|l| !fits(&f1.file, l.s, l.i) || !fits(&f2.file, l.t, l.j)) {
            return Err(Invalid(format!(
                "sample {} link ({}, {}, {}, {}) does not fit the input files",
                smp.iteration, l.s, l.t, l.i, l.j
            ))
            .into());
        }
    }
    Ok(())
}

pub fn analyze(common: &Common, samples: Option<PathBuf>, inputs: Inputs) -> Result<()> {
    let mut cfg: AnalyzeConfig = load_config(common.config.as_deref())?;
    let samples_path = input_path(samples, &cfg.samples, "samples")?;
    let [f1_path, f2_path, schema_path] = load_inputs(inputs, &cfg.f1, &cfg.f2, &cfg.schema)?;
    cfg.samples = Some(samples_path.clone());
    cfg.f1 = Some(f1_path.clone());
    cfg.f2 = Some(f2_path.clone());
    cfg.schema = Some(schema_path.clone());
    if cfg.analyses.is_empty() {
        cfg.analyses.push(AnalysisSpec {
            outcome: "outcome".into(),
            exposure: "severity".into(),
            covariates: Vec::new(),
            level: 0.95,
        });
    }

    let schema = read_schema(&schema_path)?;
    let f1 = read_blocked_csv(&f1_path, "f1", &schema)?;
    let f2 = read_blocked_csv(&f2_path, "f2", &schema)?;
    let samples = read_samples_jsonl(&samples_path)?;
    check_links_fit(&samples, &f1, &f2)?;
    let results = cfg
        .analyses
        .iter()
        .map(|spec| analyze_imputations(&samples, &f1.extras, &f2.extras, spec))
        .collect::<mlbrl_core::Result<Vec<_>>>()?;
    let counts = link_count_summary(&samples, cfg.analyses[0].level)?;

    let out = &common.out;
    create_out(out)?;
    let mut w = csv::Writer::from_path(out.join("mi.csv"))?;
    w.write_record([
        "exposure",
        "m",
        "log_or",
        "within_variance",
        "between_variance",
        "total_variance",
        "df",
        "df_capped",
        "odds_ratio",
        "ci_low",
        "ci_high",
        "separated_imputations",
    ])?;
    for r in &results {
        let e = &r.log_or;
        w.write_record([
            r.exposure.clone(),
            e.m.to_string(),
            e.q_bar.to_string(),
            e.u_bar.to_string(),
            e.b.to_string(),
            e.t.to_string(),
            e.nu.to_string(),
            e.nu_capped.to_string(),
            r.odds_ratio.to_string(),
            r.ci.0.to_string(),
            r.ci.1.to_string(),
            r.separated_imputations.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("link_count.csv"))?;
    w.write_record(["m", "mean", "total_variance", "sd", "df", "ci_low", "ci_high"])?;
    w.write_record([
        counts.m.to_string(),
        counts.q_bar.to_string(),
        counts.t.to_string(),
        counts.t.sqrt().to_string(),
        counts.nu.to_string(),
        counts.ci.0.to_string(),
        counts.ci.1.to_string(),
    ])?;
    w.flush()?;
    let mut manifest = Manifest::new("analyze", None, &cfg)?;
    manifest.dims = Some(dims(&f1, &f2));
    manifest.write(out)
}

pub fn study(common: &Common, seed: Option<u64>, method: Option<Method>) -> Result<()> {
    let mut cfg: StudyConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(m) = method {
        cfg.methods = vec![m];
    }
    cfg.base.validate()?;
    let results = run_replicates(&cfg)?;
    let rows = summarize_study(&cfg, &results);

    let out = &common.out;
    create_out(out)?;
    let mut w = csv::Writer::from_path(out.join("study.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("replicates.csv"))?;
    w.write_record(["region_error", "income_error", "dob_error", "replicate", "method", "tpr", "ppv", "f1", "acc"])?;
    let per_cell = cfg.methods.len() * cfg.replicates;
    for (n, (c, m, x)) in results.iter().enumerate() {
        let cell = cfg.cells[*c];
        w.write_record([
            cell.region.to_string(),
            cell.income.to_string(),
            cell.dob.to_string(),
            ((n % per_cell) / cfg.methods.len()).to_string(),
            m.to_string(),
            x.tpr.to_string(),
            x.ppv.to_string(),
            x.f1.to_string(),
            x.acc.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Manifest::new("study", Some(cfg.seed), &cfg)?.write(out)
}
