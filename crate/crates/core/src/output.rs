//! Posterior sample files and averaged log-probability matrices.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{LinkError, Result};
use crate::sampler::{Link, PosteriorSample};

/// Writes one JSON object per line.
pub fn write_samples_jsonl(path: &Path, samples: &[PosteriorSample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples_jsonl(path: &Path) -> Result<Vec<PosteriorSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: PosteriorSample = serde_json::from_str(&line)
            .map_err(|e| LinkError::Schema(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Log posterior probability that each block pair is linked, row-major
/// `blocks1 x blocks2`. Pairs never linked get negative infinity.
pub fn block_log_probabilities(samples: &[PosteriorSample], blocks1: usize, blocks2: usize) -> Vec<f64> {
    let mut counts = vec![0usize; blocks1 * blocks2];
    for sample in samples {
        for &(s, t) in sample.blocks.iter().flatten() {
            counts[s * blocks2 + t] += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|c| (c as f64 / n).ln()).collect()
}

/// Log posterior probability of every record pair linked in at least one sample.
pub fn link_log_probabilities(samples: &[PosteriorSample]) -> Vec<(Link, f64)> {
    let mut counts: BTreeMap<Link, usize> = BTreeMap::new();
    for sample in samples {
        for &l in &sample.links {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|(l, c)| (l, (c as f64 / n).ln())).collect()
}

/// Dense block matrix as CSV with a leading `s` column.
pub fn write_block_matrix(path: &Path, values: &[f64], blocks2: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["s".to_owned()];
    header.extend((0..blocks2).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for (s, row) in values.chunks(blocks2.max(1)).enumerate() {
        let mut rec = vec![s.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_link_matrix(path: &Path, entries: &[(Link, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["s", "t", "i", "j", "log_prob"])?;
    for (l, v) in entries {
        w.write_record([l.s.to_string(), l.t.to_string(), l.i.to_string(), l.j.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
