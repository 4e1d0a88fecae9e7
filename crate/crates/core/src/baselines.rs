//! Comparator samplers: unblocked BRL and two-stage CIBRL.

use crate::comparison::{build_comparison_cube, Block, BlockedFile, Record, Schema};
use crate::error::{LinkError, Result};
use crate::model::Hyperparams;
use crate::sampler::{run_on_cube, ChainConfig, ChainOutput, Link, Method, PosteriorSample, Sampler};

/// Default cap on n1 * n2 for the unblocked pair space.
pub const DEFAULT_BRL_CAP: u64 = 50_000_000;

/// A file collapsed to one block, with block-level values appended to every
/// record, plus the `(block, record)` origin of each flattened record.
#[derive(Clone, Debug)]
pub struct FlatFile {
    pub file: BlockedFile,
    pub origin: Vec<(usize, usize)>,
}

fn flatten(f: &BlockedFile) -> FlatFile {
    let mut records = Vec::with_capacity(f.record_count());
    let mut origin = Vec::with_capacity(f.record_count());
    for (s, block) in f.blocks.iter().enumerate() {
        for (i, rec) in block.records.iter().enumerate() {
            let mut values = rec.values.clone();
            values.extend(block.values.iter().cloned());
            records.push(Record {
                id: rec.id.clone(),
                values,
            });
            origin.push((s, i));
        }
    }
    FlatFile {
        file: BlockedFile {
            id: f.id.clone(),
            blocks: vec![Block {
                id: "all".into(),
                values: Vec::new(),
                records,
            }],
        },
        origin,
    }
}

/// Replicates block-level variables as record-level ones. Forced-agreement
/// block variables stay forced and become record-pair masks.
pub fn flatten_for_brl(f1: &BlockedFile, f2: &BlockedFile, schema: &Schema) -> (FlatFile, FlatFile, Schema) {
    let mut record = schema.record.clone();
    record.extend(schema.block.iter().cloned());
    let flat_schema = Schema {
        block: Vec::new(),
        record,
    };
    (flatten(f1), flatten(f2), flat_schema)
}

/// Bayesian one-to-one linkage over the whole n1 x n2 space (one sweep per
/// iteration). Links are reported in the original block coordinates and
/// samples carry no block assignment.
pub fn run_brl(
    f1: &BlockedFile,
    f2: &BlockedFile,
    schema: &Schema,
    hyper: &Hyperparams,
    chain: &ChainConfig,
    pair_cap: u64,
) -> Result<ChainOutput> {
    chain.validate()?;
    schema.validate()?;
    f1.validate(schema)?;
    f2.validate(schema)?;
    let space = f1.record_count() as u64 * f2.record_count() as u64;
    if space > pair_cap {
        return Err(LinkError::Resource(format!(
            "unblocked comparison space of {space} record pairs exceeds the cap of {pair_cap}"
        )));
    }
    let (a, b, flat_schema) = flatten_for_brl(f1, f2, schema);
    let cube = build_comparison_cube(&a.file, &b.file, &flat_schema)?;
    let flat_hyper = Hyperparams {
        alpha_pi: hyper.alpha_pi,
        beta_pi: hyper.beta_pi,
        concentration: hyper.concentration,
        ..Default::default()
    };
    let mut out = Sampler::new(&cube, flat_hyper, chain.clone(), Method::Brl)?.run()?;
    out.samples = out
        .samples
        .into_iter()
        .map(|sample| unflatten(sample, &a.origin, &b.origin))
        .collect();
    Ok(out)
}

fn unflatten(mut sample: PosteriorSample, o1: &[(usize, usize)], o2: &[(usize, usize)]) -> PosteriorSample {
    let mut links: Vec<Link> = sample
        .links
        .iter()
        .map(|l| {
            let (s, i) = o1[l.i];
            let (t, j) = o2[l.j];
            Link { s, t, i, j }
        })
        .collect();
    links.sort_unstable();
    sample.blocks = None;
    sample.link_counts = PosteriorSample::tally_links(&links);
    sample.links = links;
    sample
}

/// Two-stage linkage: block moves use only block-level terms, then record
/// links are swept within the sampled block pairs.
pub fn run_cibrl(
    f1: &BlockedFile,
    f2: &BlockedFile,
    schema: &Schema,
    hyper: &Hyperparams,
    chain: &ChainConfig,
) -> Result<ChainOutput> {
    chain.validate()?;
    let cube = build_comparison_cube(f1, f2, schema)?;
    run_on_cube(&cube, hyper, chain, Method::Cibrl)
}
