//! Agreement functions and the comparison cube.
//!
//! Block-level variables are compared once per block pair; record-level
//! variables once per record pair inside every block pair. Record-level
//! agreement vectors are dictionary-encoded: each distinct level vector gets
//! a dense pattern id, and every block pair keeps its row-major pattern ids
//! plus a histogram over patterns (the sufficient statistic for the
//! likelihood).

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LinkError, Result};

/// Maximum number of agreement levels a single comparison may produce.
pub const MAX_LEVELS: u8 = 16;

/// Pattern id stored for record pairs excluded by a forced-agreement filter.
pub const MASKED: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ComparisonKind {
    /// Agree iff the two values are identical.
    BinaryExact,
    /// Agree iff `|a - b| < threshold`.
    NumericAbsolute { threshold: f64 },
    /// Agree iff `|a - b| <= fraction * max(|a|, |b|)`.
    NumericRelative { fraction: f64 },
    /// Hierarchical values such as `1980-05-17`; the level is one plus the
    /// number of leading components that agree, using at most `levels - 1`
    /// components.
    OrdinalMultilevel { levels: u8 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ComparisonKind,
    /// Pairs that disagree on this variable are structurally excluded from
    /// linkage; the variable then acts as a filter and is not modeled.
    #[serde(default)]
    pub force_agreement: bool,
}

impl ComparisonSpec {
    pub fn new(name: impl Into<String>, kind: ComparisonKind) -> Self {
        ComparisonSpec {
            name: name.into(),
            kind,
            force_agreement: false,
        }
    }

    pub fn forced(mut self) -> Self {
        self.force_agreement = true;
        self
    }

    pub fn level_count(&self) -> u8 {
        match self.kind {
            ComparisonKind::OrdinalMultilevel { levels } => levels,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LinkError::Schema(format!("variable '{}': {msg}", self.name)));
        match self.kind {
            ComparisonKind::BinaryExact => Ok(()),
            ComparisonKind::NumericAbsolute { threshold } => {
                if threshold > 0.0 && threshold.is_finite() {
                    Ok(())
                } else {
                    bad(format!("threshold must be positive, got {threshold}"))
                }
            }
            ComparisonKind::NumericRelative { fraction } => {
                if fraction > 0.0 && fraction < 1.0 {
                    Ok(())
                } else {
                    bad(format!("fraction must lie in (0, 1), got {fraction}"))
                }
            }
            ComparisonKind::OrdinalMultilevel { levels } => {
                if (2..=MAX_LEVELS).contains(&levels) {
                    Ok(())
                } else {
                    bad(format!("levels must lie in [2, {MAX_LEVELS}], got {levels}"))
                }
            }
        }
    }
}

/// Comparison schema: block-level variables (P) then record-level (K), in
/// the column order used by the input files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub block: Vec<ComparisonSpec>,
    #[serde(default)]
    pub record: Vec<ComparisonSpec>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for spec in self.block.iter().chain(&self.record) {
            spec.validate()?;
            if !names.insert(spec.name.as_str()) {
                return Err(LinkError::Schema(format!("duplicate variable '{}'", spec.name)));
            }
        }
        Ok(())
    }

    pub fn modeled_block(&self) -> impl Iterator<Item = &ComparisonSpec> {
        self.block.iter().filter(|s| !s.force_agreement)
    }

    pub fn modeled_record(&self) -> impl Iterator<Item = &ComparisonSpec> {
        self.record.iter().filter(|s| !s.force_agreement)
    }
}

/// An attribute value parsed according to its comparison kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Missing,
    Text(String),
    Number(f64),
    /// Hierarchical components; `None` marks a withheld component (`*`).
    Parts(Vec<Option<i64>>),
}

impl Value {
    pub fn parse(raw: &str, kind: &ComparisonKind) -> Result<Value> {
        let raw = raw.trim();
        if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            return Ok(Value::Missing);
        }
        match kind {
            ComparisonKind::BinaryExact => Ok(Value::Text(raw.to_owned())),
            ComparisonKind::NumericAbsolute { .. } | ComparisonKind::NumericRelative { .. } => raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Value::Number)
                .ok_or_else(|| LinkError::Schema(format!("expected a number, got '{raw}'"))),
            ComparisonKind::OrdinalMultilevel { .. } => raw
                .split('-')
                .map(|part| match part.trim() {
                    "*" | "" => Ok(None),
                    p => p
                        .parse::<i64>()
                        .map(Some)
                        .map_err(|_| LinkError::Schema(format!("bad component '{p}' in '{raw}'"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Value::Parts),
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Missing => Ok(()),
            Value::Text(s) => f.write_str(s),
            Value::Number(v) => write!(f, "{v}"),
            Value::Parts(parts) => {
                for (k, p) in parts.iter().enumerate() {
                    if k > 0 {
                        f.write_str("-")?;
                    }
                    match p {
                        Some(v) if k == 0 => write!(f, "{v:04}")?,
                        Some(v) => write!(f, "{v:02}")?,
                        None => f.write_str("*")?,
                    }
                }
                Ok(())
            }
        }
    }
}

/// Zero-based agreement level. Index 0 is the lowest level (disagreement);
/// binary comparisons therefore serialize as 0/1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgreementLevel(pub u8);

impl AgreementLevel {
    pub const DISAGREE: AgreementLevel = AgreementLevel(0);
    pub const AGREE: AgreementLevel = AgreementLevel(1);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// One-based level `l` in `1..=level_count`.
    pub fn level(self) -> u8 {
        self.0 + 1
    }
}

/// Compares two non-missing or missing values. Any missing side yields the
/// lowest level.
pub fn compare_values(a: &Value, b: &Value, spec: &ComparisonSpec) -> Result<AgreementLevel> {
    if a.is_missing() || b.is_missing() {
        return Ok(AgreementLevel::DISAGREE);
    }
    let mismatch = || {
        LinkError::Schema(format!(
            "variable '{}': values {a:?} and {b:?} do not fit {:?}",
            spec.name, spec.kind
        ))
    };
    let agree = |yes: bool| if yes { AgreementLevel::AGREE } else { AgreementLevel::DISAGREE };
    match (&spec.kind, a, b) {
        (ComparisonKind::BinaryExact, Value::Text(x), Value::Text(y)) => Ok(agree(x == y)),
        (ComparisonKind::BinaryExact, Value::Number(x), Value::Number(y)) => Ok(agree(x == y)),
        (ComparisonKind::BinaryExact, Value::Parts(x), Value::Parts(y)) => Ok(agree(x == y)),
        (ComparisonKind::NumericAbsolute { threshold }, Value::Number(x), Value::Number(y)) => {
            Ok(agree((x - y).abs() < *threshold))
        }
        (ComparisonKind::NumericRelative { fraction }, Value::Number(x), Value::Number(y)) => {
            Ok(agree((x - y).abs() <= fraction * x.abs().max(y.abs())))
        }
        (ComparisonKind::OrdinalMultilevel { levels }, Value::Parts(x), Value::Parts(y)) => {
            let depth = (*levels - 1) as usize;
            let matched = x
                .iter()
                .zip(y)
                .take(depth)
                .take_while(|(p, q)| p.is_some() && p == q)
                .count();
            Ok(AgreementLevel(matched as u8))
        }
        _ => Err(mismatch()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    /// Record-level attributes, one per record-level schema entry.
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub id: String,
    /// Block-level attributes, one per block-level schema entry.
    pub values: Vec<Value>,
    pub records: Vec<Record>,
}

/// A file whose records are partitioned into blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockedFile {
    pub id: String,
    pub blocks: Vec<Block>,
}

impl BlockedFile {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn record_count(&self) -> usize {
        self.blocks.iter().map(|b| b.records.len()).sum()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.records.len()).collect()
    }

    /// Checks arity against the schema, non-empty blocks and id uniqueness.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let (p, k) = (schema.block.len(), schema.record.len());
        let mut block_ids = HashSet::new();
        let mut record_ids = HashSet::new();
        if self.blocks.is_empty() {
            return Err(LinkError::Schema(format!("file '{}' has no blocks", self.id)));
        }
        for block in &self.blocks {
            if !block_ids.insert(block.id.as_str()) {
                return Err(LinkError::Schema(format!(
                    "file '{}': duplicate block id '{}'",
                    self.id, block.id
                )));
            }
            if block.values.len() != p {
                return Err(LinkError::Schema(format!(
                    "file '{}': block '{}' has {} block-level values, schema expects {p}",
                    self.id,
                    block.id,
                    block.values.len()
                )));
            }
            if block.records.is_empty() {
                return Err(LinkError::Schema(format!(
                    "file '{}': block '{}' is empty",
                    self.id, block.id
                )));
            }
            for rec in &block.records {
                if !record_ids.insert(rec.id.as_str()) {
                    return Err(LinkError::Schema(format!(
                        "file '{}': duplicate record id '{}'",
                        self.id, rec.id
                    )));
                }
                if rec.values.len() != k {
                    return Err(LinkError::Schema(format!(
                        "file '{}': record '{}' has {} record-level values, schema expects {k}",
                        self.id,
                        rec.id,
                        rec.values.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Record-level comparisons for one block pair.
#[derive(Clone, Debug)]
pub struct PairComparisons {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pattern ids (`MASKED` for filtered pairs).
    pub codes: Vec<u32>,
    /// Sparse histogram `(pattern id, count)` over unmasked pairs, sorted by id.
    pub histogram: Vec<(u32, u32)>,
}

impl PairComparisons {
    #[inline]
    pub fn code(&self, i: usize, j: usize) -> u32 {
        self.codes[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.codes[i * self.cols..(i + 1) * self.cols]
    }

    pub fn candidate_count(&self) -> usize {
        self.histogram.iter().map(|&(_, c)| c as usize).sum()
    }
}

/// Missingness and filtering counters collected during cube construction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CubeDiagnostics {
    /// Per block-level variable (schema order): block comparisons with a missing side.
    pub missing_block: Vec<u64>,
    /// Per record-level variable (schema order): record comparisons with a missing side.
    pub missing_record: Vec<u64>,
    /// Record pairs removed by forced-agreement filters.
    pub masked_record_pairs: u64,
    /// Block pairs removed by forced-agreement filters.
    pub masked_block_pairs: u64,
}

/// All block-level and record-level agreement data for two blocked files.
#[derive(Clone, Debug)]
pub struct ComparisonCube {
    blocks1: usize,
    blocks2: usize,
    sizes1: Vec<usize>,
    sizes2: Vec<usize>,
    block_level_counts: Vec<u8>,
    record_level_counts: Vec<u8>,
    block_levels: Vec<u8>,
    block_allowed: Vec<bool>,
    pattern_levels: Vec<u8>,
    pairs: Vec<PairComparisons>,
    diagnostics: CubeDiagnostics,
}

impl ComparisonCube {
    /// S, the number of file-1 blocks.
    pub fn blocks1(&self) -> usize {
        self.blocks1
    }

    /// T, the number of file-2 blocks.
    pub fn blocks2(&self) -> usize {
        self.blocks2
    }

    pub fn sizes1(&self) -> &[usize] {
        &self.sizes1
    }

    pub fn sizes2(&self) -> &[usize] {
        &self.sizes2
    }

    /// Level counts of the modeled block-level variables.
    pub fn block_level_counts(&self) -> &[u8] {
        &self.block_level_counts
    }

    /// Level counts of the modeled record-level variables.
    pub fn record_level_counts(&self) -> &[u8] {
        &self.record_level_counts
    }

    pub fn pattern_count(&self) -> usize {
        if self.record_level_counts.is_empty() {
            1
        } else {
            self.pattern_levels.len() / self.record_level_counts.len()
        }
    }

    /// Level vector of a record-level pattern.
    pub fn pattern(&self, id: u32) -> &[u8] {
        let k = self.record_level_counts.len();
        &self.pattern_levels[id as usize * k..(id as usize + 1) * k]
    }

    #[inline]
    pub fn pair_index(&self, s: usize, t: usize) -> usize {
        s * self.blocks2 + t
    }

    /// Block-level agreement levels Γ_B for the pair (s, t).
    pub fn block_levels(&self, s: usize, t: usize) -> &[u8] {
        let p = self.block_level_counts.len();
        let at = self.pair_index(s, t) * p;
        &self.block_levels[at..at + p]
    }

    /// False when a forced-agreement filter forbids linking s with t.
    pub fn block_allowed(&self, s: usize, t: usize) -> bool {
        self.block_allowed[self.pair_index(s, t)]
    }

    pub fn pair(&self, s: usize, t: usize) -> &PairComparisons {
        &self.pairs[self.pair_index(s, t)]
    }

    /// Record-level levels Γ_C,ij for records i in s and j in t, or `None` when masked.
    pub fn record_levels(&self, s: usize, t: usize, i: usize, j: usize) -> Option<&[u8]> {
        match self.pair(s, t).code(i, j) {
            MASKED => None,
            code => Some(self.pattern(code)),
        }
    }

    pub fn diagnostics(&self) -> &CubeDiagnostics {
        &self.diagnostics
    }

    /// Total number of unmasked record pairs over every block pair.
    pub fn candidate_pairs(&self) -> u64 {
        self.pairs.iter().map(|p| p.candidate_count() as u64).sum()
    }

    /// Swaps the roles of the two files.
    pub fn transposed(&self) -> ComparisonCube {
        let (s_n, t_n) = (self.blocks1, self.blocks2);
        let p = self.block_level_counts.len();
        let mut block_levels = Vec::with_capacity(self.block_levels.len());
        let mut block_allowed = Vec::with_capacity(self.block_allowed.len());
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for t in 0..t_n {
            for s in 0..s_n {
                block_levels.extend_from_slice(self.block_levels(s, t));
                block_allowed.push(self.block_allowed(s, t));
                let src = self.pair(s, t);
                let mut codes = vec![0u32; src.codes.len()];
                for i in 0..src.rows {
                    for j in 0..src.cols {
                        codes[j * src.rows + i] = src.code(i, j);
                    }
                }
                pairs.push(PairComparisons {
                    rows: src.cols,
                    cols: src.rows,
                    codes,
                    histogram: src.histogram.clone(),
                });
            }
        }
        debug_assert_eq!(block_levels.len(), s_n * t_n * p);
        ComparisonCube {
            blocks1: t_n,
            blocks2: s_n,
            sizes1: self.sizes2.clone(),
            sizes2: self.sizes1.clone(),
            block_level_counts: self.block_level_counts.clone(),
            record_level_counts: self.record_level_counts.clone(),
            block_levels,
            block_allowed,
            pattern_levels: self.pattern_levels.clone(),
            pairs,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

fn pattern_key(levels: &[u8], radices: &[u64]) -> u64 {
    levels
        .iter()
        .zip(radices)
        .fold(0u64, |acc, (&l, &r)| acc * r + l as u64)
}

/// Materializes every block-level and record-level comparison.
pub fn build_comparison_cube(
    f1: &BlockedFile,
    f2: &BlockedFile,
    schema: &Schema,
) -> Result<ComparisonCube> {
    schema.validate()?;
    f1.validate(schema)?;
    f2.validate(schema)?;

    let block_specs = &schema.block;
    let record_specs = &schema.record;
    let modeled_block: Vec<usize> = (0..block_specs.len())
        .filter(|&p| !block_specs[p].force_agreement)
        .collect();
    let modeled_record: Vec<usize> = (0..record_specs.len())
        .filter(|&k| !record_specs[k].force_agreement)
        .collect();
    let radices: Vec<u64> = modeled_record
        .iter()
        .map(|&k| record_specs[k].level_count() as u64)
        .collect();
    radices.iter().try_fold(1u64, |acc, &r| acc.checked_mul(r)).ok_or_else(|| {
        LinkError::Schema("too many record-level variables to encode agreement patterns".into())
    })?;

    let (s_n, t_n) = (f1.block_count(), f2.block_count());
    let mut diagnostics = CubeDiagnostics {
        missing_block: vec![0; block_specs.len()],
        missing_record: vec![0; record_specs.len()],
        ..Default::default()
    };

    let mut block_levels = Vec::with_capacity(s_n * t_n * modeled_block.len());
    let mut block_allowed = Vec::with_capacity(s_n * t_n);
    for b1 in &f1.blocks {
        for b2 in &f2.blocks {
            let mut allowed = true;
            for (p, spec) in block_specs.iter().enumerate() {
                let (x, y) = (&b1.values[p], &b2.values[p]);
                if x.is_missing() || y.is_missing() {
                    diagnostics.missing_block[p] += 1;
                }
                let level = compare_values(x, y, spec)?;
                if spec.force_agreement {
                    allowed &= level.index() + 1 == spec.level_count() as usize;
                } else {
                    block_levels.push(level.0);
                }
            }
            if !allowed {
                diagnostics.masked_block_pairs += 1;
            }
            block_allowed.push(allowed);
        }
    }

    struct Keyed {
        keys: Vec<u64>,
        missing: Vec<u64>,
        masked: u64,
    }

    let pair_coords: Vec<(usize, usize)> = (0..s_n)
        .flat_map(|s| (0..t_n).map(move |t| (s, t)))
        .collect();
    let keyed: Vec<Keyed> = pair_coords
        .par_iter()
        .map(|&(s, t)| -> Result<Keyed> {
            let (b1, b2) = (&f1.blocks[s], &f2.blocks[t]);
            let mut keys = Vec::with_capacity(b1.records.len() * b2.records.len());
            let mut missing = vec![0u64; record_specs.len()];
            let mut masked = 0u64;
            let mut levels = vec![0u8; modeled_record.len()];
            for r1 in &b1.records {
                for r2 in &b2.records {
                    let mut allowed = true;
                    let mut slot = 0;
                    for (k, spec) in record_specs.iter().enumerate() {
                        let (x, y) = (&r1.values[k], &r2.values[k]);
                        if x.is_missing() || y.is_missing() {
                            missing[k] += 1;
                        }
                        let level = compare_values(x, y, spec)?;
                        if spec.force_agreement {
                            allowed &= level.index() + 1 == spec.level_count() as usize;
                        } else {
                            levels[slot] = level.0;
                            slot += 1;
                        }
                    }
                    if allowed {
                        keys.push(pattern_key(&levels, &radices));
                    } else {
                        masked += 1;
                        keys.push(u64::MAX);
                    }
                }
            }
            Ok(Keyed {
                keys,
                missing,
                masked,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut distinct = BTreeSet::new();
    for k in &keyed {
        for m in 0..record_specs.len() {
            diagnostics.missing_record[m] += k.missing[m];
        }
        diagnostics.masked_record_pairs += k.masked;
        distinct.extend(k.keys.iter().copied().filter(|&key| key != u64::MAX));
    }
    let dictionary: Vec<u64> = distinct.into_iter().collect();

    let k_mod = modeled_record.len();
    let mut pattern_levels = Vec::with_capacity(dictionary.len().max(1) * k_mod);
    for &key in &dictionary {
        let mut rest = key;
        let mut levels = vec![0u8; k_mod];
        for slot in (0..k_mod).rev() {
            levels[slot] = (rest % radices[slot]) as u8;
            rest /= radices[slot];
        }
        pattern_levels.extend_from_slice(&levels);
    }

    let pairs: Vec<PairComparisons> = keyed
        .into_par_iter()
        .zip(pair_coords.par_iter())
        .map(|(k, &(s, t))| {
            let mut counts = vec![0u32; dictionary.len()];
            let codes: Vec<u32> = k
                .keys
                .iter()
                .map(|&key| {
                    if key == u64::MAX {
                        MASKED
                    } else {
                        let id = dictionary.binary_search(&key).expect("key in dictionary");
                        counts[id] += 1;
                        id as u32
                    }
                })
                .collect();
            let histogram = counts
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0)
                .map(|(id, c)| (id as u32, c))
                .collect();
            PairComparisons {
                rows: f1.blocks[s].records.len(),
                cols: f2.blocks[t].records.len(),
                codes,
                histogram,
            }
        })
        .collect();

    Ok(ComparisonCube {
        blocks1: s_n,
        blocks2: t_n,
        sizes1: f1.block_sizes(),
        sizes2: f2.block_sizes(),
        block_level_counts: modeled_block
            .iter()
            .map(|&p| block_specs[p].level_count())
            .collect(),
        record_level_counts: radices.iter().map(|&r| r as u8).collect(),
        block_levels,
        block_allowed,
        pattern_levels,
        pairs,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ComparisonKind) -> ComparisonSpec {
        ComparisonSpec::new("v", kind)
    }

    fn parse(raw: &str, s: &ComparisonSpec) -> Value {
        Value::parse(raw, &s.kind).unwrap()
    }

    #[test]
    fn binary_exact_identity() {
        let s = spec(ComparisonKind::BinaryExact);
        let l = compare_values(&parse("Northeast", &s), &parse("Northeast", &s), &s).unwrap();
        assert_eq!(l, AgreementLevel::AGREE);
        assert_eq!(l.level(), 2);
        let l = compare_values(&parse("Northeast", &s), &parse("West", &s), &s).unwrap();
        assert_eq!(l.level(), 1);
    }

    #[test]
    fn absolute_threshold_is_strict() {
        let s = spec(ComparisonKind::NumericAbsolute { threshold: 500.0 });
        let agree = |a: &str, b: &str| compare_values(&parse(a, &s), &parse(b, &s), &s).unwrap();
        assert_eq!(agree("50000", "50400"), AgreementLevel::AGREE);
        assert_eq!(agree("50000", "50600"), AgreementLevel::DISAGREE);
        assert_eq!(agree("50000", "50500"), AgreementLevel::DISAGREE);
    }

    #[test]
    fn relative_fraction_uses_the_larger_value() {
        let s = spec(ComparisonKind::NumericRelative { fraction: 0.25 });
        let agree = |a: &str, b: &str| compare_values(&parse(a, &s), &parse(b, &s), &s).unwrap();
        assert_eq!(agree("8", "10"), AgreementLevel::AGREE);
        assert_eq!(agree("10", "8"), AgreementLevel::AGREE);
        assert_eq!(agree("7", "10"), AgreementLevel::DISAGREE);
    }

    #[test]
    fn dob_three_levels() {
        let s = spec(ComparisonKind::OrdinalMultilevel { levels: 3 });
        let lv = |a: &str, b: &str| compare_values(&parse(a, &s), &parse(b, &s), &s).unwrap().level();
        assert_eq!(lv("1980-05", "1980-05"), 3);
        assert_eq!(lv("1980-05", "1980-07"), 2);
        assert_eq!(lv("1980-*", "1982-*"), 1);
        // The day component is ignored with three levels.
        assert_eq!(lv("1980-05-01", "1980-05-20"), 3);
        assert_eq!(lv("1980-*", "1980-*"), 2);
    }

    #[test]
    fn dob_four_levels_uses_day() {
        let s = spec(ComparisonKind::OrdinalMultilevel { levels: 4 });
        let lv = |a: &str, b: &str| compare_values(&parse(a, &s), &parse(b, &s), &s).unwrap().level();
        assert_eq!(lv("1980-05-01", "1980-05-01"), 4);
        assert_eq!(lv("1980-05-01", "1980-05-02"), 3);
        assert_eq!(lv("1980-05-01", "1980-06-01"), 2);
        assert_eq!(lv("1980-05-01", "1981-05-01"), 1);
    }

    #[test]
    fn missing_is_lowest_level() {
        let s = spec(ComparisonKind::OrdinalMultilevel { levels: 3 });
        let l = compare_values(&Value::Missing, &parse("1980-05", &s), &s).unwrap();
        assert_eq!(l.level(), 1);
    }

    #[test]
    fn type_mismatch_is_a_schema_error() {
        let s = spec(ComparisonKind::NumericAbsolute { threshold: 1.0 });
        let err = compare_values(&Value::Text("a".into()), &Value::Number(1.0), &s);
        assert!(matches!(err, Err(LinkError::Schema(_))));
        assert!(Value::parse("abc", &s.kind).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(spec(ComparisonKind::NumericAbsolute { threshold: 0.0 }).validate().is_err());
        assert!(spec(ComparisonKind::NumericRelative { fraction: 1.0 }).validate().is_err());
        assert!(spec(ComparisonKind::OrdinalMultilevel { levels: 1 }).validate().is_err());
        assert!(spec(ComparisonKind::OrdinalMultilevel { levels: 3 }).validate().is_ok());
    }

    #[test]
    fn schema_json_shape() {
        let json = r#"{
            "block": [{"name": "income", "kind": "numeric-absolute", "threshold": 500}],
            "record": [
                {"name": "dob", "kind": "ordinal-multilevel", "levels": 3},
                {"name": "sex", "kind": "binary-exact", "force_agreement": true}
            ]
        }"#;
        let schema: Schema = serde_json::from_str(json).unwrap();
        assert_eq!(
            schema.block[0].kind,
            ComparisonKind::NumericAbsolute { threshold: 500.0 }
        );
        assert!(schema.record[1].force_agreement);
        assert_eq!(schema.modeled_record().count(), 1);
    }

    fn file(id: &str, blocks: &[(&str, &[&str], &[(&str, &[&str])])], schema: &Schema) -> BlockedFile {
        BlockedFile {
            id: id.into(),
            blocks: blocks
                .iter()
                .map(|(bid, bvals, recs)| Block {
                    id: bid.to_string(),
                    values: bvals
                        .iter()
                        .zip(&schema.block)
                        .map(|(v, s)| Value::parse(v, &s.kind).unwrap())
                        .collect(),
                    records: recs
                        .iter()
                        .map(|(rid, rvals)| Record {
                            id: rid.to_string(),
                            values: rvals
                                .iter()
                                .zip(&schema.record)
                                .map(|(v, s)| Value::parse(v, &s.kind).unwrap())
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn small_schema() -> Schema {
        Schema {
            block: vec![ComparisonSpec::new("region", ComparisonKind::BinaryExact)],
            record: vec![
                ComparisonSpec::new("dob", ComparisonKind::OrdinalMultilevel { levels: 3 }),
                ComparisonSpec::new("sex", ComparisonKind::BinaryExact),
            ],
        }
    }

    #[test]
    fn single_record_files_agree_everywhere() {
        let schema = small_schema();
        let f1 = file("a", &[("A", &["N"], &[("a1", &["1980-05", "F"])])], &schema);
        let f2 = file("b", &[("B", &["N"], &[("b1", &["1980-05", "F"])])], &schema);
        let cube = build_comparison_cube(&f1, &f2, &schema).unwrap();
        assert_eq!(cube.block_levels(0, 0), &[1]);
        assert_eq!(cube.record_levels(0, 0, 0, 0).unwrap(), &[2, 1]);
        assert_eq!(cube.pair(0, 0).histogram, vec![(0, 1)]);
    }

    #[test]
    fn identical_block_attributes_give_all_agree_block_cube() {
        let schema = small_schema();
        let recs: &[(&str, &[&str])] = &[("x", &["1980-05", "F"])];
        let f1 = file("a", &[("A1", &["N"], recs), ("A2", &["N"], &[("y", &["1970-01", "M"])])], &schema);
        let f2 = file("b", &[("B1", &["N"], recs), ("B2", &["N"], &[("z", &["1970-01", "M"])])], &schema);
        let cube = build_comparison_cube(&f1, &f2, &schema).unwrap();
        for s in 0..2 {
            for t in 0..2 {
                assert_eq!(cube.block_levels(s, t), &[1]);
            }
        }
    }

    #[test]
    fn forced_agreement_masks_pairs_and_is_not_modeled() {
        let mut schema = small_schema();
        schema.record[1].force_agreement = true;
        let f1 = file("a", &[("A", &["N"], &[("a1", &["1980-05", "F"]), ("a2", &["1980-05", "M"])])], &schema);
        let f2 = file("b", &[("B", &["N"], &[("b1", &["1980-05", "F"])])], &schema);
        let cube = build_comparison_cube(&f1, &f2, &schema).unwrap();
        assert_eq!(cube.record_level_counts(), &[3]);
        assert!(cube.record_levels(0, 0, 0, 0).is_some());
        assert!(cube.record_levels(0, 0, 1, 0).is_none());
        assert_eq!(cube.diagnostics().masked_record_pairs, 1);
        assert_eq!(cube.candidate_pairs(), 1);
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let schema = small_schema();
        let mut f1 = file("a", &[("A", &["N"], &[("a1", &["1980-05", "F"])])], &schema);
        let f2 = f1.clone();
        f1.blocks[0].records[0].values.pop();
        assert!(matches!(
            build_comparison_cube(&f1, &f2, &schema),
            Err(LinkError::Schema(_))
        ));
    }

    #[test]
    fn missing_values_are_counted() {
        let schema = small_schema();
        let f1 = file("a", &[("A", &[""], &[("a1", &["", "F"])])], &schema);
        let f2 = file("b", &[("B", &["N"], &[("b1", &["1980-05", "F"]), ("b2", &["1980-05", "M"])])], &schema);
        let cube = build_comparison_cube(&f1, &f2, &schema).unwrap();
        assert_eq!(cube.diagnostics().missing_block, vec![1]);
        assert_eq!(cube.diagnostics().missing_record, vec![2, 0]);
        assert_eq!(cube.record_levels(0, 0, 0, 0).unwrap()[0], 0);
    }

    #[test]
    fn transpose_round_trips() {
        let schema = small_schema();
        let f1 = file("a", &[("A", &["N"], &[("a1", &["1980-05", "F"]), ("a2", &["1981-05", "M"])])], &schema);
        let f2 = file(
            "b",
            &[
                ("B", &["N"], &[("b1", &["1980-05", "F"])]),
                ("C", &["S"], &[("c1", &["1981-05", "F"]), ("c2", &["1981-06", "M"])]),
            ],
            &schema,
        );
        let cube = build_comparison_cube(&f1, &f2, &schema).unwrap();
        let tr = cube.transposed();
        assert_eq!(tr.blocks1(), 2);
        assert_eq!(tr.blocks2(), 1);
        for t in 0..2 {
            assert_eq!(tr.block_levels(t, 0), cube.block_levels(0, t));
            for i in 0..2 {
                for j in 0..cube.sizes2()[t] {
                    assert_eq!(tr.record_levels(t, 0, j, i), cube.record_levels(0, t, i, j));
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn symmetric_kinds_are_exchangeable(a in -1e5f64..1e5, b in -1e5f64..1e5, thr in 0.1f64..1e4) {
                let s = spec(ComparisonKind::NumericAbsolute { threshold: thr });
                let (x, y) = (Value::Number(a), Value::Number(b));
                prop_assert_eq!(compare_values(&x, &y, &s).unwrap(), compare_values(&y, &x, &s).unwrap());
                let s = spec(ComparisonKind::BinaryExact);
                let (x, y) = (Value::Text(format!("{}", a as i64 % 3)), Value::Text(format!("{}", b as i64 % 3)));
                prop_assert_eq!(compare_values(&x, &y, &s).unwrap(), compare_values(&y, &x, &s).unwrap());
            }

            #[test]
            fn ordinal_levels_are_bounded(levels in 2u8..6, a in proptest::collection::vec(0i64..3, 0..6), b in proptest::collection::vec(0i64..3, 0..6)) {
                let s = spec(ComparisonKind::OrdinalMultilevel { levels });
                let x = Value::Parts(a.into_iter().map(Some).collect());
                let y = Value::Parts(b.into_iter().map(Some).collect());
                let l = compare_values(&x, &y, &s).unwrap();
                prop_assert!(l.level() >= 1 && l.level() <= levels);
            }
        }
    }
}
