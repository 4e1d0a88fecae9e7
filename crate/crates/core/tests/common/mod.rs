#![allow(dead_code)]

use mlbrl_core::{
    Block, BlockedFile, ComparisonKind, ComparisonSpec, Matching, ModelParams, Record, Schema, Value,
};

/// One binary block variable `g`, two binary record variables `x`, `y`.
pub fn binary_schema() -> Schema {
    Schema {
        block: vec![ComparisonSpec::new("g", ComparisonKind::BinaryExact)],
        record: vec![
            ComparisonSpec::new("x", ComparisonKind::BinaryExact),
            ComparisonSpec::new("y", ComparisonKind::BinaryExact),
        ],
    }
}

/// Builds a file for [`binary_schema`] from `(g, [(x, y)])` blocks.
pub fn binary_file(id: &str, blocks: &[(&str, &[(&str, &str)])]) -> BlockedFile {
    BlockedFile {
        id: id.into(),
        blocks: blocks
            .iter()
            .enumerate()
            .map(|(s, (g, recs))| Block {
                id: format!("{id}{s}"),
                values: vec![Value::Text((*g).into())],
                records: recs
                    .iter()
                    .enumerate()
                    .map(|(i, (x, y))| Record {
                        id: format!("{id}{s}r{i}"),
                        values: vec![Value::Text((*x).into()), Value::Text((*y).into())],
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// A moderately informative Θ for [`binary_schema`].
pub fn binary_params() -> ModelParams {
    ModelParams {
        block_match: vec![vec![0.3, 0.7]],
        block_nonmatch: vec![vec![0.6, 0.4]],
        record_match: vec![vec![0.25, 0.75], vec![0.3, 0.7]],
        record_nonmatch: vec![vec![0.6, 0.4], vec![0.5, 0.5]],
        record_nonblock: vec![vec![0.55, 0.45], vec![0.45, 0.55]],
    }
}

/// Every partial one-to-one matching of an `n1 x n2` pair, by brute force.
pub fn all_matchings(n1: usize, n2: usize) -> Vec<Matching> {
    fn rec(i: usize, n1: usize, n2: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Matching>) {
        if i == n1 {
            out.push(Matching::from_links(n1, n2, cur).unwrap());
            return;
        }
        rec(i + 1, n1, n2, used, cur, out);
        for j in 0..n2 {
            if !used[j] {
                used[j] = true;
                cur.push((i, j));
                rec(i + 1, n1, n2, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, n1, n2, &mut vec![false; n2], &mut Vec::new(), &mut out);
    out
}

/// Sorted link list, used as a hashable key for a matching.
pub fn key(m: &Matching) -> Vec<(usize, usize)> {
    let mut v: Vec<_> = m.links().collect();
    v.sort_unstable();
    v
}

/// Every injective map {0..s} -> {0..t}.
pub fn all_injections(s: usize, t: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, s: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == s {
            out.push(cur.clone());
            return;
        }
        for r in 0..t {
            if !cur.contains(&r) {
                cur.push(r);
                rec(k + 1, s, t, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, s, t, &mut Vec::new(), &mut out);
    out
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
