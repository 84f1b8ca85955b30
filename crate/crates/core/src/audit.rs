//! Exact answer-channel tables and brute-force privacy levels.
//!
//! The closed-form privacy expressions in [`crate::qa`] and [`crate::rg`] are
//! checked against these tables, which are built directly from the
//! mechanisms' definitions by enumeration.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::population::{Alphabet, PopulationModel};
use crate::qa::{QaParams, QueryMatrix};
use crate::rg::RgParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeTag {
    Qa,
    Rg,
}

/// Pr(answer | group) for one conditioning query (none for RG).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBlock {
    pub query: Option<QueryMatrix>,
    /// `rows[g][a]`. For RG the answer index is `reported_group * 2m + value_index`.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTable {
    pub scheme: SchemeTag,
    pub k: usize,
    pub blocks: Vec<ChannelBlock>,
}

impl ChannelTable {
    /// Largest deviation of any row total from 1.
    pub fn max_normalization_error(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| &b.rows)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_probability(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.rows.iter().flatten())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn qa_block(model: &PopulationModel, lambda: f64, query: &QueryMatrix) -> ChannelBlock {
    let w = model.alphabet().size() as f64;
    let rows = (0..model.k())
        .map(|g| {
            query
                .row(g)
                .iter()
                .map(|&v| {
                    let p = model.prob(g, v);
                    (1.0 - lambda) * p + lambda / (w - 1.0) * (1.0 - p)
                })
                .collect()
        })
        .collect();
    ChannelBlock {
        query: Some(query.clone()),
        rows,
    }
}

/// Pr(A = a | G = g, Q = query) for the Q&A scheme.
pub fn qa_channel(model: &PopulationModel, params: &QaParams, query: &QueryMatrix) -> ChannelTable {
    qa_channel_over(model, params, std::slice::from_ref(query))
}

pub fn qa_channel_over(model: &PopulationModel, params: &QaParams, queries: &[QueryMatrix]) -> ChannelTable {
    ChannelTable {
        scheme: SchemeTag::Qa,
        k: model.k(),
        blocks: queries.iter().map(|q| qa_block(model, params.lambda(), q)).collect(),
    }
}

fn permutations(items: &[i32]) -> Vec<Vec<i32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn product_of_rows(k: usize, alphabet: Alphabet, choices: &[Vec<i32>]) -> Vec<QueryMatrix> {
    let mut out = Vec::with_capacity(choices.len().pow(k as u32));
    let mut idx = vec![0usize; k];
    loop {
        let rows = idx.iter().map(|&i| choices[i].clone()).collect();
        out.push(QueryMatrix::from_rows(alphabet, rows).expect("rows are permutations"));
        let mut g = 0;
        loop {
            if g == k {
                return out;
            }
            idx[g] += 1;
            if idx[g] < choices.len() {
                break;
            }
            idx[g] = 0;
            g += 1;
        }
    }
}

/// Every query matrix, ((2m)!)^k of them. Only feasible for tiny (m, k).
pub fn all_queries(k: usize, alphabet: Alphabet) -> Vec<QueryMatrix> {
    let base: Vec<i32> = alphabet.values().collect();
    product_of_rows(k, alphabet, &permutations(&base))
}

/// Queries whose rows are cyclic shifts of the sorted alphabet, (2m)^k of
/// them. For every column and every pair of rows they realize every ordered
/// pair of values, which is all the channel depends on.
pub fn canonical_queries(k: usize, alphabet: Alphabet) -> Vec<QueryMatrix> {
    let base: Vec<i32> = alphabet.values().collect();
    let shifts: Vec<Vec<i32>> = (0..base.len())
        .map(|s| {
            let mut r = base.clone();
            r.rotate_left(s);
            r
        })
        .collect();
    product_of_rows(k, alphabet, &shifts)
}

/// The query family the audit enumerates: the whole query set when m = 1,
/// the cyclic-shift family otherwise.
pub fn audit_queries(k: usize, alphabet: Alphabet) -> Vec<QueryMatrix> {
    if alphabet.m() == 1 {
        all_queries(k, alphabet)
    } else {
        canonical_queries(k, alphabet)
    }
}

/// Audited Q&A privacy level over [`audit_queries`].
pub fn audit_qa(model: &PopulationModel, params: &QaParams) -> f64 {
    audited_epsilon(&qa_channel_over(
        model,
        params,
        &audit_queries(model.k(), model.alphabet()),
    ))
}

/// Pr((reported group, reported value) | G = g) for the RG scheme.
pub fn rg_channel(model: &PopulationModel, params: &RgParams) -> ChannelTable {
    let k = model.k();
    let alphabet = model.alphabet();
    let w = alphabet.size();
    let (lg, lv) = (params.lambda_gr(), params.lambda_vl());
    let lie = lg / (w as f64 * (k as f64 - 1.0));
    let rows = (0..k)
        .map(|g| {
            let mut row = vec![lie; k * w];
            for (i, &p) in model.row(g).iter().enumerate() {
                row[g * w + i] = ((1.0 - lv) * p + (1.0 - p) * lv / (w as f64 - 1.0)) * (1.0 - lg);
            }
            row
        })
        .collect();
    ChannelTable {
        scheme: SchemeTag::Rg,
        k,
        blocks: vec![ChannelBlock { query: None, rows }],
    }
}

/// Smallest eps with Pr(a | g) <= e^eps Pr(a | g') for all cells; infinite
/// when some answer is possible under one group and impossible under another.
pub fn audited_epsilon(table: &ChannelTable) -> f64 {
    let mut worst = 0.0f64;
    for block in &table.blocks {
        for (g, rg) in block.rows.iter().enumerate() {
            for (h, rh) in block.rows.iter().enumerate() {
                if g == h {
                    continue;
                }
                for (&a, &b) in rg.iter().zip(rh) {
                    if a == 0.0 {
                        continue;
                    }
                    if b == 0.0 {
                        return f64::INFINITY;
                    }
                    worst = worst.max((a / b).ln());
                }
            }
        }
    }
    worst
}

/// Set of (p_1(+1), p_2(+1)) on a grid for which the binary two-group Q&A
/// scheme with no value randomization reaches privacy level `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyRegion {
    pub epsilon: f64,
    pub resolution: usize,
    inside: Vec<bool>,
}

impl PrivacyRegion {
    /// Grid coordinate i, the cell center (2i + 1) / (2 resolution).
    pub fn coordinate(&self, i: usize) -> f64 {
        grid_coordinate(i, self.resolution)
    }

    /// Cell (i, j) is p_1(+1) = coordinate(i), p_2(+1) = coordinate(j).
    pub fn contains_cell(&self, i: usize, j: usize) -> bool {
        self.inside[i * self.resolution + j]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &PrivacyRegion) -> bool {
        self.resolution == other.resolution && self.inside.iter().zip(&other.inside).all(|(&a, &b)| !a || b)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.resolution;
        (0..r * r).filter(move |&c| self.inside[c]).map(move |c| (c / r, c % r))
    }
}

fn grid_coordinate(i: usize, resolution: usize) -> f64 {
    (2 * i + 1) as f64 / (2 * resolution) as f64
}

/// Intrinsic privacy of grid cell (i, j). Computed from integer numerators so
/// the result is exactly invariant under swapping and complementing.
pub fn grid_intrinsic_epsilon(i: usize, j: usize, resolution: usize) -> f64 {
    let denom = 2 * resolution;
    let small = |x: usize| (2 * x + 1).min(denom - 2 * x - 1) as f64;
    let (si, sj) = (small(i), small(j));
    let (bi, bj) = (denom as f64 - si, denom as f64 - sj);
    (bi / sj).max(bj / si).ln().max(0.0)
}

pub fn privacy_region(epsilon: f64, resolution: usize) -> PrivacyRegion {
    let inside = (0..resolution * resolution)
        .map(|c| grid_intrinsic_epsilon(c / resolution, c % resolution, resolution) <= epsilon)
        .collect();
    PrivacyRegion {
        epsilon,
        resolution,
        inside,
    }
}

/// Whether an arbitrary point (p_1(+1), p_2(+1)) attains `epsilon`.
pub fn region_contains(p1: f64, p2: f64, epsilon: f64) -> Result<bool> {
    let model = PopulationModel::binary(p1, p2)?;
    Ok(crate::qa::intrinsic_epsilon(&model) <= epsilon)
}

pub const REGION_CSV_VERSION: &str = "# pmga region v1";

/// CSV with columns p1, p2, epsilon_intrinsic, then one 0/1 membership column
/// per requested epsilon.
pub fn write_region_csv<W: Write>(out: &mut W, epsilons: &[f64], resolution: usize) -> Result<()> {
    let mut header = String::from("p1,p2,epsilon_intrinsic");
    for e in epsilons {
        write!(header, ",in_region_{e}").unwrap();
    }
    writeln!(out, "{REGION_CSV_VERSION}")?;
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for i in 0..resolution {
        for j in 0..resolution {
            let eps = grid_intrinsic_epsilon(i, j, resolution);
            line.clear();
            write!(
                line,
                "{},{},{}",
                grid_coordinate(i, resolution),
                grid_coordinate(j, resolution),
                eps
            )
            .unwrap();
            for &e in epsilons {
                line.push_str(if eps <= e { ",1" } else { ",0" });
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
