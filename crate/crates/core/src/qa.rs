//! Query-and-Aggregate scheme.
//!
//! Each user is assigned a random k x 2m query matrix whose rows are
//! permutations of the alphabet. The user perturbs their value with k-ary
//! randomized response, finds it in the row of their own group, and sends the
//! column index. The server decodes the whole column; the entries in other
//! groups' rows are uniform noise with zero mean.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{AggregateVector, Alphabet, PopulationModel};
use crate::rng::{self, domain};

/// Margin kept below the supremum (2m-1)/(2m) of the lambda domain.
pub const LAMBDA_MARGIN: f64 = 1e-12;

/// Largest admissible randomization parameter for alphabet parameter `m`.
pub fn max_lambda(m: u32) -> f64 {
    let w = 2.0 * m as f64;
    (w - 1.0) / w - LAMBDA_MARGIN
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QaParams {
    lambda: f64,
    alphabet: Alphabet,
}

impl QaParams {
    pub fn new(lambda: f64, m: u32) -> Result<Self> {
        let alphabet = Alphabet::new(m)?;
        let hi = max_lambda(m);
        if !(lambda >= 0.0 && lambda <= hi) {
            return Err(Error::ParameterDomain {
                name: "lambda",
                value: lambda,
                domain: format!("[0, {hi}]"),
            });
        }
        Ok(Self { lambda, alphabet })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    /// Unbiasing factor (2m-1)/(2m - 2m*lambda - 1).
    pub fn scale(&self) -> f64 {
        let w = self.alphabet.size() as f64;
        (w - 1.0) / (w - w * self.lambda - 1.0)
    }
}

/// A k x 2m matrix whose every row is a permutation of the alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryMatrix {
    k: usize,
    alphabet: Alphabet,
    cells: Vec<i32>,
}

impl QueryMatrix {
    pub fn from_rows(alphabet: Alphabet, rows: Vec<Vec<i32>>) -> Result<Self> {
        let w = alphabet.size();
        let k = rows.len();
        let mut cells = Vec::with_capacity(k * w);
        for (g, row) in rows.into_iter().enumerate() {
            if row.len() != w {
                return Err(Error::InvalidModel(format!(
                    "query row {g} has {} entries, expected {w}",
                    row.len()
                )));
            }
            let mut seen = vec![false; w];
            for &v in &row {
                let i = alphabet.index_of(v).ok_or(Error::ValueNotInAlphabet(v))?;
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidModel(format!("query row {g} repeats value {v}")));
                }
            }
            cells.extend(row);
        }
        Ok(Self { k, alphabet, cells })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn width(&self) -> usize {
        self.alphabet.size()
    }

    pub fn row(&self, g: usize) -> &[i32] {
        let w = self.width();
        &self.cells[g * w..(g + 1) * w]
    }

    pub fn get(&self, g: usize, column: usize) -> i32 {
        self.cells[g * self.width() + column]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i32]> {
        self.cells.chunks_exact(self.width())
    }
}

/// One user's message: a 0-based column of their query matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaAnswer {
    pub user_index: u64,
    pub column: usize,
}

/// Uniform draw from the query set: independent Fisher-Yates shuffles per row.
pub fn sample_query<R: Rng + ?Sized>(k: usize, alphabet: Alphabet, rng: &mut R) -> QueryMatrix {
    let base: Vec<i32> = alphabet.values().collect();
    let mut cells = Vec::with_capacity(k * base.len());
    for _ in 0..k {
        let mut row = base.clone();
        row.shuffle(rng);
        cells.extend(row);
    }
    QueryMatrix { k, alphabet, cells }
}

/// The public query of user `user_index`, recomputable by both sides from the
/// shared seed.
pub fn derive_query(master_seed: u64, user_index: u64, k: usize, alphabet: Alphabet) -> QueryMatrix {
    debug_assert!(user_index >= 1);
    let mut rng = rng::stream(master_seed, &[domain::QUERY, user_index]);
    sample_query(k, alphabet, &mut rng)
}

/// k-ary randomized response: keep `v` w.p. 1 - lambda, otherwise move to
/// one of the other 2m - 1 values uniformly.
pub fn randomize_value<R: Rng + ?Sized>(v: i32, params: &QaParams, rng: &mut R) -> Result<i32> {
    let alphabet = params.alphabet();
    let own = alphabet.index_of(v).ok_or(Error::ValueNotInAlphabet(v))?;
    Ok(alphabet.value(k_ary_response(own, alphabet.size(), params.lambda, rng)))
}

/// Index-level randomized response shared with the RG scheme.
pub(crate) fn k_ary_response<R: Rng + ?Sized>(own: usize, width: usize, lie: f64, rng: &mut R) -> usize {
    if lie == 0.0 || rng.gen::<f64>() >= lie {
        return own;
    }
    let j = rng.gen_range(0..width - 1);
    if j >= own {
        j + 1
    } else {
        j
    }
}

/// Column `a` with `query[group][a] == randomized_value`.
pub fn answer(query: &QueryMatrix, group: usize, randomized_value: i32) -> Result<usize> {
    if group >= query.k() {
        return Err(Error::GroupOutOfRange { group, k: query.k() });
    }
    query
        .row(group)
        .iter()
        .position(|&x| x == randomized_value)
        .ok_or(Error::ValueNotInAlphabet(randomized_value))
}

pub fn decode(query: &QueryMatrix, column: usize) -> Result<Vec<i32>> {
    if column >= query.width() {
        return Err(Error::ColumnOutOfRange {
            column,
            width: query.width(),
        });
    }
    Ok((0..query.k()).map(|g| query.get(g, column)).collect())
}

/// Server estimate: scale * sum of decoded columns.
pub fn estimate<C: AsRef<[i32]>>(decoded: &[C], k: usize, params: &QaParams) -> Result<AggregateVector> {
    let mut sums = vec![0i64; k];
    for col in decoded {
        let col = col.as_ref();
        if col.len() != k {
            return Err(Error::InvalidConfig(format!(
                "decoded column has {} entries, expected {k}",
                col.len()
            )));
        }
        for (s, &x) in sums.iter_mut().zip(col) {
            *s += x as i64;
        }
    }
    let scale = params.scale();
    Ok(AggregateVector(sums.into_iter().map(|s| scale * s as f64).collect()))
}

/// Per-group (max, min) of p.
fn row_extremes(model: &PopulationModel) -> Vec<(f64, f64)> {
    model
        .rows()
        .iter()
        .map(|r| {
            r.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &x| {
                (hi.max(x), lo.min(x))
            })
        })
        .collect()
}

fn epsilon_qa_raw(model: &PopulationModel, lambda: f64) -> f64 {
    let w = model.alphabet().size() as f64;
    let c = w * (1.0 - lambda) - 1.0;
    let ext = row_extremes(model);
    let mut worst = 1.0f64;
    for (g, &(hi, _)) in ext.iter().enumerate() {
        for (h, &(_, lo)) in ext.iter().enumerate() {
            if g != h {
                worst = worst.max((c * hi + lambda) / (c * lo + lambda));
            }
        }
    }
    worst.ln().max(0.0)
}

/// Group-privacy level of the Q&A scheme (natural log).
pub fn epsilon_qa(model: &PopulationModel, params: &QaParams) -> f64 {
    epsilon_qa_raw(model, params.lambda)
}

/// Privacy level with no value randomization.
pub fn intrinsic_epsilon(model: &PopulationModel) -> f64 {
    epsilon_qa_raw(model, 0.0)
}

/// What is known about the value distributions when picking lambda.
#[derive(Debug, Clone, Copy)]
pub enum LambdaBound<'a> {
    /// Nothing known; valid for every model.
    DistributionFree,
    /// Every p_g(v) is known to lie in [c_min, c_max].
    SideInformation { c_min: f64, c_max: f64 },
    /// Full knowledge of the model; smallest feasible lambda by bisection.
    Exact(&'a PopulationModel),
}

/// Bisection tolerance on lambda in exact mode.
pub const LAMBDA_TOLERANCE: f64 = 1e-12;

/// Smallest lambda that guarantees `epsilon_target` under the given knowledge.
pub fn min_lambda(bound: LambdaBound<'_>, epsilon_target: f64, m: u32) -> Result<QaParams> {
    if epsilon_target.is_nan() || epsilon_target <= 0.0 {
        return Err(Error::ParameterDomain {
            name: "epsilon",
            value: epsilon_target,
            domain: "(0, inf)".into(),
        });
    }
    let w = 2.0 * m as f64;
    let e = epsilon_target.exp();
    let hi = max_lambda(m);
    let lambda = match bound {
        LambdaBound::DistributionFree => (w - 1.0) / (w + e - 1.0),
        LambdaBound::SideInformation { c_min, c_max } => {
            if !(0.0 <= c_min && c_min < c_max && c_max <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "side information needs 0 <= c_min < c_max <= 1, got [{c_min}, {c_max}]"
                )));
            }
            let gap = c_max - c_min * e;
            if gap <= 0.0 {
                0.0
            } else {
                (w - 1.0) * gap / (w * gap + e - 1.0)
            }
        }
        LambdaBound::Exact(model) => {
            if model.m() != m {
                return Err(Error::InvalidConfig(format!(
                    "model has m = {}, requested m = {m}",
                    model.m()
                )));
            }
            if intrinsic_epsilon(model) <= epsilon_target {
                0.0
            } else {
                if epsilon_qa_raw(model, hi) > epsilon_target {
                    return Err(Error::ParameterDomain {
                        name: "epsilon",
                        value: epsilon_target,
                        domain: format!("achievable only above {}", epsilon_qa_raw(model, hi)),
                    });
                }
                let (mut lo, mut up) = (0.0, hi);
                while up - lo > LAMBDA_TOLERANCE {
                    let mid = 0.5 * (lo + up);
                    if epsilon_qa_raw(model, mid) <= epsilon_target {
                        up = mid;
                    } else {
                        lo = mid;
                    }
                }
                up
            }
        }
    };
    QaParams::new(lambda.min(hi), m)
}

/// Relative-MSE constant alpha, so that the relative MSE is alpha / n.
pub fn qa_alpha(m: u32, k: usize, lambda: f64, second_moment: f64) -> Result<f64> {
    QaParams::new(lambda, m)?;
    let m = m as f64;
    let k = k as f64;
    let w = 2.0 * m;
    let d = w - w * lambda - 1.0;
    Ok(w * lambda * second_moment / d
        + (w * w - 1.0) * (m + 1.0) * ((w - 1.0) * (k - 1.0) + w * lambda) / (6.0 * d * d))
}

pub fn relative_mse_theory_qa(m: u32, k: usize, lambda: f64, second_moment: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    Ok(qa_alpha(m, k, lambda, second_moment)? / n as f64)
}
