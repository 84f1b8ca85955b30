//! Population model: groups, the value alphabet, and ground-truth aggregates.

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Tolerance on row sums of `p` and on the sum of `theta`.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// The symmetric, zero-free value alphabet {-m, ..., -1, +1, ..., +m}.
///
/// Values are indexed 0..2m in increasing order, so index `i < m` holds
/// `-(m - i)` and index `i >= m` holds `i - m + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alphabet {
    m: u32,
}

impl Alphabet {
    pub fn new(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidModel("alphabet parameter m must be >= 1".into()));
        }
        if m > 1 << 20 {
            return Err(Error::InvalidModel(format!("alphabet parameter m = {m} is too large")));
        }
        Ok(Self { m })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    /// Number of symbols, 2m.
    pub fn size(&self) -> usize {
        2 * self.m as usize
    }

    pub fn value(&self, index: usize) -> i32 {
        let m = self.m as i64;
        let i = index as i64;
        debug_assert!(i < 2 * m);
        if i < m {
            (i - m) as i32
        } else {
            (i - m + 1) as i32
        }
    }

    pub fn index_of(&self, value: i32) -> Option<usize> {
        let m = self.m as i64;
        let v = value as i64;
        if v == 0 || v.abs() > m {
            None
        } else if v < 0 {
            Some((v + m) as usize)
        } else {
            Some((v + m - 1) as usize)
        }
    }

    pub fn contains(&self, value: i32) -> bool {
        self.index_of(value).is_some()
    }

    pub fn values(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.size()).map(move |i| self.value(i))
    }

    /// Sum of v^2 over the alphabet, m(m+1)(2m+1)/3.
    pub fn sum_of_squares(&self) -> f64 {
        let m = self.m as f64;
        m * (m + 1.0) * (2.0 * m + 1.0) / 3.0
    }
}

/// JSON form of a population model. Rows of `p` list probabilities in value
/// order -m, ..., -1, +1, ..., +m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub k: usize,
    pub m: u32,
    pub p: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
}

/// A validated population: `k` groups with prior `theta`, and per-group value
/// distributions `p[g]` over the alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    k: usize,
    alphabet: Alphabet,
    p: Vec<Vec<f64>>,
    theta: Vec<f64>,
}

fn normalize(mut xs: Vec<f64>, sum: f64) -> Vec<f64> {
    if sum != 1.0 {
        xs.iter_mut().for_each(|x| *x /= sum);
    }
    xs
}

impl PopulationModel {
    pub fn new(m: u32, p: Vec<Vec<f64>>, theta: Vec<f64>) -> Result<Self> {
        let alphabet = Alphabet::new(m)?;
        let k = p.len();
        if k < 2 {
            return Err(Error::InvalidModel(format!("need at least 2 groups, got {k}")));
        }
        if theta.len() != k {
            return Err(Error::InvalidModel(format!(
                "theta has {} entries but p has {k} rows",
                theta.len()
            )));
        }
        let mut rows = Vec::with_capacity(k);
        for (row, probs) in p.into_iter().enumerate() {
            if probs.len() != alphabet.size() {
                return Err(Error::InvalidModel(format!(
                    "row {row} of p has {} entries, expected 2m = {}",
                    probs.len(),
                    alphabet.size()
                )));
            }
            for (col, &value) in probs.iter().enumerate() {
                if !(value > 0.0 && value < 1.0) {
                    return Err(Error::ProbabilityOutOfRange { row, col, value });
                }
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::RowSum { row, sum });
            }
            rows.push(normalize(probs, sum));
        }
        for (g, &t) in theta.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidModel(format!("theta[{g}] = {t} is not a probability")));
            }
        }
        let sum: f64 = theta.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidModel(format!("theta sums to {sum}, expected 1")));
        }
        Ok(Self {
            k,
            alphabet,
            p: rows,
            theta: normalize(theta, sum),
        })
    }

    /// `k` groups sharing the uniform value distribution, uniform prior.
    pub fn uniform(k: usize, m: u32) -> Result<Self> {
        let w = 2 * m as usize;
        Self::new(m, vec![vec![1.0 / w as f64; w]; k], vec![1.0 / k as f64; k])
    }

    /// Two groups over {-1, +1} with `p_1(+1) = p1`, `p_2(+1) = p2`, uniform prior.
    pub fn binary(p1: f64, p2: f64) -> Result<Self> {
        Self::new(1, vec![vec![1.0 - p1, p1], vec![1.0 - p2, p2]], vec![0.5, 0.5])
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        let model = Self::new(spec.m, spec.p, spec.theta)?;
        if model.k != spec.k {
            return Err(Error::InvalidModel(format!(
                "k = {} but p has {} rows",
                spec.k, model.k
            )));
        }
        Ok(model)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            k: self.k,
            m: self.alphabet.m(),
            p: self.p.clone(),
            theta: self.theta.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> u32 {
        self.alphabet.m()
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Row `g` of `p`, indexed by alphabet position.
    pub fn row(&self, g: usize) -> &[f64] {
        &self.p[g]
    }

    pub fn prob(&self, g: usize, value: i32) -> f64 {
        self.alphabet.index_of(value).map_or(0.0, |i| self.p[g][i])
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.p
    }

    /// E[V | G = g].
    pub fn conditional_mean(&self, g: usize) -> f64 {
        self.alphabet
            .values()
            .zip(&self.p[g])
            .map(|(v, &pr)| v as f64 * pr)
            .sum()
    }

    /// Expected true aggregate for `n` users: n * theta_g * E[V | G = g].
    pub fn expected_aggregate(&self, n: usize) -> Vec<f64> {
        (0..self.k)
            .map(|g| n as f64 * self.theta[g] * self.conditional_mean(g))
            .collect()
    }
}

/// E[V^2] = sum_g theta_g sum_v v^2 p_g(v).
pub fn second_moment(model: &PopulationModel) -> f64 {
    let alphabet = model.alphabet();
    model
        .rows()
        .iter()
        .zip(model.theta())
        .map(|(row, &t)| {
            let inner: f64 = alphabet
                .values()
                .zip(row)
                .map(|(v, &pr)| (v as f64) * (v as f64) * pr)
                .sum();
            t * inner
        })
        .sum()
}

/// Global (max, min) of p over all groups and values.
pub fn extreme_probs(model: &PopulationModel) -> (f64, f64) {
    model
        .rows()
        .iter()
        .flatten()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &x| {
            (hi.max(x), lo.min(x))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    /// 1-based user index.
    pub index: u64,
    /// 0-based group.
    pub group: usize,
    pub value: i32,
}

/// Per-group sums, either the true aggregate S or an estimate of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateVector(pub Vec<f64>);

impl AggregateVector {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn squared_distance(&self, other: &AggregateVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Draws `n` users i.i.d. from the model. User `i` (1-based) uses its own
/// stream derived from `(seed, i)`.
pub fn sample_population(model: &PopulationModel, n: usize, seed: u64) -> Vec<UserRecord> {
    let group_dist = WeightedIndex::new(model.theta()).expect("validated theta");
    let value_dists: Vec<_> = model
        .rows()
        .iter()
        .map(|row| WeightedIndex::new(row).expect("validated row"))
        .collect();
    let alphabet = model.alphabet();
    (1..=n as u64)
        .map(|index| {
            let mut rng = rng::stream(seed, &[domain::POPULATION, index]);
            let group = group_dist.sample(&mut rng);
            let value = alphabet.value(value_dists[group].sample(&mut rng));
            UserRecord { index, group, value }
        })
        .collect()
}

pub fn true_aggregate(population: &[UserRecord], k: usize) -> Result<AggregateVector> {
    let mut sums = vec![0i64; k];
    for user in population {
        let slot = sums
            .get_mut(user.group)
            .ok_or(Error::GroupOutOfRange { group: user.group, k })?;
        *slot += user.value as i64;
    }
    Ok(AggregateVector(sums.into_iter().map(|s| s as f64).collect()))
}
