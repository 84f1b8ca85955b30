//! Randomized-Group scheme: the non-interactive baseline.
//!
//! A user reports their true group with probability 1 - lambda_gr. On a
//! truthful group report the value goes through k-ary randomized response
//! with parameter lambda_vl; on a false report the value is uniform over the
//! alphabet so that liars contribute zero-mean noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{AggregateVector, Alphabet};
use crate::qa::{k_ary_response, max_lambda};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgParams {
    lambda_gr: f64,
    lambda_vl: f64,
    alphabet: Alphabet,
}

impl RgParams {
    pub fn new(lambda_gr: f64, lambda_vl: f64, m: u32) -> Result<Self> {
        let alphabet = Alphabet::new(m)?;
        if !(lambda_gr > 0.0 && lambda_gr < 1.0) {
            return Err(Error::ParameterDomain {
                name: "lambda_gr",
                value: lambda_gr,
                domain: "(0, 1)".into(),
            });
        }
        let hi = max_lambda(m);
        if !(lambda_vl >= 0.0 && lambda_vl <= hi) {
            return Err(Error::ParameterDomain {
                name: "lambda_vl",
                value: lambda_vl,
                domain: format!("[0, {hi}]"),
            });
        }
        Ok(Self {
            lambda_gr,
            lambda_vl,
            alphabet,
        })
    }

    pub fn lambda_gr(&self) -> f64 {
        self.lambda_gr
    }

    pub fn lambda_vl(&self) -> f64 {
        self.lambda_vl
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    /// 2m(1 - lambda_vl) - 1.
    fn beta2(&self) -> f64 {
        self.alphabet.size() as f64 * (1.0 - self.lambda_vl) - 1.0
    }

    /// Unbiasing factor (2m-1) / ((1 - lambda_gr)(2m(1 - lambda_vl) - 1)).
    pub fn scale(&self) -> f64 {
        (self.alphabet.size() as f64 - 1.0) / ((1.0 - self.lambda_gr) * self.beta2())
    }
}

/// A reported (group, value) pair, group 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgAnswer {
    pub user_index: u64,
    pub group: usize,
    pub value: i32,
}

pub fn rg_randomize<R: Rng + ?Sized>(
    user_index: u64,
    group: usize,
    value: i32,
    k: usize,
    params: &RgParams,
    rng: &mut R,
) -> Result<RgAnswer> {
    if group >= k {
        return Err(Error::GroupOutOfRange { group, k });
    }
    let alphabet = params.alphabet;
    let own = alphabet.index_of(value).ok_or(Error::ValueNotInAlphabet(value))?;
    let reported = k_ary_response(group, k, params.lambda_gr, rng);
    let v = if reported == group {
        k_ary_response(own, alphabet.size(), params.lambda_vl, rng)
    } else {
        rng.gen_range(0..alphabet.size())
    };
    Ok(RgAnswer {
        user_index,
        group: reported,
        value: alphabet.value(v),
    })
}

pub fn rg_estimate(answers: &[RgAnswer], params: &RgParams, k: usize) -> Result<AggregateVector> {
    let mut sums = vec![0i64; k];
    for a in answers {
        let slot = sums
            .get_mut(a.group)
            .ok_or(Error::GroupOutOfRange { group: a.group, k })?;
        *slot += a.value as i64;
    }
    let scale = params.scale();
    Ok(AggregateVector(sums.into_iter().map(|s| scale * s as f64).collect()))
}

/// beta_1 = 2m(k-1)(1 - lambda_gr) / ((2m-1) lambda_gr).
fn beta1(params: &RgParams, k: usize) -> f64 {
    let w = params.alphabet.size() as f64;
    w * (k as f64 - 1.0) * (1.0 - params.lambda_gr) / ((w - 1.0) * params.lambda_gr)
}

/// Group-privacy level of the RG scheme (natural log).
pub fn epsilon_rg(p_max: f64, p_min: f64, params: &RgParams, k: usize) -> f64 {
    let b1 = beta1(params, k);
    let b2 = params.beta2();
    let up = b1 * (p_max * b2 + params.lambda_vl);
    let down = 1.0 / (b1 * (p_min * b2 + params.lambda_vl));
    up.max(down).ln().max(0.0)
}

/// Error-minimizing (lambda_gr, lambda_vl) subject to epsilon_rg <= epsilon_target.
///
/// When e^{2 eps} < p_max / p_min both privacy constraints bind and value
/// randomization is required; otherwise lambda_vl = 0 and only the group is
/// randomized.
pub fn optimal_rg_params(p_max: f64, p_min: f64, epsilon_target: f64, m: u32, k: usize) -> Result<RgParams> {
    if epsilon_target.is_nan() || epsilon_target <= 0.0 {
        return Err(Error::ParameterDomain {
            name: "epsilon",
            value: epsilon_target,
            domain: "(0, inf)".into(),
        });
    }
    let w = 2.0 * m as f64;
    let kk = k as f64 - 1.0;
    let e = epsilon_target.exp();
    let e2 = e * e;
    let uniform = (p_max - 1.0 / w).abs() <= f64::EPSILON;
    let (lambda_gr, lambda_vl) = if e2 < p_max / p_min && !uniform {
        let denom = (1.0 - w * p_min) * e2 + w * p_max - 1.0;
        let lambda_vl = (w - 1.0) * (p_max - p_min * e2) / denom;
        let spread = w * kk * (p_max - p_min) * e;
        (spread / (spread + denom), lambda_vl)
    } else {
        (w * kk * p_max / (w * kk * p_max + e), 0.0)
    };
    RgParams::new(lambda_gr, lambda_vl, m)
}

/// beta_3, so that the relative MSE is beta_3 / n.
pub fn rg_beta3(params: &RgParams, second_moment: f64) -> f64 {
    let w = params.alphabet.size() as f64;
    let m = w / 2.0;
    let lg = params.lambda_gr;
    let lv = params.lambda_vl;
    let b2 = params.beta2();
    second_moment * (params.scale() - 1.0)
        + (w * w - 1.0) * (m + 1.0) * (w * lv * (1.0 - lg) + lg * (w - 1.0)) / (6.0 * (1.0 - lg) * (1.0 - lg) * b2 * b2)
}

pub fn relative_mse_theory_rg(params: &RgParams, second_moment: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    Ok(rg_beta3(params, second_moment) / n as f64)
}
