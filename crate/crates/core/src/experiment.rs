//! Monte Carlo harness and fixed-budget comparison of the two schemes.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::population::{sample_population, true_aggregate, PopulationModel};
use crate::rng::{self, domain};
use crate::scheme::{AggregationScheme, SchemeRegistry};
use crate::wire::{qa_bits_per_user, rg_bits_per_user};

pub const THREADS_ENV: &str = "PMGA_THREADS";

/// Worker count: `PMGA_THREADS` if set to a positive integer, otherwise all cores.
pub fn configured_threads() -> usize {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                log::warn!("ignoring {THREADS_ENV}={v:?}, expected a positive integer");
                default_threads()
            }
        },
        Err(_) => default_threads(),
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunSize {
    Users(usize),
    /// Total bits; the user count is whatever the scheme's per-user cost allows.
    Budget(u64),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: PopulationModel,
    pub scheme: Arc<dyn AggregationScheme>,
    pub size: RunSize,
    pub trials: usize,
    pub master_seed: u64,
    /// Overrides [`configured_threads`].
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn users(&self) -> Result<usize> {
        match self.size {
            RunSize::Users(0) => Err(Error::InvalidConfig("n must be >= 1".into())),
            RunSize::Users(n) => Ok(n),
            RunSize::Budget(b) => affordable_users(b, self.scheme.bits_per_user(self.model.k())),
        }
    }
}

/// floor(b / bits_per_user), warning when the division is inexact.
pub fn affordable_users(b: u64, bits_per_user: u32) -> Result<usize> {
    let n = b / bits_per_user as u64;
    if n == 0 {
        return Err(Error::BudgetTooSmall {
            budget: b,
            bits_per_user,
        });
    }
    if !b.is_multiple_of(bits_per_user as u64) {
        log::warn!("budget {b} is not a multiple of {bits_per_user} bits/user; using n = {n}");
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub scheme: String,
    pub parameters: BTreeMap<String, f64>,
    pub epsilon: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub n_used: usize,
    pub bits_per_user: u32,
    pub total_bits: u64,
    pub empirical_relative_mse: f64,
    pub standard_error: f64,
    pub theory_relative_mse: f64,
    /// |empirical - theory| <= 3 standard errors.
    pub theory_agrees: bool,
    /// Per-group mean of S_hat - S.
    pub empirical_bias: Vec<f64>,
    pub bias_se: Vec<f64>,
    /// Per-group mean of S_hat, comparable with `expected_aggregate`.
    pub mean_estimate: Vec<f64>,
    pub mean_estimate_se: Vec<f64>,
    /// n theta_g E[V | G = g].
    pub expected_aggregate: Vec<f64>,
}

/// Sample mean and standard error (sample stddev / sqrt(len)), two-pass.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

struct TrialOutcome {
    relative_error: f64,
    estimate: Vec<f64>,
    truth: Vec<f64>,
}

/// Runs `trials` independent trials. Trial t draws a fresh population and runs
/// the full protocol under the seed derived from (master_seed, t), so the
/// result does not depend on the thread count.
pub fn run_trials(config: &ExperimentConfig) -> Result<TrialSummary> {
    if config.trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let n = config.users()?;
    let model = &config.model;
    let scheme = config.scheme.as_ref();
    let k = model.k();
    let bits = scheme.bits_per_user(k);
    let total_bits = n as u64 * bits as u64;

    let threads = config.threads.unwrap_or_else(configured_threads);
    let outcomes: Vec<TrialOutcome> = with_pool(threads, || {
        (0..config.trials as u64)
            .into_par_iter()
            .map(|t| {
                let seed = rng::derive_seed(config.master_seed, &[domain::TRIAL, t]);
                let population = sample_population(model, n, seed);
                let truth = true_aggregate(&population, k)?;
                let run = scheme.run_protocol(model, &population, seed)?;
                if run.payload_bits != total_bits {
                    return Err(Error::Internal(format!(
                        "payload of {} bits, expected {total_bits}",
                        run.payload_bits
                    )));
                }
                Ok(TrialOutcome {
                    relative_error: run.estimate.squared_distance(&truth) / (n as f64 * n as f64),
                    estimate: run.estimate.0,
                    truth: truth.0,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let errors: Vec<f64> = outcomes.iter().map(|o| o.relative_error).collect();
    let (mse, se) = mean_and_se(&errors);
    let per_group = |f: &dyn Fn(&TrialOutcome, usize) -> f64| -> (Vec<f64>, Vec<f64>) {
        (0..k)
            .map(|g| mean_and_se(&outcomes.iter().map(|o| f(o, g)).collect::<Vec<_>>()))
            .unzip()
    };
    let (bias, bias_se) = per_group(&|o, g| o.estimate[g] - o.truth[g]);
    let (mean_estimate, mean_estimate_se) = per_group(&|o, g| o.estimate[g]);
    let theory = scheme.theory_relative_mse(model, n)?;

    Ok(TrialSummary {
        scheme: scheme.name().to_string(),
        parameters: scheme
            .parameters()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        epsilon: scheme.epsilon(model),
        trials: config.trials,
        master_seed: config.master_seed,
        n_used: n,
        bits_per_user: bits,
        total_bits,
        empirical_relative_mse: mse,
        standard_error: se,
        theory_relative_mse: theory,
        theory_agrees: (mse - theory).abs() <= 3.0 * se,
        empirical_bias: bias,
        bias_se,
        mean_estimate,
        mean_estimate_se,
        expected_aggregate: model.expected_aggregate(n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BudgetSplit {
    pub n_qa: usize,
    pub n_rg: usize,
    pub qa_bits_per_user: u32,
    pub rg_bits_per_user: u32,
}

/// Users each scheme can afford under a total budget of `b` bits, using the
/// integer per-user wire cost. Warns when a division is inexact.
pub fn budget_users(b: u64, m: u32, k: usize) -> Result<BudgetSplit> {
    let qa = qa_bits_per_user(m);
    let rg = rg_bits_per_user(k, m);
    if b < rg.max(qa) as u64 {
        return Err(Error::BudgetTooSmall {
            budget: b,
            bits_per_user: rg.max(qa),
        });
    }
    for (name, bits) in [("qa", qa), ("rg", rg)] {
        if !b.is_multiple_of(bits as u64) {
            log::warn!("budget {b} is not a multiple of {name}'s {bits} bits/user; rounding users down");
        }
    }
    Ok(BudgetSplit {
        n_qa: (b / qa as u64) as usize,
        n_rg: (b / rg as u64) as usize,
        qa_bits_per_user: qa,
        rg_bits_per_user: rg,
    })
}

/// 40 log-spaced points from 0.05 to 8.
pub fn default_epsilon_grid() -> Vec<f64> {
    log_grid(0.05, 8.0, 40)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| match i {
            0 => lo,
            i if i + 1 == points => hi,
            i => (a + (b - a) * i as f64 / (points - 1) as f64).exp(),
        })
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("epsilon grid is empty".into()));
    }
    if let Some(e) = grid.iter().find(|e| e.is_nan() || **e <= 0.0 || e.is_infinite()) {
        return Err(Error::InvalidConfig(format!(
            "epsilon grid entry {e} is not a positive number"
        )));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(format!(
            "epsilon grid is not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub epsilon: f64,
    pub lambda_qa: f64,
    pub lambda_gr: f64,
    pub lambda_vl: f64,
    pub e_qa_theory: f64,
    pub e_rg_theory: f64,
    pub e_qa_empirical: Option<f64>,
    pub e_qa_se: Option<f64>,
    pub e_rg_empirical: Option<f64>,
    pub e_rg_se: Option<f64>,
    pub n_qa: usize,
    pub n_rg: usize,
    pub b: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
}

pub const CURVE_CSV_VERSION: &str = "# pmga compare v1";
pub const CURVE_COLUMNS: [&str; 13] = [
    "epsilon",
    "lambda_qa",
    "lambda_gr",
    "lambda_vl",
    "e_qa_theory",
    "e_rg_theory",
    "e_qa_empirical",
    "e_qa_se",
    "e_rg_empirical",
    "e_rg_se",
    "n_qa",
    "n_rg",
    "b",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl CurveTable {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{CURVE_CSV_VERSION}")?;
        writeln!(out, "{}", CURVE_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epsilon,
                r.lambda_qa,
                r.lambda_gr,
                r.lambda_vl,
                r.e_qa_theory,
                r.e_rg_theory,
                opt(r.e_qa_empirical),
                opt(r.e_qa_se),
                opt(r.e_rg_empirical),
                opt(r.e_rg_se),
                r.n_qa,
                r.n_rg,
                r.b
            )?;
        }
        Ok(())
    }
}

/// Monte Carlo settings for the empirical columns of [`compare_curves`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmpiricalSettings {
    pub trials: usize,
    pub master_seed: u64,
    pub threads: Option<usize>,
}

/// For every epsilon, the smallest-lambda Q&A instance and the optimal RG
/// instance meeting it, with their errors at total budget `b`.
pub fn compare_curves(
    model: &PopulationModel,
    b: u64,
    grid: &[f64],
    empirical: Option<EmpiricalSettings>,
) -> Result<CurveTable> {
    check_grid(grid)?;
    let split = budget_users(b, model.m(), model.k())?;
    let registry = SchemeRegistry::builtin();
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &eps) in grid.iter().enumerate() {
        let qa: Arc<dyn AggregationScheme> = registry.calibrate("qa", model, eps)?.into();
        let rg: Arc<dyn AggregationScheme> = registry.calibrate("rg", model, eps)?.into();
        let param = |s: &dyn AggregationScheme, name: &str| {
            s.parameters()
                .into_iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| v)
                .unwrap_or(f64::NAN)
        };
        let mut row = CurveRow {
            epsilon: eps,
            lambda_qa: param(qa.as_ref(), "lambda"),
            lambda_gr: param(rg.as_ref(), "lambda_gr"),
            lambda_vl: param(rg.as_ref(), "lambda_vl"),
            e_qa_theory: qa.theory_relative_mse(model, split.n_qa)?,
            e_rg_theory: rg.theory_relative_mse(model, split.n_rg)?,
            e_qa_empirical: None,
            e_qa_se: None,
            e_rg_empirical: None,
            e_rg_se: None,
            n_qa: split.n_qa,
            n_rg: split.n_rg,
            b,
        };
        if let Some(s) = empirical {
            for (slot, scheme, n) in [(0u64, qa, split.n_qa), (1, rg, split.n_rg)] {
                let summary = run_trials(&ExperimentConfig {
                    model: model.clone(),
                    scheme,
                    size: RunSize::Users(n),
                    trials: s.trials,
                    master_seed: rng::derive_seed(s.master_seed, &[i as u64, slot]),
                    threads: s.threads,
                })?;
                let (e, se) = (Some(summary.empirical_relative_mse), Some(summary.standard_error));
                if slot == 0 {
                    (row.e_qa_empirical, row.e_qa_se) = (e, se);
                } else {
                    (row.e_rg_empirical, row.e_rg_se) = (e, se);
                }
            }
        }
        rows.push(row);
    }
    Ok(CurveTable { rows })
}

/// Regime endpoints read off a curve table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "crossover", rename_all = "lowercase")]
pub enum Crossover {
    /// Q&A has lower error at every grid epsilon up to `epsilon_h`, and higher
    /// error at every grid epsilon from `epsilon_l` on, if such a point exists.
    Found { epsilon_h: f64, epsilon_l: Option<f64> },
    /// Q&A never wins at the low end of the grid; `gap` is E_QA - E_RG at the
    /// smallest grid epsilon.
    None { gap: f64 },
}

pub fn find_crossover(table: &CurveTable) -> Result<Crossover> {
    let rows = &table.rows;
    if rows.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "crossover needs at least 3 grid points, got {}",
            rows.len()
        )));
    }
    check_grid(&rows.iter().map(|r| r.epsilon).collect::<Vec<_>>())?;
    let diff: Vec<f64> = rows.iter().map(|r| r.e_qa_theory - r.e_rg_theory).collect();
    let low = diff.iter().take_while(|&&d| d < 0.0).count();
    if low == 0 {
        return Ok(Crossover::None { gap: diff[0] });
    }
    let high = diff.iter().rev().take_while(|&&d| d > 0.0).count();
    Ok(Crossover::Found {
        epsilon_h: rows[low - 1].epsilon,
        epsilon_l: (high > 0).then(|| rows[rows.len() - high].epsilon),
    })
}
