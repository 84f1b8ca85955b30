use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use pmga::audit::{audit_qa, audited_epsilon, privacy_region, rg_channel, write_region_csv};
use pmga::experiment::{
    affordable_users, compare_curves, default_epsilon_grid, find_crossover, run_trials, Crossover, CurveTable,
    EmpiricalSettings, ExperimentConfig, RunSize, TrialSummary,
};
use pmga::population::extreme_probs;
use pmga::population::ModelSpec;
use pmga::qa::{max_lambda, min_lambda, LambdaBound};
use pmga::rg::optimal_rg_params;
use pmga::scheme::{QaScheme, RgScheme};
use pmga::{AggregationScheme, Error, PopulationModel, QaParams, RgParams, SchemeRegistry};

use crate::scenario::Scenario;

pub const DEFAULT_TRIALS: usize = 10_000;
pub const AUDIT_TOLERANCE: f64 = 1e-9;
const AUDIT_QUERY_LIMIT: f64 = 1e6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scheme: Option<String>,
    pub epsilon: Option<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub budget: Option<u64>,
}

fn json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn params_map(scheme: &dyn AggregationScheme) -> BTreeMap<String, f64> {
    scheme
        .parameters()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

fn selected_names(scenario: &Scenario, registry: &SchemeRegistry, o: &Overrides) -> CliResult<Vec<String>> {
    if let Some(name) = &o.scheme {
        registry.get(name)?;
        return Ok(vec![name.clone()]);
    }
    if !scenario.schemes.is_empty() {
        return Ok(scenario.schemes.keys().cloned().collect());
    }
    if o.epsilon.is_some() {
        return Ok(registry.names().map(String::from).collect());
    }
    Err(CliError::Config(
        "scenario has no scheme blocks; add one under \"schemes\" or pass --epsilon".into(),
    ))
}

/// Schemes from explicit parameters, or calibrated to --epsilon when given.
fn build_schemes(scenario: &Scenario, o: &Overrides) -> CliResult<Vec<Arc<dyn AggregationScheme>>> {
    let registry = SchemeRegistry::builtin();
    selected_names(scenario, &registry, o)?
        .iter()
        .map(|name| {
            let scheme = match o.epsilon {
                Some(eps) => registry.calibrate(name, &scenario.model, eps)?,
                None => {
                    let params = scenario.schemes.get(name).ok_or_else(|| {
                        CliError::Config(format!("no parameters for scheme `{name}`; add them or pass --epsilon"))
                    })?;
                    registry.build(name, params, &scenario.model)?
                }
            };
            Ok(Arc::from(scheme))
        })
        .collect()
}

fn run_size(scenario: &Scenario, o: &Overrides) -> Option<RunSize> {
    match (o.budget.or(scenario.experiment.budget), scenario.experiment.n) {
        (Some(b), _) => Some(RunSize::Budget(b)),
        (None, Some(n)) => Some(RunSize::Users(n)),
        (None, None) => None,
    }
}

fn users_for(scheme: &dyn AggregationScheme, scenario: &Scenario, size: RunSize) -> CliResult<usize> {
    match size {
        RunSize::Users(0) => Err(CliError::Config("n must be >= 1".into())),
        RunSize::Users(n) => Ok(n),
        RunSize::Budget(b) => Ok(affordable_users(b, scheme.bits_per_user(scenario.model.k()))?),
    }
}

#[derive(Serialize)]
struct TheoryReport {
    scheme: String,
    parameters: BTreeMap<String, f64>,
    epsilon: f64,
    bits_per_user: u32,
    /// Relative MSE times n.
    error_constant: f64,
    n: Option<usize>,
    relative_mse: Option<f64>,
}

#[derive(Serialize)]
struct TheoryOutput {
    schema: &'static str,
    model: ModelSpec,
    reports: Vec<TheoryReport>,
}

pub fn theory(scenario: &Scenario, o: &Overrides) -> CliResult<Vec<u8>> {
    let model = &scenario.model;
    let size = run_size(scenario, o);
    let reports = build_schemes(scenario, o)?
        .iter()
        .map(|s| {
            let n = size.map(|size| users_for(s.as_ref(), scenario, size)).transpose()?;
            Ok(TheoryReport {
                scheme: s.name().to_string(),
                parameters: params_map(s.as_ref()),
                epsilon: s.epsilon(model),
                bits_per_user: s.bits_per_user(model.k()),
                error_constant: s.theory_relative_mse(model, 1)?,
                n,
                relative_mse: n.map(|n| s.theory_relative_mse(model, n)).transpose()?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    json(&TheoryOutput {
        schema: "pmga.theory.v1",
        model: model.to_spec(),
        reports,
    })
}

#[derive(Serialize)]
struct SimulateOutput {
    schema: &'static str,
    summaries: Vec<TrialSummary>,
}

fn joined(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub const SIMULATE_CSV_VERSION: &str = "# pmga simulate v1";

fn summaries_csv(summaries: &[TrialSummary]) -> Vec<u8> {
    let mut s = String::new();
    writeln!(s, "{SIMULATE_CSV_VERSION}").unwrap();
    writeln!(
        s,
        "scheme,parameters,epsilon,trials,master_seed,n_used,bits_per_user,total_bits,\
         empirical_relative_mse,standard_error,theory_relative_mse,theory_agrees,\
         empirical_bias,mean_estimate,expected_aggregate"
    )
    .unwrap();
    for r in summaries {
        let params = r
            .parameters
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            params,
            r.epsilon,
            r.trials,
            r.master_seed,
            r.n_used,
            r.bits_per_user,
            r.total_bits,
            r.empirical_relative_mse,
            r.standard_error,
            r.theory_relative_mse,
            r.theory_agrees,
            joined(&r.empirical_bias),
            joined(&r.mean_estimate),
            joined(&r.expected_aggregate)
        )
        .unwrap();
    }
    s.into_bytes()
}

pub fn simulate(scenario: &Scenario, o: &Overrides, csv: bool) -> CliResult<Vec<u8>> {
    let size = run_size(scenario, o)
        .ok_or_else(|| CliError::Config("simulate needs experiment.n, experiment.budget or --budget".into()))?;
    let trials = o.trials.or(scenario.experiment.trials).unwrap_or(DEFAULT_TRIALS);
    let seed = o.seed.or(scenario.experiment.seed).unwrap_or(0);
    let summaries = build_schemes(scenario, o)?
        .into_iter()
        .map(|scheme| {
            let tag = scheme.name().bytes().fold(0u64, |h, b| h.rotate_left(8) ^ b as u64);
            Ok(run_trials(&ExperimentConfig {
                model: scenario.model.clone(),
                size,
                trials,
                master_seed: pmga::rng::derive_seed(seed, &[tag]),
                scheme,
                threads: None,
            })?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    if csv {
        Ok(summaries_csv(&summaries))
    } else {
        json(&SimulateOutput {
            schema: "pmga.simulate.v1",
            summaries,
        })
    }
}

pub struct CompareOutput {
    pub csv: Vec<u8>,
    pub report: Vec<u8>,
    pub summary_line: String,
}

#[derive(Serialize)]
struct CompareReport {
    schema: &'static str,
    b: u64,
    #[serde(flatten)]
    crossover: Crossover,
}

pub fn compare(scenario: &Scenario, o: &Overrides) -> CliResult<CompareOutput> {
    let b = o
        .budget
        .or(scenario.experiment.budget)
        .ok_or_else(|| CliError::Config("compare needs experiment.budget or --budget".into()))?;
    let grid = scenario
        .experiment
        .epsilon_grid
        .clone()
        .unwrap_or_else(default_epsilon_grid);
    let trials = o.trials.or(scenario.experiment.trials).unwrap_or(0);
    let empirical = (trials > 0).then(|| EmpiricalSettings {
        trials,
        master_seed: o.seed.or(scenario.experiment.seed).unwrap_or(0),
        threads: None,
    });
    let table: CurveTable = compare_curves(&scenario.model, b, &grid, empirical)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    let crossover = find_crossover(&table)?;
    let summary_line = match crossover {
        Crossover::Found {
            epsilon_h,
            epsilon_l: Some(l),
        } => {
            format!("crossover: Q&A better up to epsilon {epsilon_h}, RG better from epsilon {l}")
        }
        Crossover::Found {
            epsilon_h,
            epsilon_l: None,
        } => {
            format!("crossover: Q&A better up to epsilon {epsilon_h}; RG never better everywhere above it on this grid")
        }
        Crossover::None { gap } => format!("crossover: none; E_QA - E_RG = {gap} at epsilon {}", grid[0]),
    };
    let report = json(&CompareReport {
        schema: "pmga.compare.v1",
        b,
        crossover,
    })?;
    Ok(CompareOutput {
        csv,
        report,
        summary_line,
    })
}

#[derive(Serialize)]
struct AuditRow {
    scheme: &'static str,
    parameters: BTreeMap<String, f64>,
    audited_epsilon: f64,
    closed_form_epsilon: f64,
    delta: f64,
}

#[derive(Serialize)]
struct AuditOutput {
    schema: &'static str,
    rows: Vec<AuditRow>,
    max_abs_delta: f64,
    tolerance: f64,
    pass: bool,
}

fn audit_row(scheme: &dyn AggregationScheme, model: &PopulationModel, audited: f64) -> AuditRow {
    let closed = scheme.epsilon(model);
    let delta = if audited == closed { 0.0 } else { audited - closed };
    AuditRow {
        scheme: scheme.name(),
        parameters: params_map(scheme),
        audited_epsilon: audited,
        closed_form_epsilon: closed,
        delta,
    }
}

/// Brute-force privacy audit of the configured parameters plus a sweep over
/// each scheme's parameter domain. Returns the report and whether every
/// delta is within tolerance.
pub fn audit(scenario: &Scenario, o: &Overrides) -> CliResult<(Vec<u8>, bool)> {
    let model = &scenario.model;
    let m = model.m();
    let queries = if m == 1 {
        2f64.powi(model.k() as i32)
    } else {
        (2.0 * m as f64).powi(model.k() as i32)
    };
    if queries > AUDIT_QUERY_LIMIT {
        return Err(CliError::Config(format!(
            "audit would enumerate {queries} queries; limit is {AUDIT_QUERY_LIMIT}"
        )));
    }
    let registry = SchemeRegistry::builtin();
    let mut qa: Vec<QaParams> = [0.0, 0.25, 0.5, 0.75, 0.95]
        .iter()
        .map(|f| QaParams::new(f * max_lambda(m), m))
        .collect::<Result<_, _>>()?;
    let mut rg = Vec::new();
    for lg in [0.05, 0.25, 0.5, 0.75, 0.95] {
        for f in [0.0, 0.5, 0.9] {
            rg.push(RgParams::new(lg, f * max_lambda(m), m)?);
        }
    }
    if let Some(params) = scenario.schemes.get("qa") {
        registry.build("qa", params, model)?;
        qa.insert(0, QaParams::new(number(params, "lambda")?, m)?);
    }
    if let Some(params) = scenario.schemes.get("rg") {
        registry.build("rg", params, model)?;
        rg.insert(
            0,
            RgParams::new(number(params, "lambda_gr")?, number(params, "lambda_vl")?, m)?,
        );
    }
    if let Some(eps) = o.epsilon {
        let (hi, lo) = extreme_probs(model);
        qa.insert(0, min_lambda(LambdaBound::Exact(model), eps, m)?);
        rg.insert(0, optimal_rg_params(hi, lo, eps, m, model.k())?);
    }

    let mut rows = Vec::with_capacity(qa.len() + rg.len());
    for params in qa {
        let audited = audit_qa(model, &params);
        rows.push(audit_row(&QaScheme { params }, model, audited));
    }
    for params in rg {
        let audited = audited_epsilon(&rg_channel(model, &params));
        rows.push(audit_row(&RgScheme { params }, model, audited));
    }
    let max_abs_delta = rows.iter().map(|r| r.delta.abs()).fold(0.0, f64::max);
    let pass = max_abs_delta <= AUDIT_TOLERANCE;
    let out = json(&AuditOutput {
        schema: "pmga.audit.v1",
        rows,
        max_abs_delta,
        tolerance: AUDIT_TOLERANCE,
        pass,
    })?;
    Ok((out, pass))
}

fn number(params: &Value, key: &str) -> CliResult<f64> {
    params
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| CliError::Config(format!("scheme parameters lack numeric `{key}`")))
}

pub fn region(epsilons: &[f64], resolution: usize) -> CliResult<Vec<u8>> {
    if resolution == 0 {
        return Err(CliError::Config("resolution must be >= 1".into()));
    }
    if let Some(e) = epsilons.iter().find(|e| e.is_nan() || **e < 0.0) {
        return Err(CliError::Config(format!("epsilon {e} must be >= 0")));
    }
    let mut sorted = epsilons.to_vec();
    sorted.sort_by(f64::total_cmp);
    let regions: Vec<_> = sorted.iter().map(|&e| privacy_region(e, resolution)).collect();
    if let Some(w) = regions.windows(2).find(|w| !w[0].is_subset_of(&w[1])) {
        return Err(CliError::Internal(format!(
            "region for epsilon {} is not contained in the region for {}",
            w[0].epsilon, w[1].epsilon
        )));
    }
    let mut out = Vec::new();
    write_region_csv(&mut out, epsilons, resolution)?;
    Ok(out)
}
