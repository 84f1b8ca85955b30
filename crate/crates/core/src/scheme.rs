//! Aggregation schemes behind a common interface, selectable by name.

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::population::{extreme_probs, second_moment, AggregateVector, PopulationModel, UserRecord};
use crate::qa::{self, LambdaBound, QaAnswer, QaParams};
use crate::rg::{self, RgParams};
use crate::rng::{self, domain};
use crate::wire;

/// What one execution of a scheme over a population produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub estimate: AggregateVector,
    /// Length of the serialized user-to-server payload.
    pub payload_bits: u64,
}

pub trait AggregationScheme: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn bits_per_user(&self, k: usize) -> u32;

    /// Group-privacy level against the worst-case adversary.
    fn epsilon(&self, model: &PopulationModel) -> f64;

    /// Closed-form E[||S_hat - S||^2] / n^2.
    fn theory_relative_mse(&self, model: &PopulationModel, n: usize) -> Result<f64>;

    /// Runs clients, wire encoding and the server estimator. `seed` is the
    /// trial seed; the population must be indexed 1..=n in order.
    fn run_protocol(&self, model: &PopulationModel, population: &[UserRecord], seed: u64) -> Result<ProtocolRun>;

    /// Named parameters for reports.
    fn parameters(&self) -> Vec<(&'static str, f64)>;
}

/// Builds scheme instances either from explicit parameters or by calibrating
/// to a privacy target.
pub trait SchemeFactory: Send + Sync {
    fn name(&self) -> &'static str;

    fn build(&self, params: &Value, model: &PopulationModel) -> Result<Box<dyn AggregationScheme>>;

    /// Lowest-error instance meeting privacy level `epsilon` on `model`.
    fn calibrate(&self, model: &PopulationModel, epsilon: f64) -> Result<Box<dyn AggregationScheme>>;
}

fn check_indices(population: &[UserRecord]) -> Result<()> {
    match population.iter().enumerate().find(|(i, u)| u.index != *i as u64 + 1) {
        Some((i, u)) => Err(Error::InvalidConfig(format!(
            "population entry {i} has index {}, expected {}",
            u.index,
            i + 1
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct QaScheme {
    pub params: QaParams,
}

impl AggregationScheme for QaScheme {
    fn name(&self) -> &'static str {
        "qa"
    }

    fn bits_per_user(&self, _k: usize) -> u32 {
        wire::qa_bits_per_user(self.params.alphabet().m())
    }

    fn epsilon(&self, model: &PopulationModel) -> f64 {
        qa::epsilon_qa(model, &self.params)
    }

    fn theory_relative_mse(&self, model: &PopulationModel, n: usize) -> Result<f64> {
        qa::relative_mse_theory_qa(model.m(), model.k(), self.params.lambda(), second_moment(model), n)
    }

    fn run_protocol(&self, model: &PopulationModel, population: &[UserRecord], seed: u64) -> Result<ProtocolRun> {
        check_indices(population)?;
        let (k, alphabet) = (model.k(), model.alphabet());
        let answers = population
            .iter()
            .map(|u| {
                let query = qa::derive_query(seed, u.index, k, alphabet);
                let mut rng = rng::stream(seed, &[domain::MECHANISM, u.index]);
                let v = qa::randomize_value(u.value, &self.params, &mut rng)?;
                Ok(QaAnswer {
                    user_index: u.index,
                    column: qa::answer(&query, u.group, v)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let packed = wire::encode_qa_answers(&answers, alphabet.m())?;

        let received = wire::decode_qa_answers(&packed, alphabet.m(), population.len())?;
        let columns = received
            .iter()
            .map(|a| qa::decode(&qa::derive_query(seed, a.user_index, k, alphabet), a.column))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProtocolRun {
            estimate: qa::estimate(&columns, k, &self.params)?,
            payload_bits: packed.bits,
        })
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        vec![("lambda", self.params.lambda())]
    }
}

#[derive(Debug, Clone)]
pub struct RgScheme {
    pub params: RgParams,
}

impl AggregationScheme for RgScheme {
    fn name(&self) -> &'static str {
        "rg"
    }

    fn bits_per_user(&self, k: usize) -> u32 {
        wire::rg_bits_per_user(k, self.params.alphabet().m())
    }

    fn epsilon(&self, model: &PopulationModel) -> f64 {
        let (hi, lo) = extreme_probs(model);
        rg::epsilon_rg(hi, lo, &self.params, model.k())
    }

    fn theory_relative_mse(&self, model: &PopulationModel, n: usize) -> Result<f64> {
        rg::relative_mse_theory_rg(&self.params, second_moment(model), n)
    }

    fn run_protocol(&self, model: &PopulationModel, population: &[UserRecord], seed: u64) -> Result<ProtocolRun> {
        check_indices(population)?;
        let (k, m) = (model.k(), model.m());
        let answers = population
            .iter()
            .map(|u| {
                let mut rng = rng::stream(seed, &[domain::MECHANISM, u.index]);
                rg::rg_randomize(u.index, u.group, u.value, k, &self.params, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let packed = wire::encode_rg_answers(&answers, k, m)?;
        let received = wire::decode_rg_answers(&packed, k, m, population.len())?;
        Ok(ProtocolRun {
            estimate: rg::rg_estimate(&received, &self.params, k)?,
            payload_bits: packed.bits,
        })
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("lambda_gr", self.params.lambda_gr()),
            ("lambda_vl", self.params.lambda_vl()),
        ]
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QaConfig {
    lambda: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RgConfig {
    lambda_gr: f64,
    lambda_vl: f64,
}

fn parse<T: for<'de> Deserialize<'de>>(scheme: &str, params: &Value) -> Result<T> {
    serde_json::from_value(params.clone()).map_err(|e| Error::InvalidConfig(format!("{scheme} parameters: {e}")))
}

struct QaFactory;

impl SchemeFactory for QaFactory {
    fn name(&self) -> &'static str {
        "qa"
    }

    fn build(&self, params: &Value, model: &PopulationModel) -> Result<Box<dyn AggregationScheme>> {
        let c: QaConfig = parse("qa", params)?;
        Ok(Box::new(QaScheme {
            params: QaParams::new(c.lambda, model.m())?,
        }))
    }

    fn calibrate(&self, model: &PopulationModel, epsilon: f64) -> Result<Box<dyn AggregationScheme>> {
        let params = qa::min_lambda(LambdaBound::Exact(model), epsilon, model.m())?;
        Ok(Box::new(QaScheme { params }))
    }
}

struct RgFactory;

impl SchemeFactory for RgFactory {
    fn name(&self) -> &'static str {
        "rg"
    }

    fn build(&self, params: &Value, model: &PopulationModel) -> Result<Box<dyn AggregationScheme>> {
        let c: RgConfig = parse("rg", params)?;
        Ok(Box::new(RgScheme {
            params: RgParams::new(c.lambda_gr, c.lambda_vl, model.m())?,
        }))
    }

    fn calibrate(&self, model: &PopulationModel, epsilon: f64) -> Result<Box<dyn AggregationScheme>> {
        let (hi, lo) = extreme_probs(model);
        let params = rg::optimal_rg_params(hi, lo, epsilon, model.m(), model.k())?;
        Ok(Box::new(RgScheme { params }))
    }
}

pub struct SchemeRegistry {
    factories: BTreeMap<&'static str, Box<dyn SchemeFactory>>,
}

impl SchemeRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding "qa" and "rg".
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(QaFactory));
        r.register(Box::new(RgFactory));
        r
    }

    /// Adds or replaces the factory under its name.
    pub fn register(&mut self, factory: Box<dyn SchemeFactory>) {
        self.factories.insert(factory.name(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<&dyn SchemeFactory> {
        self.factories
            .get(name)
            .map(|f| f.as_ref())
            .ok_or_else(|| Error::UnknownScheme(name.to_string()))
    }

    pub fn build(&self, name: &str, params: &Value, model: &PopulationModel) -> Result<Box<dyn AggregationScheme>> {
        self.get(name)?.build(params, model)
    }

    pub fn calibrate(&self, name: &str, model: &PopulationModel, epsilon: f64) -> Result<Box<dyn AggregationScheme>> {
        self.get(name)?.calibrate(model, epsilon)
    }
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
