//! Private multi-group aggregation.
//!
//! Users belong to one of k groups and hold a value from {±1, ..., ±m}. A
//! server wants the per-group sums while users want their group membership
//! kept private. Two local randomizers are provided: the query-and-answer
//! scheme ([`qa`]) and randomized grouping ([`rg`]).

pub mod audit;
pub mod error;
pub mod experiment;
pub mod population;
pub mod qa;
pub mod rg;
pub mod rng;
pub mod scheme;
pub mod wire;

pub use error::{Error, Result};
pub use population::{Alphabet, PopulationModel, UserRecord};
pub use qa::{QaParams, QueryMatrix};
pub use rg::RgParams;
pub use scheme::{AggregationScheme, SchemeRegistry};
