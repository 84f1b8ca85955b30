use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use pmga::population::ModelSpec;
use pmga::{Error, PopulationModel};

/// On-disk scenario: a model, per-scheme parameter blocks keyed by scheme
/// name, and experiment settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub model: ModelSpec,
    #[serde(default)]
    pub schemes: BTreeMap<String, Value>,
    #[serde(default)]
    pub experiment: ExperimentBlock,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub n: Option<usize>,
    pub budget: Option<u64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub epsilon_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: PopulationModel,
    pub schemes: BTreeMap<String, Value>,
    pub experiment: ExperimentBlock,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("scenario: {e}")))?;
        if file.experiment.n.is_some() && file.experiment.budget.is_some() {
            return Err(Error::InvalidConfig(
                "experiment sets both n and budget; give one".into(),
            ));
        }
        Ok(Scenario {
            model: PopulationModel::from_spec(file.model)?,
            schemes: file.schemes,
            experiment: file.experiment,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"model": {"k": 2, "m": 1, "p": [[0.5, 0.5], [0.5, 0.5]], "theta": [0.5, 0.5]}}"#;

    #[test]
    fn minimal_scenario() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.model.k(), 2);
        assert!(s.schemes.is_empty());
        assert!(s.experiment.trials.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        let extra = MINIMAL.replacen('{', r#"{"colour": 1, "#, 1);
        assert!(Scenario::parse(&extra).is_err());
        let nested = r#"{"model": {"k": 2, "m": 1, "p": [[0.5, 0.5], [0.5, 0.5]], "theta": [0.5, 0.5]},
                         "experiment": {"n": 5, "runs": 3}}"#;
        assert!(Scenario::parse(nested).is_err());
    }

    #[test]
    fn row_sum_error_names_row() {
        let bad = r#"{"model": {"k": 2, "m": 1, "p": [[0.5, 0.5], [0.5, 0.6]], "theta": [0.5, 0.5]}}"#;
        let e = Scenario::parse(bad).unwrap_err();
        assert!(e.to_string().contains("row 1"), "{e}");
    }

    #[test]
    fn n_and_budget_exclusive() {
        let both = r#"{"model": {"k": 2, "m": 1, "p": [[0.5, 0.5], [0.5, 0.5]], "theta": [0.5, 0.5]},
                       "experiment": {"n": 5, "budget": 10}}"#;
        assert!(Scenario::parse(both).is_err());
    }
}
