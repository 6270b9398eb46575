//! Convergence-rate experiments: scenario presets, seeded replicates over a
//! sample-size grid, log-log slopes, and report files.

mod report;
mod runner;
mod scenario;
mod slope;

pub use report::{
    emit_csv, emit_json, emit_svg, means_from_long, means_from_summary, read_long_csv, read_summary_csv, render_svg, slopes_from_means,
    write_long_csv, write_outputs, write_summary_csv, LongRow, MeanKey, SummaryRow, LONG_HEADER, SUMMARY_HEADER,
};
pub use runner::{
    derive_seed, run_one, run_replicates, run_scenario, splitmix64, CellSummary, HellingerOptions, MetricSummary, Provenance, RateReport,
    ReplicateResult, RunOptions, HELLINGER_METRIC,
};
pub use scenario::{make_scenario, make_scenario_dim, supported_cases, Case, ScenarioSpec, DEFAULT_DIM};
pub use slope::{fit_slope, SlopeFit};

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::estimation::FitOptions;
use crate::losses::TheoremId;

/// Named grid and replicate count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Five log-spaced sizes in `[10³, 10⁵]`, 20 replicates.
    Full,
    /// `{10³, 3·10³, 10⁴}`, 10 replicates.
    Ci,
}

impl Profile {
    pub fn grid(&self) -> Vec<usize> {
        match self {
            Profile::Full => (0..5).map(|k| 10f64.powf(3.0 + 0.5 * k as f64).round() as usize).collect(),
            Profile::Ci => vec![1000, 3000, 10_000],
        }
    }

    pub fn reps(&self) -> usize {
        match self {
            Profile::Full => 20,
            Profile::Ci => 10,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "default" => Ok(Profile::Full),
            "ci" => Ok(Profile::Ci),
            other => Err(param(format!("unknown profile {other:?}"))),
        }
    }
}

/// Experiment config as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<TheoremId>,
    pub case: Option<Case>,
    pub grid: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    /// Overrides the frozen component's variance (Gaussian) or degrees of freedom (Student-t).
    pub nu0: Option<f64>,
    pub fit: FitOptions,
    pub hellinger: HellingerOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { scenario: None, case: None, grid: None, reps: None, seed: None, nu0: None, fit: FitOptions::default(), hellinger: HellingerOptions::default() }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.fit.validate()?;
        Ok(c)
    }
}

impl ScenarioSpec {
    pub fn with_nu0(mut self, nu0: f64) -> Result<Self> {
        self.g0.nu = nu0;
        self.base.validate_params(&self.g0)?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles() {
        assert_eq!(Profile::Full.grid(), vec![1000, 3162, 10_000, 31_623, 100_000]);
        assert_eq!(Profile::Ci.grid(), vec![1000, 3000, 10_000]);
        assert_eq!((Profile::Full.reps(), Profile::Ci.reps()), (20, 10));
    }

    #[test]
    fn config_json() {
        let c = ExperimentConfig::from_json(r#"{"scenario":"T4","case":"drift_ii","grid":[1000,2000,4000],"reps":3,"seed":7,"fit":{"max_em_iters":20},"hellinger":{"enabled":true,"mc_n":2000}}"#).unwrap();
        assert_eq!(c.scenario, Some(TheoremId::T4));
        assert_eq!(c.case, Some(Case::DriftIi));
        assert_eq!(c.fit.max_em_iters, 20);
        assert!(c.hellinger.enabled);
        assert!(ExperimentConfig::from_json(r#"{"bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"fit":{"em_tol":-1}}"#).is_err());
    }

    #[test]
    fn nu0_override() {
        let s = make_scenario(TheoremId::T8, Case::FixedLambda).unwrap().with_nu0(0.5).unwrap();
        assert_eq!(s.g0.nu, 0.5);
        assert!(make_scenario(TheoremId::T8, Case::FixedLambda).unwrap().with_nu0(-1.0).is_err());
    }
}
