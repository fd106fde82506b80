use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// How a criterion's statistic is compared with its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// `statistic < tolerance`
    Below,
    /// `statistic <= tolerance`
    AtMost,
    /// `statistic > tolerance`
    Above,
}

impl Rule {
    pub fn symbol(self) -> &'static str {
        match self {
            Rule::Below => "<",
            Rule::AtMost => "<=",
            Rule::Above => ">",
        }
    }

    fn holds(self, statistic: f64, tolerance: f64) -> bool {
        match self {
            Rule::Below => statistic < tolerance,
            Rule::AtMost => statistic <= tolerance,
            Rule::Above => statistic > tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: String,
    pub description: String,
    /// The estimate being checked (a mean, a fitted slope, ...).
    pub measured: f64,
    /// Reference value, when the check compares against one.
    pub oracle: Option<f64>,
    /// The number compared with `tolerance` (a z-score, a distance, ...).
    pub statistic: f64,
    pub rule: Rule,
    pub tolerance: f64,
    pub passed: bool,
}

impl CriterionResult {
    pub fn new(id: &str, description: impl Into<String>, statistic: f64, rule: Rule, tolerance: f64) -> Self {
        Self {
            id: id.to_string(),
            description: description.into(),
            measured: statistic,
            oracle: None,
            statistic,
            rule,
            tolerance,
            passed: rule.holds(statistic, tolerance),
        }
    }

    /// `|measured - oracle| / se < n_se`.
    pub fn z_test(id: &str, description: impl Into<String>, measured: f64, se: f64, oracle: f64, n_se: f64) -> Self {
        let z = mitograph::stats::MeanSe { mean: measured, se, sd: f64::NAN, n: 0 }.z_score(oracle);
        Self::new(id, description, z, Rule::Below, n_se).with_values(measured, Some(oracle))
    }

    /// `|measured - oracle| / |oracle| < rel`.
    pub fn relative(id: &str, description: impl Into<String>, measured: f64, oracle: f64, rel: f64) -> Self {
        let stat = ((measured - oracle) / oracle).abs();
        Self::new(id, description, stat, Rule::Below, rel).with_values(measured, Some(oracle))
    }

    pub fn with_values(mut self, measured: f64, oracle: Option<f64>) -> Self {
        self.measured = measured;
        self.oracle = oracle;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub criteria: Vec<CriterionResult>,
    pub artifacts: Vec<String>,
    pub passed: bool,
}
