use std::path::{Path, PathBuf};

use mitograph::fde::MassGrid;
use mitograph::{validate_params, ModelParams, SplitKernel};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CountsLaw,
    TotalMassMoments,
    InvariantDensity,
    TailAsymptotics,
    SmallMassBound,
    FdeSolve,
    KppFront,
    TravelingWave,
    OccupationLaw,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::CountsLaw,
        ExperimentKind::TotalMassMoments,
        ExperimentKind::InvariantDensity,
        ExperimentKind::TailAsymptotics,
        ExperimentKind::SmallMassBound,
        ExperimentKind::FdeSolve,
        ExperimentKind::KppFront,
        ExperimentKind::TravelingWave,
        ExperimentKind::OccupationLaw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::CountsLaw => "counts-law",
            ExperimentKind::TotalMassMoments => "total-mass-moments",
            ExperimentKind::InvariantDensity => "invariant-density",
            ExperimentKind::TailAsymptotics => "tail-asymptotics",
            ExperimentKind::SmallMassBound => "small-mass-bound",
            ExperimentKind::FdeSolve => "fde-solve",
            ExperimentKind::KppFront => "kpp-front",
            ExperimentKind::TravelingWave => "traveling-wave",
            ExperimentKind::OccupationLaw => "occupation-law",
        }
    }

    fn needs_replicates(self) -> bool {
        !matches!(self, ExperimentKind::FdeSolve | ExperimentKind::TravelingWave)
    }

    fn needs_horizon(self) -> bool {
        matches!(
            self,
            ExperimentKind::CountsLaw
                | ExperimentKind::TotalMassMoments
                | ExperimentKind::FdeSolve
                | ExperimentKind::KppFront
                | ExperimentKind::OccupationLaw
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub m_max: f64,
    pub points: usize,
}

/// One experiment, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub params: ModelParams,
    #[serde(default = "default_kernel")]
    pub kernel: SplitKernel,
    /// Replicates, or sample count for the invariant-law experiments.
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Time horizon.
    #[serde(default)]
    pub t: Option<f64>,
    /// Output times; defaults depend on the experiment.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default = "default_m0")]
    pub m0: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Ball center for the occupation experiment (origin by default).
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub radius: Option<f64>,
    /// Small-mass grid in units of `v / beta`.
    #[serde(default)]
    pub mass_grid: Option<Vec<f64>>,
    /// Live-particle cap per replicate.
    #[serde(default)]
    pub cap: Option<usize>,
}

fn default_kernel() -> SplitKernel {
    SplitKernel::AtomicHalf
}

fn default_m0() -> f64 {
    1.0
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn replicates(&self) -> usize {
        self.replicates.unwrap_or(0)
    }

    pub fn horizon(&self) -> f64 {
        self.t.unwrap_or(0.0)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn cap(&self) -> usize {
        self.cap.unwrap_or(mitograph::population::DEFAULT_CAP)
    }

    /// Every check that can fail before any simulation starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let kind = self.kind.name();
        validate_params(&self.params).map_err(|e| config_error(e.to_string()))?;
        self.kernel.validate().map_err(|e| config_error(e.to_string()))?;
        if !(self.m0 > 0.0 && self.m0.is_finite()) {
            return Err(config_error(format!("m0 must be positive, got {}", self.m0)));
        }
        if self.kind.needs_replicates() && self.replicates.is_none_or(|r| r == 0) {
            return Err(config_error(format!("{kind} requires replicates >= 1")));
        }
        if self.kind.needs_horizon() {
            match self.t {
                Some(t) if t > 0.0 && t.is_finite() => {}
                Some(t) => return Err(config_error(format!("t must be positive, got {t}"))),
                None => return Err(config_error(format!("{kind} requires a time horizon t"))),
            }
        }
        if let Some(times) = &self.times {
            if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                return Err(config_error("times must be a nonempty list of nonnegative numbers"));
            }
            if times.windows(2).any(|w| w[1] < w[0]) {
                return Err(config_error("times must be nondecreasing"));
            }
        }
        if self.cap == Some(0) {
            return Err(config_error("cap must be >= 1"));
        }
        match self.kind {
            ExperimentKind::TailAsymptotics | ExperimentKind::SmallMassBound if self.kernel.gap() <= 0.0 => {
                return Err(config_error(format!("{kind} requires a kernel with support gap a > 0")));
            }
            ExperimentKind::FdeSolve => {
                let grid = self.mass_grid_spec()?;
                if grid.n_points < 512 {
                    return Err(config_error("fde-solve needs at least 512 grid points (refinement uses half)"));
                }
            }
            ExperimentKind::KppFront | ExperimentKind::TravelingWave | ExperimentKind::OccupationLaw => {
                if self.params.kappa <= 0.0 {
                    return Err(config_error(format!("{kind} requires kappa > 0")));
                }
                if self.params.dim != 1 {
                    return Err(config_error(format!("{kind} is implemented for dim = 1")));
                }
            }
            _ => {}
        }
        if let Some(c) = &self.center {
            if c.len() != self.params.dim {
                return Err(config_error(format!("center must have {} coordinates", self.params.dim)));
            }
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return Err(config_error(format!("radius must be positive, got {r}")));
            }
        }
        if let Some(g) = &self.mass_grid {
            if g.is_empty() || g.iter().any(|m| !(*m > 0.0)) {
                return Err(config_error("mass_grid must be a nonempty list of positive masses"));
            }
        }
        Ok(())
    }

    pub fn mass_grid_spec(&self) -> Result<MassGrid, CliError> {
        let grid = match self.grid {
            Some(g) => MassGrid::new(g.m_max, g.points, &self.params),
            None => MassGrid::default_for(&self.params),
        };
        grid.map_err(|e| config_error(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts_law() -> &'static str {
        r#"{"kind": "counts-law", "params": {"beta": 1, "v": 1}, "replicates": 1000, "t": 0.5, "seed": 3}"#
    }

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(counts_law()).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::CountsLaw);
        assert_eq!(cfg.kernel, SplitKernel::AtomicHalf);
        assert_eq!(cfg.params.mu, 0.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = counts_law().replace("\"seed\"", "\"sede\"");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn rejects_subcritical_params() {
        let text = counts_law().replace("\"beta\": 1", "\"beta\": 1, \"mu\": 2");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn kernel_spec_is_tagged() {
        let text = counts_law().replace("\"seed\": 3", "\"kernel\": {\"kind\": \"uniform\", \"a\": 0.25}");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg.kernel, SplitKernel::Uniform { a: 0.25 });
    }

    #[test]
    fn spatial_kinds_need_diffusion() {
        let text = counts_law().replace("counts-law", "kpp-front");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
