//! Experiment configuration: a TOML file with one table per component.
//!
//! ```toml
//! seed = 42
//!
//! [scene]            # SceneConfig
//! n_static = 140
//!
//! [ransac]           # RansacConfig
//! n_iterations = 300
//!
//! [sweep]
//! dynamic_ratios = [0.0, 0.3]
//!
//! [trajectory]
//! tolerance = 0.02
//!
//! [depth]            # DepthEvalConfig
//! alignment = "scale_shift"
//!
//! [points]
//! method = "grid"
//!
//! [gradcheck]        # GradcheckConfig
//! n_configs = 10
//! ```
//!
//! Every key has a default and unknown keys are rejected.

use std::path::Path;

use dyn4d_core::aggregator::gradcheck::GradcheckConfig;
use dyn4d_core::metrics::{DepthEvalConfig, NnMethod};
use dyn4d_core::pose::{MaskMode, RansacConfig};
use dyn4d_core::scene_sim::SceneConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub dynamic_ratios: Vec<f64>,
    pub noise_px: Vec<f64>,
    /// Seeds `seed .. seed + n_seeds`, shared by every policy.
    pub n_seeds: u64,
    pub policies: Vec<MaskMode>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dynamic_ratios: vec![0.0, 0.1, 0.3, 0.5],
            noise_px: vec![0.0, 0.5],
            n_seeds: 50,
            policies: vec![MaskMode::None, MaskMode::HardExclude, MaskMode::SoftWeight],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryEvalConfig {
    /// Timestamp association tolerance in seconds.
    pub tolerance: f64,
    pub sample10: bool,
    pub rpe_delta: usize,
}

impl Default for TrajectoryEvalConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.02,
            sample10: false,
            rpe_delta: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointsEvalConfig {
    pub method: NnMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub ransac: RansacConfig,
    pub sweep: SweepConfig,
    pub trajectory: TrajectoryEvalConfig,
    pub depth: DepthEvalConfig,
    pub points: PointsEvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scene: SceneConfig::default(),
            ransac: RansacConfig::default(),
            sweep: SweepConfig::default(),
            trajectory: TrajectoryEvalConfig::default(),
            depth: DepthEvalConfig::default(),
            points: PointsEvalConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Propagates the global seed into the components that draw randomness.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.seed = seed;
        self.gradcheck.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.scene.validate().map_err(|e| cfg(&e))?;
        self.ransac.validate().map_err(|e| cfg(&e))?;
        self.depth.validate().map_err(|e| cfg(&e))?;
        let s = &self.sweep;
        if s.dynamic_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(CliError::Config("sweep.dynamic_ratios must lie in [0, 1]".into()));
        }
        if s.noise_px.iter().any(|n| !(*n >= 0.0)) {
            return Err(CliError::Config("sweep.noise_px must be >= 0".into()));
        }
        if !(self.trajectory.tolerance >= 0.0) || self.trajectory.rpe_delta == 0 {
            return Err(CliError::Config("trajectory.tolerance >= 0 and rpe_delta >= 1 required".into()));
        }
        let g = &self.gradcheck;
        if g.n_configs == 0 || !(g.step > 0.0) || !(g.tolerance > 0.0) {
            return Err(CliError::Config("gradcheck needs n_configs >= 1, step > 0, tolerance > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default().with_seed(7);
        c.sweep.policies = vec![MaskMode::HardExclude];
        c.depth.alignment = dyn4d_core::metrics::DepthAlignment::PerFrame;
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for text in ["sed = 1", "[scene]\nn_statc = 3", "[depth]\nalign = \"scale\"", "[nope]\n"] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}");
        }
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let c = ExperimentConfig::from_toml("[scene]\nn_static = 10\n[ransac]\nn_iterations = 5\n").unwrap();
        assert_eq!(c.scene.n_static, 10);
        assert_eq!(c.scene.n_dynamic, SceneConfig::default().n_dynamic);
        assert_eq!(c.ransac.n_iterations, 5);
    }

    #[test]
    fn too_few_points_rejected() {
        let c = ExperimentConfig::from_toml("[scene]\nn_static = 4\nn_dynamic = 3\n").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
