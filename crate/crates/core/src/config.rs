//! Run configuration shared by the library entry points and the CLI.
//!
//! Every block has defaults, so a config file only needs the keys it changes:
//!
//! ```json
//! { "mu": 0.8, "optimizer": { "max_iters_stage3": 500 } }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::equilibrium::default_gravity;
use crate::error::{GraspError, Result};
use crate::force_codec::BinningConfig;
use crate::hand::{HandModel, JointLimits};
use crate::keypoints::KeypointConfig;
use crate::optimize::{EvaluateConfig, OptimizationConfig};
use crate::scene::ContactParams;
use crate::synth::ContactGenConfig;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Friction coefficient.
    pub mu: f64,
    /// Gravity vector (m/s²).
    pub gravity: [f64; 3],
    pub binning: BinningConfig,
    pub contact: ContactParams,
    pub keypoints: KeypointConfig,
    pub limits: JointLimits,
    pub optimizer: OptimizationConfig,
    pub evaluate: EvaluateConfig,
    pub contact_gen: ContactGenConfig,
}

impl Default for Config {
    fn default() -> Self {
        let g = default_gravity();
        Self {
            mu: 1.0,
            gravity: [g.x, g.y, g.z],
            binning: BinningConfig::default(),
            contact: ContactParams::default(),
            keypoints: KeypointConfig::default(),
            limits: JointLimits::default(),
            optimizer: OptimizationConfig::default(),
            evaluate: EvaluateConfig::default(),
            contact_gen: ContactGenConfig::default(),
        }
    }
}

impl Config {
    /// Reads and validates a JSON config file.
    pub fn load(path: &Path) -> Result<Self> {
        let config: Config = crate::io::read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    /// The default skeleton with this config's joint limits.
    pub fn hand_model(&self) -> HandModel {
        HandModel {
            limits: self.limits,
            ..HandModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(GraspError::InvalidConfig(format!(
                "mu must be finite and nonnegative, got {}",
                self.mu
            )));
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(GraspError::InvalidConfig("gravity must be finite".into()));
        }
        self.binning.build()?;
        let c = &self.contact;
        if !(c.contact_radius > 0.0) || !(c.threshold > 0.0 && c.threshold <= 1.0) {
            return Err(GraspError::InvalidConfig(
                "contact radius must be positive and threshold in (0, 1]".into(),
            ));
        }
        if !(self.keypoints.cluster_radius > 0.0) || self.keypoints.n_kp == 0 {
            return Err(GraspError::InvalidConfig(
                "keypoint cluster radius must be positive and n_kp at least 1".into(),
            ));
        }
        let l = &self.limits;
        for (name, (lo, hi)) in [("flexion", l.flexion), ("abduction", l.abduction), ("scale", l.scale)] {
            if !(lo <= hi) {
                return Err(GraspError::InvalidConfig(format!("{name} limits are empty")));
            }
        }
        if !(l.scale.0 > 0.0) {
            return Err(GraspError::InvalidConfig("scale limits must be positive".into()));
        }
        self.optimizer.validate()?;
        if !(self.evaluate.contact_gap >= 0.0) || !(self.evaluate.max_force > 0.0) {
            return Err(GraspError::InvalidConfig(
                "evaluate.contact_gap must be nonnegative and max_force positive".into(),
            ));
        }
        let g = &self.contact_gen;
        if !(g.patch_radius > 0.0) || !(g.min_force >= 0.0 && g.min_force < g.max_force) {
            return Err(GraspError::InvalidConfig(
                "contact_gen needs a positive patch radius and 0 <= min_force < max_force".into(),
            ));
        }
        Ok(())
    }
}
