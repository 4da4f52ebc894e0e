//! Force-aware grasp stability analysis.
//!
//! The crate covers the whole chain from a per-point contact description of a
//! grasp to a stable hand pose:
//!
//! * [`scene`]: sampled object surfaces, tangent frames, point-cloud signed
//!   distance and contact maps computed from a posed hand.
//! * [`force_codec`]: log-spaced force binning with one-hot encoding and
//!   soft-argmax decoding, plus spreading of point-force labels over contact
//!   patches.
//! * [`equilibrium`]: the bilinear acceleration model of a grasped rigid body,
//!   the stability energy (a box-constrained least-squares problem solved by
//!   [`qp`]) and the bound-based differentiable stability loss.
//! * [`keypoints`]: per-part contact clustering and stability-optimal
//!   keypoint selection.
//! * [`hand`]: a 21-joint skeletal hand with 16 contact parts and analytic
//!   point Jacobians.
//! * [`optimize`]: rigid registration, keypoint fitting and full grasp
//!   refinement, and grasp evaluation.
//! * [`gradcheck`]: finite-difference checks of the analytic gradients.
//! * [`synth`], [`io`], [`report`]: synthetic scenes and contacts, file
//!   formats, and batch reports.

// Comparisons are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod equilibrium;
pub mod error;
pub mod force_codec;
pub mod gradcheck;
pub mod hand;
pub mod io;
pub mod keypoints;
pub mod optimize;
pub mod qp;
pub mod report;
pub mod scene;
pub mod synth;

pub use config::Config;
pub use equilibrium::{Contact, EquilibriumSystem, StabilityResult};
pub use error::{GraspError, Result};
pub use force_codec::{CenterRule, ForceBinning};
pub use hand::{HandGeometry, HandModel, HandPose};
pub use keypoints::{KeypointSet, PartCluster};
pub use optimize::{GraspReport, OptimizationConfig, OptimizationTrace};
pub use scene::{ContactParams, ContactState, HandSample, ObjectModel, TangentBasis};
pub use synth::{ContactStyle, SceneSpec, Shape};

pub use nalgebra::Vector3;

/// Shorthand for the vector type used throughout the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
