//! Keypoint-guided grasp optimization.
//!
//! Three stages turn a set of stability keypoints into a hand pose:
//!
//! 1. [`register_global`] rigidly aligns the part centers of a relaxed hand
//!    with the keypoint targets (closed-form Procrustes).
//! 2. [`fit_keypoints`] refines joint angles and the global transform on the
//!    keypoint loss alone.
//! 3. [`optimize_grasp`] minimizes the weighted sum of keypoint, contact-map,
//!    penetration and regularization losses.
//!
//! Stages 2 and 3 use Adam-style per-parameter step scaling with backtracking
//! on the total loss, so every accepted step decreases the objective.
//! [`evaluate_grasp`] grades a final pose by checking whether any admissible
//! set of contact forces holds the object.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Rotation3, SVD};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{force_existence, ForceExistence};
use crate::error::{GraspError, Result};
use crate::hand::{
    HandGeometry, HandJacobians, HandModel, HandPose, PointJacobian, PARAM_ANGLES, PARAM_COUNT, PARAM_SCALE,
    PARAM_TRANS,
};
use crate::keypoints::KeypointSet;
use crate::scene::{ContactParams, ContactState, ObjectModel};
use crate::Vec3;

type Params = [f64; PARAM_COUNT];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationConfig {
    pub w_kp: f64,
    pub w_c: f64,
    pub w_pene: f64,
    pub w_reg: f64,
    /// Base Adam step (radians for angles and rotation).
    pub step_size: f64,
    /// Step multiplier for translation and scale relative to `step_size`.
    pub linear_step_ratio: f64,
    pub max_iters_stage2: usize,
    pub max_iters_stage3: usize,
    /// A stage stops once the loss decrease stays below this for `patience` steps.
    pub convergence_tol: f64,
    pub patience: usize,
    /// Store a pose in the trace every this many iterations (0 disables).
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            w_kp: 1.0e4,
            w_c: 0.5,
            w_pene: 10.0,
            w_reg: 0.01,
            step_size: 0.01,
            linear_step_ratio: 0.1,
            max_iters_stage2: 200,
            max_iters_stage3: 300,
            convergence_tol: 1e-12,
            patience: 10,
            snapshot_every: 50,
            seed: 0,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_kp, self.w_c, self.w_pene, self.w_reg];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(GraspError::InvalidConfig(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) || !(self.linear_step_ratio > 0.0) {
            return Err(GraspError::InvalidConfig("step sizes must be positive".into()));
        }
        if self.max_iters_stage2 == 0 || self.max_iters_stage3 == 0 {
            return Err(GraspError::InvalidConfig("iteration limits must be at least 1".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(GraspError::InvalidConfig("convergence_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A rigid motion `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub transform: RigidTransform,
    /// `Σ ‖target_i − (R c_i + t)‖²`.
    pub residual: f64,
    /// Rotation was not fully determined (fewer than three points, or collinear ones).
    pub degenerate: bool,
}

/// Least-squares rigid alignment of `centers` onto `targets`.
///
/// Uses the SVD of the cross-covariance with a reflection fix. With fewer
/// than three correspondences only the translation is solved. When the
/// centers are collinear the rotation about their line is free; the smallest
/// rotation that aligns the two principal directions is returned.
pub fn register_global(centers: &[Vec3], targets: &[Vec3]) -> Result<Registration> {
    if centers.len() != targets.len() {
        return Err(GraspError::ShapeError {
            expected: centers.len(),
            found: targets.len(),
        });
    }
    if centers.is_empty() {
        return Err(GraspError::InvalidConfig(
            "registration needs at least one point".into(),
        ));
    }
    let n = centers.len() as f64;
    let cbar = centers.iter().sum::<Vec3>() / n;
    let tbar = targets.iter().sum::<Vec3>() / n;

    let (rotation, degenerate) = if centers.len() < 3 {
        (Rotation3::identity(), true)
    } else {
        let mut h = Matrix3::zeros();
        let mut spread = Matrix3::zeros();
        for (c, t) in centers.iter().zip(targets) {
            let dc = c - cbar;
            h += dc * (t - tbar).transpose();
            spread += dc * dc.transpose();
        }
        let mut sv = spread.symmetric_eigen().eigenvalues.as_slice().to_vec();
        sv.sort_by(|a, b| b.total_cmp(a));
        if sv[0] <= 0.0 {
            (Rotation3::identity(), true)
        } else if sv[1] <= 1e-12 * sv[0] {
            (collinear_rotation(centers, targets, &cbar, &tbar), true)
        } else {
            (kabsch(&h), false)
        }
    };
    let translation = tbar - rotation * cbar;
    let transform = RigidTransform { rotation, translation };
    let residual = centers
        .iter()
        .zip(targets)
        .map(|(c, t)| (t - transform.apply(c)).norm_squared())
        .sum();
    Ok(Registration {
        transform,
        residual,
        degenerate,
    })
}

/// Angle of `a⁻¹ b`, accurate down to round-off for nearly equal rotations.
pub fn rotation_distance(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    // ‖A − B‖_F = 2√2 sin(θ/2).
    let chord = (a.matrix() - b.matrix()).norm() / (2.0 * std::f64::consts::SQRT_2);
    2.0 * chord.min(1.0).asin()
}

fn kabsch(h: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = SVD::new(*h, true, true);
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    Rotation3::from_matrix_unchecked(v * fix * u.transpose())
}

fn principal_direction(points: &[Vec3], mean: &Vec3) -> Option<Vec3> {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    (eig.eigenvalues[k] > 0.0).then(|| eig.eigenvectors.column(k).into_owned())
}

fn collinear_rotation(centers: &[Vec3], targets: &[Vec3], cbar: &Vec3, tbar: &Vec3) -> Rotation3<f64> {
    let (Some(a), Some(mut b)) = (principal_direction(centers, cbar), principal_direction(targets, tbar)) else {
        return Rotation3::identity();
    };
    let corr: f64 = centers
        .iter()
        .zip(targets)
        .map(|(c, t)| (c - cbar).dot(&a) * (t - tbar).dot(&b))
        .sum();
    if corr < 0.0 {
        b = -b;
    }
    Rotation3::rotation_between(&a, &b).unwrap_or_else(|| {
        // Antiparallel: half turn about any axis orthogonal to `a`.
        let axis = crate::scene::build_tangent_basis(&a).map(|f| f.b).unwrap_or(Vec3::x());
        Rotation3::new(axis * std::f64::consts::PI)
    })
}

/// Loss values of one pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub kp: f64,
    pub contact: f64,
    pub pene: f64,
    pub reg: f64,
    pub total: f64,
}

/// Per-term gradients with respect to the flat pose parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGradients {
    pub kp: Params,
    pub contact: Params,
    pub pene: Params,
    pub reg: Params,
    pub total: Params,
}

/// Loss weights for a single descent stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub kp: f64,
    pub contact: f64,
    pub pene: f64,
    pub reg: f64,
}

impl LossWeights {
    pub fn keypoints_only() -> Self {
        Self {
            kp: 1.0,
            contact: 0.0,
            pene: 0.0,
            reg: 0.0,
        }
    }

    pub fn from_config(config: &OptimizationConfig) -> Self {
        Self {
            kp: config.w_kp,
            contact: config.w_c,
            pene: config.w_pene,
            reg: config.w_reg,
        }
    }
}

/// Everything the losses look at besides the pose.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub model: &'a HandModel,
    pub keypoints: Option<&'a KeypointSet>,
    pub object: Option<&'a ObjectModel>,
    /// Target contact likelihood per object point.
    pub contact_target: Option<&'a [f64]>,
    pub contact_params: ContactParams,
}

fn accumulate(grad: &mut Params, jac: &PointJacobian, dl_dx: &Vec3) {
    let g = jac.tr_mul(dl_dx);
    for (a, b) in grad.iter_mut().zip(g.iter()) {
        *a += b;
    }
}

fn keypoint_term(geom: &HandGeometry, jac: Option<&HandJacobians>, kp: &KeypointSet) -> (f64, Params) {
    let mut grad = [0.0; PARAM_COUNT];
    let mut loss = 0.0;
    for (part, target) in kp.parts.iter().zip(&kp.targets) {
        let h = *part as usize - 1;
        let diff = geom.part_centers[h] - target;
        loss += diff.norm_squared();
        if let Some(j) = jac {
            accumulate(&mut grad, &j.part_centers[h], &(diff * 2.0));
        }
    }
    (loss, grad)
}

/// Mean absolute difference between the hand-induced likelihood and the target.
fn contact_term(
    geom: &HandGeometry,
    jac: Option<&HandJacobians>,
    object: &ObjectModel,
    target: &[f64],
    params: &ContactParams,
) -> (f64, Params) {
    let samples = &geom.surface_samples;
    let n = object.len() as f64;
    let mut grad = [0.0; PARAM_COUNT];
    let mut sample_grad = vec![Vec3::zeros(); samples.len()];
    let mut loss = 0.0;
    for (o, &c_star) in object.points().iter().zip(target) {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for (k, s) in samples.iter().enumerate() {
            let center = (o - s.point).norm();
            let d = (center - s.radius).max(0.0);
            if d < best.0 {
                best = (d, k, center);
            }
        }
        let (d, k, center) = best;
        let c = params.likelihood(d);
        let diff = c - c_star;
        loss += diff.abs();
        if jac.is_some() && d > params.contact_radius && diff != 0.0 {
            let dc_dd = -params.contact_radius / (d * d);
            let dd_dx = (samples[k].point - o) / center;
            sample_grad[k] += dd_dx * (diff.signum() * dc_dd / n);
        }
    }
    if let Some(j) = jac {
        for (k, g) in sample_grad.iter().enumerate() {
            if *g != Vec3::zeros() {
                accumulate(&mut grad, &j.samples[k], g);
            }
        }
    }
    (loss / n, grad)
}

/// Sum of sample-sphere penetration depths `max(0, r − sdf(x))`.
fn penetration_term(geom: &HandGeometry, jac: Option<&HandJacobians>, object: &ObjectModel) -> (f64, Params) {
    let mut grad = [0.0; PARAM_COUNT];
    let mut loss = 0.0;
    for (k, s) in geom.surface_samples.iter().enumerate() {
        let (sd, idx) = object.signed_distance_with_index(&s.point);
        let depth = s.radius - sd;
        if depth > 0.0 {
            loss += depth;
            if let Some(j) = jac {
                accumulate(&mut grad, &j.samples[k], &(-object.normals()[idx]));
            }
        }
    }
    (loss, grad)
}

fn regularization_term(pose: &HandPose) -> (f64, Params) {
    let mut grad = [0.0; PARAM_COUNT];
    let mut loss = 0.0;
    for (i, a) in pose.joint_angles.iter().enumerate() {
        loss += a * a;
        grad[PARAM_ANGLES + i] = 2.0 * a;
    }
    let ds = pose.shape_scale - 1.0;
    loss += ds * ds;
    grad[PARAM_SCALE] = 2.0 * ds;
    (loss, grad)
}

/// Evaluates the weighted loss; gradients are computed when `with_gradient`.
///
/// Terms with zero weight are skipped (reported as zero).
pub fn evaluate_losses(
    pose: &HandPose,
    ctx: &LossContext,
    weights: &LossWeights,
    with_gradient: bool,
) -> (LossTerms, Option<LossGradients>) {
    let (geom, jac) = if with_gradient {
        let (g, j) = ctx.model.forward_with_jacobians(pose);
        (g, Some(j))
    } else {
        (ctx.model.forward_kinematics(pose), None)
    };
    let zero = (0.0, [0.0; PARAM_COUNT]);
    let kp = match ctx.keypoints {
        Some(k) if weights.kp > 0.0 => keypoint_term(&geom, jac.as_ref(), k),
        _ => zero,
    };
    let contact = match (ctx.object, ctx.contact_target) {
        (Some(o), Some(t)) if weights.contact > 0.0 => contact_term(&geom, jac.as_ref(), o, t, &ctx.contact_params),
        _ => zero,
    };
    let pene = match ctx.object {
        Some(o) if weights.pene > 0.0 => penetration_term(&geom, jac.as_ref(), o),
        _ => zero,
    };
    let reg = if weights.reg > 0.0 {
        regularization_term(pose)
    } else {
        zero
    };
    let total = weights.kp * kp.0 + weights.contact * contact.0 + weights.pene * pene.0 + weights.reg * reg.0;
    let terms = LossTerms {
        kp: kp.0,
        contact: contact.0,
        pene: pene.0,
        reg: reg.0,
        total,
    };
    let grads = jac.map(|_| {
        let mut t = [0.0; PARAM_COUNT];
        for (i, ti) in t.iter_mut().enumerate() {
            *ti = weights.kp * kp.1[i]
                + weights.contact * contact.1[i]
                + weights.pene * pene.1[i]
                + weights.reg * reg.1[i];
        }
        LossGradients {
            kp: kp.1,
            contact: contact.1,
            pene: pene.1,
            reg: reg.1,
            total: t,
        }
    });
    (terms, grads)
}

/// How far a pose is from the places where the losses are not smooth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinkMargins {
    /// Joint limits, the penetration hinge, likelihood saturation and the
    /// `|C − C*|` crossing (meters, radians or likelihood units).
    pub hinge: f64,
    /// Nearest-neighbor switches: the nearest object point of a penetrating
    /// sample, and the nearest hand sample of an unsaturated object point
    /// (meters, gap between first and second nearest).
    pub switch: f64,
}

/// Distances of `pose` from every non-smooth point of the stage-III losses.
pub fn kink_margins(pose: &HandPose, ctx: &LossContext) -> KinkMargins {
    let geom = ctx.model.forward_kinematics(pose);
    let mut hinge = ctx.model.limits.margin(pose);
    let mut switch = f64::INFINITY;
    if let Some(object) = ctx.object {
        for s in &geom.surface_samples {
            let (sd, idx) = object.signed_distance_with_index(&s.point);
            hinge = hinge.min((s.radius - sd).abs());
            if s.radius - sd > 0.0 {
                let d1 = (s.point - object.points()[idx]).norm();
                let d2 = object
                    .points()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != idx)
                    .map(|(_, p)| (s.point - p).norm())
                    .fold(f64::INFINITY, f64::min);
                switch = switch.min(d2 - d1);
            }
        }
        if let Some(target) = ctx.contact_target {
            let c0 = ctx.contact_params.contact_radius;
            for (o, &c_star) in object.points().iter().zip(target) {
                let mut d = [f64::INFINITY; 2];
                for s in &geom.surface_samples {
                    let v = ((o - s.point).norm() - s.radius).max(0.0);
                    if v < d[0] {
                        d = [v, d[0]];
                    } else if v < d[1] {
                        d[1] = v;
                    }
                }
                hinge = hinge.min((d[0] - c0).abs());
                // |C - C*| only bends where C can cross C*, which needs 0 < C* < 1.
                if c_star > 0.0 && c_star < 1.0 {
                    hinge = hinge.min((ctx.contact_params.likelihood(d[0]) - c_star).abs());
                }
                if d[0] > c0 {
                    switch = switch.min(d[1] - d[0]);
                }
            }
        }
    }
    KinkMargins { hinge, switch }
}

/// Central finite differences of every loss term, step `h` per parameter.
///
/// Test oracle for [`evaluate_losses`]; meaningful only where
/// [`kink_margins`] are well above the induced point motion.
pub fn numeric_gradients(pose: &HandPose, ctx: &LossContext, weights: &LossWeights, h: f64) -> LossGradients {
    let base = pose.params();
    let mut out = LossGradients {
        kp: [0.0; PARAM_COUNT],
        contact: [0.0; PARAM_COUNT],
        pene: [0.0; PARAM_COUNT],
        reg: [0.0; PARAM_COUNT],
        total: [0.0; PARAM_COUNT],
    };
    for i in 0..PARAM_COUNT {
        let mut plus = base;
        let mut minus = base;
        plus[i] += h;
        minus[i] -= h;
        let (a, _) = evaluate_losses(&HandPose::from_params(&plus), ctx, weights, false);
        let (b, _) = evaluate_losses(&HandPose::from_params(&minus), ctx, weights, false);
        let d = |x: f64, y: f64| (x - y) / (2.0 * h);
        out.kp[i] = d(a.kp, b.kp);
        out.contact[i] = d(a.contact, b.contact);
        out.pene[i] = d(a.pene, b.pene);
        out.reg[i] = d(a.reg, b.reg);
        out.total[i] = d(a.total, b.total);
    }
    out
}

/// One accepted (or initial) iterate of a descent stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: u8,
    pub iteration: usize,
    pub loss: LossTerms,
    /// Pose snapshot, present every `snapshot_every` iterations.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pose: Option<HandPose>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
    /// Set when a stage stopped on a non-finite loss.
    pub diagnostic: Option<String>,
}

impl OptimizationTrace {
    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    /// Final record of a stage.
    pub fn last_of(&self, stage: u8) -> Option<&TraceRecord> {
        self.stage(stage).last()
    }
}

fn project(p: &mut Params, model: &HandModel) {
    let pose = HandPose::from_params(p);
    let (clamped, _) = pose.clamped(&model.limits);
    *p = clamped.params();
}

struct Stage<'a> {
    id: u8,
    ctx: LossContext<'a>,
    weights: LossWeights,
    max_iters: usize,
    /// Parameters allowed to move.
    mask: [bool; PARAM_COUNT],
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;

/// Adam directions with backtracking on the total loss. Returns the best pose.
fn descend(start: &HandPose, stage: &Stage, config: &OptimizationConfig, trace: &mut OptimizationTrace) -> HandPose {
    let mut p = start.params();
    project(&mut p, stage.ctx.model);
    let (mut terms, mut grads) = evaluate_losses(&HandPose::from_params(&p), &stage.ctx, &stage.weights, true);
    let snapshot = |it: usize, p: &Params| {
        (config.snapshot_every > 0 && it.is_multiple_of(config.snapshot_every)).then(|| HandPose::from_params(p))
    };
    trace.records.push(TraceRecord {
        stage: stage.id,
        iteration: 0,
        loss: terms,
        pose: snapshot(0, &p),
    });
    if !terms.total.is_finite() {
        trace.diagnostic = Some(format!("stage {}: non-finite loss at start", stage.id));
        return HandPose::from_params(&p);
    }

    let mut step_scale = [config.step_size; PARAM_COUNT];
    for s in &mut step_scale[PARAM_TRANS..PARAM_TRANS + 3] {
        *s *= config.linear_step_ratio;
    }
    step_scale[PARAM_SCALE] *= config.linear_step_ratio;

    let mut m = [0.0; PARAM_COUNT];
    let mut v = [0.0; PARAM_COUNT];
    // Adam steps taken since the moments were last reset.
    let mut t = 0;
    let mut quiet = 0;
    for it in 1..=stage.max_iters {
        let g = grads.as_ref().expect("gradient requested").total;
        if g.iter().any(|x| !x.is_finite()) {
            trace.diagnostic = Some(format!("stage {}: non-finite gradient at iteration {it}", stage.id));
            break;
        }
        t += 1;
        let mut dir = [0.0; PARAM_COUNT];
        let (b1, b2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for i in 0..PARAM_COUNT {
            if !stage.mask[i] {
                continue;
            }
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            dir[i] = step_scale[i] * (m[i] / b1) / ((v[i] / b2).sqrt() + ADAM_EPS);
        }
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..MAX_HALVINGS {
            let mut cand = p;
            for i in 0..PARAM_COUNT {
                cand[i] -= alpha * dir[i];
            }
            project(&mut cand, stage.ctx.model);
            let (t, _) = evaluate_losses(&HandPose::from_params(&cand), &stage.ctx, &stage.weights, false);
            if t.total.is_finite() && t.total < terms.total {
                accepted = Some(cand);
                break;
            }
            alpha *= 0.5;
        }
        let Some(cand) = accepted else {
            // Stale momentum can point uphill; retry once from fresh moments.
            if t == 1 {
                break;
            }
            m = [0.0; PARAM_COUNT];
            v = [0.0; PARAM_COUNT];
            t = 0;
            continue;
        };
        let previous = terms.total;
        p = cand;
        let (t, gr) = evaluate_losses(&HandPose::from_params(&p), &stage.ctx, &stage.weights, true);
        terms = t;
        grads = gr;
        trace.records.push(TraceRecord {
            stage: stage.id,
            iteration: it,
            loss: terms,
            pose: snapshot(it, &p),
        });
        if previous - terms.total < config.convergence_tol {
            quiet += 1;
            if quiet >= config.patience {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    HandPose::from_params(&p)
}

/// Stage I: rigidly moves `pose` so its keypoint part centers best match the targets.
pub fn initialize_pose(
    model: &HandModel,
    pose: &HandPose,
    keypoints: &KeypointSet,
) -> Result<(HandPose, Registration)> {
    let geom = model.forward_kinematics(pose);
    let centers = keypoints
        .parts
        .iter()
        .map(|&p| geom.part_center(p))
        .collect::<Result<Vec<_>>>()?;
    let reg = register_global(&centers, &keypoints.targets)?;
    Ok((
        pose.transformed(&reg.transform.rotation, &reg.transform.translation),
        reg,
    ))
}

/// Stage II: descends the keypoint loss over joint angles and the global transform.
pub fn fit_keypoints(
    model: &HandModel,
    pose: &HandPose,
    keypoints: &KeypointSet,
    config: &OptimizationConfig,
) -> Result<(HandPose, OptimizationTrace)> {
    config.validate()?;
    let mut mask = [true; PARAM_COUNT];
    mask[PARAM_SCALE] = false;
    let stage = Stage {
        id: 2,
        ctx: LossContext {
            model,
            keypoints: Some(keypoints),
            object: None,
            contact_target: None,
            contact_params: ContactParams::default(),
        },
        weights: LossWeights::keypoints_only(),
        max_iters: config.max_iters_stage2,
        mask,
    };
    let mut trace = OptimizationTrace::default();
    let out = descend(pose, &stage, config, &mut trace);
    Ok((out, trace))
}

/// Stage III: descends the full weighted objective over all pose parameters.
pub fn optimize_grasp(
    model: &HandModel,
    pose: &HandPose,
    object: &ObjectModel,
    contact_target: &ContactState,
    keypoints: Option<&KeypointSet>,
    contact_params: &ContactParams,
    config: &OptimizationConfig,
) -> Result<(HandPose, OptimizationTrace)> {
    config.validate()?;
    contact_target.check_matches(object)?;
    let stage = Stage {
        id: 3,
        ctx: LossContext {
            model,
            keypoints,
            object: Some(object),
            contact_target: Some(contact_target.likelihood()),
            contact_params: *contact_params,
        },
        weights: LossWeights::from_config(config),
        max_iters: config.max_iters_stage3,
        mask: [true; PARAM_COUNT],
    };
    let mut trace = OptimizationTrace::default();
    let out = descend(pose, &stage, config, &mut trace);
    Ok((out, trace))
}

/// Settings for [`evaluate_grasp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    /// Largest sample-surface gap (meters) that still counts as contact.
    pub contact_gap: f64,
    pub max_force: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            contact_gap: ContactParams::default().contact_distance(),
            max_force: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspReport {
    /// Smallest achievable `‖a‖² + ‖α‖²` over admissible forces.
    pub residual: f64,
    pub contact_count: usize,
    /// Deepest sample-sphere penetration (meters, nonnegative).
    pub max_penetration: f64,
    /// Object sample index of every contact.
    pub contacts: Vec<usize>,
    /// Normal force per contact at the optimum.
    pub forces: Vec<f64>,
    pub converged: bool,
}

/// Grades a pose: detects contacts, then asks whether some forces within the
/// friction pyramids and the force bound hold the object still.
pub fn evaluate_grasp(
    model: &HandModel,
    pose: &HandPose,
    object: &ObjectModel,
    mu: f64,
    gravity: &Vec3,
    config: &EvaluateConfig,
) -> Result<GraspReport> {
    let geom = model.forward_kinematics(pose);
    let mut touched = BTreeSet::new();
    let mut max_penetration: f64 = 0.0;
    for s in &geom.surface_samples {
        let (sd, idx) = object.signed_distance_with_index(&s.point);
        let gap = sd - s.radius;
        max_penetration = max_penetration.max(-gap);
        if gap.abs() <= config.contact_gap {
            touched.insert(idx);
        }
    }
    let contacts: Vec<usize> = touched.into_iter().collect();
    if contacts.is_empty() {
        return Ok(GraspReport {
            residual: gravity.norm_squared(),
            contact_count: 0,
            max_penetration,
            contacts,
            forces: Vec::new(),
            converged: true,
        });
    }
    let points: Vec<(Vec3, Vec3)> = contacts
        .iter()
        .map(|&i| (object.points()[i], object.normals()[i]))
        .collect();
    let params = ForceExistence {
        max_force: config.max_force,
        ..ForceExistence::default()
    };
    let sol = force_existence(object, &points, mu, gravity, &params)?;
    Ok(GraspReport {
        residual: sol.energy,
        contact_count: contacts.len(),
        max_penetration,
        contacts,
        forces: sol.forces,
        converged: sol.converged,
    })
}

/// Poses and reports of every stage of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub keypoints: KeypointSet,
    pub registration: Registration,
    pub stage1: HandPose,
    pub stage2: HandPose,
    pub pose: HandPose,
    pub trace: OptimizationTrace,
    pub report_stage1: GraspReport,
    pub report: GraspReport,
}

/// Stages I to III from a relaxed hand, then evaluation of the first and last pose.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    model: &HandModel,
    object: &ObjectModel,
    contacts: &ContactState,
    keypoints: KeypointSet,
    contact_params: &ContactParams,
    config: &OptimizationConfig,
    mu: f64,
    gravity: &Vec3,
    eval: &EvaluateConfig,
) -> Result<PipelineResult> {
    let (stage1, registration) = initialize_pose(model, &HandPose::mean(), &keypoints)?;
    let (stage2, mut trace) = fit_keypoints(model, &stage1, &keypoints, config)?;
    let (pose, t3) = optimize_grasp(
        model,
        &stage2,
        object,
        contacts,
        Some(&keypoints),
        contact_params,
        config,
    )?;
    trace.records.extend(t3.records);
    trace.diagnostic = trace.diagnostic.or(t3.diagnostic);
    let report_stage1 = evaluate_grasp(model, &stage1, object, mu, gravity, eval)?;
    let report = evaluate_grasp(model, &pose, object, mu, gravity, eval)?;
    Ok(PipelineResult {
        keypoints,
        registration,
        stage1,
        stage2,
        pose,
        trace,
        report_stage1,
        report,
    })
}

/// Initial pose for optimization without keypoints: the relaxed hand placed
/// beside the object, palm facing the center of mass, on the side of the
/// contact-target centroid.
pub fn keypoint_free_start(model: &HandModel, object: &ObjectModel, contacts: &ContactState) -> Result<HandPose> {
    contacts.check_matches(object)?;
    let com = object.com();
    let touched: Vec<Vec3> = contacts
        .part_label()
        .iter()
        .zip(object.points())
        .filter(|(l, _)| **l != 0)
        .map(|(_, p)| *p)
        .collect();
    let mut dir = if touched.is_empty() {
        Vec3::z()
    } else {
        touched.iter().sum::<Vec3>() / touched.len() as f64 - com
    };
    if dir.norm() < 1e-9 {
        dir = Vec3::z();
    }
    let dir = dir.normalize();
    let pose = HandPose::mean();
    // The palm normal is -z in the hand frame; it must point along -dir.
    let rotation = Rotation3::rotation_between(&Vec3::z(), &dir)
        .unwrap_or_else(|| Rotation3::new(Vec3::x() * std::f64::consts::PI));
    let palm = model.forward_kinematics(&pose).part_centers[0];
    let goal = com + dir * (object.bounding_radius() + 0.03);
    Ok(pose.transformed(&rotation, &(goal - rotation * palm)))
}

/// Stage III alone from [`keypoint_free_start`], with the keypoint weight forced to zero.
#[allow(clippy::too_many_arguments)]
pub fn run_keypoint_free(
    model: &HandModel,
    object: &ObjectModel,
    contacts: &ContactState,
    contact_params: &ContactParams,
    config: &OptimizationConfig,
    mu: f64,
    gravity: &Vec3,
    eval: &EvaluateConfig,
) -> Result<(HandPose, GraspReport)> {
    let start = keypoint_free_start(model, object, contacts)?;
    let config = OptimizationConfig { w_kp: 0.0, ..*config };
    let (pose, _) = optimize_grasp(model, &start, object, contacts, None, contact_params, &config)?;
    let report = evaluate_grasp(model, &pose, object, mu, gravity, eval)?;
    Ok((pose, report))
}
