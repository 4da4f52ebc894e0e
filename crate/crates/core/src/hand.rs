//! Skeletal hand model.
//!
//! A fixed 21-joint skeleton (wrist plus base, two interphalangeal joints and
//! tip for each of five fingers) posed by 20 joint angles, a uniform scale and
//! a rigid transform. The hand surface is approximated by sphere-swept samples
//! along every bone and a grid of larger samples on the palm.
//!
//! The hand frame has its origin at the wrist, `x` pointing radially (towards
//! the thumb), `y` distally (towards the fingertips) and `z` dorsally. The palm
//! faces `-z`; positive flexion curls a finger towards the palm.
//!
//! Parts are numbered 1..=16: 1 is the palm, and finger `f` (thumb, index,
//! middle, ring, pinky) owns parts `2 + 3f` (proximal), `3 + 3f` (middle) and
//! `4 + 3f` (distal).

use nalgebra::{Matrix3, Rotation3, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::scene::{HandSample, MAX_PART};
use crate::Vec3;

pub const FINGER_COUNT: usize = 5;
pub const JOINT_COUNT: usize = 21;
pub const PART_COUNT: usize = MAX_PART as usize;
pub const ANGLE_COUNT: usize = 20;

/// Layout of the flat parameter vector: rotation, translation, angles, scale.
pub const PARAM_ROT: usize = 0;
pub const PARAM_TRANS: usize = 3;
pub const PARAM_ANGLES: usize = 6;
pub const PARAM_SCALE: usize = 26;
pub const PARAM_COUNT: usize = 27;

/// Derivative of a world-space point with respect to the pose parameters.
pub type PointJacobian = SMatrix<f64, 3, PARAM_COUNT>;

/// Version tag of the built-in skeleton table.
pub const SKELETON_VERSION: &str = "adult-average-v1";

/// Rest-pose proximal joint of each finger in the hand frame (meters).
const REST_BASES: [[f64; 3]; FINGER_COUNT] = [
    [0.025, 0.025, -0.010],
    [0.025, 0.090, 0.0],
    [0.005, 0.095, 0.0],
    [-0.013, 0.088, 0.0],
    [-0.030, 0.078, 0.0],
];

/// Proximal, middle and distal bone lengths (meters).
const REST_LENGTHS: [[f64; 3]; FINGER_COUNT] = [
    [0.040, 0.032, 0.028],
    [0.040, 0.025, 0.020],
    [0.045, 0.028, 0.022],
    [0.042, 0.027, 0.021],
    [0.033, 0.020, 0.018],
];

/// Palm sample grid in the hand frame.
const PALM_SAMPLE_X: [f64; 4] = [0.022, 0.007, -0.008, -0.023];
const PALM_SAMPLE_Y: [f64; 2] = [0.025, 0.060];

/// Index of joint `k` (0 = base, 3 = tip) of finger `f`.
pub const fn joint_index(finger: usize, k: usize) -> usize {
    1 + 4 * finger + k
}

/// Joint limits applied to every pose before kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointLimits {
    pub flexion: (f64, f64),
    pub abduction: (f64, f64),
    pub scale: (f64, f64),
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            flexion: (-0.3, 1.8),
            abduction: (-0.5, 0.5),
            scale: (0.7, 1.3),
        }
    }
}

impl JointLimits {
    fn angle_range(&self, index: usize) -> (f64, f64) {
        if index.is_multiple_of(4) {
            self.abduction
        } else {
            self.flexion
        }
    }

    /// Smallest distance of any angle or the scale from its bounds.
    pub fn margin(&self, pose: &HandPose) -> f64 {
        let s = pose.shape_scale;
        let mut m = (s - self.scale.0).min(self.scale.1 - s);
        for (i, a) in pose.joint_angles.iter().enumerate() {
            let (lo, hi) = self.angle_range(i);
            m = m.min(a - lo).min(hi - a);
        }
        m
    }
}

/// Hand pose: rigid transform, joint angles and uniform bone scale.
///
/// `joint_angles[4f]` is the abduction of finger `f` and
/// `joint_angles[4f + 1..4f + 4]` its three flexions, proximal first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    /// Axis-angle rotation (radians).
    #[serde(rename = "rot")]
    pub global_rotation: Vec3,
    #[serde(rename = "trans")]
    pub global_translation: Vec3,
    #[serde(rename = "angles")]
    pub joint_angles: [f64; ANGLE_COUNT],
    #[serde(rename = "scale")]
    pub shape_scale: f64,
}

impl Default for HandPose {
    fn default() -> Self {
        Self::rest()
    }
}

impl HandPose {
    /// Zero angles, identity transform, unit scale.
    pub fn rest() -> Self {
        Self {
            global_rotation: Vec3::zeros(),
            global_translation: Vec3::zeros(),
            joint_angles: [0.0; ANGLE_COUNT],
            shape_scale: 1.0,
        }
    }

    /// A relaxed, slightly curled hand used to start registration.
    pub fn mean() -> Self {
        let mut pose = Self::rest();
        for f in 0..FINGER_COUNT {
            let flex = if f == 0 { [0.3, 0.3, 0.2] } else { [0.4, 0.4, 0.3] };
            pose.joint_angles[4 * f + 1..4 * f + 4].copy_from_slice(&flex);
        }
        pose
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::new(self.global_rotation)
    }

    pub fn params(&self) -> [f64; PARAM_COUNT] {
        let mut p = [0.0; PARAM_COUNT];
        p[PARAM_ROT..PARAM_ROT + 3].copy_from_slice(self.global_rotation.as_slice());
        p[PARAM_TRANS..PARAM_TRANS + 3].copy_from_slice(self.global_translation.as_slice());
        p[PARAM_ANGLES..PARAM_ANGLES + ANGLE_COUNT].copy_from_slice(&self.joint_angles);
        p[PARAM_SCALE] = self.shape_scale;
        p
    }

    pub fn from_params(p: &[f64; PARAM_COUNT]) -> Self {
        let mut joint_angles = [0.0; ANGLE_COUNT];
        joint_angles.copy_from_slice(&p[PARAM_ANGLES..PARAM_ANGLES + ANGLE_COUNT]);
        Self {
            global_rotation: Vec3::new(p[0], p[1], p[2]),
            global_translation: Vec3::new(p[3], p[4], p[5]),
            joint_angles,
            shape_scale: p[PARAM_SCALE],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    /// Projects the pose onto the limits; the flag reports whether anything moved.
    pub fn clamped(&self, limits: &JointLimits) -> (Self, bool) {
        let mut out = *self;
        let mut moved = false;
        for (i, a) in out.joint_angles.iter_mut().enumerate() {
            let (lo, hi) = limits.angle_range(i);
            let c = a.clamp(lo, hi);
            moved |= c != *a;
            *a = c;
        }
        let s = out.shape_scale.clamp(limits.scale.0, limits.scale.1);
        moved |= s != out.shape_scale;
        out.shape_scale = s;
        (out, moved)
    }

    pub fn within_limits(&self, limits: &JointLimits) -> bool {
        !self.clamped(limits).1
    }

    /// Applies the rigid motion `x -> r x + t` to the posed hand.
    pub fn transformed(&self, r: &Rotation3<f64>, t: &Vec3) -> Self {
        let rot = r * self.rotation();
        Self {
            global_rotation: rot.scaled_axis(),
            global_translation: r * self.global_translation + t,
            ..*self
        }
    }
}

/// Posed joints, part centers and surface samples in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HandGeometry {
    pub joints: [Vec3; JOINT_COUNT],
    /// `part_centers[h - 1]` is the center of part `h`.
    pub part_centers: [Vec3; PART_COUNT],
    pub surface_samples: Vec<HandSample>,
    /// The input pose violated the limits and was clamped first.
    pub clamped: bool,
}

impl HandGeometry {
    pub fn part_center(&self, part: u8) -> Result<Vec3> {
        part_center(self, part)
    }
}

/// Jacobians of everything in [`HandGeometry`] with respect to the pose parameters.
#[derive(Debug, Clone)]
pub struct HandJacobians {
    pub joints: Vec<PointJacobian>,
    pub part_centers: Vec<PointJacobian>,
    pub samples: Vec<PointJacobian>,
}

/// Center of part `part` (1..=16): the mean of its bounding joints.
pub fn part_center(geometry: &HandGeometry, part: u8) -> Result<Vec3> {
    if part == 0 || part > MAX_PART {
        return Err(GraspError::InvalidPart(part));
    }
    Ok(geometry.part_centers[part as usize - 1])
}

/// Joints whose mean defines the center of `part`.
pub fn part_joints(part: u8) -> Result<Vec<usize>> {
    match part {
        1 => Ok(std::iter::once(0)
            .chain((0..FINGER_COUNT).map(|f| joint_index(f, 0)))
            .collect()),
        2..=MAX_PART => {
            let f = (part as usize - 2) / 3;
            let seg = (part as usize - 2) % 3;
            Ok(vec![joint_index(f, seg), joint_index(f, seg + 1)])
        }
        _ => Err(GraspError::InvalidPart(part)),
    }
}

/// Part id of segment `seg` (0 = proximal) of finger `f`.
pub const fn segment_part(finger: usize, seg: usize) -> u8 {
    (2 + 3 * finger + seg) as u8
}

/// Joint pair and blend along the segment (`None` on the palm), part, radius,
/// and the hand-frame position of palm samples.
type SampleSlot = (Option<(usize, usize, f64)>, u8, f64, Vec3);

/// Skeleton table and surface sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub bases: [Vec3; FINGER_COUNT],
    pub lengths: [[f64; 3]; FINGER_COUNT],
    /// Orientation of each finger's base frame at zero angles.
    pub rest_rotations: [Matrix3<f64>; FINGER_COUNT],
    pub palm_samples: Vec<Vec3>,
    pub samples_per_segment: usize,
    pub finger_radius: f64,
    pub palm_radius: f64,
    pub limits: JointLimits,
}

impl Default for HandModel {
    fn default() -> Self {
        let thumb = Rotation3::from_axis_angle(&Vec3::z_axis(), -std::f64::consts::FRAC_PI_4)
            * Rotation3::from_axis_angle(&Vec3::y_axis(), std::f64::consts::FRAC_PI_3);
        let mut rest_rotations = [Matrix3::identity(); FINGER_COUNT];
        rest_rotations[0] = *thumb.matrix();
        let palm_samples = PALM_SAMPLE_Y
            .iter()
            .flat_map(|&y| PALM_SAMPLE_X.iter().map(move |&x| Vec3::new(x, y, 0.0)))
            .collect();
        Self {
            bases: REST_BASES.map(Vec3::from),
            lengths: REST_LENGTHS,
            rest_rotations,
            palm_samples,
            samples_per_segment: 5,
            finger_radius: 0.005,
            palm_radius: 0.010,
            limits: JointLimits::default(),
        }
    }
}

/// Hand-frame quantities shared by kinematics and Jacobians.
struct Chain {
    scale: f64,
    joints: [Vec3; JOINT_COUNT],
    /// Abduction and flexion axes per finger, hand frame.
    abd_axes: [Vec3; FINGER_COUNT],
    flex_axes: [Vec3; FINGER_COUNT],
}

impl HandModel {
    pub fn sample_count(&self) -> usize {
        15 * self.samples_per_segment + self.palm_samples.len()
    }

    fn chain(&self, pose: &HandPose) -> Chain {
        let s = pose.shape_scale;
        let mut joints = [Vec3::zeros(); JOINT_COUNT];
        let mut abd_axes = [Vec3::zeros(); FINGER_COUNT];
        let mut flex_axes = [Vec3::zeros(); FINGER_COUNT];
        for f in 0..FINGER_COUNT {
            let a = &pose.joint_angles[4 * f..4 * f + 4];
            let r0 = self.rest_rotations[f];
            let r_abd = r0 * Rotation3::from_axis_angle(&Vec3::z_axis(), a[0]).matrix();
            abd_axes[f] = r0 * Vec3::z();
            flex_axes[f] = -(r_abd * Vec3::x());
            let mut pos = self.bases[f] * s;
            joints[joint_index(f, 0)] = pos;
            let mut frame = r_abd;
            for seg in 0..3 {
                frame *= Rotation3::from_axis_angle(&Vec3::x_axis(), -a[1 + seg]).matrix();
                pos += frame * Vec3::y() * (self.lengths[f][seg] * s);
                joints[joint_index(f, seg + 1)] = pos;
            }
        }
        Chain {
            scale: s,
            joints,
            abd_axes,
            flex_axes,
        }
    }

    /// Hand-frame sample positions as affine combinations of joints, with the
    /// palm samples (which only depend on scale) marked by `None`.
    fn sample_layout(&self) -> Vec<SampleSlot> {
        let k = self.samples_per_segment;
        let mut out = Vec::with_capacity(self.sample_count());
        for f in 0..FINGER_COUNT {
            for seg in 0..3 {
                for i in 0..k {
                    let u = (i as f64 + 0.5) / k as f64;
                    out.push((
                        Some((joint_index(f, seg), joint_index(f, seg + 1), u)),
                        segment_part(f, seg),
                        self.finger_radius,
                        Vec3::zeros(),
                    ));
                }
            }
        }
        for p in &self.palm_samples {
            out.push((None, 1, self.palm_radius, *p));
        }
        out
    }

    /// Poses the skeleton. Out-of-limit poses are clamped first and flagged.
    pub fn forward_kinematics(&self, pose: &HandPose) -> HandGeometry {
        let (pose, clamped) = pose.clamped(&self.limits);
        let chain = self.chain(&pose);
        let rot = pose.rotation();
        let t = pose.global_translation;
        let joints = chain.joints.map(|j| rot * j + t);
        let part_centers = centers_of(&joints);
        let surface_samples = self
            .sample_layout()
            .into_iter()
            .map(|(seg, part, radius, palm)| {
                let point = match seg {
                    Some((a, b, u)) => joints[a] * (1.0 - u) + joints[b] * u,
                    None => rot * (palm * chain.scale) + t,
                };
                HandSample { point, part, radius }
            })
            .collect();
        HandGeometry {
            joints,
            part_centers,
            surface_samples,
            clamped,
        }
    }

    /// Geometry plus the Jacobian of every joint, part center and sample.
    ///
    /// The Jacobians are those of the clamped pose; limits are handled by
    /// projection in the optimizer.
    pub fn forward_with_jacobians(&self, pose: &HandPose) -> (HandGeometry, HandJacobians) {
        let geometry = self.forward_kinematics(pose);
        let (pose, _) = pose.clamped(&self.limits);
        let chain = self.chain(&pose);
        let rot = pose.rotation();
        let rmat = *rot.matrix();
        let jl = left_jacobian(&pose.global_rotation);

        let rigid = |x_hand: &Vec3| -> PointJacobian {
            let mut jac = PointJacobian::zeros();
            let world = rmat * x_hand;
            jac.fixed_view_mut::<3, 3>(0, PARAM_ROT)
                .copy_from(&(-world.cross_matrix() * jl));
            jac.fixed_view_mut::<3, 3>(0, PARAM_TRANS)
                .copy_from(&Matrix3::identity());
            jac.set_column(PARAM_SCALE, &(world / chain.scale));
            jac
        };

        let mut joint_jacs = Vec::with_capacity(JOINT_COUNT);
        joint_jacs.push(rigid(&chain.joints[0]));
        for f in 0..FINGER_COUNT {
            let base = chain.joints[joint_index(f, 0)];
            for k in 0..4 {
                let x = chain.joints[joint_index(f, k)];
                let mut jac = rigid(&x);
                if k >= 1 {
                    jac.set_column(PARAM_ANGLES + 4 * f, &(rmat * chain.abd_axes[f].cross(&(x - base))));
                    for m in 1..=k {
                        let pivot = chain.joints[joint_index(f, m - 1)];
                        jac.set_column(
                            PARAM_ANGLES + 4 * f + m,
                            &(rmat * chain.flex_axes[f].cross(&(x - pivot))),
                        );
                    }
                }
                joint_jacs.push(jac);
            }
        }

        let mut center_jacs = Vec::with_capacity(PART_COUNT);
        for part in 1..=MAX_PART {
            let members = part_joints(part).expect("valid part");
            let sum = members
                .iter()
                .fold(PointJacobian::zeros(), |acc, &j| acc + joint_jacs[j]);
            center_jacs.push(sum / members.len() as f64);
        }

        let sample_jacs = self
            .sample_layout()
            .into_iter()
            .map(|(seg, _, _, palm)| match seg {
                Some((a, b, u)) => joint_jacs[a] * (1.0 - u) + joint_jacs[b] * u,
                None => rigid(&(palm * chain.scale)),
            })
            .collect();

        (
            geometry,
            HandJacobians {
                joints: joint_jacs,
                part_centers: center_jacs,
                samples: sample_jacs,
            },
        )
    }
}

fn centers_of(joints: &[Vec3; JOINT_COUNT]) -> [Vec3; PART_COUNT] {
    let mut centers = [Vec3::zeros(); PART_COUNT];
    for part in 1..=MAX_PART {
        let members = part_joints(part).expect("valid part");
        let sum = members.iter().fold(Vec3::zeros(), |acc, &j| acc + joints[j]);
        centers[part as usize - 1] = sum / members.len() as f64;
    }
    centers
}

/// Left Jacobian of SO(3) at the axis-angle vector `w`.
pub fn left_jacobian(w: &Vec3) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = w.cross_matrix();
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Forward kinematics with the default skeleton.
pub fn forward_kinematics(pose: &HandPose) -> HandGeometry {
    HandModel::default().forward_kinematics(pose)
}
