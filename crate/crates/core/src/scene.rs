//! Object surfaces, contact frames and contact maps.

use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::Vec3;

/// Highest hand-part id. Part 0 means "no contact".
pub const MAX_PART: u8 = 16;

const UNIT_TOL: f64 = 1e-6;

/// A rigid object represented by oriented surface samples.
///
/// Serializes as `{points, normals, com, mass}`; the inertia is always
/// recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectFile", into = "ObjectFile")]
pub struct ObjectModel {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    com: Vec3,
    mass: f64,
    inertia: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectFile {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    com: Vec3,
    #[serde(default = "unit_mass")]
    mass: f64,
}

fn unit_mass() -> f64 {
    1.0
}

impl TryFrom<ObjectFile> for ObjectModel {
    type Error = GraspError;

    fn try_from(f: ObjectFile) -> Result<Self> {
        Self::new(f.points, f.normals, f.com, f.mass)
    }
}

impl From<ObjectModel> for ObjectFile {
    fn from(o: ObjectModel) -> Self {
        Self {
            points: o.points,
            normals: o.normals,
            com: o.com,
            mass: o.mass,
        }
    }
}

impl ObjectModel {
    /// Builds an object and derives its ball-approximated moment of inertia.
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>, com: Vec3, mass: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(GraspError::EmptyObject);
        }
        if points.len() != normals.len() {
            return Err(GraspError::ShapeError {
                expected: points.len(),
                found: normals.len(),
            });
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(GraspError::InvalidObject(format!("mass must be positive, got {mass}")));
        }
        if !finite(&com) {
            return Err(GraspError::InvalidObject("center of mass is not finite".into()));
        }
        if let Some(p) = points.iter().find(|p| !finite(p)) {
            return Err(GraspError::InvalidObject(format!(
                "non-finite point {:?}",
                p.as_slice()
            )));
        }
        for n in &normals {
            check_unit(n)?;
        }
        let inertia = compute_inertia(&points, &com, mass)?;
        Ok(Self {
            points,
            normals,
            com,
            mass,
            inertia,
        })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn com(&self) -> Vec3 {
        self.com
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest distance from the center of mass to a surface sample.
    pub fn bounding_radius(&self) -> f64 {
        self.points.iter().map(|p| (p - self.com).norm()).fold(0.0, f64::max)
    }

    /// Index of the surface sample nearest to `query` and its squared distance.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d2 = (query - p).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    /// Signed distance to the surface, negative inside.
    ///
    /// Measured against the tangent plane of the nearest sample, so it is
    /// exact for queries on sampled points and approximate elsewhere.
    pub fn signed_distance(&self, query: &Vec3) -> f64 {
        let (k, _) = self.nearest(query);
        (query - self.points[k]).dot(&self.normals[k])
    }

    /// Signed distance together with the index of the sample that defines it.
    pub fn signed_distance_with_index(&self, query: &Vec3) -> (f64, usize) {
        let (k, _) = self.nearest(query);
        ((query - self.points[k]).dot(&self.normals[k]), k)
    }
}

/// `0.4 · mass · max_i ‖p_i − com‖²`: the object treated as a ball enclosing its samples.
pub fn compute_inertia(points: &[Vec3], com: &Vec3, mass: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(GraspError::EmptyObject);
    }
    let r2 = points.iter().map(|p| (p - com).norm_squared()).fold(0.0, f64::max);
    Ok(0.4 * mass * r2)
}

/// Signed distance from `query` to the object surface. See [`ObjectModel::signed_distance`].
pub fn signed_distance(object: &ObjectModel, query: &Vec3) -> f64 {
    object.signed_distance(query)
}

/// Orthonormal right-handed contact frame whose third axis is the surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentBasis {
    pub b: Vec3,
    pub t: Vec3,
    pub n: Vec3,
}

/// Builds the contact frame for `n`.
///
/// The first tangent is the global axis least aligned with `n` (lowest index on
/// ties), projected onto the tangent plane; the second completes `b × t = n`.
pub fn build_tangent_basis(n: &Vec3) -> Result<TangentBasis> {
    check_unit(n)?;
    let n = n.normalize();
    let mut pivot = 0;
    for k in 1..3 {
        if n[k].abs() < n[pivot].abs() {
            pivot = k;
        }
    }
    let mut axis = Vec3::zeros();
    axis[pivot] = 1.0;
    let b = (axis - n * n[pivot]).normalize();
    let t = n.cross(&b);
    Ok(TangentBasis { b, t, n })
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_unit(n: &Vec3) -> Result<()> {
    if !finite(n) || (n.norm() - 1.0).abs() > UNIT_TOL {
        return Err(GraspError::InvalidNormal([n.x, n.y, n.z]));
    }
    Ok(())
}

/// Per-point contact description of a grasp: likelihood, hand part and normal force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawContactState")]
pub struct ContactState {
    likelihood: Vec<f64>,
    part_label: Vec<u8>,
    force: Vec<f64>,
}

#[derive(Deserialize)]
struct RawContactState {
    likelihood: Vec<f64>,
    part_label: Vec<u8>,
    force: Vec<f64>,
}

impl TryFrom<RawContactState> for ContactState {
    type Error = GraspError;

    fn try_from(raw: RawContactState) -> Result<Self> {
        Self::new(raw.likelihood, raw.part_label, raw.force)
    }
}

impl ContactState {
    /// Validates and wraps the three per-point maps.
    ///
    /// A nonzero part label or a positive force requires a positive likelihood.
    /// Points with a small likelihood may carry label 0, which is what
    /// [`contact_map_from_hand`] produces below the contact threshold.
    pub fn new(likelihood: Vec<f64>, part_label: Vec<u8>, force: Vec<f64>) -> Result<Self> {
        let n = likelihood.len();
        for len in [part_label.len(), force.len()] {
            if len != n {
                return Err(GraspError::ShapeError {
                    expected: n,
                    found: len,
                });
            }
        }
        for i in 0..n {
            let (c, p, f) = (likelihood[i], part_label[i], force[i]);
            if !(0.0..=1.0).contains(&c) {
                return Err(GraspError::InvalidContactState(format!(
                    "likelihood[{i}] = {c} outside [0, 1]"
                )));
            }
            if p > MAX_PART {
                return Err(GraspError::InvalidContactState(format!(
                    "part_label[{i}] = {p} outside [0, 16]"
                )));
            }
            if !(f >= 0.0 && f.is_finite()) {
                return Err(GraspError::InvalidContactState(format!(
                    "force[{i}] = {f} is not a finite non-negative value"
                )));
            }
            if (f > 0.0 || p != 0) && c == 0.0 {
                return Err(GraspError::InvalidContactState(format!(
                    "point {i} carries a label or force but has zero likelihood"
                )));
            }
        }
        Ok(Self {
            likelihood,
            part_label,
            force,
        })
    }

    /// A state with no contact anywhere.
    pub fn empty(n: usize) -> Self {
        Self {
            likelihood: vec![0.0; n],
            part_label: vec![0; n],
            force: vec![0.0; n],
        }
    }

    /// Checks that the state describes exactly the samples of `object`.
    pub fn check_matches(&self, object: &ObjectModel) -> Result<()> {
        if self.len() != object.len() {
            return Err(GraspError::ShapeError {
                expected: object.len(),
                found: self.len(),
            });
        }
        Ok(())
    }

    pub fn likelihood(&self) -> &[f64] {
        &self.likelihood
    }

    pub fn part_label(&self) -> &[u8] {
        &self.part_label
    }

    pub fn force(&self) -> &[f64] {
        &self.force
    }

    pub fn len(&self) -> usize {
        self.likelihood.len()
    }

    pub fn is_empty(&self) -> bool {
        self.likelihood.is_empty()
    }

    /// Same likelihood and labels with a new force map.
    pub fn with_force(&self, force: Vec<f64>) -> Result<Self> {
        Self::new(self.likelihood.clone(), self.part_label.clone(), force)
    }

    /// Indices of points that carry force and a hand-part label.
    pub fn force_points(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.force[i] > 0.0 && self.part_label[i] != 0)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<u8>, Vec<f64>) {
        (self.likelihood, self.part_label, self.force)
    }
}

/// One sphere-swept sample of the hand surface.
///
/// A radius of zero makes the sample an ordinary surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandSample {
    pub point: Vec3,
    pub part: u8,
    pub radius: f64,
}

impl HandSample {
    pub fn point(point: Vec3, part: u8) -> Self {
        Self {
            point,
            part,
            radius: 0.0,
        }
    }

    /// Distance from `query` to the sample's surface, clamped at zero.
    pub fn surface_distance(&self, query: &Vec3) -> f64 {
        ((query - self.point).norm() - self.radius).max(0.0)
    }
}

/// Constants of the likelihood map `C = min(c0 / d, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    /// Distance (meters) at and below which the likelihood saturates at 1.
    pub contact_radius: f64,
    /// Likelihood at and above which a point counts as touched.
    pub threshold: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            contact_radius: 0.002,
            threshold: 0.5,
        }
    }
}

impl ContactParams {
    pub fn likelihood(&self, distance: f64) -> f64 {
        if distance <= self.contact_radius {
            1.0
        } else {
            self.contact_radius / distance
        }
    }

    /// Largest hand distance that still counts as contact.
    pub fn contact_distance(&self) -> f64 {
        self.contact_radius / self.threshold
    }
}

/// Contact likelihood and part labels induced on `object` by a posed hand.
///
/// The force channel is left at zero.
pub fn contact_map_from_hand(
    object: &ObjectModel,
    hand: &[HandSample],
    params: &ContactParams,
) -> Result<ContactState> {
    if hand.is_empty() {
        return Err(GraspError::EmptyHand);
    }
    let n = object.len();
    let mut likelihood = Vec::with_capacity(n);
    let mut part_label = Vec::with_capacity(n);
    for p in object.points() {
        let (d, part) = nearest_hand_sample(hand, p);
        let c = params.likelihood(d);
        likelihood.push(c);
        part_label.push(if c >= params.threshold { part } else { 0 });
    }
    ContactState::new(likelihood, part_label, vec![0.0; n])
}

/// Surface distance to the nearest hand sample and that sample's part.
pub(crate) fn nearest_hand_sample(hand: &[HandSample], p: &Vec3) -> (f64, u8) {
    let mut best = (f64::INFINITY, 0);
    for s in hand {
        let d = s.surface_distance(p);
        if d < best.0 {
            best = (d, s.part);
        }
    }
    best
}
