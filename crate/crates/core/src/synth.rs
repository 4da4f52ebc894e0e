//! Synthetic objects and contact targets.
//!
//! Objects are analytic shapes centered at the origin with unit mass, sampled
//! quasi-uniformly (area-proportional across faces) with exact normals.
//! Contact targets are a few disjoint surface patches, one per hand part,
//! whose forces come from the force-existence problem, so every generated
//! grasp can hold the object by construction.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{assemble, force_existence, Contact, ForceExistence};
use crate::error::{GraspError, Result};
use crate::force_codec::spread_force;
use crate::scene::{ContactState, ObjectModel, MAX_PART};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Full side lengths along x, y, z.
    Box {
        size: [f64; 3],
    },
    /// Axis along z.
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// A box that is thin along z.
    Plate {
        size: [f64; 3],
    },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match self {
            Shape::Sphere { radius } => vec![*radius],
            Shape::Box { size } | Shape::Plate { size } => size.to_vec(),
            Shape::Cylinder { radius, height } => vec![*radius, *height],
        };
        if dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err(GraspError::InvalidShape(format!(
                "dimensions must be positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub sample_count: usize,
    pub seed: u64,
}

pub const MIN_SAMPLES: usize = 16;

/// Additive recurrence on the unit square with low discrepancy.
struct Recurrence {
    state: [f64; 2],
}

impl Recurrence {
    const STEP: [f64; 2] = [0.754_877_666_246_692_7, 0.569_840_290_998_053_3];

    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            state: [rng.gen::<f64>(), rng.gen::<f64>()],
        }
    }

    fn next(&mut self) -> (f64, f64) {
        for (s, a) in self.state.iter_mut().zip(Self::STEP) {
            *s = (*s + a).fract();
        }
        (self.state[0], self.state[1])
    }
}

/// Splits `total` over `weights` proportionally, largest remainders first.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        counts[k] += 1;
    }
    counts
}

fn sample_sphere(radius: f64, count: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let n = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            (n * radius, n)
        })
        .unzip()
}

fn sample_box(size: [f64; 3], count: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<Vec3>) {
    let half = Vec3::from(size) / 2.0;
    // Faces: +x, -x, +y, -y, +z, -z.
    let areas: Vec<f64> = (0..6)
        .map(|f| {
            let axis = f / 2;
            size[(axis + 1) % 3] * size[(axis + 2) % 3]
        })
        .collect();
    let counts = apportion(count, &areas);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for (face, &k) in counts.iter().enumerate() {
        let axis = face / 2;
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut seq = Recurrence::new(rng);
        let mut n = Vec3::zeros();
        n[axis] = sign;
        for _ in 0..k {
            let (u, v) = seq.next();
            let mut p = Vec3::zeros();
            p[axis] = sign * half[axis];
            p[a] = (2.0 * u - 1.0) * half[a];
            p[b] = (2.0 * v - 1.0) * half[b];
            points.push(p);
            normals.push(n);
        }
    }
    (points, normals)
}

fn sample_cylinder(radius: f64, height: f64, count: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<Vec3>) {
    let cap = PI * radius * radius;
    let counts = apportion(count, &[TAU * radius * height, cap, cap]);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    let mut seq = Recurrence::new(rng);
    for _ in 0..counts[0] {
        let (u, v) = seq.next();
        let (s, c) = (TAU * u).sin_cos();
        points.push(Vec3::new(radius * c, radius * s, (v - 0.5) * height));
        normals.push(Vec3::new(c, s, 0.0));
    }
    for (k, sign) in [(counts[1], 1.0), (counts[2], -1.0)] {
        let mut seq = Recurrence::new(rng);
        for _ in 0..k {
            let (u, v) = seq.next();
            let r = radius * u.sqrt();
            let (s, c) = (TAU * v).sin_cos();
            points.push(Vec3::new(r * c, r * s, sign * height / 2.0));
            normals.push(Vec3::new(0.0, 0.0, sign));
        }
    }
    (points, normals)
}

/// Samples the shape surface; the center of mass is the origin and the mass is 1 kg.
pub fn generate_scene(spec: &SceneSpec) -> Result<ObjectModel> {
    spec.shape.validate()?;
    if spec.sample_count < MIN_SAMPLES {
        return Err(GraspError::InvalidShape(format!(
            "sample_count must be at least {MIN_SAMPLES}, got {}",
            spec.sample_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (points, normals) = match spec.shape {
        Shape::Sphere { radius } => sample_sphere(radius, spec.sample_count),
        Shape::Box { size } | Shape::Plate { size } => sample_box(size, spec.sample_count, &mut rng),
        Shape::Cylinder { radius, height } => sample_cylinder(radius, height, spec.sample_count, &mut rng),
    };
    ObjectModel::new(points, normals, Vec3::zeros(), 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactStyle {
    /// Thumb opposing two fingertips.
    Tripod,
    /// Thumb opposing the index fingertip.
    Pinch,
    /// Thumb and four fingertips around the object, palm on top.
    Wrap,
    /// Random parts at random surface locations.
    Random,
}

impl std::str::FromStr for ContactStyle {
    type Err = GraspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tripod" => Ok(Self::Tripod),
            "pinch" => Ok(Self::Pinch),
            "wrap" => Ok(Self::Wrap),
            "random" => Ok(Self::Random),
            other => Err(GraspError::InvalidConfig(format!("unknown contact style '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactGenConfig {
    /// Patch radius (meters).
    pub patch_radius: f64,
    /// Friction used when solving for patch forces, as a fraction of `mu`.
    pub friction_margin: f64,
    /// Smallest normal force per patch (Newtons).
    pub min_force: f64,
    pub max_force: f64,
    /// Candidate grasp axes drawn in addition to the coordinate axes.
    pub random_axes: usize,
    /// Largest object width a hand comfortably spans across a grasp axis.
    pub max_width: f64,
}

impl Default for ContactGenConfig {
    fn default() -> Self {
        Self {
            patch_radius: 0.008,
            friction_margin: 0.8,
            min_force: 1.0,
            max_force: 20.0,
            random_axes: 32,
            max_width: 0.09,
        }
    }
}

/// Distal part ids, thumb first.
const DISTAL: [u8; 5] = [4, 7, 10, 13, 16];
const PALM: u8 = 1;

/// A patch request: a ray from an anchor and the part that should touch there.
struct Probe {
    origin: Vec3,
    dir: Vec3,
    part: u8,
}

/// Where the ray `origin + s dir` (s > 0) meets the sampled surface: the
/// sample nearest the ray among those facing it, projected onto the ray.
fn cast(object: &ObjectModel, origin: &Vec3, dir: &Vec3, max_offset: f64) -> Option<(Vec3, Vec3)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, (p, n)) in object.points().iter().zip(object.normals()).enumerate() {
        if n.dot(dir) <= 0.3 {
            continue;
        }
        let rel = p - origin;
        let s = rel.dot(dir);
        if s <= 0.0 {
            continue;
        }
        let off = (rel - dir * s).norm();
        if off <= max_offset && best.is_none_or(|(_, b, _)| off < b) {
            best = Some((i, off, s));
        }
    }
    best.map(|(i, _, s)| (origin + dir * s, object.normals()[i]))
}

/// Samples within `radius` of `center` whose normals agree with `normal`.
fn patch(object: &ObjectModel, center: &Vec3, normal: &Vec3, radius: f64) -> Vec<usize> {
    (0..object.len())
        .filter(|&i| (object.points()[i] - center).norm() <= radius && object.normals()[i].dot(normal) > 0.5)
        .collect()
}

/// Turns patch centers into a full contact state, or `None` when the patches
/// overlap or cannot hold the object.
fn build_state(
    object: &ObjectModel,
    centers: &[(Vec3, Vec3, u8)],
    mu: f64,
    gravity: &Vec3,
    cfg: &ContactGenConfig,
) -> Result<Option<ContactState>> {
    let r = cfg.patch_radius;
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            let d = (centers[a].0 - centers[b].0).norm();
            if d < 3.0 * r {
                return Ok(None);
            }
        }
    }
    let patches: Vec<Vec<usize>> = centers.iter().map(|(c, n, _)| patch(object, c, n, r)).collect();
    if patches.iter().any(|p| p.is_empty()) {
        return Ok(None);
    }
    let points: Vec<(Vec3, Vec3)> = centers.iter().map(|&(c, n, _)| (c, n)).collect();
    let params = ForceExistence {
        max_force: cfg.max_force,
        min_force: cfg.min_force,
        ..ForceExistence::default()
    };
    let sol = force_existence(object, &points, mu * cfg.friction_margin, gravity, &params)?;
    if sol.energy > 1e-9 {
        return Ok(None);
    }
    let n = object.len();
    let mut mask = vec![false; n];
    let mut likelihood = vec![0.0; n];
    let mut label = vec![0u8; n];
    for (members, &(_, _, part)) in patches.iter().zip(centers) {
        for &i in members {
            mask[i] = true;
            likelihood[i] = 1.0;
            label[i] = part;
        }
    }
    let labels: Vec<(Vec3, f64)> = points.iter().zip(&sol.forces).map(|((p, _), f)| (*p, *f)).collect();
    let spread = spread_force(&labels, object, &mask)?;
    let state = ContactState::new(likelihood, label, spread.force)?;

    // Accept only if the spread per-point forces still admit equilibrium.
    let contacts: Vec<Contact> = state
        .force_points()
        .map(|i| Contact::new(object.points()[i], object.normals()[i], state.force()[i]))
        .collect();
    let energy = match assemble(object, &contacts, mu, gravity)?.stability_energy() {
        Ok(r) => r.energy,
        Err(GraspError::Solver(best)) => best.energy,
        Err(e) => return Err(e),
    };
    Ok((energy < 1e-6).then_some(state))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..TAU);
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Unit vector orthogonal to `u`, preferring the horizontal one (orthogonal to gravity too).
fn side_axis(u: &Vec3, down: &Vec3) -> Vec3 {
    let v = down.cross(u);
    if v.norm() > 0.1 {
        v.normalize()
    } else {
        crate::scene::build_tangent_basis(u).map(|f| f.b).unwrap_or(Vec3::x())
    }
}

fn extent(object: &ObjectModel, dir: &Vec3) -> (f64, f64) {
    object
        .points()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let s = (p - object.com()).dot(dir);
            (lo.min(s), hi.max(s))
        })
}

/// Grasp axes ordered from most to least promising: close to horizontal and
/// narrow enough to span.
fn candidate_axes(object: &ObjectModel, down: &Vec3, rng: &mut ChaCha8Rng, cfg: &ContactGenConfig) -> Vec<Vec3> {
    let mut axes = vec![Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
    axes.extend((0..cfg.random_axes).map(|_| random_unit(rng)));
    let mut scored: Vec<(f64, usize, Vec3)> = axes
        .into_iter()
        .enumerate()
        .map(|(k, u)| {
            let (lo, hi) = extent(object, &u);
            let width = hi - lo;
            let score = u.dot(down).abs() + 10.0 * (width - cfg.max_width).max(0.0);
            (score, k, u)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, _, u)| u).collect()
}

/// Ray layout of a structured style around `anchor` with grasp axis `u`.
///
/// The thumb presses from `+u`, the fingers from `-u` spread along `v` with
/// the index at `+v`; `away` is the side the palm should end up on.
fn style_probes(style: ContactStyle, anchor: &Vec3, u: &Vec3, v: &Vec3, away: &Vec3) -> Vec<Probe> {
    let thumb = Probe {
        origin: *anchor,
        dir: *u,
        part: DISTAL[0],
    };
    let finger = |offset: f64, part: u8| Probe {
        origin: anchor + v * offset,
        dir: -u,
        part,
    };
    match style {
        ContactStyle::Tripod => vec![thumb, finger(0.018, DISTAL[1]), finger(-0.018, DISTAL[2])],
        ContactStyle::Pinch => vec![thumb, finger(0.0, DISTAL[1])],
        ContactStyle::Wrap => {
            let mut probes = vec![thumb];
            for (k, off) in [0.0375, 0.0125, -0.0125, -0.0375].iter().enumerate() {
                probes.push(finger(*off, DISTAL[k + 1]));
            }
            probes.push(Probe {
                origin: *anchor,
                dir: *away,
                part: PALM,
            });
            probes
        }
        ContactStyle::Random => unreachable!("random style has no fixed layout"),
    }
}

fn structured(
    object: &ObjectModel,
    style: ContactStyle,
    mu: f64,
    gravity: &Vec3,
    rng: &mut ChaCha8Rng,
    cfg: &ContactGenConfig,
) -> Result<Option<ContactState>> {
    let down = gravity.try_normalize(1e-12).unwrap_or(-Vec3::z());
    for u in candidate_axes(object, &down, rng, cfg) {
        let v = side_axis(&u, &down);
        let w = u.cross(&v);
        let w = if w.dot(&down) > 0.0 { -w } else { w };
        let (lo, hi) = extent(object, &w);
        let mut anchors = Vec::new();
        // Large objects are held near the edge facing away from gravity.
        if style != ContactStyle::Wrap && hi - lo > 0.06 {
            anchors.push(object.com() + w * (hi - 0.03));
        }
        anchors.push(object.com());
        for anchor in anchors {
            let away = (anchor - object.com()).try_normalize(1e-9).unwrap_or(-down);
            // With the index at +v, a right hand puts its palm on the u x v side
            // of the thumb-index-middle triangle.
            let v = if u.cross(&v).dot(&away) >= 0.0 { v } else { -v };
            let probes = style_probes(style, &anchor, &u, &v, &away);
            let hits: Option<Vec<(Vec3, Vec3, u8)>> = probes
                .iter()
                .map(|p| cast(object, &p.origin, &p.dir, cfg.patch_radius).map(|(x, n)| (x, n, p.part)))
                .collect();
            if let Some(hits) = hits {
                if let Some(state) = build_state(object, &hits, mu, gravity, cfg)? {
                    return Ok(Some(state));
                }
            }
        }
    }
    Ok(None)
}

fn random_style(
    object: &ObjectModel,
    mu: f64,
    gravity: &Vec3,
    rng: &mut ChaCha8Rng,
    cfg: &ContactGenConfig,
) -> Result<Option<ContactState>> {
    for _ in 0..64 {
        let count = rng.gen_range(3..=5usize);
        let mut parts: Vec<u8> = (1..=MAX_PART).collect();
        for i in 0..count {
            let j = rng.gen_range(i..parts.len());
            parts.swap(i, j);
        }
        let centers: Vec<(Vec3, Vec3, u8)> = (0..count)
            .map(|k| {
                let i = rng.gen_range(0..object.len());
                (object.points()[i], object.normals()[i], parts[k])
            })
            .collect();
        if let Some(state) = build_state(object, &centers, mu, gravity, cfg)? {
            return Ok(Some(state));
        }
    }
    Ok(None)
}

/// Builds a contact target of the requested style that can hold the object.
pub fn generate_contacts(
    object: &ObjectModel,
    style: ContactStyle,
    seed: u64,
    mu: f64,
    gravity: &Vec3,
    cfg: &ContactGenConfig,
) -> Result<ContactState> {
    if object.bounding_radius() < 2.0 * cfg.patch_radius {
        return Err(GraspError::StyleInfeasible(format!(
            "object radius {:.4} m is too small for {:.4} m patches",
            object.bounding_radius(),
            cfg.patch_radius
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = match style {
        ContactStyle::Random => random_style(object, mu, gravity, &mut rng, cfg)?,
        _ => structured(object, style, mu, gravity, &mut rng, cfg)?,
    };
    state.ok_or_else(|| GraspError::StyleInfeasible(format!("no stable {style:?} layout found")))
}
