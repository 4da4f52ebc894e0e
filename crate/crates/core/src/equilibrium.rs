//! Rigid-body equilibrium of a grasped object under known normal forces.
//!
//! With normal forces `F` fixed, the object's linear and angular acceleration
//! is affine in the friction coefficients `γ, δ ∈ [−1, 1]ⁿ`:
//!
//! ```text
//! [a; α] = N F + μ B (γ ∘ F) + μ T (δ ∘ F) + [g; 0]
//! ```
//!
//! Column `i` of `N` is the unit push of contact `i` on the object, `−n_i`
//! (surface normals point outward), scaled by `1/m` in the linear rows and
//! turned into a torque `(p_i − com) × (−n_i) / I` in the angular rows. `B`
//! and `T` are built the same way from the contact tangents `b_i`, `t_i`.

use nalgebra::{DMatrix, DVector, Vector6};

use crate::error::{GraspError, Result};
use crate::qp::{minimize_least_squares, Feasible, QpSettings};
use serde::Serialize;

use crate::scene::{build_tangent_basis, ContactState, ObjectModel};
use crate::Vec3;

/// Friction coefficient used when none is configured.
pub const DEFAULT_MU: f64 = 1.0;

/// Standard gravity pointing down the z axis.
pub fn default_gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -9.81)
}

/// A point contact on the object surface with its outward normal and normal force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub point: Vec3,
    pub normal: Vec3,
    pub force: f64,
}

impl Contact {
    pub fn new(point: Vec3, normal: Vec3, force: f64) -> Self {
        Self { point, normal, force }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSystem {
    normal_block: DMatrix<f64>,
    b_block: DMatrix<f64>,
    t_block: DMatrix<f64>,
    gravity6: Vector6<f64>,
    mu: f64,
    forces: DVector<f64>,
}

/// Minimal achievable acceleration and the friction coefficients that attain it.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityResult {
    /// `‖a‖² + ‖α‖²` at the optimum.
    pub energy: f64,
    pub gamma: DVector<f64>,
    pub delta: DVector<f64>,
    /// `(a, α)` at the optimum.
    pub accel: Vector6<f64>,
}

/// Wrench-per-unit-force columns of a contact direction `dir` applied at `point`.
fn wrench_column(point: &Vec3, dir: &Vec3, com: &Vec3, inv_mass: f64, inv_inertia: f64) -> Vector6<f64> {
    let torque = (point - com).cross(dir);
    let mut col = Vector6::zeros();
    col.fixed_rows_mut::<3>(0).copy_from(&(dir * inv_mass));
    col.fixed_rows_mut::<3>(3).copy_from(&(torque * inv_inertia));
    col
}

/// Builds `N`, `B`, `T` and the gravity column for the given contacts.
pub fn assemble(object: &ObjectModel, contacts: &[Contact], mu: f64, gravity: &Vec3) -> Result<EquilibriumSystem> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(GraspError::InvalidConfig(format!(
            "friction coefficient must be non-negative, got {mu}"
        )));
    }
    if !gravity.iter().all(|g| g.is_finite()) {
        return Err(GraspError::InvalidConfig("gravity must be finite".into()));
    }
    let n = contacts.len();
    let com = object.com();
    let inv_mass = 1.0 / object.mass();
    // A point-like object has no lever arms; its angular rows stay zero.
    let inv_inertia = if object.inertia() > 0.0 {
        1.0 / object.inertia()
    } else {
        0.0
    };

    let mut normal_block = DMatrix::zeros(6, n);
    let mut b_block = DMatrix::zeros(6, n);
    let mut t_block = DMatrix::zeros(6, n);
    let mut forces = DVector::zeros(n);
    for (i, c) in contacts.iter().enumerate() {
        if !(c.force >= 0.0 && c.force.is_finite()) {
            return Err(GraspError::InvalidForce(c.force));
        }
        let basis = build_tangent_basis(&c.normal)?;
        normal_block
            .column_mut(i)
            .copy_from(&wrench_column(&c.point, &(-basis.n), &com, inv_mass, inv_inertia));
        b_block
            .column_mut(i)
            .copy_from(&wrench_column(&c.point, &basis.b, &com, inv_mass, inv_inertia));
        t_block
            .column_mut(i)
            .copy_from(&wrench_column(&c.point, &basis.t, &com, inv_mass, inv_inertia));
        forces[i] = c.force;
    }
    let mut gravity6 = Vector6::zeros();
    gravity6.fixed_rows_mut::<3>(0).copy_from(gravity);
    Ok(EquilibriumSystem {
        normal_block,
        b_block,
        t_block,
        gravity6,
        mu,
        forces,
    })
}

impl EquilibriumSystem {
    pub fn contact_count(&self) -> usize {
        self.forces.len()
    }

    pub fn normal_block(&self) -> &DMatrix<f64> {
        &self.normal_block
    }

    pub fn b_block(&self) -> &DMatrix<f64> {
        &self.b_block
    }

    pub fn t_block(&self) -> &DMatrix<f64> {
        &self.t_block
    }

    pub fn gravity6(&self) -> &Vector6<f64> {
        &self.gravity6
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn forces(&self) -> &DVector<f64> {
        &self.forces
    }

    /// `(a, α)` for the given friction coefficients.
    pub fn acceleration(&self, gamma: &DVector<f64>, delta: &DVector<f64>) -> Vector6<f64> {
        let f = &self.forces;
        let acc = &self.normal_block * f
            + &self.b_block * gamma.component_mul(f) * self.mu
            + &self.t_block * delta.component_mul(f) * self.mu;
        Vector6::from_column_slice(acc.as_slice()) + self.gravity6
    }

    /// Friction design matrix `[μ B diag(F), μ T diag(F)]` and offset `N F + g`.
    fn friction_problem(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.contact_count();
        let mut m = DMatrix::zeros(6, 2 * n);
        for i in 0..n {
            let w = self.mu * self.forces[i];
            m.column_mut(i).copy_from(&(self.b_block.column(i) * w));
            m.column_mut(n + i).copy_from(&(self.t_block.column(i) * w));
        }
        let offset = &self.normal_block * &self.forces + DVector::from_column_slice(self.gravity6.as_slice());
        (m, offset)
    }

    /// Stability energy with the default solver settings.
    pub fn stability_energy(&self) -> Result<StabilityResult> {
        self.stability_energy_with(&QpSettings::default())
    }

    /// Minimizes `‖a‖² + ‖α‖²` over `γ, δ ∈ [−1, 1]ⁿ`.
    pub fn stability_energy_with(&self, settings: &QpSettings) -> Result<StabilityResult> {
        let n = self.contact_count();
        let (m, offset) = self.friction_problem();
        let sol = minimize_least_squares(&m, &offset, &Feasible::symmetric_box(2 * n, 1.0), None, settings);
        let gamma = sol.x.rows(0, n).into_owned();
        let delta = sol.x.rows(n, n).into_owned();
        let accel = self.acceleration(&gamma, &delta);
        let result = StabilityResult {
            energy: accel.norm_squared(),
            gamma,
            delta,
            accel,
        };
        if sol.converged {
            Ok(result)
        } else {
            Err(GraspError::Solver(Box::new(result)))
        }
    }

    /// Bound-based stability loss on the system's own forces.
    pub fn stability_loss(&self) -> f64 {
        self.loss_at(&self.forces)
    }

    /// Stability loss with the forces replaced by `force_map ∘ likelihood`.
    pub fn stability_loss_masked(&self, force_map: &[f64], likelihood: &[f64]) -> Result<f64> {
        let f = self.masked_forces(force_map, likelihood)?;
        Ok(self.loss_at(&f))
    }

    /// Subgradient of [`Self::stability_loss_masked`] with respect to `force_map`.
    ///
    /// A hinge whose argument is exactly zero is treated as inactive.
    pub fn loss_gradient(&self, force_map: &[f64], likelihood: &[f64]) -> Result<DVector<f64>> {
        let f = self.masked_forces(force_map, likelihood)?;
        let (lower_mat, upper_mat) = self.bound_matrices();
        let lower = &lower_mat * &f + DVector::from_column_slice(self.gravity6.as_slice());
        let upper = &upper_mat * &f + DVector::from_column_slice(self.gravity6.as_slice());
        let n = self.contact_count();
        let mut grad = DVector::zeros(n);
        for row in 0..6 {
            if lower[row] > 0.0 {
                grad += lower_mat.row(row).transpose();
            }
            if upper[row] < 0.0 {
                grad -= upper_mat.row(row).transpose();
            }
        }
        for j in 0..n {
            grad[j] *= likelihood[j];
        }
        Ok(grad)
    }

    /// Distance in `force_map` space (max norm) from the nearest hinge kink
    /// of the loss: for each bound row, its value divided by how fast a unit
    /// change of every force can move it.
    pub fn hinge_margin(&self, force_map: &[f64], likelihood: &[f64]) -> Result<f64> {
        let f = self.masked_forces(force_map, likelihood)?;
        let (lower_mat, upper_mat) = self.bound_matrices();
        let g = DVector::from_column_slice(self.gravity6.as_slice());
        let mut margin = f64::INFINITY;
        for mat in [&lower_mat, &upper_mat] {
            let values = mat * &f + &g;
            for row in 0..6 {
                let rate: f64 = mat.row(row).iter().zip(likelihood).map(|(m, c)| (m * c).abs()).sum();
                if rate > 0.0 {
                    margin = margin.min(values[row].abs() / rate);
                }
            }
        }
        Ok(margin)
    }

    /// Lower and upper bound matrices `N ∓ μ(|B| + |T|)`.
    fn bound_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let fric = (self.b_block.abs() + self.t_block.abs()) * self.mu;
        (&self.normal_block - &fric, &self.normal_block + &fric)
    }

    fn loss_at(&self, f: &DVector<f64>) -> f64 {
        let (lower_mat, upper_mat) = self.bound_matrices();
        let g = DVector::from_column_slice(self.gravity6.as_slice());
        let lower = &lower_mat * f + &g;
        let upper = &upper_mat * f + &g;
        lower.iter().map(|v| v.max(0.0)).sum::<f64>() - upper.iter().map(|v| v.min(0.0)).sum::<f64>()
    }

    fn masked_forces(&self, force_map: &[f64], likelihood: &[f64]) -> Result<DVector<f64>> {
        let n = self.contact_count();
        for len in [force_map.len(), likelihood.len()] {
            if len != n {
                return Err(GraspError::ShapeError {
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(DVector::from_iterator(
            n,
            force_map.iter().zip(likelihood).map(|(f, c)| f * c),
        ))
    }
}

/// Convenience: assemble and solve in one call.
pub fn stability_energy(
    object: &ObjectModel,
    contacts: &[Contact],
    mu: f64,
    gravity: &Vec3,
) -> Result<StabilityResult> {
    assemble(object, contacts, mu, gravity)?.stability_energy()
}

/// Settings for the force-existence problem used when grading a grasp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceExistence {
    /// Upper bound on each contact's normal force (Newtons).
    pub max_force: f64,
    /// Lower bound on each normal force; this part of the force pushes
    /// straight along the inward normal.
    pub min_force: f64,
    pub settings: QpSettings,
}

impl Default for ForceExistence {
    fn default() -> Self {
        Self {
            max_force: 20.0,
            min_force: 0.0,
            settings: QpSettings {
                max_iters: 50_000,
                tol: 1e-9,
                polish_every: 0,
            },
        }
    }
}

/// Outcome of the force-existence problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceSolution {
    pub energy: f64,
    /// Normal force per contact.
    pub forces: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub accel: Vector6<f64>,
    pub converged: bool,
}

/// Minimizes `‖a‖² + ‖α‖²` jointly over normal forces `0 ≤ F_i ≤ F_max` and
/// friction coefficients `γ, δ ∈ [−1, 1]`.
///
/// The product `(F, γF, δF)` ranges over a friction pyramid, so the problem is
/// solved exactly in the pyramid's edge coordinates: each contact force is a
/// nonnegative combination of the four edges `−n ± μb ± μt` with total weight
/// at most `F_max`.
pub fn force_existence(
    object: &ObjectModel,
    points: &[(Vec3, Vec3)],
    mu: f64,
    gravity: &Vec3,
    params: &ForceExistence,
) -> Result<ForceSolution> {
    let unit: Vec<Contact> = points.iter().map(|&(p, n)| Contact::new(p, n, 1.0)).collect();
    let sys = assemble(object, &unit, mu, gravity)?;
    let n = unit.len();
    const SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
    let mut m = DMatrix::zeros(6, 4 * n);
    for i in 0..n {
        for (k, (sb, st)) in SIGNS.iter().enumerate() {
            let col =
                sys.normal_block.column(i) + sys.b_block.column(i) * (mu * sb) + sys.t_block.column(i) * (mu * st);
            m.column_mut(4 * i + k).copy_from(&col);
        }
    }
    if !(params.min_force >= 0.0 && params.min_force <= params.max_force) {
        return Err(GraspError::InvalidForce(params.min_force));
    }
    let mut offset = DVector::from_column_slice(sys.gravity6.as_slice());
    for i in 0..n {
        offset += sys.normal_block.column(i) * params.min_force;
    }
    let set = Feasible::CappedSimplex {
        block: 4,
        cap: params.max_force - params.min_force,
    };
    let sol = minimize_least_squares(&m, &offset, &set, None, &params.settings);

    let mut forces = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let w = sol.x.rows(4 * i, 4);
        let f: f64 = w.sum() + params.min_force;
        let (g, d) = if f > 0.0 {
            let g = SIGNS.iter().zip(w.iter()).map(|((sb, _), l)| sb * l).sum::<f64>() / f;
            let d = SIGNS.iter().zip(w.iter()).map(|((_, st), l)| st * l).sum::<f64>() / f;
            (g, d)
        } else {
            (0.0, 0.0)
        };
        forces.push(f);
        gamma.push(g.clamp(-1.0, 1.0));
        delta.push(d.clamp(-1.0, 1.0));
    }
    let accel = Vector6::from_column_slice(sol.residual.as_slice());
    Ok(ForceSolution {
        energy: accel.norm_squared(),
        forces,
        gamma,
        delta,
        accel,
        converged: sol.converged,
    })
}

/// Point contacts of every labelled, force-carrying point of a contact state.
pub fn contacts_from_state(object: &ObjectModel, state: &ContactState) -> Result<Vec<Contact>> {
    state.check_matches(object)?;
    Ok(state
        .force_points()
        .map(|i| Contact::new(object.points()[i], object.normals()[i], state.force()[i]))
        .collect())
}

/// Stability summary of a contact state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub contact_count: usize,
    pub energy: f64,
    /// `(a, α)` at the optimal friction coefficients.
    pub acceleration: [f64; 6],
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    /// Stability loss with forces masked by the contact likelihood.
    pub loss: f64,
    pub converged: bool,
}

/// Energy, optimal friction and masked loss of the force-carrying points of `state`.
///
/// A solver that stops early still yields its best iterate, flagged as not converged.
pub fn analyze(object: &ObjectModel, state: &ContactState, mu: f64, gravity: &Vec3) -> Result<Analysis> {
    let contacts = contacts_from_state(object, state)?;
    let idx: Vec<usize> = state.force_points().collect();
    let sys = assemble(object, &contacts, mu, gravity)?;
    let (result, converged) = match sys.stability_energy() {
        Ok(r) => (r, true),
        Err(GraspError::Solver(r)) => (*r, false),
        Err(e) => return Err(e),
    };
    let force: Vec<f64> = idx.iter().map(|&i| state.force()[i]).collect();
    let likelihood: Vec<f64> = idx.iter().map(|&i| state.likelihood()[i]).collect();
    let loss = sys.stability_loss_masked(&force, &likelihood)?;
    Ok(Analysis {
        contact_count: contacts.len(),
        energy: result.energy,
        acceleration: result.accel.into(),
        gamma: result.gamma.iter().copied().collect(),
        delta: result.delta.iter().copied().collect(),
        loss,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Sphere of radius 0.05 around the origin sampled only at the six axis
    /// points, which fixes `I = 0.4 · 0.05²`.
    fn ball() -> ObjectModel {
        let dirs = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
        ObjectModel::new(
            dirs.iter().map(|d| d * 0.05).collect(),
            dirs.to_vec(),
            Vec3::zeros(),
            1.0,
        )
        .unwrap()
    }

    fn g() -> Vec3 {
        default_gravity()
    }

    fn pinch(force: f64) -> Vec<Contact> {
        vec![
            Contact::new(Vec3::new(0.05, 0.0, 0.0), Vec3::x(), force),
            Contact::new(Vec3::new(-0.05, 0.0, 0.0), -Vec3::x(), force),
        ]
    }

    fn bottom(force: f64) -> Vec<Contact> {
        vec![Contact::new(Vec3::new(0.0, 0.0, -0.05), -Vec3::z(), force)]
    }

    /// Independent oracle: enumerate every face of the box (each coordinate at
    /// its lower bound, upper bound or free), solve the unconstrained least
    /// squares on the face and keep the best feasible candidate.
    fn face_enumeration(sys: &EquilibriumSystem) -> f64 {
        let n = sys.contact_count();
        let k = 2 * n;
        let mut cols = Vec::new();
        for i in 0..n {
            cols.push(sys.b_block().column(i) * (sys.mu() * sys.forces()[i]));
        }
        for i in 0..n {
            cols.push(sys.t_block().column(i) * (sys.mu() * sys.forces()[i]));
        }
        let base = sys.normal_block() * sys.forces() + DVector::from_column_slice(sys.gravity6().as_slice());
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(k as u32) {
            let mut state = code;
            let mut fixed = base.clone();
            let mut free = Vec::new();
            for col in &cols {
                match state % 3 {
                    0 => fixed -= col,
                    1 => fixed += col,
                    _ => free.push(col.clone()),
                }
                state /= 3;
            }
            let value = if free.is_empty() {
                fixed.norm_squared()
            } else {
                let m = DMatrix::from_columns(&free);
                let svd = m.clone().svd(true, true);
                let y = svd.solve(&(-&fixed), 1e-14).unwrap();
                if y.iter().any(|v| v.abs() > 1.0 + 1e-12) {
                    continue;
                }
                (fixed + m * y).norm_squared()
            };
            best = best.min(value);
        }
        best
    }

    #[test]
    fn free_fall() {
        let sys = assemble(&ball(), &[], 1.0, &g()).unwrap();
        let res = sys.stability_energy().unwrap();
        assert_relative_eq!(res.energy, 96.2361, epsilon = 1e-9);
        assert_eq!(res.accel, Vector6::new(0.0, 0.0, -9.81, 0.0, 0.0, 0.0));
    }

    #[test]
    fn bottom_support_columns() {
        let sys = assemble(&ball(), &bottom(9.81), 1.0, &g()).unwrap();
        let lin = sys.normal_block().fixed_view::<3, 1>(0, 0) * 9.81;
        assert_relative_eq!(lin, Vec3::new(0.0, 0.0, 9.81), epsilon = 1e-12);
        assert_eq!(sys.normal_block().fixed_view::<3, 1>(3, 0).norm(), 0.0);
        let res = sys.stability_energy().unwrap();
        assert!(res.energy < 1e-8);
        assert!(res.gamma.norm() < 1e-9 && res.delta.norm() < 1e-9);
    }

    #[test]
    fn off_axis_torque_column() {
        let obj = ball();
        let c = [Contact::new(Vec3::new(0.05, 0.0, 0.0), -Vec3::z(), 1.0)];
        let sys = assemble(&obj, &c, 1.0, &g()).unwrap();
        // Push +z applied at +x about the origin turns about −y.
        let expected = Vec3::new(0.05, 0.0, 0.0).cross(&Vec3::z()) / obj.inertia();
        assert_relative_eq!(
            Vec3::from(sys.normal_block().fixed_view::<3, 1>(3, 0)),
            expected,
            epsilon = 1e-9
        );
        assert_relative_eq!(expected, Vec3::new(0.0, -0.05, 0.0) / obj.inertia(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_normals() {
        let c = [Contact::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 2.0), 1.0)];
        assert!(matches!(
            assemble(&ball(), &c, 1.0, &g()),
            Err(GraspError::InvalidNormal(_))
        ));
    }

    #[test]
    fn side_pinch_energies() {
        let sys = assemble(&ball(), &pinch(4.0), 1.0, &g()).unwrap();
        let res = sys.stability_energy().unwrap();
        assert_relative_eq!(res.energy, 3.2761, epsilon = 1e-6);
        assert_relative_eq!(face_enumeration(&sys), 3.2761, epsilon = 1e-9);

        let sys = assemble(&ball(), &pinch(4.905), 1.0, &g()).unwrap();
        let res = sys.stability_energy().unwrap();
        assert!(res.energy < 1e-6, "{}", res.energy);
        assert!(face_enumeration(&sys) < 1e-12);
    }

    #[test]
    fn result_consistency() {
        let sys = assemble(&ball(), &pinch(4.0), 1.0, &g()).unwrap();
        let res = sys.stability_energy().unwrap();
        assert!((sys.acceleration(&res.gamma, &res.delta) - res.accel).norm() < 1e-9);
        assert!((res.accel.norm_squared() - res.energy).abs() < 1e-9);
        assert!(res.gamma.iter().chain(res.delta.iter()).all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn loss_examples() {
        let obj = ball();
        let sys = assemble(&obj, &bottom(9.81), 1.0, &g()).unwrap();
        assert_eq!(sys.stability_loss(), 0.0);

        let free = assemble(&obj, &[], 1.0, &g()).unwrap();
        assert_relative_eq!(free.stability_loss(), 9.81, epsilon = 1e-12);

        let weak = assemble(&obj, &pinch(4.0), 1.0, &g()).unwrap();
        assert!(weak.stability_loss() > 0.0);
    }

    #[test]
    fn masked_loss_examples() {
        let obj = ball();
        let sys = assemble(&obj, &pinch(4.0), 1.0, &g()).unwrap();
        let f = [4.0, 4.0];
        assert_eq!(
            sys.stability_loss_masked(&f, &[1.0, 1.0]).unwrap(),
            sys.stability_loss()
        );
        assert_relative_eq!(
            sys.stability_loss_masked(&f, &[0.0, 0.0]).unwrap(),
            9.81,
            epsilon = 1e-12
        );

        let sys = assemble(&obj, &bottom(19.62), 1.0, &g()).unwrap();
        assert!(sys.stability_loss_masked(&[19.62], &[0.5]).unwrap().abs() < 1e-12);
        assert!(matches!(
            sys.stability_loss_masked(&[1.0, 2.0], &[1.0]),
            Err(GraspError::ShapeError { .. })
        ));
    }

    #[test]
    fn gradient_examples() {
        let obj = ball();
        let free = assemble(&obj, &[], 1.0, &g()).unwrap();
        assert_eq!(free.loss_gradient(&[], &[]).unwrap().len(), 0);

        let sys = assemble(&obj, &bottom(9.0), 1.0, &g()).unwrap();
        let grad = sys.loss_gradient(&[9.0], &[1.0]).unwrap();
        assert!(grad[0] < 0.0);
        let h = 1e-5;
        let fd = (sys.stability_loss_masked(&[9.0 + h], &[1.0]).unwrap()
            - sys.stability_loss_masked(&[9.0 - h], &[1.0]).unwrap())
            / (2.0 * h);
        assert_relative_eq!(grad[0], fd, max_relative = 1e-6);

        // Strong support with friction slack: zero loss in a neighborhood.
        let c = [
            Contact::new(Vec3::new(0.0, 0.0, -0.05), -Vec3::z(), 9.81),
            Contact::new(Vec3::new(0.05, 0.0, 0.0), Vec3::x(), 3.0),
            Contact::new(Vec3::new(-0.05, 0.0, 0.0), -Vec3::x(), 3.0),
        ];
        let sys = assemble(&obj, &c, 1.0, &g()).unwrap();
        assert_eq!(sys.stability_loss(), 0.0);
        let grad = sys.loss_gradient(&[9.81, 3.0, 3.0], &[1.0; 3]).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn force_existence_finds_pinch_equilibrium() {
        let obj = ball();
        let points = [
            (Vec3::new(0.05, 0.0, 0.0), Vec3::x()),
            (Vec3::new(-0.05, 0.0, 0.0), -Vec3::x()),
        ];
        let sol = force_existence(&obj, &points, 1.0, &g(), &ForceExistence::default()).unwrap();
        assert!(sol.energy < 1e-8, "{}", sol.energy);
        assert!(sol.forces.iter().all(|&f| (4.905 - 1e-6..=20.0 + 1e-9).contains(&f)));

        let none = force_existence(&obj, &[], 1.0, &g(), &ForceExistence::default()).unwrap();
        assert_relative_eq!(none.energy, 96.2361, epsilon = 1e-9);

        let sol = force_existence(
            &obj,
            &[(Vec3::new(0.0, 0.0, -0.05), -Vec3::z())],
            1.0,
            &g(),
            &ForceExistence::default(),
        )
        .unwrap();
        assert!(sol.energy < 1e-10);
        assert_relative_eq!(sol.forces[0], 9.81, epsilon = 1e-6);
    }

    /// Signed permutation matrices with determinant +1. The pivot-rule contact
    /// frame turns with these rotations (up to tangent sign), so the
    /// linearized friction pyramid does too.
    fn cube_rotations() -> Vec<nalgebra::Matrix3<f64>> {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::new();
        for p in perms {
            for signs in 0..8 {
                let mut m = nalgebra::Matrix3::zeros();
                for (row, &col) in p.iter().enumerate() {
                    m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
                }
                if m.determinant() > 0.0 {
                    out.push(m);
                }
            }
        }
        assert_eq!(out.len(), 24);
        out
    }

    fn contact_strategy() -> impl Strategy<Value = Contact> {
        (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU, 0.0f64..8.0).prop_map(|(z, phi, f)| {
            let r = (1.0 - z * z).sqrt();
            let n = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            Contact::new(n * 0.05, n, f)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn energy_matches_face_enumeration(contacts in proptest::collection::vec(contact_strategy(), 0..3)) {
            let sys = assemble(&ball(), &contacts, 1.0, &g()).unwrap();
            let res = sys.stability_energy().unwrap();
            let oracle = face_enumeration(&sys);
            prop_assert!((res.energy - oracle).abs() <= 1e-6 * oracle.max(1.0), "{} vs {}", res.energy, oracle);
        }

        #[test]
        fn zero_energy_implies_zero_loss(contacts in proptest::collection::vec(contact_strategy(), 0..4)) {
            let sys = assemble(&ball(), &contacts, 1.0, &g()).unwrap();
            let res = sys.stability_energy().unwrap();
            if res.energy < 1e-6 {
                prop_assert!(sys.stability_loss() < 1e-6);
            }
        }

        #[test]
        fn energy_invariant_under_cube_rotations(contacts in proptest::collection::vec(contact_strategy(), 1..4),
                                                 which in 0usize..24) {
            let rot = cube_rotations()[which];
            let obj = ball();
            let rotated_obj = ObjectModel::new(
                obj.points().iter().map(|p| rot * p).collect(),
                obj.normals().iter().map(|n| rot * n).collect(),
                Vec3::zeros(), 1.0).unwrap();
            let rotated: Vec<Contact> = contacts.iter()
                .map(|c| Contact::new(rot * c.point, rot * c.normal, c.force)).collect();
            let a = stability_energy(&obj, &contacts, 1.0, &g()).unwrap().energy;
            let b = stability_energy(&rotated_obj, &rotated, 1.0, &(rot * g())).unwrap().energy;
            prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0), "{} vs {}", a, b);
        }

        #[test]
        fn loss_is_convex_along_segments(contacts in proptest::collection::vec(contact_strategy(), 1..4),
                                         other in proptest::collection::vec(0.0f64..8.0, 3), t in 0.0f64..1.0) {
            let sys = assemble(&ball(), &contacts, 1.0, &g()).unwrap();
            let n = contacts.len();
            let fa: Vec<f64> = contacts.iter().map(|c| c.force).collect();
            let fb: Vec<f64> = other[..n].to_vec();
            let fm: Vec<f64> = fa.iter().zip(&fb).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            let ones = vec![1.0; n];
            let la = sys.stability_loss_masked(&fa, &ones).unwrap();
            let lb = sys.stability_loss_masked(&fb, &ones).unwrap();
            let lm = sys.stability_loss_masked(&fm, &ones).unwrap();
            prop_assert!(lm <= (1.0 - t) * la + t * lb + 1e-9 * (la + lb).max(1.0));
        }
    }

    #[test]
    fn analyze_reads_force_points_of_a_state() {
        let obj = ball();
        // Bottom point (index 5) carries the full weight.
        let state = ContactState::new(
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            vec![0, 0, 0, 0, 0, 1],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 9.81],
        )
        .unwrap();
        let a = analyze(&obj, &state, 1.0, &g()).unwrap();
        assert_eq!(a.contact_count, 1);
        assert!(a.energy < 1e-8);
        assert!(a.loss < 1e-12);
        assert!(a.converged);
        let none = analyze(&obj, &ContactState::empty(6), 1.0, &g()).unwrap();
        assert_relative_eq!(none.energy, 96.2361, epsilon = 1e-9);
        assert!(analyze(&obj, &ContactState::empty(5), 1.0, &g()).is_err());
    }
}
