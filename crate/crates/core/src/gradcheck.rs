//! Finite-difference checks of the analytic gradients.
//!
//! Points closer than a margin to a kink are skipped: at a kink the central
//! difference averages two one-sided slopes and matches neither.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{assemble, Contact};
use crate::error::Result;
use crate::hand::{HandPose, PARAM_COUNT, PARAM_TRANS};
use crate::optimize::{evaluate_losses, kink_margins, numeric_gradients, LossContext, LossWeights};
use crate::scene::ObjectModel;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    /// Accepted points per check.
    pub points: usize,
    /// Candidates drawn before giving up.
    pub max_attempts: usize,
    /// Central-difference step.
    pub h: f64,
    /// Allowed [`relative_error`].
    pub rel_tol: f64,
    /// Smallest distance from a hinge, saturation or limit kink, in the
    /// units of the checked variable's effect (Newtons for forces).
    pub hinge_margin: f64,
    /// Smallest first-to-second nearest-neighbor gap (meters).
    pub switch_margin: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            points: 100,
            max_attempts: 20_000,
            h: 1e-6,
            rel_tol: 1e-3,
            hinge_margin: 1e-4,
            switch_margin: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub passed: usize,
    pub attempts: usize,
    pub worst_rel_error: f64,
}

impl GradCheckReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checked: 0,
            passed: 0,
            attempts: 0,
            worst_rel_error: 0.0,
        }
    }

    /// Every requested point was checked and passed.
    pub fn ok(&self, wanted: usize) -> bool {
        self.checked == wanted && self.passed == wanted
    }

    fn record(&mut self, err: f64, tol: f64) {
        self.checked += 1;
        if err <= tol {
            self.passed += 1;
        }
        self.worst_rel_error = self.worst_rel_error.max(err);
    }
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, floor)`; zero when the vectors are equal.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = a.iter().chain(b).fold(floor, |m, x| m.max(x.abs()));
    let err = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if err == 0.0 {
        0.0
    } else {
        err / scale
    }
}

/// Round-off level of a central difference of a loss of magnitude `value`,
/// expressed as the gradient scale at which it amounts to `rel_tol`.
///
/// Differences below `100 ε |L| / h` cannot be resolved, so a vanishing
/// analytic gradient is compared against that level instead of against zero.
fn noise_floor(value: f64, config: &GradCheckConfig) -> f64 {
    100.0 * f64::EPSILON * value.abs() / config.h / config.rel_tol
}

/// Checks `loss_gradient` on random contact subsets of `object` with random
/// forces and likelihoods.
pub fn check_stability_gradient(
    object: &ObjectModel,
    mu: f64,
    gravity: &Vec3,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport::new("stability_loss");
    while report.checked < config.points && report.attempts < config.max_attempts {
        report.attempts += 1;
        let n = rng.gen_range(1..=6usize.min(object.len()));
        let contacts: Vec<Contact> = (0..n)
            .map(|_| {
                let i = rng.gen_range(0..object.len());
                Contact::new(object.points()[i], object.normals()[i], 1.0)
            })
            .collect();
        let sys = assemble(object, &contacts, mu, gravity)?;
        let force: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..15.0)).collect();
        let likelihood: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        if sys.hinge_margin(&force, &likelihood)? < config.hinge_margin {
            continue;
        }
        let analytic = sys.loss_gradient(&force, &likelihood)?;
        let mut numeric = vec![0.0; n];
        for j in 0..n {
            let mut plus = force.clone();
            let mut minus = force.clone();
            plus[j] += config.h;
            minus[j] -= config.h;
            numeric[j] = (sys.stability_loss_masked(&plus, &likelihood)?
                - sys.stability_loss_masked(&minus, &likelihood)?)
                / (2.0 * config.h);
        }
        let floor = noise_floor(sys.stability_loss_masked(&force, &likelihood)?, config);
        report.record(relative_error(analytic.as_slice(), &numeric, floor), config.rel_tol);
    }
    Ok(report)
}

/// Checks every stage-III loss term around `base` (random perturbations of
/// up to 0.05 rad and 4 mm). Returns one report per term plus the total.
pub fn check_pose_gradients(
    base: &HandPose,
    ctx: &LossContext,
    weights: &LossWeights,
    config: &GradCheckConfig,
) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names = ["kp", "contact", "pene", "reg", "total"];
    let mut reports: Vec<GradCheckReport> = names.iter().map(|n| GradCheckReport::new(n)).collect();
    let mut attempts = 0;
    let mut checked = 0;
    while checked < config.points && attempts < config.max_attempts {
        attempts += 1;
        let mut p = base.params();
        for (i, v) in p.iter_mut().enumerate() {
            let s = if (PARAM_TRANS..PARAM_TRANS + 3).contains(&i) {
                0.004
            } else {
                0.05
            };
            *v += rng.gen_range(-s..s);
        }
        let pose = HandPose::from_params(&p);
        let m = kink_margins(&pose, ctx);
        if m.hinge < config.hinge_margin || m.switch < config.switch_margin {
            continue;
        }
        checked += 1;
        let (terms, analytic) = evaluate_losses(&pose, ctx, weights, true);
        let a = analytic.expect("gradient requested");
        let values = [terms.kp, terms.contact, terms.pene, terms.reg, terms.total];
        let n = numeric_gradients(&pose, ctx, weights, config.h);
        let pairs: [(&[f64; PARAM_COUNT], &[f64; PARAM_COUNT]); 5] = [
            (&a.kp, &n.kp),
            (&a.contact, &n.contact),
            (&a.pene, &n.pene),
            (&a.reg, &n.reg),
            (&a.total, &n.total),
        ];
        for ((r, (x, y)), v) in reports.iter_mut().zip(pairs).zip(values) {
            r.record(relative_error(x, y, noise_floor(v, config)), config.rel_tol);
        }
    }
    for r in &mut reports {
        r.attempts = attempts;
    }
    reports
}
