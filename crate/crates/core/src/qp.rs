//! Constrained linear least squares: `min ‖c + M x‖²` over a convex set.
//!
//! The solver is accelerated projected gradient with step `1/L`, where `L` is
//! the largest eigenvalue of the Hessian `2 MᵀM`, restarted whenever the
//! objective goes up. On boxes it also runs a subspace polish: the free
//! coordinates are moved to the least-squares minimizer of the current face,
//! which finishes in one step once the active set is identified.

use nalgebra::{DMatrix, DVector};

/// Relative objective change treated as rounding noise.
const ROUNDING: f64 = 8.0 * f64::EPSILON;

/// Feasible set for [`minimize_least_squares`].
#[derive(Debug, Clone, PartialEq)]
pub enum Feasible {
    /// `lower ≤ x ≤ upper` elementwise.
    Box { lower: DVector<f64>, upper: DVector<f64> },
    /// Consecutive blocks of `block` entries, each with `x ≥ 0` and `Σ x ≤ cap`.
    CappedSimplex { block: usize, cap: f64 },
}

impl Feasible {
    pub fn symmetric_box(n: usize, half_width: f64) -> Self {
        Feasible::Box {
            lower: DVector::from_element(n, -half_width),
            upper: DVector::from_element(n, half_width),
        }
    }

    pub fn project(&self, x: &mut DVector<f64>) {
        match self {
            Feasible::Box { lower, upper } => {
                for i in 0..x.len() {
                    x[i] = x[i].clamp(lower[i], upper[i]);
                }
            }
            Feasible::CappedSimplex { block, cap } => {
                for chunk in x.as_mut_slice().chunks_mut(*block) {
                    project_capped_simplex(chunk, *cap);
                }
            }
        }
    }
}

/// Projects `z` onto `{x ≥ 0, Σ x ≤ cap}`.
fn project_capped_simplex(z: &mut [f64], cap: f64) {
    let clipped: f64 = z.iter().map(|v| v.max(0.0)).sum();
    if clipped <= cap {
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        return;
    }
    // Euclidean projection onto the simplex Σ x = cap.
    let mut sorted: Vec<f64> = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - cap) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    z.iter_mut().for_each(|v| *v = (*v - theta).max(0.0));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iters: usize,
    /// Stationarity tolerance relative to `max(1, ‖∇f(0)‖)`.
    pub tol: f64,
    /// Iterations between subspace polish attempts on boxes.
    pub polish_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-8,
            polish_every: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// `c + M x` at the solution.
    pub residual: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the gradient mapping at `x`.
    pub stationarity: f64,
}

struct Problem<'a> {
    m: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
}

impl Problem<'_> {
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.c + self.m * x
    }

    fn gradient(&self, r: &DVector<f64>) -> DVector<f64> {
        self.m.tr_mul(r) * 2.0
    }
}

/// Minimizes `‖c + M x‖²` over `set`, starting from `x0` (projected) or the origin.
pub fn minimize_least_squares(
    m: &DMatrix<f64>,
    c: &DVector<f64>,
    set: &Feasible,
    x0: Option<&DVector<f64>>,
    settings: &QpSettings,
) -> QpSolution {
    let n = m.ncols();
    let prob = Problem { m, c };
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    set.project(&mut x);

    let lipschitz = 2.0 * largest_gram_eigenvalue(m);
    let scale = prob.gradient(c).norm().max(1.0);
    let target = settings.tol * scale;

    let mut r = prob.residual(&x);
    let mut f = r.norm_squared();
    if n == 0 || lipschitz <= 0.0 {
        return QpSolution {
            x,
            residual: r,
            objective: f,
            iterations: 0,
            converged: true,
            stationarity: 0.0,
        };
    }
    let step = 1.0 / lipschitz;

    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;
    while iterations < settings.max_iters {
        stationarity = gradient_mapping(&prob, set, &x, &r, step);
        if stationarity <= target {
            break;
        }
        iterations += 1;

        let ry = prob.residual(&y);
        let mut next = &y - prob.gradient(&ry) * step;
        set.project(&mut next);
        let r_next = prob.residual(&next);
        let f_next = r_next.norm_squared();
        if f_next > f + ROUNDING * f {
            // Restart: drop momentum and retry from the current iterate.
            momentum = 1.0;
            y = x.clone();
            continue;
        }
        let momentum_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        y = &next + (&next - &x) * ((momentum - 1.0) / momentum_next);
        momentum = momentum_next;
        x = next;
        r = r_next;
        f = f_next;

        if settings.polish_every > 0 && iterations % settings.polish_every == 0 {
            if let Feasible::Box { lower, upper } = set {
                let (xp, rp, fp) = polish_box(&prob, lower, upper, &x, target);
                if fp <= f + ROUNDING * f {
                    x = xp;
                    r = rp;
                    f = fp;
                    y = x.clone();
                    momentum = 1.0;
                }
            }
        }
    }
    QpSolution {
        x,
        residual: r,
        objective: f,
        iterations,
        converged: stationarity <= target,
        stationarity,
    }
}

/// `‖x − P(x − step·∇f)‖ / step`, zero exactly at a minimizer.
fn gradient_mapping(prob: &Problem<'_>, set: &Feasible, x: &DVector<f64>, r: &DVector<f64>, step: f64) -> f64 {
    let mut moved = x - prob.gradient(r) * step;
    set.project(&mut moved);
    (x - moved).norm() / step
}

/// Primal active-set refinement on a box, warm-started from `x`.
///
/// Coordinates at a bound are held fixed while the others move to the
/// least-squares minimizer of the face (stopping at the first bound crossed).
/// At a face minimizer the fixed coordinate whose gradient points most
/// strongly into the box is released. Stops when no coordinate qualifies.
fn polish_box(
    prob: &Problem<'_>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    x: &DVector<f64>,
    release_tol: f64,
) -> (DVector<f64>, DVector<f64>, f64) {
    let n = x.len();
    let mut x = x.clone();
    let mut fixed: Vec<bool> = (0..n)
        .map(|i| {
            let margin = 1e-12 * (upper[i] - lower[i]).max(1.0);
            x[i] <= lower[i] + margin || x[i] >= upper[i] - margin
        })
        .collect();
    for i in 0..n {
        if fixed[i] {
            x[i] = if x[i] - lower[i] < upper[i] - x[i] {
                lower[i]
            } else {
                upper[i]
            };
        }
    }
    let mut r = prob.residual(&x);
    for _ in 0..(4 * n + 16) {
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        let mut blocked = false;
        if !free.is_empty() {
            let sub = DMatrix::from_fn(prob.m.nrows(), free.len(), |row, k| prob.m[(row, free[k])]);
            let svd = sub.svd(true, true);
            let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
            let Ok(delta) = svd.solve(&(-&r), eps) else {
                break;
            };
            let mut alpha = 1.0f64;
            let mut blocking = None;
            for (k, &i) in free.iter().enumerate() {
                let d = delta[k];
                let limit = if d > 0.0 {
                    (upper[i] - x[i]) / d
                } else if d < 0.0 {
                    (lower[i] - x[i]) / d
                } else {
                    continue;
                };
                if limit < alpha {
                    alpha = limit.max(0.0);
                    blocking = Some(i);
                }
            }
            for (k, &i) in free.iter().enumerate() {
                x[i] = (x[i] + alpha * delta[k]).clamp(lower[i], upper[i]);
            }
            if let Some(i) = blocking {
                x[i] = if delta[free.iter().position(|&j| j == i).unwrap()] > 0.0 {
                    upper[i]
                } else {
                    lower[i]
                };
                fixed[i] = true;
                blocked = true;
            }
            r = prob.residual(&x);
        }
        if blocked {
            continue;
        }
        let g = prob.gradient(&r);
        let mut release = None;
        let mut worst = release_tol;
        for i in 0..n {
            if !fixed[i] {
                continue;
            }
            // Moving inward from the bound would decrease the objective.
            let inward = if x[i] <= lower[i] { -g[i] } else { g[i] };
            if inward > worst {
                worst = inward;
                release = Some(i);
            }
        }
        match release {
            Some(i) => fixed[i] = false,
            None => break,
        }
    }
    let f = r.norm_squared();
    (x, r, f)
}

/// Largest eigenvalue of `MᵀM`, computed on the smaller of the two Gram matrices.
pub fn largest_gram_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    gram.symmetric_eigenvalues().max().max(0.0)
}
