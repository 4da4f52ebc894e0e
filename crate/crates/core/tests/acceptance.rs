//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::time::Instant;

use forcegrasp_core::equilibrium::{assemble, default_gravity, Contact, EquilibriumSystem};
use forcegrasp_core::force_codec::{build_binning, DEFAULT_TEMPERATURE};
use forcegrasp_core::gradcheck::{check_pose_gradients, check_stability_gradient, GradCheckConfig};
use forcegrasp_core::hand::{HandModel, HandPose};
use forcegrasp_core::io::to_json;
use forcegrasp_core::keypoints::{combinations, extract_keypoints, select_keypoints, KeypointConfig, PartCluster};
use forcegrasp_core::optimize::{
    fit_keypoints, initialize_pose, register_global, rotation_distance, run_pipeline, EvaluateConfig, LossContext,
    LossWeights, OptimizationConfig,
};
use forcegrasp_core::report::{run_batch, standard_suite, BatchReport};
use forcegrasp_core::scene::{ContactParams, ObjectModel};
use forcegrasp_core::synth::{generate_contacts, generate_scene, ContactGenConfig, ContactStyle, SceneSpec, Shape};
use forcegrasp_core::{Config, GraspError, Vec3};
use nalgebra::{DMatrix, DVector, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Keypoint-guided to keypoint-free residual ratio allowed on the standard
/// 20-scene suite. Frozen after the first measurement.
const SUITE_RATIO_BOUND: f64 = 0.25;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sphere(samples: usize, seed: u64) -> ObjectModel {
    generate_scene(&SceneSpec {
        shape: Shape::Sphere { radius: 0.05 },
        sample_count: samples,
        seed,
    })
    .unwrap()
}

fn energy(sys: &EquilibriumSystem) -> f64 {
    match sys.stability_energy() {
        Ok(r) => r.energy,
        Err(GraspError::Solver(best)) => best.energy,
        Err(e) => panic!("{e}"),
    }
}

// ---------------------------------------------------------------------------
// 1. Grid-search oracle

const GRID: i64 = 50;
const GRID_STEP: f64 = 1.0 / GRID as f64;

/// `‖c + A x‖²` restricted to the grid `x_i ∈ {−1, −0.98, …, 1}`.
struct GridProblem {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

type Idx = [i64; 6];

impl GridProblem {
    fn from_system(sys: &EquilibriumSystem) -> Self {
        let n = sys.contact_count();
        let mut cols = Vec::with_capacity(2 * n);
        for i in 0..n {
            cols.push(sys.b_block().column(i) * (sys.mu() * sys.forces()[i]));
        }
        for i in 0..n {
            cols.push(sys.t_block().column(i) * (sys.mu() * sys.forces()[i]));
        }
        let c = sys.normal_block() * sys.forces() + DVector::from_column_slice(sys.gravity6().as_slice());
        let a = if cols.is_empty() {
            DMatrix::zeros(6, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Self { a, c }
    }

    fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Best grid point by depth-first branch and bound over index boxes,
    /// starting from the grid point nearest `hint`.
    ///
    /// A box is discarded when a lower bound of the objective over it cannot
    /// beat the incumbent: the linear underestimate at the box center, or the
    /// residual norm at the center minus the farthest the box can move it.
    fn minimum(&self, hint: &DVector<f64>) -> f64 {
        let k = self.dim();
        let mut cols = [[0.0f64; 6]; 6];
        for (j, col) in cols.iter_mut().enumerate().take(k) {
            col.copy_from_slice(self.a.column(j).as_slice());
        }
        let mut c = [0.0f64; 6];
        c.copy_from_slice(self.c.as_slice());
        let search = Search {
            k,
            cols,
            c,
            norms: cols.map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt()),
        };

        let mut rounded = [0i64; 6];
        for j in 0..k {
            rounded[j] = ((hint[j] / GRID_STEP).round() as i64).clamp(-GRID, GRID);
        }
        let mut best = search.descend(rounded).min(search.descend([0; 6]));
        let mut stack: Vec<(Idx, Idx)> = vec![([-GRID; 6], [GRID; 6])];
        for j in k..6 {
            stack[0].0[j] = 0;
            stack[0].1[j] = 0;
        }
        while let Some((lo, hi)) = stack.pop() {
            let mut r = c;
            for j in 0..k {
                let x = (lo[j] + hi[j]) as f64 * 0.5 * GRID_STEP;
                for (ri, aj) in r.iter_mut().zip(&cols[j]) {
                    *ri += aj * x;
                }
            }
            let f0: f64 = r.iter().map(|v| v * v).sum();
            let mut g = [0.0f64; 6];
            let mut slope = 0.0;
            let mut reach = 0.0;
            let mut split = None;
            let mut widest = -1.0;
            for j in 0..k {
                g[j] = 2.0 * cols[j].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
                let half = (hi[j] - lo[j]) as f64 * 0.5 * GRID_STEP;
                slope += half * g[j].abs();
                reach += half * search.norms[j];
                let w = half * search.norms[j];
                if hi[j] > lo[j] && w > widest {
                    widest = w;
                    split = Some(j);
                }
            }
            let near = (f0.sqrt() - reach).max(0.0);
            if (f0 - slope).max(near * near) >= best {
                continue;
            }
            let Some(j) = split else {
                best = best.min(f0);
                continue;
            };
            let mid = (lo[j] + hi[j]).div_euclid(2);
            let mut hi_a = hi;
            hi_a[j] = mid;
            let mut lo_b = lo;
            lo_b[j] = mid + 1;
            // Visit the half on the downhill side first.
            if g[j] > 0.0 {
                stack.push((lo_b, hi));
                stack.push((lo, hi_a));
            } else {
                stack.push((lo, hi_a));
                stack.push((lo_b, hi));
            }
        }
        best
    }
}

struct Search {
    k: usize,
    cols: [[f64; 6]; 6],
    c: [f64; 6],
    norms: [f64; 6],
}

impl Search {
    fn value(&self, idx: &Idx) -> f64 {
        let mut r = self.c;
        for (i, col) in idx.iter().zip(&self.cols).take(self.k) {
            let x = *i as f64 * GRID_STEP;
            for (ri, aj) in r.iter_mut().zip(col) {
                *ri += aj * x;
            }
        }
        r.iter().map(|v| v * v).sum()
    }

    /// Coordinate descent on the grid from `start`; returns the value reached.
    fn descend(&self, mut idx: Idx) -> f64 {
        let mut f = self.value(&idx);
        loop {
            let mut improved = false;
            for j in 0..self.k {
                for step in [-1i64, 1] {
                    while (-GRID..=GRID).contains(&(idx[j] + step)) {
                        idx[j] += step;
                        let fv = self.value(&idx);
                        if fv < f {
                            f = fv;
                            improved = true;
                        } else {
                            idx[j] -= step;
                            break;
                        }
                    }
                }
            }
            if !improved {
                return f;
            }
        }
    }
}

/// Exact box minimum by enumerating faces of `[−1, 1]^k`: every coordinate is
/// at its lower bound, its upper bound or free, and the free ones are solved
/// by least squares.
fn face_enumeration(p: &GridProblem) -> (f64, DVector<f64>) {
    let k = p.dim();
    let mut best = (f64::INFINITY, DVector::zeros(k));
    for code in 0..3usize.pow(k as u32) {
        let mut state = code;
        let mut fixed = p.c.clone();
        let mut free = Vec::new();
        let mut x = DVector::zeros(k);
        let mut free_idx = Vec::new();
        for j in 0..k {
            match state % 3 {
                0 => {
                    fixed -= p.a.column(j);
                    x[j] = -1.0;
                }
                1 => {
                    fixed += p.a.column(j);
                    x[j] = 1.0;
                }
                _ => {
                    free.push(p.a.column(j).into_owned());
                    free_idx.push(j);
                }
            }
            state /= 3;
        }
        let value = if free.is_empty() {
            fixed.norm_squared()
        } else {
            let m = DMatrix::from_columns(&free);
            let y = match (m.transpose() * &m).cholesky() {
                Some(ch) => ch.solve(&(-(m.transpose() * &fixed))),
                None => m.clone().svd(true, true).solve(&(-&fixed), 1e-14).unwrap(),
            };
            if y.iter().any(|v| v.abs() > 1.0 + 1e-12) {
                continue;
            }
            for (&j, v) in free_idx.iter().zip(y.iter()) {
                x[j] = *v;
            }
            (fixed + m * y).norm_squared()
        };
        if value < best.0 {
            best = (value, x);
        }
    }
    best
}

fn criterion_qp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let object = sphere(64, 7);
    let g = default_gravity();
    let mut worst_grid: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let mut above_grid = 0;
    let mut outside_bound = 0;
    let mut grid_secs = 0.0;
    let (mut brute_checked, mut brute_mismatch) = (0, 0);
    let mut within = 0;
    for _ in 0..200 {
        let n = rng.gen_range(0..=3usize);
        let contacts: Vec<Contact> = (0..n)
            .map(|_| {
                let i = rng.gen_range(0..object.len());
                Contact::new(object.points()[i], object.normals()[i], rng.gen_range(0.0..12.0))
            })
            .collect();
        let sys = assemble(&object, &contacts, rng.gen_range(0.1..1.2), &g).unwrap();
        let problem = GridProblem::from_system(&sys);
        let (exact, minimizer) = face_enumeration(&problem);
        let start = Instant::now();
        let e = energy(&sys);
        let grid = problem.minimum(&minimizer);
        grid_secs += start.elapsed().as_secs_f64();
        if n == 1 {
            let mut brute = f64::INFINITY;
            for i in -GRID..=GRID {
                for j in -GRID..=GRID {
                    let x = DVector::from_vec(vec![i as f64 * GRID_STEP, j as f64 * GRID_STEP]);
                    brute = brute.min((&problem.c + &problem.a * x).norm_squared());
                }
            }
            brute_checked += 1;
            if brute != grid {
                brute_mismatch += 1;
            }
        }
        // The grid point nearest the minimizer differs only in free
        // coordinates, by at most half a step each.
        let half_step: f64 = (0..problem.dim())
            .map(|j| 0.5 * GRID_STEP * problem.a.column(j).norm())
            .sum();
        worst_grid = worst_grid.max((e - grid).abs());
        if (e - grid).abs() <= 1e-3 {
            within += 1;
        }
        worst_exact = worst_exact.max((e - exact).abs() / exact.max(1.0));
        if e > grid + 1e-9 * grid.max(1.0) {
            above_grid += 1;
        }
        if grid - exact > half_step * half_step + 1e-9 * grid.max(1.0) {
            outside_bound += 1;
        }
    }
    let secs = grid_secs;
    println!(
        "  diagnostic: relative error against exact face enumeration {worst_exact:.1e}; \
         solver above the grid minimum in {above_grid}/200 systems; \
         grid minimum outside its discretization bound in {outside_bound}/200; \
         branch and bound differs from brute force in {brute_mismatch}/{brute_checked} one-contact systems"
    );
    outcome(
        worst_grid <= 1e-3 && secs < 60.0,
        format!("{within}/200 within 1e-3, max |E - E_grid| = {worst_grid:.3e}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------------------
// 2. Analytic equilibria

/// Sphere of radius 0.05 sampled at the six axis points.
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

fn pinch(force: f64) -> Vec<Contact> {
    vec![
        Contact::new(Vec3::new(0.05, 0.0, 0.0), Vec3::x(), force),
        Contact::new(Vec3::new(-0.05, 0.0, 0.0), -Vec3::x(), force),
    ]
}

fn criterion_analytic() -> Outcome {
    let g = default_gravity();
    let e = |contacts: &[Contact]| energy(&assemble(&ball(), contacts, 1.0, &g).unwrap());
    let free = e(&[]);
    let bottom = e(&[Contact::new(Vec3::new(0.0, 0.0, -0.05), -Vec3::z(), 9.81)]);
    let weak = e(&pinch(4.0));
    let exact = e(&pinch(4.905));
    let pass =
        (free - 96.2361).abs() <= 1e-9 && bottom.abs() <= 1e-8 && (weak - 3.2761).abs() <= 1e-4 && exact.abs() <= 1e-6;
    outcome(
        pass,
        format!("free {free}, bottom {bottom:.1e}, pinch 4.0 N {weak}, pinch 4.905 N {exact:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. Loss necessity

fn criterion_loss_necessity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let object = sphere(256, 3);
    let g = default_gravity();
    let mut stable = 0;
    let mut counterexamples = 0;
    for _ in 0..500 {
        // Antipodal pairs make held configurations common.
        let pairs = rng.gen_range(1..=3);
        let mut contacts = Vec::new();
        for _ in 0..pairs {
            let i = rng.gen_range(0..object.len());
            let (j, _) = object.nearest(&(-object.points()[i]));
            for k in [i, j] {
                contacts.push(Contact::new(
                    object.points()[k],
                    object.normals()[k],
                    rng.gen_range(0.0..25.0),
                ));
            }
        }
        if rng.gen_bool(0.5) {
            contacts.pop();
        }
        let sys = assemble(&object, &contacts, rng.gen_range(0.2..1.2), &g).unwrap();
        if energy(&sys) < 1e-6 {
            stable += 1;
            if sys.stability_loss() >= 1e-6 {
                counterexamples += 1;
            }
        }
    }
    outcome(
        counterexamples == 0 && stable > 0,
        format!("{stable}/500 systems with energy < 1e-6, {counterexamples} with loss >= 1e-6"),
    )
}

// ---------------------------------------------------------------------------
// 4. Gradient fidelity

fn criterion_gradients() -> Outcome {
    let g = default_gravity();
    let config = GradCheckConfig::default();
    let mut reports = vec![check_stability_gradient(&sphere(256, 3), 1.0, &g, &config).unwrap()];

    let object = sphere(384, 0);
    let contacts = generate_contacts(&object, ContactStyle::Tripod, 0, 1.0, &g, &ContactGenConfig::default()).unwrap();
    let keypoints = extract_keypoints(&object, &contacts, &KeypointConfig::default(), 1.0, &g).unwrap();
    let model = HandModel::default();
    let opt = OptimizationConfig::default();
    let (stage1, _) = initialize_pose(&model, &HandPose::mean(), &keypoints).unwrap();
    let (stage2, _) = fit_keypoints(&model, &stage1, &keypoints, &opt).unwrap();
    let ctx = LossContext {
        model: &model,
        keypoints: Some(&keypoints),
        object: Some(&object),
        contact_target: Some(contacts.likelihood()),
        contact_params: ContactParams::default(),
    };
    reports.extend(check_pose_gradients(
        &stage2,
        &ctx,
        &LossWeights::from_config(&opt),
        &config,
    ));
    let pass = reports.iter().all(|r| r.ok(config.points));
    let detail = reports
        .iter()
        .map(|r| {
            format!(
                "{} {}/{} (worst {:.1e})",
                r.name, r.passed, r.checked, r.worst_rel_error
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

// ---------------------------------------------------------------------------
// 5. Codec round trip

fn criterion_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (s, sigma) = (10, 1.0);
    let b = build_binning(s, 0.7, sigma).unwrap();
    let (lo, hi) = (b.edges()[1].ln(), b.edges()[s - 1].ln());
    let bound = 3.0 * sigma / (s - 2) as f64 + 1e-9;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let f = rng.gen_range(lo..hi).exp();
        let back = b.decode(&b.encode(f).unwrap(), DEFAULT_TEMPERATURE).unwrap();
        worst = worst.max((back.ln() - f.ln()).abs());
    }
    let zero = b.decode(&b.encode(0.0).unwrap(), DEFAULT_TEMPERATURE).unwrap();
    outcome(
        worst <= bound && zero == 0.0,
        format!("max log error {worst:.4} (bound {bound:.4}), decode(encode(0)) = {zero}"),
    )
}

// ---------------------------------------------------------------------------
// 6. Registration recovery

fn criterion_registration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_rot: f64 = 0.0;
    let mut worst_trans: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(3..=8);
        let centers: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                )
            })
            .collect();
        let q = nalgebra::Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let r: Rotation3<f64> = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let t = Vec3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        let targets: Vec<Vec3> = centers.iter().map(|c| r * c + t).collect();
        let reg = register_global(&centers, &targets).unwrap();
        worst_rot = worst_rot.max(rotation_distance(&reg.transform.rotation, &r));
        worst_trans = worst_trans.max((reg.transform.translation - t).norm());
    }
    outcome(
        worst_rot < 1e-6 && worst_trans < 1e-9,
        format!("max rotation error {worst_rot:.1e} rad, max translation error {worst_trans:.1e} m"),
    )
}

// ---------------------------------------------------------------------------
// 7. Keypoint exhaustiveness

fn random_representatives(rng: &mut ChaCha8Rng, object: &ObjectModel, parts: &[u8]) -> BTreeMap<u8, PartCluster> {
    parts
        .iter()
        .map(|&part| {
            let i = rng.gen_range(0..object.len());
            let cluster = PartCluster {
                part,
                points: vec![i],
                center: object.points()[i],
                force: rng.gen_range(0.5..12.0),
                normal: object.normals()[i],
            };
            (part, cluster)
        })
        .collect()
}

fn criterion_keypoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let g = default_gravity();
    let shapes = [
        Shape::Sphere { radius: 0.05 },
        Shape::Box {
            size: [0.06, 0.08, 0.05],
        },
        Shape::Cylinder {
            radius: 0.03,
            height: 0.1,
        },
    ];
    let mut violations = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    for scene in 0..50 {
        let object = generate_scene(&SceneSpec {
            shape: shapes[scene % shapes.len()],
            sample_count: 256,
            seed: scene as u64,
        })
        .unwrap();
        let h = rng.gen_range(4..=8);
        let mut all: Vec<u8> = (1..=16).collect();
        for k in 0..h {
            let j = rng.gen_range(k..all.len());
            all.swap(k, j);
        }
        let mut parts = all[..h].to_vec();
        parts.sort_unstable();
        let reps = random_representatives(&mut rng, &object, &parts);
        let selected = select_keypoints(&reps, 3, &object, 1.0, &g).unwrap();
        let list: Vec<&PartCluster> = reps.values().collect();
        for combo in combinations(list.len(), 3) {
            let contacts: Vec<Contact> = combo
                .iter()
                .map(|&i| Contact::new(list[i].center, list[i].normal, list[i].force))
                .collect();
            let e = energy(&assemble(&object, &contacts, 1.0, &g).unwrap());
            worst_margin = worst_margin.max(selected.energy - e);
            if selected.energy > e + 1e-9 * e.max(1.0) {
                violations += 1;
            }
        }
    }

    let object = sphere(512, 9);
    let parts: Vec<u8> = (1..=16).collect();
    let reps = random_representatives(&mut rng, &object, &parts);
    let start = Instant::now();
    select_keypoints(&reps, 3, &object, 1.0, &g).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        violations == 0 && secs < 10.0,
        format!(
            "{violations} triples beat the selection (largest excess {worst_margin:.1e}); \
             16-part search ({} QPs) {secs:.2} s",
            combinations(16, 3).len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. End-to-end regression

fn criterion_end_to_end() -> Outcome {
    let start = Instant::now();
    let g = default_gravity();
    let object = sphere(2048, 0);
    let contacts = generate_contacts(&object, ContactStyle::Tripod, 0, 1.0, &g, &ContactGenConfig::default()).unwrap();
    let keypoints = extract_keypoints(&object, &contacts, &KeypointConfig::default(), 1.0, &g).unwrap();
    let r = run_pipeline(
        &HandModel::default(),
        &object,
        &contacts,
        keypoints,
        &ContactParams::default(),
        &OptimizationConfig::default(),
        1.0,
        &g,
        &EvaluateConfig::default(),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.report.residual < 1e-3
        && r.report.max_penetration < 0.005
        && r.report.residual < r.report_stage1.residual
        && secs < 30.0;
    outcome(
        pass,
        format!(
            "residual {:.3e} (stage I {:.3e}), penetration {:.2} mm, {} contacts, {secs:.1} s",
            r.report.residual,
            r.report_stage1.residual,
            r.report.max_penetration * 1e3,
            r.report.contact_count
        ),
    )
}

// ---------------------------------------------------------------------------
// 9 and 10. Suite improvement and determinism

fn batch() -> BatchReport {
    run_batch(&standard_suite(20, 1024), &Config::default(), 0).unwrap()
}

fn criterion_suite(report: &BatchReport) -> Outcome {
    let (Some(final_mean), Some(baseline)) = (report.mean_residual(), report.mean_residual_baseline()) else {
        return outcome(false, format!("{} scenes failed", report.failures()));
    };
    let ratio = final_mean / baseline;
    outcome(
        report.failures() == 0 && ratio <= SUITE_RATIO_BOUND,
        format!(
            "mean residual {final_mean:.3e} vs keypoint-free {baseline:.3e}, ratio {ratio:.2e} (bound {SUITE_RATIO_BOUND})"
        ),
    )
}

fn outputs(report: &BatchReport) -> [String; 3] {
    [report.to_csv(), report.curve_csv(), to_json(report).unwrap()]
}

fn criterion_determinism(first: &BatchReport) -> Outcome {
    let second = batch();
    let same = outputs(first) == outputs(&second);
    outcome(
        same,
        format!(
            "report.csv, curve.csv and report JSON {}",
            if same { "identical" } else { "differ" }
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| {
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report("1 QP oracle equivalence", criterion_qp_oracle());
    report("2 analytic equilibria", criterion_analytic());
    report("3 loss necessity", criterion_loss_necessity());
    report("4 gradient fidelity", criterion_gradients());
    report("5 codec round trip", criterion_codec());
    report("6 registration recovery", criterion_registration());
    report("7 keypoint exhaustiveness", criterion_keypoints());
    report("8 end-to-end regression", criterion_end_to_end());
    let suite = batch();
    report("9 pipeline improvement", criterion_suite(&suite));
    report("10 determinism", criterion_determinism(&suite));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
