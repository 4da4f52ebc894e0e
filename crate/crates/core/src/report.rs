//! Batch evaluation over many synthetic scenes.
//!
//! Each scene runs the full pipeline (synthetic contacts, keypoints, stages
//! I to III, evaluation) plus the keypoint-free baseline. Scene `i` uses seed
//! `seed + i` for both its surface sampling and its contacts, so rows do not
//! depend on scheduling. Wall times go to a separate table because they are
//! the only non-reproducible output.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{GraspError, Result};
use crate::io::fmt_f64;
use crate::keypoints::extract_keypoints;
use crate::optimize::{run_keypoint_free, run_pipeline};
use crate::synth::{generate_contacts, generate_scene, ContactStyle, SceneSpec, Shape};

/// Environment variable capping the number of batch worker threads.
pub const THREADS_ENV: &str = "GRASP_EQ_THREADS";

/// One batch entry; its seed is assigned by the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchScene {
    pub shape: Shape,
    pub sample_count: usize,
    pub style: ContactStyle,
}

/// Outcome of one scene. Numeric fields are `None` when the scene failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub index: usize,
    pub shape: String,
    pub seed: u64,
    pub error: Option<String>,
    /// evaluate_grasp residual of the registered (stage I) pose.
    pub residual_stage1: Option<f64>,
    /// Residual after stage III.
    pub residual: Option<f64>,
    /// Residual of keypoint-free optimization.
    pub residual_baseline: Option<f64>,
    pub contact_count: Option<usize>,
    pub max_penetration: Option<f64>,
}

/// Residual statistics of scenes whose final penetration falls in a bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    /// Penetration interval in meters, `[lo, hi)`.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub rows: Vec<BatchRow>,
    /// Per-scene wall time in seconds, same order as `rows`.
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

/// Penetration bin edges (meters) of the residual-vs-penetration curve.
pub const CURVE_EDGES: [f64; 6] = [0.0, 0.001, 0.002, 0.005, 0.01, f64::INFINITY];

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl BatchReport {
    fn ok_rows(&self) -> impl Iterator<Item = &BatchRow> {
        self.rows.iter().filter(|r| r.error.is_none())
    }

    pub fn mean_residual(&self) -> Option<f64> {
        mean(self.ok_rows().filter_map(|r| r.residual))
    }

    pub fn mean_residual_stage1(&self) -> Option<f64> {
        mean(self.ok_rows().filter_map(|r| r.residual_stage1))
    }

    pub fn mean_residual_baseline(&self) -> Option<f64> {
        mean(self.ok_rows().filter_map(|r| r.residual_baseline))
    }

    pub fn failures(&self) -> usize {
        self.rows.len() - self.ok_rows().count()
    }

    /// Scene rows followed by one `mean` row over the successful scenes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "index,shape,seed,residual_stage1,residual,residual_baseline,contact_count,max_penetration,error\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.index,
                r.shape,
                r.seed,
                opt(r.residual_stage1),
                opt(r.residual),
                opt(r.residual_baseline),
                r.contact_count.map(|c| c.to_string()).unwrap_or_default(),
                opt(r.max_penetration),
                r.error.as_deref().map(csv_field).unwrap_or_default(),
            ));
        }
        let contacts = mean(self.ok_rows().filter_map(|r| r.contact_count.map(|c| c as f64)));
        let pen = mean(self.ok_rows().filter_map(|r| r.max_penetration));
        out.push_str(&format!(
            "mean,,,{},{},{},{},{},{}\n",
            opt(self.mean_residual_stage1()),
            opt(self.mean_residual()),
            opt(self.mean_residual_baseline()),
            opt(contacts),
            opt(pen),
            if self.failures() > 0 {
                format!("{} failed", self.failures())
            } else {
                String::new()
            }
        ));
        out
    }

    /// Mean final residual of the scenes in each penetration bin.
    pub fn curve(&self) -> Vec<CurveBin> {
        CURVE_EDGES
            .windows(2)
            .map(|w| {
                let inside: Vec<f64> = self
                    .ok_rows()
                    .filter(|r| r.max_penetration.is_some_and(|p| p >= w[0] && p < w[1]))
                    .filter_map(|r| r.residual)
                    .collect();
                CurveBin {
                    lo: w[0],
                    hi: w[1],
                    count: inside.len(),
                    mean_residual: mean(inside.into_iter()),
                }
            })
            .collect()
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("penetration_lo,penetration_hi,count,mean_residual\n");
        for b in self.curve() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(b.lo),
                fmt_f64(b.hi),
                b.count,
                opt(b.mean_residual)
            ));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("index,seconds\n");
        for (r, s) in self.rows.iter().zip(&self.seconds) {
            out.push_str(&format!("{},{:.6}\n", r.index, s));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
}

impl Shape {
    pub fn kind(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Box { .. } => "box",
            Shape::Cylinder { .. } => "cylinder",
            Shape::Plate { .. } => "plate",
        }
    }
}

/// A fixed mix of `n` scenes cycling through spheres, boxes, cylinders and
/// plates of varying size, all with tripod contacts.
pub fn standard_suite(n: usize, sample_count: usize) -> Vec<BatchScene> {
    (0..n)
        .map(|i| {
            let k = (i / 4) as f64;
            let shape = match i % 4 {
                0 => Shape::Sphere {
                    radius: 0.035 + 0.004 * k,
                },
                1 => {
                    let a = 0.05 + 0.01 * (k % 3.0);
                    Shape::Box { size: [a, a + 0.01, a] }
                }
                2 => Shape::Cylinder {
                    radius: 0.025 + 0.005 * (k % 3.0),
                    height: 0.1 + 0.01 * (k % 2.0),
                },
                _ => Shape::Plate {
                    size: [0.12 + 0.01 * (k % 3.0), 0.1, 0.01 + 0.002 * (k % 2.0)],
                },
            };
            BatchScene {
                shape,
                sample_count,
                style: ContactStyle::Tripod,
            }
        })
        .collect()
}

fn run_scene(scene: &BatchScene, index: usize, seed: u64, config: &Config) -> BatchRow {
    let mut row = BatchRow {
        index,
        shape: scene.shape.kind().to_string(),
        seed,
        error: None,
        residual_stage1: None,
        residual: None,
        residual_baseline: None,
        contact_count: None,
        max_penetration: None,
    };
    let outcome = (|| -> Result<()> {
        let g = config.gravity();
        let model = config.hand_model();
        let object = generate_scene(&SceneSpec {
            shape: scene.shape,
            sample_count: scene.sample_count,
            seed,
        })?;
        let contacts = generate_contacts(&object, scene.style, seed, config.mu, &g, &config.contact_gen)?;
        let keypoints = extract_keypoints(&object, &contacts, &config.keypoints, config.mu, &g)?;
        let result = run_pipeline(
            &model,
            &object,
            &contacts,
            keypoints,
            &config.contact,
            &config.optimizer,
            config.mu,
            &g,
            &config.evaluate,
        )?;
        let (_, baseline) = run_keypoint_free(
            &model,
            &object,
            &contacts,
            &config.contact,
            &config.optimizer,
            config.mu,
            &g,
            &config.evaluate,
        )?;
        row.residual_stage1 = Some(result.report_stage1.residual);
        row.residual = Some(result.report.residual);
        row.residual_baseline = Some(baseline.residual);
        row.contact_count = Some(result.report.contact_count);
        row.max_penetration = Some(result.report.max_penetration);
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row
}

/// Worker count: `GRASP_EQ_THREADS` if set to a positive integer, else the
/// number of available cores.
pub fn thread_count() -> usize {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(cores)
}

/// Runs every scene; failures are recorded in their row and do not stop the batch.
pub fn run_batch(scenes: &[BatchScene], config: &Config, seed: u64) -> Result<BatchReport> {
    if scenes.is_empty() {
        return Err(GraspError::InvalidConfig("batch needs at least one scene".into()));
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| GraspError::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<(BatchRow, f64)> = pool.install(|| {
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, scene)| {
                let start = Instant::now();
                let row = run_scene(scene, i, seed.wrapping_add(i as u64), config);
                (row, start.elapsed().as_secs_f64())
            })
            .collect()
    });
    let (rows, seconds) = results.into_iter().unzip();
    Ok(BatchReport { rows, seconds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> Config {
        let mut c = Config::default();
        c.optimizer.max_iters_stage2 = 20;
        c.optimizer.max_iters_stage3 = 5;
        c
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(run_batch(&[], &Config::default(), 0).is_err());
    }

    #[test]
    fn rows_plus_aggregate_and_repeatable() {
        let scenes = vec![
            BatchScene {
                shape: Shape::Sphere { radius: 0.05 },
                sample_count: 256,
                style: ContactStyle::Tripod,
            };
            3
        ];
        let a = run_batch(&scenes, &quick_config(), 7).unwrap();
        let b = run_batch(&scenes, &quick_config(), 7).unwrap();
        let csv = a.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
        assert_eq!(csv, b.to_csv());
        assert_eq!(a.curve_csv(), b.curve_csv());
        assert_eq!(a.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![7, 8, 9]);
        assert_eq!(a.curve().iter().map(|b| b.count).sum::<usize>(), 3);
        assert_eq!(a.timing_csv().lines().count(), 4);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let scenes = vec![
            BatchScene {
                shape: Shape::Sphere { radius: 0.004 },
                sample_count: 64,
                style: ContactStyle::Tripod,
            },
            BatchScene {
                shape: Shape::Sphere { radius: 0.05 },
                sample_count: 256,
                style: ContactStyle::Pinch,
            },
        ];
        let report = run_batch(&scenes, &quick_config(), 0).unwrap();
        assert!(report.rows[0].error.is_some());
        assert!(report.rows[1].error.is_none());
        assert_eq!(report.failures(), 1);
        assert!(report.to_csv().lines().last().unwrap().ends_with("1 failed"));
        assert_eq!(report.mean_residual(), report.rows[1].residual);
    }

    #[test]
    fn suite_cycles_through_shapes() {
        let suite = standard_suite(8, 512);
        let kinds: Vec<&str> = suite.iter().map(|s| s.shape.kind()).collect();
        assert_eq!(
            kinds,
            ["sphere", "box", "cylinder", "plate", "sphere", "box", "cylinder", "plate"]
        );
        assert_ne!(suite[0], suite[4]);
    }
}
