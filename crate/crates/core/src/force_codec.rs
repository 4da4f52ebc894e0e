//! Discrete force representation.
//!
//! Bin 0 holds exactly zero force. The remaining `s − 1` bins split the
//! positive axis at `s − 1` edges spaced uniformly in log space over
//! `μ ± 3σ`, with the last bin open to infinity. Bins are 0-indexed here.

use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::scene::ObjectModel;
use crate::Vec3;

/// Default soft-argmax temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.02;

/// How a finite bin `[lo, hi)` is summarized by a single decode value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterRule {
    /// `sqrt(lo · hi)`, the midpoint in log space.
    #[default]
    Geometric,
    /// `(lo + hi) / 2`.
    Arithmetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceBinning {
    mu_log: f64,
    sigma_log: f64,
    edges: Vec<f64>,
    centers: Vec<f64>,
    rule: CenterRule,
}

/// Serializable binning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinningConfig {
    pub s: usize,
    pub mu_log: f64,
    pub sigma_log: f64,
    pub temperature: f64,
    pub center: CenterRule,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            s: 10,
            mu_log: 0.0,
            sigma_log: 1.0,
            temperature: DEFAULT_TEMPERATURE,
            center: CenterRule::Geometric,
        }
    }
}

impl BinningConfig {
    pub fn build(&self) -> Result<ForceBinning> {
        if !(self.temperature > 0.0) {
            return Err(GraspError::InvalidTemperature(self.temperature));
        }
        ForceBinning::with_rule(self.s, self.mu_log, self.sigma_log, self.center)
    }

    /// Log-force mean and standard deviation estimated from positive samples.
    pub fn fit_log_stats(&mut self, forces: &[f64]) -> Result<()> {
        let logs: Vec<f64> = forces.iter().filter(|&&f| f > 0.0).map(|f| f.ln()).collect();
        if logs.len() < 2 {
            return Err(GraspError::InvalidConfig(
                "need at least two positive forces to estimate log statistics".into(),
            ));
        }
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (logs.len() - 1) as f64;
        if !(var > 0.0) {
            return Err(GraspError::InvalidSpread(var.sqrt()));
        }
        self.mu_log = mean;
        self.sigma_log = var.sqrt();
        Ok(())
    }
}

/// Builds the default (geometric-center) binning.
pub fn build_binning(s: usize, mu_log: f64, sigma_log: f64) -> Result<ForceBinning> {
    ForceBinning::with_rule(s, mu_log, sigma_log, CenterRule::Geometric)
}

impl ForceBinning {
    pub fn with_rule(s: usize, mu_log: f64, sigma_log: f64, rule: CenterRule) -> Result<Self> {
        if s < 3 {
            return Err(GraspError::InvalidBinCount(s));
        }
        if !(sigma_log > 0.0 && sigma_log.is_finite()) {
            return Err(GraspError::InvalidSpread(sigma_log));
        }
        if !mu_log.is_finite() {
            return Err(GraspError::InvalidConfig(format!(
                "mu_log must be finite, got {mu_log}"
            )));
        }
        let intervals = (s - 2) as f64;
        let mut edges = Vec::with_capacity(s + 1);
        edges.push(0.0);
        for k in 1..s {
            let z = 6.0 * (k - 1) as f64 / intervals - 3.0;
            edges.push((mu_log + z * sigma_log).exp());
        }
        edges.push(f64::INFINITY);

        let half_step = (3.0 * sigma_log / intervals).exp();
        let mut centers = Vec::with_capacity(s);
        centers.push(0.0);
        for k in 1..s - 1 {
            let (lo, hi) = (edges[k], edges[k + 1]);
            centers.push(match rule {
                CenterRule::Geometric => (lo * hi).sqrt(),
                CenterRule::Arithmetic => 0.5 * (lo + hi),
            });
        }
        // The open last bin decodes one geometric half-step above its edge.
        centers.push(edges[s - 1] * half_step);

        Ok(Self {
            mu_log,
            sigma_log,
            edges,
            centers,
            rule,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.centers.len()
    }

    pub fn mu_log(&self) -> f64 {
        self.mu_log
    }

    pub fn sigma_log(&self) -> f64 {
        self.sigma_log
    }

    pub fn rule(&self) -> CenterRule {
        self.rule
    }

    /// The `s + 1` bin edges, starting at 0 and ending at `+∞`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Decode value of every bin.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Width of a finite positive bin in log space.
    pub fn log_bin_width(&self) -> f64 {
        6.0 * self.sigma_log / (self.bin_count() - 2) as f64
    }

    /// Index of the bin containing `force`.
    pub fn bin_of(&self, force: f64) -> Result<usize> {
        if !(force >= 0.0 && force.is_finite()) {
            return Err(GraspError::InvalidForce(force));
        }
        // First edge strictly above the force, minus one.
        let above = self.edges.partition_point(|&e| e <= force);
        Ok(above - 1)
    }

    /// One-hot vector of the bin containing `force`.
    pub fn encode(&self, force: f64) -> Result<Vec<f64>> {
        let bin = self.bin_of(force)?;
        let mut v = vec![0.0; self.bin_count()];
        v[bin] = 1.0;
        Ok(v)
    }

    /// Soft-argmax of bin scores `v` at temperature `t`.
    ///
    /// Scores are shifted by their maximum before exponentiation. Terms whose
    /// relative weight falls below machine epsilon are dropped; they cannot
    /// change the normalizer and would otherwise leak into the zero bin.
    pub fn decode(&self, v: &[f64], t: f64) -> Result<f64> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(GraspError::InvalidTemperature(t));
        }
        if v.len() != self.bin_count() {
            return Err(GraspError::ShapeError {
                expected: self.bin_count(),
                found: v.len(),
            });
        }
        let top = v.iter().map(|x| x / t).fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(GraspError::InvalidForce(top));
        }
        let cutoff = f64::EPSILON.ln();
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, c) in v.iter().zip(&self.centers) {
            let z = x / t - top;
            if z < cutoff {
                continue;
            }
            let w = z.exp();
            num += w * c;
            den += w;
        }
        Ok(num / den)
    }
}

/// Result of spreading point-force labels over the object surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadForces {
    pub force: Vec<f64>,
    /// Labels whose affinity set was empty; their force is dropped.
    pub empty_labels: usize,
}

/// Spreads each label force `N_j` uniformly over its affinity set: the valid
/// contact points whose nearest label point is `c_j`.
pub fn spread_force(labels: &[(Vec3, f64)], object: &ObjectModel, contact_mask: &[bool]) -> Result<SpreadForces> {
    if contact_mask.len() != object.len() {
        return Err(GraspError::ShapeError {
            expected: object.len(),
            found: contact_mask.len(),
        });
    }
    if let Some(&(_, n)) = labels.iter().find(|(_, n)| !(*n >= 0.0 && n.is_finite())) {
        return Err(GraspError::InvalidForce(n));
    }
    let mut owner = vec![usize::MAX; object.len()];
    let mut sizes = vec![0usize; labels.len()];
    if !labels.is_empty() {
        for (i, p) in object.points().iter().enumerate() {
            if !contact_mask[i] {
                continue;
            }
            let mut best = (0, f64::INFINITY);
            for (j, (c, _)) in labels.iter().enumerate() {
                let d2 = (p - c).norm_squared();
                if d2 < best.1 {
                    best = (j, d2);
                }
            }
            owner[i] = best.0;
            sizes[best.0] += 1;
        }
    }
    let force = owner
        .iter()
        .map(|&j| {
            if j == usize::MAX {
                0.0
            } else {
                labels[j].1 / sizes[j] as f64
            }
        })
        .collect();
    let empty_labels = sizes.iter().filter(|&&s| s == 0).count();
    Ok(SpreadForces { force, empty_labels })
}
