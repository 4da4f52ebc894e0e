//! Stability-driven keypoint selection.
//!
//! Contact points of every hand part are clustered; one cluster per part is
//! chosen so that the grasp stays as close to equilibrium as possible; and
//! finally the `n_kp` parts whose cluster centers alone give the lowest
//! stability energy become optimization keypoints.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{assemble, Contact};
use crate::error::{GraspError, Result};
use crate::scene::{ContactState, ObjectModel};
use crate::Vec3;

/// Keypoint search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeypointConfig {
    /// Single-linkage distance for clustering contact points (meters).
    pub cluster_radius: f64,
    /// Number of keypoints to keep.
    pub n_kp: usize,
    /// Outward offset from contact center to hand-part target (meters).
    pub target_offset: f64,
    /// Repeat the cluster-selection pass until no part changes.
    pub fixpoint: bool,
}

impl Default for KeypointConfig {
    fn default() -> Self {
        Self {
            cluster_radius: 0.01,
            n_kp: 3,
            target_offset: 0.005,
            fixpoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartCluster {
    pub part: u8,
    /// Indices into the object's surface samples.
    pub points: Vec<usize>,
    /// Force-weighted mean position.
    pub center: Vec3,
    /// Total normal force of the cluster.
    pub force: f64,
    /// Force-weighted mean normal, renormalized.
    pub normal: Vec3,
}

impl PartCluster {
    fn from_points(part: u8, points: Vec<usize>, object: &ObjectModel, force: &[f64]) -> Self {
        let total: f64 = points.iter().map(|&i| force[i]).sum();
        let center = points
            .iter()
            .fold(Vec3::zeros(), |acc, &i| acc + object.points()[i] * force[i])
            / total;
        let summed = points
            .iter()
            .fold(Vec3::zeros(), |acc, &i| acc + object.normals()[i] * force[i]);
        let normal = if summed.norm() > 1e-9 * total {
            summed.normalize()
        } else {
            // Opposing normals cancel; fall back to the strongest member.
            let strongest = points
                .iter()
                .copied()
                .max_by(|&a, &b| force[a].total_cmp(&force[b]).then(b.cmp(&a)))
                .expect("cluster is nonempty");
            object.normals()[strongest]
        };
        Self {
            part,
            points,
            center,
            force: total,
            normal,
        }
    }

    fn contact(&self) -> Contact {
        Contact::new(self.center, self.normal, self.force)
    }
}

/// Selected keypoints with their outward targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub parts: Vec<u8>,
    pub centers: Vec<Vec3>,
    pub forces: Vec<f64>,
    pub normals: Vec<Vec3>,
    pub targets: Vec<Vec3>,
    pub energy: f64,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }
}

/// Groups the force-carrying contact points of each part by single linkage.
///
/// Clusters are ordered by their smallest point index; points inside a cluster
/// are sorted.
pub fn cluster_contacts(
    object: &ObjectModel,
    contacts: &ContactState,
    radius: f64,
) -> Result<BTreeMap<u8, Vec<PartCluster>>> {
    contacts.check_matches(object)?;
    if !(radius > 0.0) {
        return Err(GraspError::InvalidConfig(format!(
            "cluster radius must be positive, got {radius}"
        )));
    }
    let mut by_part: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for i in contacts.force_points() {
        by_part.entry(contacts.part_label()[i]).or_default().push(i);
    }
    let r2 = radius * radius;
    let pts = object.points();
    let mut out = BTreeMap::new();
    for (part, members) in by_part {
        let mut parent: Vec<usize> = (0..members.len()).collect();
        for a in 0..members.len() {
            for b in (a + 1)..members.len() {
                if (pts[members[a]] - pts[members[b]]).norm_squared() <= r2 {
                    union(&mut parent, a, b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, &m) in members.iter().enumerate() {
            let root = find(&mut parent, k);
            groups.entry(root).or_default().push(m);
        }
        let mut clusters: Vec<PartCluster> = groups
            .into_values()
            .map(|g| PartCluster::from_points(part, g, object, contacts.force()))
            .collect();
        clusters.sort_by_key(|c| c.points[0]);
        out.insert(part, clusters);
    }
    Ok(out)
}

fn find(parent: &mut [usize], mut k: usize) -> usize {
    while parent[k] != k {
        parent[k] = parent[parent[k]];
        k = parent[k];
    }
    k
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Stability energy of a set of cluster contacts.
fn energy_of(object: &ObjectModel, contacts: &[Contact], mu: f64, gravity: &Vec3) -> Result<f64> {
    let sys = assemble(object, contacts, mu, gravity)?;
    match sys.stability_energy() {
        Ok(r) => Ok(r.energy),
        Err(GraspError::Solver(best)) => Ok(best.energy),
        Err(e) => Err(e),
    }
}

/// Picks one representative cluster per part.
///
/// Parts start from their highest-force cluster. Then, in ascending part
/// order, each part switches to the cluster that minimizes the stability
/// energy of that cluster together with the current representatives of all
/// other parts. With `fixpoint` the pass repeats until nothing changes.
pub fn select_clusters(
    clusters: &BTreeMap<u8, Vec<PartCluster>>,
    object: &ObjectModel,
    mu: f64,
    gravity: &Vec3,
    fixpoint: bool,
) -> Result<BTreeMap<u8, PartCluster>> {
    let parts: Vec<u8> = clusters
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(&p, _)| p)
        .collect();
    if parts.is_empty() {
        return Err(GraspError::InvalidContactState("no part carries contact force".into()));
    }
    let mut choice: BTreeMap<u8, usize> = parts
        .iter()
        .map(|&p| {
            let best = clusters[&p]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.force.total_cmp(&b.1.force).then(b.0.cmp(&a.0)))
                .map(|(k, _)| k)
                .expect("nonempty");
            (p, best)
        })
        .collect();

    let max_passes = if fixpoint { 32 } else { 1 };
    for _ in 0..max_passes {
        let mut changed = false;
        for &part in &parts {
            let candidates = &clusters[&part];
            if candidates.len() == 1 {
                continue;
            }
            let others: Vec<Contact> = parts
                .iter()
                .filter(|&&p| p != part)
                .map(|p| clusters[p][choice[p]].contact())
                .collect();
            let mut best = (choice[&part], f64::INFINITY);
            for (k, cand) in candidates.iter().enumerate() {
                let mut set = vec![cand.contact()];
                set.extend_from_slice(&others);
                let e = energy_of(object, &set, mu, gravity)?;
                if e < best.1 {
                    best = (k, e);
                }
            }
            if best.0 != choice[&part] {
                changed = true;
                choice.insert(part, best.0);
            }
        }
        if !changed {
            break;
        }
    }
    Ok(choice.into_iter().map(|(p, k)| (p, clusters[&p][k].clone())).collect())
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exhaustively picks the `n_kp` parts whose representatives give the lowest
/// stability energy. Ties go to the lexicographically smallest part tuple.
/// Targets are left equal to the centers; see [`make_targets`].
pub fn select_keypoints(
    representatives: &BTreeMap<u8, PartCluster>,
    n_kp: usize,
    object: &ObjectModel,
    mu: f64,
    gravity: &Vec3,
) -> Result<KeypointSet> {
    if representatives.is_empty() {
        return Err(GraspError::InvalidContactState(
            "no representatives to choose from".into(),
        ));
    }
    if n_kp == 0 {
        return Err(GraspError::InvalidConfig("n_kp must be at least 1".into()));
    }
    let reps: Vec<&PartCluster> = representatives.values().collect();
    let k = n_kp.min(reps.len());
    let combos = combinations(reps.len(), k);
    let energies: Vec<Result<f64>> = combos
        .par_iter()
        .map(|combo| {
            let set: Vec<Contact> = combo.iter().map(|&i| reps[i].contact()).collect();
            energy_of(object, &set, mu, gravity)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in energies.into_iter().enumerate() {
        let e = e?;
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((i, e));
        }
    }
    let (idx, energy) = best.expect("at least one combination");
    let chosen: Vec<&PartCluster> = combos[idx].iter().map(|&i| reps[i]).collect();
    Ok(KeypointSet {
        parts: chosen.iter().map(|c| c.part).collect(),
        centers: chosen.iter().map(|c| c.center).collect(),
        forces: chosen.iter().map(|c| c.force).collect(),
        normals: chosen.iter().map(|c| c.normal).collect(),
        targets: chosen.iter().map(|c| c.center).collect(),
        energy,
    })
}

/// Moves every keypoint target `offset` meters out along its normal.
pub fn make_targets(mut keypoints: KeypointSet, offset: f64) -> KeypointSet {
    keypoints.targets = keypoints
        .centers
        .iter()
        .zip(&keypoints.normals)
        .map(|(c, n)| c + n * offset)
        .collect();
    keypoints
}

/// Clustering, cluster selection, combination search and targets in one call.
pub fn extract_keypoints(
    object: &ObjectModel,
    contacts: &ContactState,
    config: &KeypointConfig,
    mu: f64,
    gravity: &Vec3,
) -> Result<KeypointSet> {
    let clusters = cluster_contacts(object, contacts, config.cluster_radius)?;
    let reps = select_clusters(&clusters, object, mu, gravity, config.fixpoint)?;
    let kp = select_keypoints(&reps, config.n_kp, object, mu, gravity)?;
    Ok(make_targets(kp, config.target_offset))
}
