use serde::{Deserialize, Serialize};

use crate::geometry::Point3;

use super::repair::Permutation;
use super::{sorted_pairwise, MarkerFrame, MocapError, RigidBodyDef, PAIRS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyConfig {
    /// Every marker of a cluster lies within this distance of the cluster centroid, mm.
    pub cluster_radius_mm: f64,
    /// Two definitions scoring within this margin of each other are indistinguishable.
    pub ambiguity_margin_mm: f64,
    /// Clusters whose best score exceeds this are not bodies at all.
    pub max_pattern_error_mm: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            cluster_radius_mm: 120.0,
            ambiguity_margin_mm: 2.0,
            max_pattern_error_mm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub body_id: String,
    /// Observed marker ids in the definition's template order.
    pub marker_ids: [String; 4],
    /// L2 distance between sorted observed and template pairwise distances, mm.
    pub score: f64,
}

struct Candidate {
    markers: [usize; 4],
    best: usize,
    score: f64,
    runner_up: Option<(usize, f64)>,
}

fn pattern_score(observed: &[f64; 6], def: &RigidBodyDef) -> f64 {
    observed
        .iter()
        .zip(def.sorted_distances())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Orders the cluster so that slot `k` carries the marker matching template marker `k`.
fn template_order(points: &[Point3; 4], def: &RigidBodyDef) -> Permutation {
    Permutation::all()
        .into_iter()
        .map(|p| {
            let q = p.apply(points);
            let dev: f64 = PAIRS
                .iter()
                .map(|&(i, j)| ((q[i] - q[j]).norm() - def.template_distance(i, j)).abs())
                .sum();
            (p, dev)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("24 permutations")
        .0
}

/// Matches 4-marker clusters in one frame to body definitions by their pairwise-distance
/// signature. Assignments are injective in both markers and definitions; clusters that
/// resemble no definition are left unassigned.
pub fn identify_individuals(
    frame: &MarkerFrame,
    defs: &[RigidBodyDef],
    config: &IdentifyConfig,
) -> Result<Vec<ClusterAssignment>, MocapError> {
    let markers: Vec<(&str, Point3)> = frame.valid_markers().collect();
    let n = markers.len();
    if defs.is_empty() || n < 4 {
        return Ok(Vec::new());
    }
    let reach = 2.0 * config.cluster_radius_mm;
    let near: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| (markers[i].1 - markers[j].1).norm() <= reach).collect())
        .collect();

    let mut candidates = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if !near[a][b] {
                continue;
            }
            for c in b + 1..n {
                if !(near[a][c] && near[b][c]) {
                    continue;
                }
                for (d, near_d) in near.iter().enumerate().skip(c + 1) {
                    if !(near_d[a] && near_d[b] && near_d[c]) {
                        continue;
                    }
                    let idx = [a, b, c, d];
                    let pts = idx.map(|i| markers[i].1);
                    let centroid = Point3::from(pts.iter().fold(nalgebra::Vector3::zeros(), |s, p| s + p.coords) / 4.0);
                    if pts.iter().any(|p| (p - centroid).norm() > config.cluster_radius_mm) {
                        continue;
                    }
                    let observed = sorted_pairwise(&pts);
                    let mut scores: Vec<(usize, f64)> = defs
                        .iter()
                        .enumerate()
                        .map(|(k, def)| (k, pattern_score(&observed, def)))
                        .collect();
                    scores.sort_by(|x, y| x.1.total_cmp(&y.1));
                    if scores[0].1 > config.max_pattern_error_mm {
                        continue;
                    }
                    candidates.push(Candidate {
                        markers: idx,
                        best: scores[0].0,
                        score: scores[0].1,
                        runner_up: scores.get(1).copied(),
                    });
                }
            }
        }
    }
    candidates.sort_by(|x, y| x.score.total_cmp(&y.score));

    let mut used_marker = vec![false; n];
    let mut used_def = vec![false; defs.len()];
    let mut out = Vec::new();
    for cand in candidates {
        if used_def[cand.best] || cand.markers.iter().any(|&m| used_marker[m]) {
            continue;
        }
        if let Some((other, s)) = cand.runner_up {
            if s - cand.score < config.ambiguity_margin_mm {
                return Err(MocapError::AmbiguousIdentity {
                    markers: cand.markers.iter().map(|&m| markers[m].0.to_string()).collect(),
                    bodies: vec![defs[cand.best].body_id.clone(), defs[other].body_id.clone()],
                });
            }
        }
        let def = &defs[cand.best];
        let order = template_order(&cand.markers.map(|m| markers[m].1), def);
        let ordered = order.apply(&cand.markers);
        cand.markers.iter().for_each(|&m| used_marker[m] = true);
        used_def[cand.best] = true;
        out.push(ClusterAssignment {
            body_id: def.body_id.clone(),
            marker_ids: ordered.map(|m| markers[m].0.to_string()),
            score: cand.score,
        });
    }
    out.sort_by(|a, b| a.body_id.cmp(&b.body_id));
    Ok(out)
}
