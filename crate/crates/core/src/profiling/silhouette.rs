use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::toyworld::AugmentationType;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterScore {
    pub mean: f64,
    pub count: usize,
}

impl ClusterScore {
    /// Scores of single-point clusters are fixed at 0 by convention.
    pub fn is_defined(&self) -> bool {
        self.count >= 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub per_point: Vec<f64>,
    pub per_cluster: BTreeMap<usize, ClusterScore>,
    /// Mean of `per_point`.
    pub overall: f64,
}

impl Silhouette {
    pub fn singleton_clusters(&self) -> Vec<usize> {
        self.per_cluster
            .iter()
            .filter(|(_, c)| !c.is_defined())
            .map(|(&l, _)| l)
            .collect()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean silhouette coefficients.
///
/// For point `i` in cluster `C`: `a(i)` is its mean distance to the other
/// members of `C`, `b(i)` the smallest mean distance to the members of any
/// other cluster, and `S(i) = (b - a) / max(a, b)` with `0/0 = 0`.
pub fn silhouette_scores<P: AsRef<[f64]>>(points: &[P], labels: &[usize]) -> Result<Silhouette> {
    if points.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut cluster_of: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        let next = cluster_of.len();
        cluster_of.entry(l).or_insert(next);
    }
    if cluster_of.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "silhouette needs at least 2 clusters, got {}",
            cluster_of.len()
        )));
    }
    let dim = points[0].as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::Shape {
                op: "silhouette_scores",
                lhs: vec![dim],
                rhs: vec![p.len()],
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "silhouette_scores" });
        }
    }

    let n = points.len();
    let nc = cluster_of.len();
    let cid: Vec<usize> = labels.iter().map(|l| cluster_of[l]).collect();
    let mut sizes = vec![0usize; nc];
    cid.iter().for_each(|&c| sizes[c] += 1);

    // sums[i * nc + c] = total distance from point i to cluster c
    let mut sums = vec![0.0; n * nc];
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(points[i].as_ref(), points[j].as_ref());
            sums[i * nc + cid[j]] += d;
            sums[j * nc + cid[i]] += d;
        }
    }

    let per_point: Vec<f64> = (0..n)
        .map(|i| {
            let own = cid[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let a = sums[i * nc + own] / (sizes[own] - 1) as f64;
            let b = (0..nc)
                .filter(|&c| c != own)
                .map(|c| sums[i * nc + c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();

    let mut per_cluster = BTreeMap::new();
    for (&label, &c) in &cluster_of {
        let members: Vec<f64> = (0..n).filter(|&i| cid[i] == c).map(|i| per_point[i]).collect();
        per_cluster.insert(
            label,
            ClusterScore {
                mean: members.iter().sum::<f64>() / members.len() as f64,
                count: members.len(),
            },
        );
    }
    let overall = per_point.iter().sum::<f64>() / n as f64;
    Ok(Silhouette {
        per_point,
        per_cluster,
        overall,
    })
}

/// Per-augmentation silhouette of delta meta tokens clustered by the
/// augmentation that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteReport {
    pub per_type: BTreeMap<AugmentationType, ClusterScore>,
    /// Count-weighted mean of the per-type means.
    pub overall: f64,
}

impl SilhouetteReport {
    pub fn from_points<P: AsRef<[f64]>>(points: &[P], augs: &[AugmentationType]) -> Result<Self> {
        let labels: Vec<usize> = augs.iter().map(|a| a.index()).collect();
        let s = silhouette_scores(points, &labels)?;
        let per_type = s
            .per_cluster
            .into_iter()
            .map(|(l, c)| (AugmentationType::from_index(l).expect("label came from an augmentation"), c))
            .collect();
        Ok(Self {
            per_type,
            overall: s.overall,
        })
    }

    pub fn score(&self, aug: AugmentationType) -> Option<f64> {
        self.per_type.get(&aug).map(|c| c.mean)
    }

    pub fn sample_count(&self, aug: AugmentationType) -> usize {
        self.per_type.get(&aug).map_or(0, |c| c.count)
    }
}
