//! Agglomerative hierarchical clustering, dendrogram cuts, the modified
//! Hubert statistic and best-distance-measure selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::AecsMatrix;
use crate::distance::{fit_mahalanobis, pairwise_matrix, DistanceMatrix, DistanceMeasureId, MahalanobisContext, Metric};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Average => "AVERAGE",
            Linkage::Complete => "COMPLETE",
            Linkage::Single => "SINGLE",
        })
    }
}

impl Linkage {
    pub const ALL: [Linkage; 3] = [Linkage::Average, Linkage::Complete, Linkage::Single];

    /// Lance–Williams update: distance from `k` to the union of `a` and `b`.
    fn update(self, d_ka: f64, d_kb: f64, size_a: usize, size_b: usize) -> f64 {
        match self {
            Linkage::Single => d_ka.min(d_kb),
            Linkage::Complete => d_ka.max(d_kb),
            Linkage::Average => {
                (size_a as f64 * d_ka + size_b as f64 * d_kb) / (size_a + size_b) as f64
            }
        }
    }
}

/// One merge. Leaves are clusters `0..n`; merge `s` creates cluster `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Smaller of the two merged cluster ids.
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
}

/// Orders candidate merges by distance, then by the (smaller id, larger id)
/// pair.
fn candidate_cmp(a: (f64, usize, usize), b: (f64, usize, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// Agglomerative clustering of a dissimilarity matrix.
///
/// Cluster distances follow Lance–Williams updates; at every step the closest
/// pair is merged, ties going to the pair with the smallest (min id, max id).
/// Each active cluster caches its nearest neighbour, so a step only rescans
/// rows whose neighbour was consumed by the merge.
pub fn agglomerate(d: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    let n = d.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("clustering needs at least 2 points, got {n}")));
    }
    let mut dist: Vec<f64> = (0..n).flat_map(|i| d.row(i).to_vec()).collect();
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];

    let key = |id: &[usize], dist: &[f64], i: usize, j: usize| {
        let (x, y) = (id[i], id[j]);
        (dist[i * n + j], x.min(y), x.max(y))
    };
    let nearest = |id: &[usize], dist: &[f64], active: &[bool], i: usize| -> usize {
        let mut best: Option<(usize, (f64, usize, usize))> = None;
        for j in (0..n).filter(|&j| j != i && active[j]) {
            let c = key(id, dist, i, j);
            if best.is_none_or(|(_, b)| candidate_cmp(c, b) == Ordering::Less) {
                best = Some((j, c));
            }
        }
        best.map_or(usize::MAX, |(j, _)| j)
    };

    let mut nn: Vec<usize> = (0..n).map(|i| nearest(&id, &dist, &active, i)).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let (p, q) = (0..n)
            .filter(|&i| active[i])
            .map(|i| (i, nn[i]))
            .min_by(|&(i, j), &(k, l)| candidate_cmp(key(&id, &dist, i, j), key(&id, &dist, k, l)))
            .expect("at least two active clusters");
        let height = dist[p * n + q];
        let (keep, gone) = if p < q { (p, q) } else { (q, p) };
        merges.push(Merge {
            a: id[p].min(id[q]),
            b: id[p].max(id[q]),
            height,
            size: size[p] + size[q],
        });

        for k in (0..n).filter(|&k| active[k] && k != p && k != q) {
            let v = linkage.update(dist[k * n + p], dist[k * n + q], size[p], size[q]);
            dist[k * n + keep] = v;
            dist[keep * n + k] = v;
        }
        size[keep] += size[gone];
        id[keep] = n + step;
        active[gone] = false;

        for k in (0..n).filter(|&k| active[k] && k != keep) {
            if nn[k] == p || nn[k] == q {
                nn[k] = nearest(&id, &dist, &active, k);
            } else if candidate_cmp(key(&id, &dist, k, keep), key(&id, &dist, k, nn[k])) == Ordering::Less {
                nn[k] = keep;
            }
        }
        nn[keep] = nearest(&id, &dist, &active, keep);
    }

    for (s, w) in merges.windows(2).enumerate() {
        if w[1].height < w[0].height {
            log::warn!(
                "non-monotone merge heights at step {}: {} after {}",
                s + 1,
                w[1].height,
                w[0].height
            );
        }
    }
    Ok(Dendrogram { leaves: n, merges, linkage })
}

impl Dendrogram {
    /// Group assignment with `k` groups: the last `k - 1` merges are undone.
    /// Group ids follow the order of each group's smallest member index.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.leaves;
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("cut at k = {k} outside 1..={n}")));
        }
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (s, m) in self.merges.iter().take(n - k).enumerate() {
            let node = n + s;
            let ra = find(&mut parent, m.a);
            let rb = find(&mut parent, m.b);
            parent[ra] = node;
            parent[rb] = node;
        }
        let mut label_of_root = BTreeMap::new();
        let mut assignment = Vec::with_capacity(n);
        for leaf in 0..n {
            let root = find(&mut parent, leaf);
            let next = label_of_root.len();
            assignment.push(*label_of_root.entry(root).or_insert(next));
        }
        Ok(assignment)
    }

    /// Short digest of the merge list (ids and height bits).
    pub fn fingerprint(&self) -> String {
        let mut flat = Vec::with_capacity(self.merges.len() * 3);
        for m in &self.merges {
            flat.push(m.a as f64);
            flat.push(m.b as f64);
            flat.push(m.height);
        }
        crate::archive::digest_f64(&flat)[..16].to_string()
    }
}

/// Number of groups in an assignment, checking that ids are contiguous.
pub fn group_count(assignment: &[usize]) -> Result<usize> {
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; k];
    for &g in assignment {
        seen[g] = true;
    }
    if let Some(empty) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!("group {empty} has no members")));
    }
    Ok(k)
}

/// Mean vector of every group, indexed by group id.
pub fn centroids(aecs: &AecsMatrix, assignment: &[usize]) -> Result<Vec<Vec<f64>>> {
    if assignment.len() != aecs.rows() {
        return Err(Error::Shape(format!("{} assignments for {} rows", assignment.len(), aecs.rows())));
    }
    let k = group_count(assignment)?;
    let h = aecs.dim();
    let mut sums = vec![vec![0.0; h]; k];
    let mut counts = vec![0usize; k];
    for (i, &g) in assignment.iter().enumerate() {
        counts[g] += 1;
        sums[g].iter_mut().zip(aecs.row(i)).for_each(|(s, v)| *s += v);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(sums)
}

/// Modified Hubert statistic
/// `ρ = 2 / (M (M - 1)) · Σ_{i<j} d(x_i, x_j) · d(c(x_i), c(x_j))`
/// where `c(x)` is the centroid of the group of `x`. Zero for a single group.
pub fn hubert_statistic(
    aecs: &AecsMatrix,
    assignment: &[usize],
    measure: DistanceMeasureId,
    ctx: Option<&MahalanobisContext>,
) -> Result<f64> {
    let d = pairwise_matrix(aecs, measure, ctx)?;
    hubert_with_matrix(&d, aecs, assignment, Metric::new(measure, ctx)?)
}

/// [`hubert_statistic`] reusing an already computed pairwise matrix.
pub fn hubert_with_matrix(d: &DistanceMatrix, aecs: &AecsMatrix, assignment: &[usize], metric: Metric<'_>) -> Result<f64> {
    let m = aecs.rows();
    if d.len() != m {
        return Err(Error::Shape(format!("{}x{} matrix for {m} rows", d.len(), d.len())));
    }
    let cents = centroids(aecs, assignment)?;
    let k = cents.len();
    if k < 2 {
        return Ok(0.0);
    }
    let mut between = vec![0.0; k * k];
    for a in 0..k {
        for b in a + 1..k {
            let v = metric.distance(&cents[a], &cents[b]);
            between[a * k + b] = v;
            between[b * k + a] = v;
        }
    }
    let total: f64 = (0..m)
        .into_par_iter()
        .map(|i| {
            let gi = assignment[i];
            let row = d.row(i);
            (i + 1..m).map(|j| row[j] * between[gi * k + assignment[j]]).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(2.0 * total / (m as f64 * (m as f64 - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubertReport {
    pub scores: BTreeMap<DistanceMeasureId, f64>,
    pub selected: DistanceMeasureId,
    pub k: usize,
    pub linkage: Linkage,
}

/// Clustering of one measure inside [`hc_aecs`].
#[derive(Debug, Clone)]
pub struct MeasureClustering {
    pub measure: DistanceMeasureId,
    pub dendrogram: Dendrogram,
    pub assignment: Vec<usize>,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct HcAecsResult {
    pub assignment: Vec<usize>,
    pub measure: DistanceMeasureId,
    pub report: HubertReport,
    pub dendrogram: Dendrogram,
    /// Covariance context fitted on the clustered matrix (used when the
    /// selected measure is Mahalanobis, and kept for later mapping).
    pub context: MahalanobisContext,
    pub candidates: Vec<MeasureClustering>,
}

/// Default ridge scale for the Mahalanobis covariance.
pub const MAHALANOBIS_EPSILON_SCALE: f64 = 1e-6;

/// Clusters `aecs` into `k` groups under each candidate measure and keeps the
/// one with the largest modified Hubert statistic (ties resolved in the order
/// Chebyshev, Manhattan, Mahalanobis).
pub fn hc_aecs(aecs: &AecsMatrix, k: usize, linkage: Linkage) -> Result<HcAecsResult> {
    if k < 2 || k > aecs.rows() {
        return Err(Error::InvalidArgument(format!("hc_aecs needs 2 <= k <= {}, got {k}", aecs.rows())));
    }
    let context = fit_mahalanobis(aecs, MAHALANOBIS_EPSILON_SCALE)?;
    let candidates = DistanceMeasureId::ALL
        .par_iter()
        .map(|&measure| {
            let d = pairwise_matrix(aecs, measure, Some(&context))?;
            let dendrogram = agglomerate(&d, linkage)?;
            let assignment = dendrogram.cut(k)?;
            let rho = hubert_with_matrix(&d, aecs, &assignment, Metric::new(measure, Some(&context))?)?;
            Ok(MeasureClustering { measure, dendrogram, assignment, rho })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&candidates);
    let chosen = &candidates[best];
    let report = HubertReport {
        scores: candidates.iter().map(|c| (c.measure, c.rho)).collect(),
        selected: chosen.measure,
        k,
        linkage,
    };
    Ok(HcAecsResult {
        assignment: chosen.assignment.clone(),
        measure: chosen.measure,
        dendrogram: chosen.dendrogram.clone(),
        report,
        context,
        candidates,
    })
}

/// Index of the strictly largest ρ, first wins on ties.
fn select_best(candidates: &[MeasureClustering]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.rho > candidates[best].rho {
            best = i;
        }
    }
    best
}
