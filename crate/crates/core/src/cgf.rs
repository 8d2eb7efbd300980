//! Consistent group formation: deepen the dendrogram cut one group at a time
//! until the newly split-off group is smaller than `tau * N`.

use std::collections::BTreeMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::cluster::{group_count, hc_aecs, HubertReport, Linkage};
use crate::dataset::AecsMatrix;
use crate::distance::{DistanceMeasureId, MahalanobisContext};
use crate::error::{Error, Result};

/// Group assignment with the clustering provenance needed downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub assignment: Vec<usize>,
    pub k: usize,
    pub measure: DistanceMeasureId,
    pub hubert_scores: BTreeMap<DistanceMeasureId, f64>,
    /// `(k, difference)` for every evaluated iteration.
    pub iteration_trace: Vec<(usize, usize)>,
}

impl Grouping {
    /// Every instance in group 0.
    pub fn single(m: usize, measure: DistanceMeasureId) -> Self {
        Grouping {
            assignment: vec![0; m],
            k: 1,
            measure,
            hubert_scores: BTreeMap::new(),
            iteration_trace: Vec::new(),
        }
    }

    pub fn from_assignment(assignment: Vec<usize>, measure: DistanceMeasureId) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::InvalidArgument("empty grouping".into()));
        }
        let k = group_count(&assignment)?;
        Ok(Grouping { assignment, k, measure, hubert_scores: BTreeMap::new(), iteration_trace: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Instance indices of group `g`, ascending.
    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == g).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignment.iter().for_each(|&g| sizes[g] += 1);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgfConfig {
    pub tau: f64,
    pub k_start: usize,
    /// Upper bound on k; `None` means `min(20, M - 1)`.
    pub k_max: Option<usize>,
    pub linkage: Linkage,
    /// Re-run measure selection at every k instead of freezing it at `k_start`.
    pub reselect_measure_per_k: bool,
}

impl Default for CgfConfig {
    fn default() -> Self {
        CgfConfig { tau: 0.05, k_start: 2, k_max: None, linkage: Linkage::Average, reselect_measure_per_k: false }
    }
}

impl CgfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("cgf.tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.k_start < 2 {
            return Err(Error::Config(format!("cgf.k_start must be at least 2, got {}", self.k_start)));
        }
        if let Some(k_max) = self.k_max {
            if k_max < self.k_start {
                return Err(Error::Config(format!("cgf.k_max ({k_max}) is below k_start ({})", self.k_start)));
            }
        }
        Ok(())
    }

    pub fn effective_k_max(&self, m: usize) -> usize {
        self.k_max.unwrap_or_else(|| 20.min(m - 1)).min(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgfStep {
    pub k: usize,
    pub new_group_size: usize,
    pub stopped: bool,
    pub measure: DistanceMeasureId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgfResult {
    pub grouping: Grouping,
    pub measure: DistanceMeasureId,
    pub trace: Vec<CgfStep>,
    pub dendrogram_fingerprint: String,
    pub hubert: HubertReport,
    pub hit_k_max: bool,
    pub warnings: Vec<String>,
    /// Covariance context fitted on the grouped matrix.
    pub mahalanobis: MahalanobisContext,
}

/// Size of the group created going from `coarse` to `fine`.
///
/// When `fine` refines `coarse` by splitting one group in two, this is the
/// smaller child. Otherwise it is the number of instances left outside the
/// best one-to-one matching of groups by overlap.
pub fn difference(fine: &[usize], coarse: &[usize]) -> Result<usize> {
    if fine.len() != coarse.len() {
        return Err(Error::Shape(format!("assignments of length {} and {}", fine.len(), coarse.len())));
    }
    if fine.is_empty() {
        return Ok(0);
    }
    let kf = group_count(fine)?;
    let kc = group_count(coarse)?;
    let mut table = vec![vec![0usize; kc]; kf];
    for (&f, &c) in fine.iter().zip(coarse) {
        table[f][c] += 1;
    }
    let nested = table.iter().all(|row| row.iter().filter(|&&v| v > 0).count() == 1);
    if nested {
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); kc];
        for row in &table {
            let (c, &size) = row.iter().enumerate().find(|(_, &v)| v > 0).expect("nonempty group");
            children[c].push(size);
        }
        let split: Vec<&Vec<usize>> = children.iter().filter(|c| c.len() > 1).collect();
        match split.as_slice() {
            [] => return Ok(0),
            [pair] if pair.len() == 2 => return Ok(pair[0].min(pair[1])),
            _ => {}
        }
    }
    Ok(fine.len() - max_overlap(&table))
}

/// Largest total overlap of a one-to-one matching between groups.
fn max_overlap(table: &[Vec<usize>]) -> usize {
    let rows = table.len();
    let cols = table[0].len();
    let n = rows.max(cols);
    let weights = Matrix::from_fn(n, n, |(r, c)| {
        if r < rows && c < cols {
            table[r][c] as i64
        } else {
            0
        }
    });
    let (total, _) = kuhn_munkres(&weights);
    total as usize
}

/// Algorithm 1. The measure and dendrogram are chosen once at `k_start` and
/// cut deeper one group at a time, so consecutive groupings are nested.
pub fn form_consistent_groups(aecs: &AecsMatrix, config: &CgfConfig) -> Result<CgfResult> {
    config.validate()?;
    let m = aecs.rows();
    if m < 3 {
        return Err(Error::InvalidArgument(format!("consistent group formation needs at least 3 instances, got {m}")));
    }
    let k_max = config.effective_k_max(m);
    if k_max < config.k_start {
        return Err(Error::Config(format!("k_start {} exceeds the usable maximum {k_max}", config.k_start)));
    }
    let threshold = config.tau * m as f64;
    let first = hc_aecs(aecs, config.k_start, config.linkage)?;
    let dendrogram_fingerprint = first.dendrogram.fingerprint();

    let mut accepted = first.dendrogram.cut(config.k_start - 1)?;
    let mut accepted_measure = first.measure;
    let mut accepted_report = first.report.clone();
    let mut trace = Vec::new();
    let mut stopped = false;
    for k in config.k_start..=k_max {
        let (current, measure, report) = if config.reselect_measure_per_k && k > config.k_start {
            let out = hc_aecs(aecs, k, config.linkage)?;
            (out.assignment, out.measure, out.report)
        } else {
            (first.dendrogram.cut(k)?, first.measure, first.report.clone())
        };
        let new_group_size = difference(&current, &accepted)?;
        let stop = (new_group_size as f64) < threshold;
        trace.push(CgfStep { k, new_group_size, stopped: stop, measure });
        log::debug!("cgf k={k} new group size {new_group_size} (threshold {threshold:.2})");
        if stop {
            stopped = true;
            break;
        }
        accepted = current;
        accepted_measure = measure;
        accepted_report = report;
    }

    let mut warnings = Vec::new();
    if !stopped {
        let msg = format!("reached k_max = {k_max} without a sub-threshold split");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let k = group_count(&accepted)?;
    let grouping = Grouping {
        assignment: accepted,
        k,
        measure: accepted_measure,
        hubert_scores: accepted_report.scores.clone(),
        iteration_trace: trace.iter().map(|s| (s.k, s.new_group_size)).collect(),
    };
    Ok(CgfResult {
        grouping,
        measure: accepted_measure,
        trace,
        dendrogram_fingerprint,
        hubert: accepted_report,
        hit_k_max: !stopped,
        warnings,
        mahalanobis: first.context,
    })
}
