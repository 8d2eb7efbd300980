//! Routing consistent test groups to trained group models, either by
//! representative-to-representative distance or by average cross distance.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgf::Grouping;
use crate::dataset::{AecsMatrix, WindowedDataset};
use crate::distance::{DistanceMeasureId, MahalanobisContext, Metric};
use crate::error::{Error, Result};
use crate::grouplearn::{predict, GroupModelBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum MappingMethod {
    #[serde(rename = "CR_CR")]
    CrCr,
    #[default]
    #[serde(rename = "AVG")]
    Avg,
}

impl MappingMethod {
    pub const ALL: [MappingMethod; 2] = [MappingMethod::CrCr, MappingMethod::Avg];

    pub fn token(self) -> &'static str {
        match self {
            MappingMethod::CrCr => "CR_CR",
            MappingMethod::Avg => "AVG",
        }
    }
}

impl fmt::Display for MappingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MappingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "CR_CR" | "CRCR" => Ok(MappingMethod::CrCr),
            "AVG" => Ok(MappingMethod::Avg),
            other => Err(Error::Config(format!("unknown mapping method {other:?} (expected CR_CR or AVG)"))),
        }
    }
}

/// Mean AECS vector of group `g`.
pub fn group_representative(aecs: &AecsMatrix, grouping: &Grouping, g: usize) -> Result<Vec<f64>> {
    if grouping.len() != aecs.rows() {
        return Err(Error::Shape(format!("grouping of {} for {} rows", grouping.len(), aecs.rows())));
    }
    if g >= grouping.k {
        return Err(Error::InvalidArgument(format!("unknown group {g} (K = {})", grouping.k)));
    }
    let members = grouping.members(g);
    let mut cr = vec![0.0; aecs.dim()];
    for &i in &members {
        cr.iter_mut().zip(aecs.row(i)).for_each(|(c, v)| *c += v);
    }
    cr.iter_mut().for_each(|c| *c /= members.len() as f64);
    Ok(cr)
}

fn argmin(candidates: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in candidates.iter().enumerate().skip(1) {
        if v < candidates[best] {
            best = i;
        }
    }
    best
}

/// Train group whose representative is closest to `test_cr`, with every
/// candidate distance. Ties go to the smaller index.
pub fn map_cr_cr(train_crs: &[Vec<f64>], test_cr: &[f64], metric: Metric<'_>) -> Result<(usize, Vec<f64>)> {
    if train_crs.is_empty() {
        return Err(Error::InvalidArgument("no train representatives".into()));
    }
    let candidates = train_crs.iter().map(|cr| metric.try_distance(cr, test_cr)).collect::<Result<Vec<_>>>()?;
    Ok((argmin(&candidates), candidates))
}

/// Mean of all cross distances between the rows of `a` and the rows of `b`.
pub fn avg_group_distance(a: &AecsMatrix, b: &AecsMatrix, metric: Metric<'_>) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidArgument("average distance over an empty group".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("groups of dimension {} and {}", a.dim(), b.dim())));
    }
    metric.try_distance(a.row(0), b.row(0))?;
    let total: f64 = (0..a.rows())
        .into_par_iter()
        .map(|i| (0..b.rows()).map(|j| metric.distance(a.row(i), b.row(j))).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / (a.rows() * b.rows()) as f64)
}

/// Train group with the smallest average distance to `test_group`.
pub fn map_avg(
    train_aecs: &AecsMatrix,
    train_grouping: &Grouping,
    test_group: &AecsMatrix,
    metric: Metric<'_>,
) -> Result<(usize, Vec<f64>)> {
    if train_grouping.len() != train_aecs.rows() {
        return Err(Error::Shape(format!("grouping of {} for {} rows", train_grouping.len(), train_aecs.rows())));
    }
    let candidates = (0..train_grouping.k)
        .map(|g| avg_group_distance(&train_aecs.subset(&train_grouping.members(g))?, test_group, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok((argmin(&candidates), candidates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMapping {
    pub test_group: usize,
    pub size: usize,
    pub chosen: usize,
    pub candidates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub method: MappingMethod,
    pub measure: DistanceMeasureId,
    pub groups: Vec<GroupMapping>,
    pub test_assignment: Vec<usize>,
}

impl MappingReport {
    pub fn chosen(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.chosen).collect()
    }
}

/// Train-side state needed to route test groups.
#[derive(Debug, Clone, Copy)]
pub struct TrainReference<'a> {
    pub bundle: &'a GroupModelBundle,
    pub aecs: &'a AecsMatrix,
    /// Context fitted on `aecs`.
    pub mahalanobis: &'a MahalanobisContext,
}

impl TrainReference<'_> {
    fn metric(&self) -> Result<Metric<'_>> {
        if self.mahalanobis.source_fingerprint != self.aecs.fingerprint() {
            return Err(Error::Artifact("Mahalanobis context was not fitted on the train AECS".into()));
        }
        Metric::new(self.bundle.grouping.measure, Some(self.mahalanobis))
    }
}

/// Maps every test group with `method` and predicts its windows with the
/// chosen train model. Distances use the measure selected on the train side.
pub fn map_groups(
    train: TrainReference<'_>,
    test_aecs: &AecsMatrix,
    test_grouping: &Grouping,
    method: MappingMethod,
) -> Result<MappingReport> {
    let metric = train.metric()?;
    if test_grouping.len() != test_aecs.rows() {
        return Err(Error::Shape(format!("test grouping of {} for {} rows", test_grouping.len(), test_aecs.rows())));
    }
    if train.bundle.grouping.len() != train.aecs.rows() {
        return Err(Error::Shape("bundle grouping does not cover the train AECS".into()));
    }
    let train_crs = match method {
        MappingMethod::CrCr => (0..train.bundle.grouping.k)
            .map(|g| group_representative(train.aecs, &train.bundle.grouping, g))
            .collect::<Result<Vec<_>>>()?,
        MappingMethod::Avg => Vec::new(),
    };
    let groups = (0..test_grouping.k)
        .into_par_iter()
        .map(|j| {
            let members = test_grouping.members(j);
            let (chosen, candidates) = match method {
                MappingMethod::CrCr => {
                    map_cr_cr(&train_crs, &group_representative(test_aecs, test_grouping, j)?, metric)?
                }
                MappingMethod::Avg => {
                    map_avg(train.aecs, &train.bundle.grouping, &test_aecs.subset(&members)?, metric)?
                }
            };
            Ok(GroupMapping { test_group: j, size: members.len(), chosen, candidates })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MappingReport {
        method,
        measure: metric.measure(),
        groups,
        test_assignment: test_grouping.assignment.clone(),
    })
}

/// Test-group routing followed by per-group prediction. Labels come back in
/// the original instance order.
pub fn infer_with_groups(
    train: TrainReference<'_>,
    test_ds: &WindowedDataset,
    test_aecs: &AecsMatrix,
    test_grouping: &Grouping,
    method: MappingMethod,
) -> Result<(Vec<usize>, MappingReport)> {
    if test_ds.len() != test_aecs.rows() {
        return Err(Error::Shape(format!("{} test windows but {} AECS rows", test_ds.len(), test_aecs.rows())));
    }
    if test_aecs.source_model_id != train.bundle.aecs_model_id {
        return Err(Error::Artifact(format!(
            "test AECS from model {:?} but the bundle was trained on {:?}",
            test_aecs.source_model_id, train.bundle.aecs_model_id
        )));
    }
    let report = map_groups(train, test_aecs, test_grouping, method)?;
    let per_group = report
        .groups
        .par_iter()
        .map(|gm| {
            let members = test_grouping.members(gm.test_group);
            let pred = predict(train.bundle, gm.chosen, &test_ds.subset(&members)?, &test_aecs.subset(&members)?)?;
            Ok((members, pred))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut labels = vec![usize::MAX; test_ds.len()];
    for (members, pred) in per_group {
        for (i, p) in members.into_iter().zip(pred) {
            labels[i] = p;
        }
    }
    debug_assert!(labels.iter().all(|&l| l != usize::MAX));
    Ok((labels, report))
}
