//! One classifier per consistent group, behind a pluggable interface, with
//! two multinomial logistic-regression reference classifiers.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::digest_f64;
use crate::cgf::Grouping;
use crate::dataset::{AecsMatrix, WindowedDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassifierKind {
    /// Softmax regression on the AECS vector.
    SoftmaxAecs,
    /// Softmax regression on per-channel summary statistics.
    SoftmaxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec { kind: ClassifierKind::SoftmaxStats, learning_rate: 0.1, epochs: 500, l2: 1e-4, seed: 0 }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("classifier.learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("classifier.epochs must be at least 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("classifier.l2 must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }
}

/// Parameters of one trained classifier. `params` is opaque to everything but
/// the classifier that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(skip)]
    pub params: Vec<f64>,
    /// `seen[c]` is true when class `c` occurred in the training instances.
    pub seen: Vec<bool>,
    pub trained_on: usize,
    /// Set when only one class was seen; the model always predicts it.
    pub constant: Option<usize>,
}

/// A classifier that can be trained per group.
pub trait Classifier: Sync {
    fn fit(&self, ds: &WindowedDataset, aecs: &AecsMatrix, seed: u64) -> Result<TrainedModel>;
    fn predict(&self, model: &TrainedModel, ds: &WindowedDataset, aecs: &AecsMatrix) -> Result<Vec<usize>>;
}

/// Number of summary statistics per channel.
pub const STATS_PER_CHANNEL: usize = 5;

/// Mean, standard deviation, minimum, maximum and mean absolute first
/// difference of every channel, laid out channel by channel.
pub fn summary_features(ds: &WindowedDataset) -> Vec<Vec<f64>> {
    let (t, d) = (ds.timesteps(), ds.channels());
    (0..ds.len())
        .map(|i| {
            let w = ds.window(i);
            let mut out = Vec::with_capacity(d * STATS_PER_CHANNEL);
            for ch in 0..d {
                let series: Vec<f64> = (0..t).map(|s| w[s * d + ch]).collect();
                let mean = series.iter().sum::<f64>() / t as f64;
                let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
                let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mad = series.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (t - 1) as f64;
                out.extend([mean, var.sqrt(), min, max, mad]);
            }
            out
        })
        .collect()
}

/// Multinomial logistic regression trained by full-batch gradient descent on
/// standardized features.
#[derive(Debug, Clone)]
pub struct SoftmaxClassifier {
    pub spec: ClassifierSpec,
    pub num_classes: usize,
}

impl SoftmaxClassifier {
    fn features(&self, ds: &WindowedDataset, aecs: &AecsMatrix) -> Result<Vec<Vec<f64>>> {
        if ds.len() != aecs.rows() {
            return Err(Error::Shape(format!("{} windows but {} AECS rows", ds.len(), aecs.rows())));
        }
        Ok(match self.spec.kind {
            ClassifierKind::SoftmaxAecs => (0..aecs.rows()).map(|i| aecs.row(i).to_vec()).collect(),
            ClassifierKind::SoftmaxStats => summary_features(ds),
        })
    }

    /// Layout: feature mean `[f]`, feature scale `[f]`, weights `[C x f]`,
    /// biases `[C]`.
    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let c = self.num_classes;
        let f = (params.len() - c) / (c + 2);
        let (mean, rest) = params.split_at(f);
        let (scale, rest) = rest.split_at(f);
        let (w, b) = rest.split_at(c * f);
        (mean, scale, w, b)
    }

    fn scores(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (mean, scale, w, b) = self.split(params);
        let f = mean.len();
        let z: Vec<f64> = x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect();
        (0..self.num_classes)
            .map(|c| b[c] + w[c * f..(c + 1) * f].iter().zip(&z).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }
}

impl Classifier for SoftmaxClassifier {
    fn fit(&self, ds: &WindowedDataset, aecs: &AecsMatrix, seed: u64) -> Result<TrainedModel> {
        self.spec.validate()?;
        let x = self.features(ds, aecs)?;
        let n = x.len();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot train a classifier on zero instances".into()));
        }
        let c = self.num_classes;
        let f = x[0].len();
        let labels = ds.labels();
        let mut seen = vec![false; c];
        labels.iter().for_each(|&y| seen[y] = true);

        let mean: Vec<f64> = (0..f).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
        let scale: Vec<f64> = (0..f)
            .map(|k| {
                let var = x.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n as f64;
                if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let z: Vec<Vec<f64>> =
            x.iter().map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect()).collect();

        let mut w = vec![0.0; c * f];
        let mut b = vec![0.0; c];
        let seen_classes: Vec<usize> = (0..c).filter(|&k| seen[k]).collect();
        let constant = (seen_classes.len() == 1).then(|| seen_classes[0]);
        if let Some(only) = constant {
            log::warn!("group with {n} instances has the single class {only}; using a constant predictor");
        } else {
            let mut rng = seeded_rng(seed);
            w.iter_mut().for_each(|v| *v = rng.gen_range(-0.01..0.01));
            let lr = self.spec.learning_rate;
            let mut probs = vec![0.0; c];
            for _ in 0..self.spec.epochs {
                let mut gw = vec![0.0; c * f];
                let mut gb = vec![0.0; c];
                for (zi, &yi) in z.iter().zip(labels) {
                    for k in 0..c {
                        probs[k] = b[k] + w[k * f..(k + 1) * f].iter().zip(zi).map(|(a, v)| a * v).sum::<f64>();
                    }
                    let top = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    probs.iter_mut().for_each(|p| *p = (*p - top).exp());
                    let total: f64 = probs.iter().sum();
                    for k in 0..c {
                        let err = probs[k] / total - if k == yi { 1.0 } else { 0.0 };
                        gb[k] += err;
                        gw[k * f..(k + 1) * f].iter_mut().zip(zi).for_each(|(g, v)| *g += err * v);
                    }
                }
                for (wi, gi) in w.iter_mut().zip(&gw) {
                    *wi -= lr * (gi / n as f64 + self.spec.l2 * *wi);
                }
                for (bi, gi) in b.iter_mut().zip(&gb) {
                    *bi -= lr * gi / n as f64;
                }
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::Divergence("softmax weights became non-finite".into()));
            }
        }
        let mut params = Vec::with_capacity(2 * f + c * f + c);
        params.extend(mean);
        params.extend(scale);
        params.extend(w);
        params.extend(b);
        Ok(TrainedModel { params, seen, trained_on: n, constant })
    }

    fn predict(&self, model: &TrainedModel, ds: &WindowedDataset, aecs: &AecsMatrix) -> Result<Vec<usize>> {
        let x = self.features(ds, aecs)?;
        if let Some(only) = model.constant {
            return Ok(vec![only; x.len()]);
        }
        Ok(x
            .iter()
            .map(|xi| {
                let s = self.scores(&model.params, xi);
                let mut best: Option<usize> = None;
                for k in (0..self.num_classes).filter(|&k| model.seen[k]) {
                    if best.is_none_or(|b| s[k] > s[b]) {
                        best = Some(k);
                    }
                }
                best.expect("at least one seen class")
            })
            .collect())
    }
}

/// Trained per-group models and the grouping they were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModelBundle {
    pub spec: ClassifierSpec,
    pub num_classes: usize,
    pub models: Vec<TrainedModel>,
    pub grouping: Grouping,
    pub aecs_model_id: String,
    pub warnings: Vec<String>,
}

fn classifier(spec: &ClassifierSpec, num_classes: usize) -> SoftmaxClassifier {
    SoftmaxClassifier { spec: spec.clone(), num_classes }
}

/// Seed used for the model of group `g`.
pub fn group_seed(seed: u64, g: usize) -> u64 {
    derive_seed(seed, &format!("grouplearn/group{g}"))
}

/// Trains model `i` on exactly the instances of group `i`.
pub fn train_per_group(
    ds: &WindowedDataset,
    aecs: &AecsMatrix,
    grouping: &Grouping,
    spec: &ClassifierSpec,
) -> Result<GroupModelBundle> {
    train_per_group_with(&classifier(spec, ds.num_classes()), ds, aecs, grouping, spec)
}

/// [`train_per_group`] with any [`Classifier`].
pub fn train_per_group_with(
    clf: &dyn Classifier,
    ds: &WindowedDataset,
    aecs: &AecsMatrix,
    grouping: &Grouping,
    spec: &ClassifierSpec,
) -> Result<GroupModelBundle> {
    spec.validate()?;
    if grouping.len() != ds.len() || aecs.rows() != ds.len() {
        return Err(Error::Shape(format!(
            "grouping of {}, AECS of {} rows and {} windows",
            grouping.len(),
            aecs.rows(),
            ds.len()
        )));
    }
    let models = (0..grouping.k)
        .into_par_iter()
        .map(|g| {
            let members = grouping.members(g);
            clf.fit(&ds.subset(&members)?, &aecs.subset(&members)?, group_seed(spec.seed, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let warnings = models
        .iter()
        .enumerate()
        .filter_map(|(g, m)| m.constant.map(|c| format!("group {g} contains only class {c}; constant predictor")))
        .collect();
    Ok(GroupModelBundle {
        spec: spec.clone(),
        num_classes: ds.num_classes(),
        models,
        grouping: grouping.clone(),
        aecs_model_id: aecs.source_model_id.clone(),
        warnings,
    })
}

/// One model trained on every instance.
pub fn train_single_baseline(ds: &WindowedDataset, aecs: &AecsMatrix, spec: &ClassifierSpec) -> Result<GroupModelBundle> {
    let grouping = Grouping::single(ds.len(), crate::DistanceMeasureId::Chebyshev);
    train_per_group(ds, aecs, &grouping, spec)
}

/// Predictions of model `index` on the given windows. Ties go to the smaller
/// class id.
pub fn predict(bundle: &GroupModelBundle, index: usize, ds: &WindowedDataset, aecs: &AecsMatrix) -> Result<Vec<usize>> {
    let model = bundle.models.get(index).ok_or_else(|| {
        Error::InvalidArgument(format!("model index {index} out of range for {} models", bundle.models.len()))
    })?;
    if ds.is_empty() {
        return Ok(Vec::new());
    }
    classifier(&bundle.spec, bundle.num_classes).predict(model, ds, aecs)
}

const MANIFEST: &str = "bundle.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    bundle: GroupModelBundle,
    blobs: Vec<BlobEntry>,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    file: String,
    values: usize,
    sha256: String,
}

impl GroupModelBundle {
    /// Writes `bundle.json` and one little-endian `f64` file per model into
    /// `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
        let mut blobs = Vec::new();
        for (g, model) in self.models.iter().enumerate() {
            let file = format!("model_{g}.bin");
            let bytes: Vec<u8> = model.params.iter().flat_map(|v| v.to_le_bytes()).collect();
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(Error::at_path(&path))?;
            blobs.push(BlobEntry { file, values: model.params.len(), sha256: digest_f64(&model.params) });
        }
        let manifest = Manifest { bundle: self.clone(), blobs };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(Error::at_path(&path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read(&path).map_err(Error::at_path(&path))?;
        let Manifest { mut bundle, blobs } = serde_json::from_slice(&text)?;
        if blobs.len() != bundle.models.len() {
            return Err(Error::Artifact(format!("{} blobs for {} models", blobs.len(), bundle.models.len())));
        }
        for (model, entry) in bundle.models.iter_mut().zip(&blobs) {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(Error::at_path(&path))?;
            if bytes.len() != entry.values * 8 {
                return Err(Error::Artifact(format!("{} holds {} bytes, expected {}", entry.file, bytes.len(), entry.values * 8)));
            }
            model.params = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            if digest_f64(&model.params) != entry.sha256 {
                return Err(Error::Artifact(format!("digest mismatch for {}", entry.file)));
            }
        }
        Ok(bundle)
    }
}
