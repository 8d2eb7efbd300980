//! Windowed datasets and autoencoder representation matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance of a single window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct WindowMeta {
    pub driver_id: String,
    pub behavior: String,
    pub road: String,
    pub session_id: String,
}

/// `m` windows of `t` timesteps by `d` channels, stored row-major as
/// (window, timestep, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    m: usize,
    t: usize,
    d: usize,
    values: Vec<f64>,
    labels: Vec<usize>,
    meta: Vec<WindowMeta>,
    class_names: Vec<String>,
}

impl WindowedDataset {
    pub fn new(
        t: usize,
        d: usize,
        values: Vec<f64>,
        labels: Vec<usize>,
        meta: Vec<WindowMeta>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if t < 2 || d < 1 {
            return Err(Error::Shape(format!("window shape {t}x{d}: need t >= 2, d >= 1")));
        }
        let m = labels.len();
        if m == 0 {
            return Err(Error::Shape("dataset has no windows".into()));
        }
        if values.len() != m * t * d {
            return Err(Error::Shape(format!(
                "{} values for {m} windows of {t}x{d}",
                values.len()
            )));
        }
        if meta.len() != m {
            return Err(Error::Shape(format!("{} meta records for {m} windows", meta.len())));
        }
        let classes = class_names.len();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value in window {}",
                pos / (t * d)
            )));
        }
        Ok(WindowedDataset { m, t, d, values, labels, meta, class_names })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn timesteps(&self) -> usize {
        self.t
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &[WindowMeta] {
        &self.meta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Window `i` as a `t * d` slice (timestep-major).
    pub fn window(&self, i: usize) -> &[f64] {
        let len = self.t * self.d;
        &self.values[i * len..(i + 1) * len]
    }

    /// New dataset holding the given windows in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.t * self.d);
        for &i in indices {
            if i >= self.m {
                return Err(Error::InvalidArgument(format!("window index {i} >= {}", self.m)));
            }
            values.extend_from_slice(self.window(i));
        }
        WindowedDataset::new(
            self.t,
            self.d,
            values,
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.meta[i].clone()).collect(),
            self.class_names.clone(),
        )
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population mean and standard deviation of every channel over all
    /// windows and timesteps. Channels with zero spread get std 1.
    pub fn fit(ds: &WindowedDataset) -> Self {
        let d = ds.channels();
        let n = (ds.len() * ds.timesteps()) as f64;
        let mut mean = vec![0.0; d];
        for frame in ds.values().chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(frame) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for frame in ds.values().chunks_exact(d) {
            for ((s, v), m) in var.iter_mut().zip(frame).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        ChannelStats { mean, std }
    }

    pub fn apply(&self, ds: &mut WindowedDataset) -> Result<()> {
        let d = ds.channels();
        if self.mean.len() != d {
            return Err(Error::Shape(format!(
                "normalization for {} channels applied to {d}",
                self.mean.len()
            )));
        }
        for frame in ds.values_mut().chunks_exact_mut(d) {
            for ((v, m), s) in frame.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// One representation vector per window, `n` rows of width `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AecsMatrix {
    n: usize,
    h: usize,
    values: Vec<f64>,
    pub source_model_id: String,
}

impl AecsMatrix {
    pub fn new(n: usize, h: usize, values: Vec<f64>, source_model_id: impl Into<String>) -> Result<Self> {
        if h == 0 || values.len() != n * h {
            return Err(Error::Shape(format!("{} values for {n}x{h} representation", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite representation value".into()));
        }
        Ok(AecsMatrix { n, h, values, source_model_id: source_model_id.into() })
    }

    /// Convenience constructor from row vectors (tests and fixtures).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let h = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != h) {
            return Err(Error::Shape("ragged rows".into()));
        }
        AecsMatrix::new(rows.len(), h, rows.concat(), "fixture")
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.h
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.h..(i + 1) * self.h]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.h);
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidArgument(format!("row {i} >= {}", self.n)));
            }
            values.extend_from_slice(self.row(i));
        }
        AecsMatrix::new(indices.len(), self.h, values, self.source_model_id.clone())
    }

    /// Short content hash of the values (hex), used to tie fitted contexts to
    /// the data they were fitted on.
    pub fn fingerprint(&self) -> String {
        crate::archive::digest_f64(&self.values)[..16].to_string()
    }
}
