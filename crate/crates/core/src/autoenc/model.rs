//! Seq-2-seq autoencoder: two encoder LSTM layers, two mirrored decoder layers
//! and a linear output projection.
//!
//! ```text
//! encoder   x[s] (d) -> enc1 (hidden1) -> enc2 (hidden2);  AECS = last h of enc2
//! decoder   y[s-1] (d, zeros at s = 0) -> dec1 (hidden2) -> dec2 (hidden1) -> y[s] = P h + p
//! ```
//!
//! `dec1` starts from `h = c = AECS`; every other layer starts from zero state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{LstmLayer, StepCache};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: usize,
    /// Share of the training windows held out for early stopping.
    pub validation_fraction: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            hidden1: 16,
            hidden2: 12,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop_patience: 10,
            validation_fraction: 0.1,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    /// Checks the config against the window shape `t x d`.
    pub fn validate(&self, t: usize, d: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden2 == 0 || self.hidden2 >= self.hidden1 {
            return bad(format!("need 0 < hidden2 < hidden1, got {}/{}", self.hidden2, self.hidden1));
        }
        if self.hidden2 >= t * d {
            return bad(format!("hidden2 = {} is not smaller than t*d = {}", self.hidden2, t * d));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return bad("learning_rate > 0, epochs >= 1 and batch_size >= 1 required".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon be positive".into());
        }
        if !(0.0..0.5).contains(&self.validation_fraction) || !(self.grad_clip > 0.0) {
            return bad("validation_fraction in [0, 0.5) and grad_clip > 0 required".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    pub d: usize,
    pub enc1: LstmLayer,
    pub enc2: LstmLayer,
    pub dec1: LstmLayer,
    pub dec2: LstmLayer,
    /// `d x hidden1`, row-major.
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub enc1: Vec<StepCache>,
    pub enc2: Vec<StepCache>,
    pub dec1: Vec<StepCache>,
    pub dec2: Vec<StepCache>,
    pub aecs: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

impl AutoencoderParams {
    pub fn zeros(d: usize, hidden1: usize, hidden2: usize) -> Self {
        AutoencoderParams {
            d,
            enc1: LstmLayer::zeros(d, hidden1),
            enc2: LstmLayer::zeros(hidden1, hidden2),
            dec1: LstmLayer::zeros(d, hidden2),
            dec2: LstmLayer::zeros(hidden2, hidden1),
            proj_w: vec![0.0; d * hidden1],
            proj_b: vec![0.0; d],
        }
    }

    pub fn init(config: &AutoencoderConfig, d: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let (h1, h2) = (config.hidden1, config.hidden2);
        let enc1 = LstmLayer::init(d, h1, &mut rng);
        let enc2 = LstmLayer::init(h1, h2, &mut rng);
        let dec1 = LstmLayer::init(d, h2, &mut rng);
        let dec2 = LstmLayer::init(h2, h1, &mut rng);
        let scale = 1.0 / (h1 as f64).sqrt();
        let proj_w = (0..d * h1).map(|_| rng.gen_range(-scale..scale)).collect();
        AutoencoderParams { d, enc1, enc2, dec1, dec2, proj_w, proj_b: vec![0.0; d] }
    }

    /// Every weight and bias drawn from `Uniform(-scale, scale)`. Used by
    /// gradient checks, where the small training initialization leaves some
    /// decoder gradients near the finite-difference noise floor.
    pub fn random_uniform(d: usize, hidden1: usize, hidden2: usize, scale: f64, seed: u64) -> Self {
        let mut p = AutoencoderParams::zeros(d, hidden1, hidden2);
        let mut rng = seeded_rng(seed);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
        }
        p
    }

    pub fn hidden1(&self) -> usize {
        self.enc1.hidden
    }

    pub fn hidden2(&self) -> usize {
        self.enc2.hidden
    }

    /// Same architecture, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        AutoencoderParams::zeros(self.d, self.hidden1(), self.hidden2())
    }

    /// All parameter tensors in a fixed order (the serialization order).
    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.enc1.w, &self.enc1.b, &self.enc2.w, &self.enc2.b, &self.dec1.w, &self.dec1.b, &self.dec2.w,
            &self.dec2.b, &self.proj_w, &self.proj_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.enc1.w,
            &mut self.enc1.b,
            &mut self.enc2.w,
            &mut self.enc2.b,
            &mut self.dec1.w,
            &mut self.dec1.b,
            &mut self.dec2.w,
            &mut self.dec2.b,
            &mut self.proj_w,
            &mut self.proj_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn unflatten_into(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &AutoencoderParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    fn check_window(&self, window: &[f64]) -> Result<usize> {
        if window.is_empty() || !window.len().is_multiple_of(self.d) {
            return Err(Error::Shape(format!("window of {} values for {} channels", window.len(), self.d)));
        }
        Ok(window.len() / self.d)
    }

    fn run_encoder(&self, window: &[f64]) -> (Vec<StepCache>, Vec<StepCache>) {
        let (h1, h2) = (self.hidden1(), self.hidden2());
        let (mut hs1, mut cs1) = (vec![0.0; h1], vec![0.0; h1]);
        let (mut hs2, mut cs2) = (vec![0.0; h2], vec![0.0; h2]);
        let steps = window.len() / self.d;
        let mut e1 = Vec::with_capacity(steps);
        let mut e2 = Vec::with_capacity(steps);
        for frame in window.chunks_exact(self.d) {
            let s1 = self.enc1.step(frame, &hs1, &cs1);
            let s2 = self.enc2.step(&s1.h, &hs2, &cs2);
            hs1.clone_from(&s1.h);
            cs1.clone_from(&s1.c);
            hs2.clone_from(&s2.h);
            cs2.clone_from(&s2.c);
            e1.push(s1);
            e2.push(s2);
        }
        (e1, e2)
    }

    fn run_decoder(&self, aecs: &[f64], t: usize) -> (Vec<StepCache>, Vec<StepCache>, Vec<f64>) {
        let h1 = self.hidden1();
        let (mut hd1, mut cd1) = (aecs.to_vec(), aecs.to_vec());
        let (mut hd2, mut cd2) = (vec![0.0; h1], vec![0.0; h1]);
        let mut prev = vec![0.0; self.d];
        let mut d1 = Vec::with_capacity(t);
        let mut d2 = Vec::with_capacity(t);
        let mut out = Vec::with_capacity(t * self.d);
        for _ in 0..t {
            let s1 = self.dec1.step(&prev, &hd1, &cd1);
            let s2 = self.dec2.step(&s1.h, &hd2, &cd2);
            for (row, b) in self.proj_w.chunks_exact(h1).zip(&self.proj_b) {
                let y = b + row.iter().zip(&s2.h).map(|(w, h)| w * h).sum::<f64>();
                out.push(y);
            }
            prev.copy_from_slice(&out[out.len() - self.d..]);
            hd1.clone_from(&s1.h);
            cd1.clone_from(&s1.c);
            hd2.clone_from(&s2.h);
            cd2.clone_from(&s2.c);
            d1.push(s1);
            d2.push(s2);
        }
        (d1, d2, out)
    }

    /// AECS vector of one `t x d` window: the last hidden state of `enc2`.
    pub fn encode(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let (_, e2) = self.run_encoder(window);
        let aecs = e2.last().map(|s| s.h.clone()).unwrap_or_default();
        finite_or_diverged(&aecs, "encoder output")?;
        Ok(aecs)
    }

    /// Unrolls the decoder `t` steps from an AECS vector.
    pub fn decode(&self, aecs: &[f64], t: usize) -> Result<Vec<f64>> {
        if aecs.len() != self.hidden2() {
            return Err(Error::Shape(format!("AECS of length {} for hidden2 = {}", aecs.len(), self.hidden2())));
        }
        let (_, _, out) = self.run_decoder(aecs, t);
        finite_or_diverged(&out, "decoder output")?;
        Ok(out)
    }

    pub fn forward(&self, window: &[f64]) -> Result<ForwardCache> {
        let t = self.check_window(window)?;
        let (enc1, enc2) = self.run_encoder(window);
        let aecs = enc2.last().expect("t >= 1").h.clone();
        let (dec1, dec2, reconstruction) = self.run_decoder(&aecs, t);
        finite_or_diverged(&reconstruction, "reconstruction")?;
        Ok(ForwardCache { enc1, enc2, dec1, dec2, aecs, reconstruction })
    }

    /// Reconstruction MSE of one window and its gradient with respect to every
    /// parameter (full backpropagation through time, including the
    /// autoregressive decoder feedback).
    pub fn loss_and_gradient(&self, window: &[f64]) -> Result<(f64, AutoencoderParams)> {
        let cache = self.forward(window)?;
        let loss = mse(&cache.reconstruction, window)?;
        let grad = self.backward(&cache, window);
        Ok((loss, grad))
    }

    pub fn backward(&self, cache: &ForwardCache, window: &[f64]) -> AutoencoderParams {
        let d = self.d;
        let (h1, h2) = (self.hidden1(), self.hidden2());
        let t = window.len() / d;
        let scale = 2.0 / window.len() as f64;
        let mut grad = self.zeros_like();

        // Decoder, newest step first.
        let mut dy_carry = vec![0.0; d];
        let (mut dh1n, mut dc1n) = (vec![0.0; h2], vec![0.0; h2]);
        let (mut dh2n, mut dc2n) = (vec![0.0; h1], vec![0.0; h1]);
        for s in (0..t).rev() {
            let y = &cache.reconstruction[s * d..(s + 1) * d];
            let x = &window[s * d..(s + 1) * d];
            let dy: Vec<f64> = (0..d).map(|j| scale * (y[j] - x[j]) + dy_carry[j]).collect();

            let hdec = &cache.dec2[s].h;
            let mut dh2 = dh2n.clone();
            for (j, &dyj) in dy.iter().enumerate() {
                grad.proj_b[j] += dyj;
                let row = &self.proj_w[j * h1..(j + 1) * h1];
                let grow = &mut grad.proj_w[j * h1..(j + 1) * h1];
                for k in 0..h1 {
                    grow[k] += dyj * hdec[k];
                    dh2[k] += dyj * row[k];
                }
            }
            let (dx2, dh2p, dc2p) = self.dec2.step_backward(&cache.dec2[s], &dh2, &dc2n, &mut grad.dec2);
            dh2n = dh2p;
            dc2n = dc2p;

            let dh1: Vec<f64> = dx2.iter().zip(&dh1n).map(|(a, b)| a + b).collect();
            let (dx1, dh1p, dc1p) = self.dec1.step_backward(&cache.dec1[s], &dh1, &dc1n, &mut grad.dec1);
            dh1n = dh1p;
            dc1n = dc1p;
            // dec1's input at step s is y[s-1]; at s = 0 it is a constant.
            dy_carry = dx1;
        }
        // dec1 started from h = c = AECS.
        let daecs: Vec<f64> = dh1n.iter().zip(&dc1n).map(|(a, b)| a + b).collect();

        // Encoder.
        let mut de2h = daecs;
        let mut de2c = vec![0.0; h2];
        let (mut de1h, mut de1c) = (vec![0.0; h1], vec![0.0; h1]);
        for s in (0..t).rev() {
            let (dx2, dhp, dcp) = self.enc2.step_backward(&cache.enc2[s], &de2h, &de2c, &mut grad.enc2);
            de2h = dhp;
            de2c = dcp;
            let dh1: Vec<f64> = dx2.iter().zip(&de1h).map(|(a, b)| a + b).collect();
            let (_, dhp, dcp) = self.enc1.step_backward(&cache.enc1[s], &dh1, &de1c, &mut grad.enc1);
            de1h = dhp;
            de1c = dcp;
        }
        grad
    }
}

/// Mean squared error over all entries.
pub fn mse(reconstruction: &[f64], window: &[f64]) -> Result<f64> {
    if reconstruction.len() != window.len() || window.is_empty() {
        return Err(Error::Shape(format!(
            "reconstruction of {} values vs window of {}",
            reconstruction.len(),
            window.len()
        )));
    }
    let sum: f64 = reconstruction.iter().zip(window).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / window.len() as f64)
}

fn finite_or_diverged(values: &[f64], what: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!("{what} is not finite at index {pos}")));
    }
    Ok(())
}
