//! A single LSTM layer with explicit forward and backward steps.
//!
//! Gate pre-activations are `z = W [x; h_prev] + b`, with `W` stored as four
//! row blocks in gate order input, forget, cell, output. Each block is a
//! `hidden x (input + hidden)` matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input: usize,
    pub hidden: usize,
    /// `4 * hidden` rows of `input + hidden` columns, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    /// `[x; h_prev]`
    pub xh: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates, `4 * hidden`, in gate order.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            input,
            hidden,
            w: vec![0.0; 4 * hidden * (input + hidden)],
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except the
    /// forget gate, which starts at 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut layer = LstmLayer::zeros(input, hidden);
        let scale = 1.0 / ((input + hidden) as f64).sqrt();
        for w in &mut layer.w {
            *w = rng.gen_range(-scale..scale);
        }
        let h = hidden;
        layer.b[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        layer
    }

    pub fn cols(&self) -> usize {
        self.input + self.hidden
    }

    pub fn gate_weights(&self, gate: Gate) -> &[f64] {
        let block = self.hidden * self.cols();
        let g = gate as usize;
        &self.w[g * block..(g + 1) * block]
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        let g = gate as usize;
        &self.b[g * self.hidden..(g + 1) * self.hidden]
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(h_prev.len(), self.hidden);
        let h = self.hidden;
        let cols = self.cols();
        let mut xh = Vec::with_capacity(cols);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h_prev);

        let mut gates = self.b.clone();
        for (row, z) in self.w.chunks_exact(cols).zip(gates.iter_mut()) {
            *z += row.iter().zip(&xh).map(|(w, v)| w * v).sum::<f64>();
        }
        for (k, z) in gates.iter_mut().enumerate() {
            *z = if k / h == Gate::Cell as usize { z.tanh() } else { sigmoid(*z) };
        }
        let (i, rest) = gates.split_at(h);
        let (f, rest) = rest.split_at(h);
        let (g, o) = rest.split_at(h);
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h_out: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
        StepCache { xh, c_prev: c_prev.to_vec(), gates, c, tanh_c, h: h_out }
    }

    /// Backpropagates one step. `dh` and `dc` are the loss gradients with
    /// respect to this step's `h` and `c`. Parameter gradients are added into
    /// `grad`; returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut LstmLayer,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let cols = self.cols();
        let (i, rest) = cache.gates.split_at(h);
        let (f, rest) = rest.split_at(h);
        let (g, o) = rest.split_at(h);

        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let tc = cache.tanh_c[k];
            let dct = dc[k] + dh[k] * o[k] * (1.0 - tc * tc);
            dz[k] = dct * g[k] * i[k] * (1.0 - i[k]);
            dz[h + k] = dct * cache.c_prev[k] * f[k] * (1.0 - f[k]);
            dz[2 * h + k] = dct * i[k] * (1.0 - g[k] * g[k]);
            dz[3 * h + k] = dh[k] * tc * o[k] * (1.0 - o[k]);
            dc_prev[k] = dct * f[k];
        }

        let mut dxh = vec![0.0; cols];
        for (r, &dzr) in dz.iter().enumerate() {
            grad.b[r] += dzr;
            if dzr == 0.0 {
                continue;
            }
            let row = &self.w[r * cols..(r + 1) * cols];
            let grow = &mut grad.w[r * cols..(r + 1) * cols];
            for c in 0..cols {
                grow[c] += dzr * cache.xh[c];
                dxh[c] += dzr * row[c];
            }
        }
        let dh_prev = dxh.split_off(self.input);
        (dxh, dh_prev, dc_prev)
    }
}
