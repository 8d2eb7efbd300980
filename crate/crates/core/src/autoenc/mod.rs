//! LSTM sequence autoencoder producing AECS representations.

mod gradcheck;
mod lstm;
mod model;
mod train;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gradcheck::{compare_with_finite_differences, gradient_check, GradCheckReport};
pub use lstm::{Gate, LstmLayer, StepCache};
pub use model::{mse, AutoencoderConfig, AutoencoderParams, ForwardCache};
pub use train::{batch_gradient, fit, mean_loss, train_step, AdamState, EpochRecord, TrainReport};

use crate::archive;
use crate::dataset::{AecsMatrix, WindowedDataset};
use crate::error::{Error, Result};

/// A trained autoencoder with the metadata needed to reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub config: AutoencoderConfig,
    pub params: AutoencoderParams,
    /// Window length the model was trained on.
    pub window_len: usize,
    pub model_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    config: AutoencoderConfig,
    d: usize,
    window_len: usize,
    model_id: String,
    seed: u64,
}

const MODEL_KIND: &str = "autoencoder";

impl AutoencoderModel {
    pub fn new(config: AutoencoderConfig, params: AutoencoderParams, window_len: usize) -> Self {
        let model_id = archive::digest_f64(&params.flatten())[..16].to_string();
        AutoencoderModel { config, params, window_len, model_id }
    }

    /// Trains on `ds` (see [`fit`]).
    pub fn train(ds: &WindowedDataset, config: &AutoencoderConfig) -> Result<(Self, TrainReport)> {
        let (params, report) = fit(ds, config)?;
        Ok((AutoencoderModel::new(config.clone(), params, ds.timesteps()), report))
    }

    /// Encodes every window; row `i` is the AECS of window `i`.
    pub fn transform(&self, ds: &WindowedDataset) -> Result<AecsMatrix> {
        transform(&self.params, ds, &self.model_id)
    }

    pub fn encode_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            config: self.config.clone(),
            d: self.params.d,
            window_len: self.window_len,
            model_id: self.model_id.clone(),
            seed: self.config.seed,
        };
        archive::encode(MODEL_KIND, &header, &self.params.flatten())
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, flat): (ModelHeader, Vec<f64>) = archive::decode(MODEL_KIND, bytes)?;
        let mut params = AutoencoderParams::zeros(h.d, h.config.hidden1, h.config.hidden2);
        params.unflatten_into(&flat)?;
        let model = AutoencoderModel::new(h.config, params, h.window_len);
        if model.model_id != h.model_id {
            return Err(Error::Artifact(format!(
                "model id {} does not match its weights ({})",
                h.model_id, model.model_id
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_bytes()?).map_err(Error::at_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        AutoencoderModel::decode_bytes(&std::fs::read(path).map_err(Error::at_path(path))?)
    }
}

pub fn transform(params: &AutoencoderParams, ds: &WindowedDataset, model_id: &str) -> Result<AecsMatrix> {
    if ds.channels() != params.d {
        return Err(Error::Shape(format!("dataset has {} channels, model expects {}", ds.channels(), params.d)));
    }
    let rows = (0..ds.len())
        .into_par_iter()
        .map(|i| params.encode(ds.window(i)))
        .collect::<Result<Vec<_>>>()?;
    AecsMatrix::new(ds.len(), params.hidden2(), rows.concat(), model_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::synthetic::{generate_synthetic, SyntheticSpec};
    use rand::Rng;

    fn tiny_config(h1: usize, h2: usize) -> AutoencoderConfig {
        AutoencoderConfig { hidden1: h1, hidden2: h2, ..AutoencoderConfig::default() }
    }

    fn random_window(t: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut r = seeded_rng(seed);
        (0..t * d).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn init_is_deterministic_with_declared_shapes() {
        let cfg = AutoencoderConfig::default();
        let a = AutoencoderParams::init(&cfg, 6, 11);
        assert_eq!(a, AutoencoderParams::init(&cfg, 6, 11));
        assert_ne!(a, AutoencoderParams::init(&cfg, 6, 12));
        assert_eq!(a.enc1.gate_weights(Gate::Input).len(), 16 * (6 + 16));
        assert_eq!((a.enc1.hidden, a.enc1.cols()), (16, 22));
        assert_eq!((a.enc2.hidden, a.enc2.cols()), (12, 28));
        for layer in [&a.enc1, &a.enc2, &a.dec1, &a.dec2] {
            assert!(layer.gate_bias(Gate::Forget).iter().all(|&b| b == 1.0));
        }
    }

    #[test]
    fn config_validation() {
        assert!(AutoencoderConfig::default().validate(64, 6).is_ok());
        assert!(tiny_config(12, 12).validate(64, 6).is_err());
        assert!(tiny_config(16, 12).validate(2, 5).is_err()); // 12 >= t*d = 10
        let cfg = AutoencoderConfig { learning_rate: 0.0, ..AutoencoderConfig::default() };
        assert!(cfg.validate(64, 6).is_err());
    }

    #[test]
    fn zero_params_encode_and_decode_to_zero() {
        let p = AutoencoderParams::zeros(3, 4, 2);
        let w = random_window(5, 3, 1);
        assert_eq!(p.encode(&w).unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.decode(&[0.0, 0.0], 5).unwrap(), vec![0.0; 15]);
    }

    #[test]
    fn single_step_encode_is_one_lstm_step() {
        let p = AutoencoderParams::init(&tiny_config(4, 3), 2, 5);
        let x = [0.3, -0.7];
        let s1 = p.enc1.step(&x, &[0.0; 4], &[0.0; 4]);
        let s2 = p.enc2.step(&s1.h, &[0.0; 3], &[0.0; 3]);
        assert_eq!(p.encode(&x).unwrap(), s2.h);
    }

    #[test]
    fn encode_matches_scalar_two_step_recursion() {
        // hidden 3/2, d = 1, t = 2, every weight and bias 0.1. All units of a
        // layer then share one trajectory, which a scalar recursion tracks.
        let mut p = AutoencoderParams::zeros(1, 3, 2);
        for layer in [&mut p.enc1, &mut p.enc2] {
            layer.w.iter_mut().for_each(|w| *w = 0.1);
            layer.b.iter_mut().for_each(|b| *b = 0.1);
        }
        let xs = [0.5, -1.2];
        let cell = |z: f64, c_prev: f64| {
            let (i, f, g, o) = (sig(z), sig(z), z.tanh(), sig(z));
            let c = f * c_prev + i * g;
            (o * c.tanh(), c)
        };
        let (mut h1, mut c1, mut h2, mut c2) = (0.0, 0.0, 0.0, 0.0);
        for x in xs {
            let z1 = 0.1 * (x + 3.0 * h1) + 0.1;
            (h1, c1) = cell(z1, c1);
            let z2 = 0.1 * (3.0 * h1 + 2.0 * h2) + 0.1;
            (h2, c2) = cell(z2, c2);
        }
        let aecs = p.encode(&xs).unwrap();
        for v in aecs {
            assert!((v - h2).abs() < 1e-14, "{v} vs {h2}");
        }
    }

    #[test]
    fn saturated_decoder_emits_constant_sequence() {
        // One decoder unit that only carries its initial cell state forward:
        // f = 1, i = 0, o = 1 through saturated biases, zero weights. The
        // second decoder layer copies tanh of its input into its cell.
        let mut p = AutoencoderParams::zeros(1, 2, 1);
        p.dec1.b = vec![-40.0, 40.0, 0.0, 40.0];
        // dec2: hidden 2, input 1; cell gate reads the input with weight 1
        let cols = p.dec2.cols();
        for unit in 0..2 {
            p.dec2.w[(2 * 2 + unit) * cols] = 1.0;
        }
        p.dec2.b = vec![40.0, 40.0, -40.0, -40.0, 0.0, 0.0, 40.0, 40.0];
        p.proj_w = vec![1.0, 0.0];
        let c0: f64 = 0.7;
        let out = p.decode(&[c0], 6).unwrap();
        let h1 = c0.tanh();
        let expected = h1.tanh().tanh();
        for y in out {
            assert!((y - expected).abs() < 1e-12, "{y} vs {expected}");
        }
    }

    #[test]
    fn roundtrip_shape_and_purity() {
        let p = AutoencoderParams::init(&tiny_config(5, 3), 2, 9);
        let w = random_window(7, 2, 2);
        let aecs = p.encode(&w).unwrap();
        assert_eq!(p.decode(&aecs, 7).unwrap().len(), w.len());
        assert_eq!(aecs, p.encode(&w).unwrap());
        assert!(p.encode(&w[..5]).is_err());
        assert!(p.decode(&[0.0; 2], 7).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = AutoencoderParams::init(&tiny_config(3, 2), 1, 1);
        p.proj_b[0] = f64::NAN;
        assert!(matches!(p.forward(&[0.1, 0.2]), Err(Error::Divergence(_))));
    }

    #[test]
    fn mse_oracle() {
        let a: Vec<f64> = random_window(6, 2, 3);
        let b: Vec<f64> = random_window(6, 2, 4);
        let mut acc = 0.0;
        for s in 0..6 {
            for j in 0..2 {
                let diff = a[s * 2 + j] - b[s * 2 + j];
                acc += diff * diff;
            }
        }
        assert!((mse(&a, &b).unwrap() - acc / 12.0).abs() < 1e-12);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 2.0).collect();
        assert!((mse(&shifted, &a).unwrap() - 4.0).abs() < 1e-12);
        assert!(mse(&a, &b[..4]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let p = AutoencoderParams::random_uniform(2, 3, 2, 1.0, seed);
            let w = random_window(5, 2, 100 + seed);
            let r = gradient_check(&p, &w, 1e-5).unwrap();
            assert!(r.max_relative_error < 1e-4, "seed {seed}: {r:?}");
            assert_eq!(r.params_checked, p.num_params());
        }
    }

    #[test]
    fn zero_case_gradient_check_passes() {
        let p = AutoencoderParams::zeros(2, 3, 2);
        let r = gradient_check(&p, &[0.0; 10], 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-4);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let p = AutoencoderParams::random_uniform(2, 3, 2, 1.0, 4);
        let w = random_window(5, 2, 8);
        let (_, g) = p.loss_and_gradient(&w).unwrap();
        let mut flat = g.flatten();
        let k = flat.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        flat[k] *= 2.0;
        let r = compare_with_finite_differences(&p, &w, 1e-5, &flat).unwrap();
        assert!(r.max_relative_error > 0.1);
        assert_eq!(r.worst_index, k);
    }

    #[test]
    fn one_step_reduces_loss_and_zero_lr_is_identity() {
        let cfg = tiny_config(4, 2);
        let mut p = AutoencoderParams::init(&cfg, 2, 3);
        let w = random_window(6, 2, 5);
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let l0 = train_step(&mut p, &[&w], &mut state, &cfg).unwrap();
        let (l1, _) = p.loss_and_gradient(&w).unwrap();
        assert!(l1 < l0, "{l1} !< {l0}");

        let frozen = AutoencoderConfig { learning_rate: 0.0, ..cfg };
        let mut q = before.clone();
        let mut state = AdamState::new(&q);
        train_step(&mut q, &[&w], &mut state, &frozen).unwrap();
        assert_eq!(q, before);
    }

    fn small_synthetic() -> WindowedDataset {
        let mut spec = SyntheticSpec::three_archetypes(2);
        spec.windows_per_archetype_per_class = 8;
        spec.t = 16;
        let mut ds = generate_synthetic(&spec).unwrap().dataset;
        crate::dataset::ChannelStats::fit(&ds).apply(&mut ds).unwrap();
        ds
    }

    #[test]
    fn fit_halves_training_loss() {
        let mut spec = SyntheticSpec::three_archetypes(2);
        spec.windows_per_archetype_per_class = 20;
        let mut ds = generate_synthetic(&spec).unwrap().dataset;
        crate::dataset::ChannelStats::fit(&ds).apply(&mut ds).unwrap();
        let cfg = AutoencoderConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-2,
            early_stop_patience: 30,
            seed: 1,
            ..AutoencoderConfig::default()
        };
        let (_, report) = fit(&ds, &cfg).unwrap();
        assert!(
            report.final_train_loss < 0.5 * report.initial_train_loss,
            "{} vs {}",
            report.final_train_loss,
            report.initial_train_loss
        );
        assert!(report.epochs.iter().all(|e| e.train_loss.is_finite() && e.train_loss >= 0.0));
        assert_eq!(report.validation_windows, 18);
    }

    #[test]
    fn one_full_batch_epoch_is_one_step_and_reproducible() {
        let ds = small_synthetic();
        let cfg = AutoencoderConfig {
            hidden1: 4,
            hidden2: 2,
            epochs: 1,
            batch_size: ds.len(),
            seed: 3,
            ..AutoencoderConfig::default()
        };
        let (p1, r1) = fit(&ds, &cfg).unwrap();
        assert_eq!(r1.optimizer_steps, 1);
        let (p2, r2) = fit(&ds, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert!(r1.same_trace(&r2));
    }

    #[test]
    fn transform_shapes_and_model_file_roundtrip() {
        let ds = small_synthetic();
        let cfg = AutoencoderConfig { hidden1: 5, hidden2: 3, seed: 2, ..AutoencoderConfig::default() };
        let model = AutoencoderModel::new(cfg.clone(), AutoencoderParams::init(&cfg, ds.channels(), 2), ds.timesteps());
        let aecs = model.transform(&ds).unwrap();
        assert_eq!((aecs.rows(), aecs.dim()), (ds.len(), 3));
        let one = model.transform(&ds.subset(&[4]).unwrap()).unwrap();
        assert_eq!(one.rows(), 1);
        assert_eq!(one.row(0), aecs.row(4));
        let dup = model.transform(&ds.subset(&[7, 7]).unwrap()).unwrap();
        assert_eq!(dup.row(0), dup.row(1));

        let bytes = model.encode_bytes().unwrap();
        let back = AutoencoderModel::decode_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.encode_bytes().unwrap(), bytes);

        let wrong = crate::dataset::WindowedDataset::new(
            4,
            1,
            vec![0.0; 4],
            vec![0],
            ds.meta()[..1].to_vec(),
            ds.class_names().to_vec(),
        )
        .unwrap();
        assert!(model.transform(&wrong).is_err());
    }
}
