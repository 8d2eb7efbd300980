//! Synthetic heterogeneous datasets with known archetype structure.
//!
//! Each archetype is a family of sinusoids (own frequency, amplitude and noise
//! level). A window of archetype `a` and class `c` on channel `j` is
//!
//! ```text
//! x[s] = amp_a * sin(2π f_a s / fs + jπ/d) + sign_a * effect * (c - (C-1)/2) + e[s]
//! e[s] = φ e[s-1] + σ_a sqrt(1-φ²) η[s],   η ~ N(0, 1),   e[-1] ~ N(0, σ_a²)
//! ```
//!
//! so the class moves the window mean in a direction set by the archetype.
//! Archetypes with opposite signs give an XOR-style problem: class-conditional
//! feature means coincide when pooled, so a single linear model has nothing to
//! learn while a model per archetype separates the classes easily.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{WindowMeta, WindowedDataset};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeParams {
    pub base_freq_hz: f64,
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// +1 or -1: direction in which the class index moves the window mean.
    pub class_effect_sign: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub archetypes: Vec<ArchetypeParams>,
    pub windows_per_archetype_per_class: usize,
    pub t: usize,
    pub d: usize,
    pub classes: usize,
    pub sample_rate_hz: f64,
    /// Mean shift per class step.
    pub class_effect: f64,
    /// AR(1) coefficient of the noise process, in [0, 1).
    pub ar_coefficient: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two archetypes with opposite class-effect signs.
    pub fn xor(seed: u64) -> Self {
        SyntheticSpec {
            archetypes: vec![
                ArchetypeParams { base_freq_hz: 0.5, amplitude: 1.0, noise_sigma: 0.3, class_effect_sign: 1.0 },
                ArchetypeParams { base_freq_hz: 2.5, amplitude: 2.5, noise_sigma: 0.3, class_effect_sign: -1.0 },
            ],
            windows_per_archetype_per_class: 60,
            t: 32,
            d: 3,
            classes: 3,
            sample_rate_hz: 10.0,
            class_effect: 0.6,
            ar_coefficient: 0.5,
            seed,
        }
    }

    /// Three well-separated archetypes with a weak class effect.
    pub fn three_archetypes(seed: u64) -> Self {
        SyntheticSpec {
            archetypes: vec![
                ArchetypeParams { base_freq_hz: 0.4, amplitude: 1.0, noise_sigma: 0.2, class_effect_sign: 1.0 },
                ArchetypeParams { base_freq_hz: 1.5, amplitude: 2.0, noise_sigma: 0.2, class_effect_sign: -1.0 },
                ArchetypeParams { base_freq_hz: 3.5, amplitude: 3.0, noise_sigma: 0.2, class_effect_sign: 1.0 },
            ],
            windows_per_archetype_per_class: 50,
            t: 32,
            d: 3,
            classes: 3,
            sample_rate_hz: 10.0,
            class_effect: 0.2,
            ar_coefficient: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.archetypes.is_empty() {
            return bad("at least one archetype required".into());
        }
        if self.windows_per_archetype_per_class == 0 || self.classes == 0 || self.d == 0 {
            return bad("counts must be positive".into());
        }
        if self.t < 2 {
            return bad(format!("t = {} < 2", self.t));
        }
        if !(self.sample_rate_hz > 0.0) || !(0.0..1.0).contains(&self.ar_coefficient) {
            return bad("sample rate must be positive and AR coefficient in [0, 1)".into());
        }
        for (i, a) in self.archetypes.iter().enumerate() {
            if !(a.noise_sigma >= 0.0) || !a.amplitude.is_finite() || !a.base_freq_hz.is_finite() {
                return bad(format!("archetype {i}: invalid signal parameters"));
            }
        }
        Ok(())
    }
}

/// Generated windows plus the hidden archetype of each window.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: WindowedDataset,
    pub archetype: Vec<usize>,
}

/// Windows are emitted archetype-major, then class, then repetition. The
/// archetype index is recorded as the window's "driver" (`A<k>`), so the
/// stratified split balances archetypes as it would balance drivers.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let (t, d, classes) = (spec.t, spec.d, spec.classes);
    let class_names: Vec<String> = (0..classes).map(|c| format!("CLASS{c}")).collect();
    let center = (classes as f64 - 1.0) / 2.0;
    let phi = spec.ar_coefficient;
    let innovation = (1.0 - phi * phi).sqrt();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut meta = Vec::new();
    let mut archetype = Vec::new();
    for (a, p) in spec.archetypes.iter().enumerate() {
        for c in 0..classes {
            let shift = p.class_effect_sign * spec.class_effect * (c as f64 - center);
            for _ in 0..spec.windows_per_archetype_per_class {
                let mut noise: Vec<f64> =
                    (0..d).map(|_| p.noise_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                for s in 0..t {
                    for (j, e) in noise.iter_mut().enumerate() {
                        *e = phi * *e + p.noise_sigma * innovation * rng.sample::<f64, _>(StandardNormal);
                        let phase = std::f64::consts::PI * j as f64 / d as f64;
                        let arg = 2.0 * std::f64::consts::PI * p.base_freq_hz * s as f64 / spec.sample_rate_hz;
                        values.push(p.amplitude * (arg + phase).sin() + shift + *e);
                    }
                }
                labels.push(c);
                meta.push(WindowMeta {
                    driver_id: format!("A{a}"),
                    behavior: class_names[c].clone(),
                    road: "SYNTHETIC".into(),
                    session_id: format!("A{a}-C{c}"),
                });
                archetype.push(a);
            }
        }
    }
    let dataset = WindowedDataset::new(t, d, values, labels, meta, class_names)?;
    Ok(SyntheticDataset { dataset, archetype })
}
