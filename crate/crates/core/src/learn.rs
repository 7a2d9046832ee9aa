//! Log-spectral features and a softmax-regression classifier trained with
//! Adam on mini-batch cross-entropy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rfcore::{LabeledPatchSet, Patch};
use crate::spectral::{FrequencyGrid, SpectrumEstimator};
use crate::{seed, Error, Result};

pub const N_CLASSES: usize = 2;
pub const N_SPECTRAL: usize = 129;
pub const FEATURE_DIM: usize = N_SPECTRAL + 1;
pub const FEATURE_EPS: f64 = 1e-20;

/// `log10(spectrum + 1e-20)` per bin followed by a constant 1.0.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_spectrum(spectrum: &[f64]) -> Self {
        let mut values: Vec<f64> = spectrum.iter().map(|&p| libm::log10(p + FEATURE_EPS)).collect();
        values.push(1.0);
        Self { values }
    }

    pub fn bias(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Reusable featurizer (keeps the transform plan).
#[derive(Debug, Clone, Default)]
pub struct Featurizer {
    estimator: SpectrumEstimator,
}

impl Featurizer {
    pub fn new(grid: FrequencyGrid) -> Self {
        Self { estimator: SpectrumEstimator::new(grid) }
    }

    pub fn featurize(&self, patch: &Patch) -> FeatureVector {
        FeatureVector::from_spectrum(&self.estimator.patch_average_values(patch))
    }
}

pub fn featurize(patch: &Patch) -> FeatureVector {
    Featurizer::default().featurize(patch)
}

/// One training or evaluation sample. `flipped` holds the features of the
/// laterally flipped patch; `None` means flipping does not change them.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub label: usize,
    pub features: FeatureVector,
    pub flipped: Option<FeatureVector>,
}

impl Example {
    pub fn new(label: usize, features: FeatureVector) -> Self {
        Self { label, features, flipped: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { first_moment: vec![0.0; n], second_moment: vec![0.0; n], step_count: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    let n = params.len();
    for len in [grads.len(), state.first_moment.len(), state.second_moment.len()] {
        if len != n {
            return Err(Error::Length { expected: n, actual: len });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - libm::pow(hyper.beta1, f64::from(t));
    let c2 = 1.0 - libm::pow(hyper.beta2, f64::from(t));
    for i in 0..n {
        let g = grads[i];
        let m = hyper.beta1 * state.first_moment[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * state.second_moment[i] + (1.0 - hyper.beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        params[i] -= lr * (m / c1) / (libm::sqrt(v / c2) + hyper.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub flip_probability: f64,
    pub adam: AdamHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            flip_probability: 0.5,
            adam: AdamHyper::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size 0".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!("flip probability {}", self.flip_probability)));
        }
        Ok(())
    }

    /// Short FNV-1a digest of every field, recorded in trained models.
    pub fn digest(&self) -> String {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.learning_rate.to_bits());
        eat(self.epochs as u64);
        eat(self.batch_size as u64);
        eat(self.seed);
        eat(self.flip_probability.to_bits());
        eat(self.adam.beta1.to_bits());
        eat(self.adam.beta2.to_bits());
        eat(self.adam.eps.to_bits());
        format!("{h:016x}")
    }
}

/// Multinomial logistic regression, weights row-major `n_classes x n_features`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassifierModel {
    pub n_classes: usize,
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub config_digest: String,
}

impl ClassifierModel {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        Self { n_classes, n_features, weights: vec![0.0; n_classes * n_features], config_digest: String::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.n_classes * self.n_features {
            return Err(Error::Length { expected: self.n_classes * self.n_features, actual: self.weights.len() });
        }
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    pub fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_features)
            .map(|row| row.iter().zip(&x.values).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// Most probable class; ties go to the lower index.
    pub fn predict(&self, x: &FeatureVector) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy over `batch` and its gradient with respect to the
/// weights (same layout as [`ClassifierModel::weights`]).
pub fn loss_and_gradient(model: &ClassifierModel, batch: &[(&FeatureVector, usize)]) -> (f64, Vec<f64>) {
    let nf = model.n_features;
    let mut grad = vec![0.0; model.weights.len()];
    let mut loss = 0.0;
    let inv = 1.0 / batch.len().max(1) as f64;
    for &(x, y) in batch {
        let p = softmax(&model.logits(x));
        loss -= libm::log(p[y].max(1e-300));
        for (c, &pc) in p.iter().enumerate() {
            let d = (pc - if c == y { 1.0 } else { 0.0 }) * inv;
            for (g, v) in grad[c * nf..(c + 1) * nf].iter_mut().zip(&x.values) {
                *g += d * v;
            }
        }
    }
    (loss * inv, grad)
}

fn check_examples(examples: &[Example], n_classes: usize) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for e in examples {
        if e.label >= n_classes {
            return Err(Error::InvalidArgument(format!("label {} out of range", e.label)));
        }
        if e.features.values.len() != FEATURE_DIM {
            return Err(Error::Length { expected: FEATURE_DIM, actual: e.features.values.len() });
        }
    }
    Ok(())
}

/// Continues training `model` in place with a fresh Adam state.
fn fit(model: &mut ClassifierModel, examples: &[Example], config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let mut rng = seed::rng(config.seed);
    let mut state = AdamState::new(model.weights.len());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            for &i in chunk {
                let e = &examples[i];
                let flip = config.flip_probability > 0.0 && rng.random::<f64>() < config.flip_probability;
                let x = match (&e.flipped, flip) {
                    (Some(f), true) => f,
                    _ => &e.features,
                };
                batch.push((x, e.label));
            }
            let (_, grad) = loss_and_gradient(model, &batch);
            adam_step(&mut state, &mut model.weights, &grad, config.learning_rate, &config.adam)?;
        }
    }
    model.config_digest = config.digest();
    model.validate()
}

/// Trains a zero-initialised two-class model.
pub fn train_examples(examples: &[Example], config: &TrainConfig) -> Result<ClassifierModel> {
    check_examples(examples, N_CLASSES)?;
    let mut present: Vec<usize> = examples.iter().map(|e| e.label).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < N_CLASSES {
        return Err(Error::SingleClass(present));
    }
    let mut model = ClassifierModel::zeros(N_CLASSES, FEATURE_DIM);
    fit(&mut model, examples, config)?;
    Ok(model)
}

pub fn fine_tune_examples(
    model: &ClassifierModel,
    examples: &[Example],
    config: &TrainConfig,
) -> Result<ClassifierModel> {
    check_examples(examples, model.n_classes)?;
    let mut out = model.clone();
    fit(&mut out, examples, config)?;
    Ok(out)
}

fn label_of(patch: &Patch) -> Result<usize> {
    patch
        .label
        .map(|l| l as usize)
        .ok_or_else(|| Error::InvalidArgument("unlabelled patch".into()))
}

/// Featurizes a labelled patch set, including flipped variants.
pub fn examples_from_patches(set: &LabeledPatchSet) -> Result<Vec<Example>> {
    let f = Featurizer::default();
    set.patches
        .iter()
        .map(|p| {
            Ok(Example {
                label: label_of(p)?,
                features: f.featurize(p),
                flipped: Some(f.featurize(&p.flipped_lateral())),
            })
        })
        .collect()
}

pub fn train(dataset: &LabeledPatchSet, config: &TrainConfig) -> Result<ClassifierModel> {
    train_examples(&examples_from_patches(dataset)?, config)
}

pub fn fine_tune(
    model: &ClassifierModel,
    small_set: &LabeledPatchSet,
    config: &TrainConfig,
) -> Result<ClassifierModel> {
    fine_tune_examples(model, &examples_from_patches(small_set)?, config)
}

/// Fraction of correctly classified examples.
pub fn accuracy(model: &ClassifierModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let correct = examples.iter().filter(|e| model.predict(&e.features) == e.label).count();
    Ok(correct as f64 / examples.len() as f64)
}

pub fn evaluate(model: &ClassifierModel, dataset: &LabeledPatchSet) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let f = Featurizer::default();
    let mut correct = 0usize;
    for p in &dataset.patches {
        if model.predict(&f.featurize(p)) == label_of(p)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
