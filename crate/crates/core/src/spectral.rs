//! Axial power spectra, depth-dependent calibration spectra and SNR.
//!
//! The periodogram is a plain 256-point squared-magnitude DFT with no taper
//! and no mean removal. Only ratios of spectra are used downstream, so the
//! scaling convention cancels.
//!
//! Reduction order: channel spectra are summed in ascending channel order,
//! frame averages in the order frames are given, then divided once. The
//! results are therefore bit-reproducible for a given input order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fft::FftPlan;
use crate::rfcore::{extract_patches, Patch, RfFrame, DEFAULT_SAMPLING_RATE_MHZ, N_DEPTHS, PATCH_LEN};
use crate::{Error, Result};

/// Usable band of the simulated and the reference systems, MHz.
pub const ANALYSIS_BAND_MHZ: (f64, f64) = (2.0, 7.5);
/// Bins at or above this frequency are searched for the noise floor.
pub const NOISE_FLOOR_MIN_MHZ: f64 = 18.0;
const NOISE_FLOOR_BINS: usize = 5;

/// One-sided frequency grid of a 256-point transform.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrequencyGrid {
    pub start_mhz: f64,
    pub step_mhz: f64,
    pub n_bins: usize,
}

impl Default for FrequencyGrid {
    /// 0 to 20 MHz in 0.15625 MHz steps (129 bins).
    fn default() -> Self {
        Self::for_sampling_rate(DEFAULT_SAMPLING_RATE_MHZ)
    }
}

impl FrequencyGrid {
    pub fn for_sampling_rate(sampling_rate_mhz: f64) -> Self {
        Self {
            start_mhz: 0.0,
            step_mhz: sampling_rate_mhz / PATCH_LEN as f64,
            n_bins: PATCH_LEN / 2 + 1,
        }
    }

    pub fn freq(&self, k: usize) -> f64 {
        self.start_mhz + self.step_mhz * k as f64
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.n_bins).map(|k| self.freq(k)).collect()
    }

    /// Sampling rate implied by the grid.
    pub fn sampling_rate_mhz(&self) -> f64 {
        self.step_mhz * PATCH_LEN as f64
    }

    /// Bin indices whose frequency lies in `[lo, hi]` MHz.
    pub fn band(&self, lo: f64, hi: f64) -> core::ops::Range<usize> {
        let first = (0..self.n_bins).find(|&k| self.freq(k) >= lo - 1e-9).unwrap_or(self.n_bins);
        let last = (0..self.n_bins).rev().find(|&k| self.freq(k) <= hi + 1e-9).map_or(0, |k| k + 1);
        first..last.max(first)
    }
}

/// Power per bin (linear units) on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerSpectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
}

impl PowerSpectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_bins {
            return Err(Error::Length { expected: grid.n_bins, actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: FrequencyGrid) -> Self {
        Self { grid, values: vec![0.0; grid.n_bins] }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Calibration spectra for the twelve patch depths of one setting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DepthSpectra {
    pub per_depth: Vec<PowerSpectrum>,
    pub settings_label: String,
    pub n_frames_averaged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SnrMode {
    /// Per-bin minimum of the two settings' SNR.
    #[default]
    PerBin,
    /// A single value for every bin: the smallest per-bin minimum inside
    /// the analysis band.
    GlobalMin,
}

/// Per-bin SNR (linear power ratio) used by the Wiener gains.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SnrProfile {
    pub grid: FrequencyGrid,
    pub snr: Vec<f64>,
    pub noise_floor: f64,
}

impl SnrProfile {
    /// Constant SNR on a grid; handy for synthetic transfer functions.
    pub fn constant(grid: FrequencyGrid, snr: f64) -> Self {
        Self { grid, snr: vec![snr; grid.n_bins], noise_floor: 1.0 }
    }
}

/// Reusable 256-point periodogram machinery.
#[derive(Debug, Clone)]
pub struct SpectrumEstimator {
    plan: FftPlan,
    grid: FrequencyGrid,
}

impl Default for SpectrumEstimator {
    fn default() -> Self {
        Self::new(FrequencyGrid::default())
    }
}

impl SpectrumEstimator {
    pub fn new(grid: FrequencyGrid) -> Self {
        Self { plan: FftPlan::new(PATCH_LEN).expect("256 is a power of two"), grid }
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    /// Channel-averaged periodogram of a patch, as raw bin values.
    pub fn patch_average_values(&self, patch: &Patch) -> Vec<f64> {
        let n_bins = self.grid.n_bins;
        let mut acc = vec![0.0; n_bins];
        let (mut pa, mut pb) = (vec![0.0; n_bins], vec![0.0; n_bins]);
        let (mut re, mut im) = (vec![0.0; PATCH_LEN], vec![0.0; PATCH_LEN]);
        let lateral = patch.lateral_len();
        let mut j = 0;
        while j < lateral {
            widen(patch.channel(j), &mut re);
            if j + 1 < lateral {
                widen(patch.channel(j + 1), &mut im);
                self.plan.power_pair_split(&mut re, &mut im, &mut pa, &mut pb);
                for k in 0..n_bins {
                    acc[k] += pa[k];
                    acc[k] += pb[k];
                }
            } else {
                im.fill(0.0);
                self.plan.power_pair_split(&mut re, &mut im, &mut pa, &mut pb);
                for k in 0..n_bins {
                    acc[k] += pa[k];
                }
            }
            j += 2;
        }
        let inv = 1.0 / lateral as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
        acc
    }

    pub fn patch_average(&self, patch: &Patch) -> PowerSpectrum {
        PowerSpectrum { grid: self.grid, values: self.patch_average_values(patch) }
    }
}

fn widen(src: &[f32], dst: &mut [f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = f64::from(s);
    }
}

/// One-sided periodogram `|DFT_256(x)[k]|^2`, `k = 0..=128`, of one channel.
pub fn channel_power_spectrum(channel: &[f64]) -> Result<PowerSpectrum> {
    if channel.len() != PATCH_LEN {
        return Err(Error::Length { expected: PATCH_LEN, actual: channel.len() });
    }
    if let Some(i) = channel.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let grid = FrequencyGrid::default();
    let plan = FftPlan::new(PATCH_LEN)?;
    let mut re = channel.to_vec();
    let mut im = vec![0.0; PATCH_LEN];
    let mut values = vec![0.0; grid.n_bins];
    let mut unused = vec![0.0; grid.n_bins];
    plan.power_pair_split(&mut re, &mut im, &mut values, &mut unused);
    Ok(PowerSpectrum { grid, values })
}

/// Mean of the per-channel periodograms of a patch.
pub fn average_patch_spectrum(patch: &Patch) -> PowerSpectrum {
    SpectrumEstimator::default().patch_average(patch)
}

/// Depth-dependent calibration spectra: for every patch depth, the mean over
/// frames of the channel-averaged patch spectrum. All frames must share
/// settings and geometry and admit all twelve patches.
pub fn compute_depth_spectra(frames: &[RfFrame]) -> Result<DepthSpectra> {
    let first = frames.first().ok_or(Error::Empty("calibration frames"))?;
    for f in &frames[1..] {
        if f.settings != first.settings {
            return Err(Error::MixedSettings(first.settings.label.clone(), f.settings.label.clone()));
        }
        if f.axial_len() != first.axial_len() || f.lateral_len() != first.lateral_len() {
            return Err(Error::Geometry("calibration frames differ in size".into()));
        }
    }
    let estimator = SpectrumEstimator::new(FrequencyGrid::for_sampling_rate(first.settings.sampling_rate_mhz));
    let grid = estimator.grid();
    let mut sums = vec![vec![0.0; grid.n_bins]; N_DEPTHS];
    for frame in frames {
        let patches = extract_patches(frame)?;
        if patches.len() != N_DEPTHS {
            return Err(Error::Geometry(alloc::format!(
                "frame admits {} of {N_DEPTHS} patch depths",
                patches.len()
            )));
        }
        for (sum, patch) in sums.iter_mut().zip(&patches) {
            for (s, v) in sum.iter_mut().zip(estimator.patch_average_values(patch)) {
                *s += v;
            }
        }
    }
    let inv = 1.0 / frames.len() as f64;
    let per_depth = sums
        .into_iter()
        .map(|mut values| {
            values.iter_mut().for_each(|v| *v *= inv);
            PowerSpectrum { grid, values }
        })
        .collect();
    Ok(DepthSpectra {
        per_depth,
        settings_label: first.settings.label.clone(),
        n_frames_averaged: frames.len(),
    })
}

/// Noise floor: mean of the five smallest bins at or above 18 MHz. A zero
/// floor is replaced by `1e-12 * max(spectrum)`, or `1e-30` for an all-zero
/// spectrum. Grids that stop short of 18 MHz use their top quarter.
pub fn estimate_noise_floor(spectrum: &PowerSpectrum) -> f64 {
    let grid = spectrum.grid;
    let mut tail: Vec<f64> = (0..grid.n_bins)
        .filter(|&k| grid.freq(k) >= NOISE_FLOOR_MIN_MHZ - 1e-9)
        .map(|k| spectrum.values[k])
        .collect();
    if tail.is_empty() {
        tail = spectrum.values[grid.n_bins * 3 / 4..].to_vec();
    }
    tail.sort_by(f64::total_cmp);
    let take = tail.len().min(NOISE_FLOOR_BINS);
    let mean = tail[..take].iter().sum::<f64>() / take as f64;
    if mean > 0.0 {
        mean
    } else {
        let peak = spectrum.max();
        if peak > 0.0 {
            1e-12 * peak
        } else {
            1e-30
        }
    }
}

fn side_snr(spectrum: &PowerSpectrum) -> (Vec<f64>, f64) {
    let floor = estimate_noise_floor(spectrum);
    let snr = spectrum.values.iter().map(|&v| (v - floor).max(0.0) / floor).collect();
    (snr, floor)
}

/// Per-bin SNR of the calibration pair: each side's signal above its own
/// noise floor divided by that floor, then the per-bin minimum of the two.
pub fn estimate_snr(train: &PowerSpectrum, test: &PowerSpectrum) -> Result<SnrProfile> {
    estimate_snr_with(train, test, SnrMode::PerBin)
}

pub fn estimate_snr_with(
    train: &PowerSpectrum,
    test: &PowerSpectrum,
    mode: SnrMode,
) -> Result<SnrProfile> {
    if train.grid != test.grid || train.values.len() != test.values.len() {
        return Err(Error::GridMismatch);
    }
    let (a, floor_a) = side_snr(train);
    let (b, floor_b) = side_snr(test);
    let mut snr: Vec<f64> = a.iter().zip(&b).map(|(&x, &y)| x.min(y)).collect();
    if mode == SnrMode::GlobalMin {
        let band = train.grid.band(ANALYSIS_BAND_MHZ.0, ANALYSIS_BAND_MHZ.1);
        let global = snr[band].iter().copied().fold(f64::INFINITY, f64::min);
        let global = if global.is_finite() { global } else { 0.0 };
        snr.iter_mut().for_each(|v| *v = global);
    }
    Ok(SnrProfile { grid: train.grid, snr, noise_floor: floor_a.min(floor_b) })
}
