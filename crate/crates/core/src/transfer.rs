//! Setting transfer functions between two scanner settings.
//!
//! Γ is oriented test over train: it maps training-domain amplitude to
//! testing-domain amplitude. Train-time calibration filters training data
//! with the regularized Γ, test-time calibration filters testing data with
//! the regularized inverse.
//!
//! The underlying model treats a measured spectrum as a system response
//! times a tissue signal; that the same tissue signal appears on both sides
//! of a stable calibration acquisition is what makes the ratio a pure
//! system-to-system transfer. This is a reconstruction, not a derivation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::firdes::{design_fir, FirFilter};
use crate::rfcore::{RfFrame, N_DEPTHS};
use crate::spectral::{compute_depth_spectra, estimate_snr_with, DepthSpectra, PowerSpectrum, SnrMode, SnrProfile};
use crate::{Error, Result};

pub const POWER_EPS: f64 = 1e-30;
pub const GAMMA_MIN: f64 = 1e-12;
pub const SNR_MIN: f64 = 1e-9;
pub const DEFAULT_NTAPS: usize = 151;
pub const DEFAULT_CALIBRATION_FRAMES: usize = 10;

/// Knobs of [`build_calibration`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CalibrationConfig {
    pub ntaps: usize,
    pub snr_mode: SnrMode,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { ntaps: DEFAULT_NTAPS, snr_mode: SnrMode::PerBin }
    }
}

/// Transfer function at one patch depth.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DepthTransfer {
    pub gamma: Vec<f64>,
    pub gamma_wiener_train: Vec<f64>,
    pub gamma_wiener_test: Vec<f64>,
    pub snr: SnrProfile,
    pub fir_train: FirFilter,
    pub fir_test: FirFilter,
}

impl DepthTransfer {
    /// Regularizes `gamma` with `snr` and synthesizes both filters on the
    /// SNR profile's grid, whose last bin must be the Nyquist frequency.
    pub fn from_gamma(gamma: Vec<f64>, snr: SnrProfile, ntaps: usize) -> Result<Self> {
        let gamma_wiener_train = wiener_train(&gamma, &snr)?;
        let gamma_wiener_test = wiener_test(&gamma, &snr)?;
        let freqs = snr.grid.freqs();
        let fs = snr.grid.sampling_rate_mhz();
        let fir_train = design_fir(&freqs, &gamma_wiener_train, ntaps, fs)?;
        let fir_test = design_fir(&freqs, &gamma_wiener_test, ntaps, fs)?;
        Ok(Self { gamma, gamma_wiener_train, gamma_wiener_test, snr, fir_train, fir_test })
    }
}

/// Depth-indexed calibration between the `from_label` (training) and
/// `to_label` (testing) settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SettingTransferFunction {
    pub per_depth: Vec<DepthTransfer>,
    pub from_label: String,
    pub to_label: String,
}

impl SettingTransferFunction {
    /// The same transfer at every depth; mostly useful for synthetic tests.
    pub fn uniform(
        gamma: Vec<f64>,
        snr: SnrProfile,
        ntaps: usize,
        from_label: &str,
        to_label: &str,
    ) -> Result<Self> {
        let depth = DepthTransfer::from_gamma(gamma, snr, ntaps)?;
        Ok(Self {
            per_depth: alloc::vec![depth; N_DEPTHS],
            from_label: from_label.into(),
            to_label: to_label.into(),
        })
    }

    pub fn depth(&self, depth_index: usize) -> Result<&DepthTransfer> {
        self.per_depth
            .get(depth_index)
            .ok_or(Error::DepthIndex { index: depth_index, count: self.per_depth.len() })
    }
}

/// `sqrt(w_test / max(w_train, 1e-30))` per bin.
pub fn compute_gamma(w_train: &PowerSpectrum, w_test: &PowerSpectrum) -> Result<Vec<f64>> {
    if w_train.grid != w_test.grid || w_train.values.len() != w_test.values.len() {
        return Err(Error::GridMismatch);
    }
    Ok(w_train
        .values
        .iter()
        .zip(&w_test.values)
        .map(|(&a, &b)| libm::sqrt(b / a.max(POWER_EPS)))
        .collect())
}

/// `(1/γ) / ((1/γ)² + 1/snr)`, clamped so that degenerate bins give zero.
pub fn wiener_train_gain(gamma: f64, snr: f64) -> f64 {
    let inv = 1.0 / gamma.max(GAMMA_MIN);
    inv / (inv * inv + 1.0 / snr.max(SNR_MIN))
}

/// `γ / (γ² + 1/snr)` with the same clamps.
pub fn wiener_test_gain(gamma: f64, snr: f64) -> f64 {
    let g = gamma.max(GAMMA_MIN);
    g / (g * g + 1.0 / snr.max(SNR_MIN))
}

fn per_bin(gamma: &[f64], snr: &SnrProfile, f: fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    if gamma.len() != snr.snr.len() {
        return Err(Error::Length { expected: snr.snr.len(), actual: gamma.len() });
    }
    Ok(gamma.iter().zip(&snr.snr).map(|(&g, &s)| f(g, s)).collect())
}

pub fn wiener_train(gamma: &[f64], snr: &SnrProfile) -> Result<Vec<f64>> {
    per_bin(gamma, snr, wiener_train_gain)
}

pub fn wiener_test(gamma: &[f64], snr: &SnrProfile) -> Result<Vec<f64>> {
    per_bin(gamma, snr, wiener_test_gain)
}

/// Builds the transfer function from stable-acquisition frames of the same
/// view at the training (`cal_train`) and testing (`cal_test`) settings.
pub fn build_calibration(
    cal_train: &[RfFrame],
    cal_test: &[RfFrame],
    config: &CalibrationConfig,
) -> Result<SettingTransferFunction> {
    let (a, b) = match (cal_train.first(), cal_test.first()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Empty("calibration frames")),
    };
    if a.axial_len() != b.axial_len() || a.lateral_len() != b.lateral_len() {
        return Err(Error::Geometry(alloc::format!(
            "calibration frames are {}x{} and {}x{}",
            a.axial_len(),
            a.lateral_len(),
            b.axial_len(),
            b.lateral_len()
        )));
    }
    let train = compute_depth_spectra(cal_train)?;
    let test = compute_depth_spectra(cal_test)?;
    build_calibration_from_spectra(&train, &test, config)
}

pub fn build_calibration_from_spectra(
    train: &DepthSpectra,
    test: &DepthSpectra,
    config: &CalibrationConfig,
) -> Result<SettingTransferFunction> {
    if train.per_depth.len() != test.per_depth.len() {
        return Err(Error::Length { expected: train.per_depth.len(), actual: test.per_depth.len() });
    }
    let per_depth = train
        .per_depth
        .iter()
        .zip(&test.per_depth)
        .map(|(w_train, w_test)| {
            let gamma = compute_gamma(w_train, w_test)?;
            let snr = estimate_snr_with(w_train, w_test, config.snr_mode)?;
            DepthTransfer::from_gamma(gamma, snr, config.ntaps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SettingTransferFunction {
        per_depth,
        from_label: train.settings_label.clone(),
        to_label: test.settings_label.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FrequencyGrid;
    use alloc::vec;

    fn spectrum(values: Vec<f64>) -> PowerSpectrum {
        PowerSpectrum::new(FrequencyGrid::default(), values).unwrap()
    }

    fn shaped(scale: f64) -> PowerSpectrum {
        let g = FrequencyGrid::default();
        spectrum(g.freqs().iter().map(|&f| scale * (1e-3 + libm::exp(-(f - 6.0) * (f - 6.0) / 8.0))).collect())
    }

    #[test]
    fn gamma_examples() {
        let w = shaped(1.0);
        assert!(compute_gamma(&w, &w).unwrap().iter().all(|&g| (g - 1.0).abs() < 1e-15));
        let half = compute_gamma(&w, &shaped(0.25)).unwrap();
        assert!(half.iter().all(|&g| (g - 0.5).abs() < 1e-12));
        let focus = compute_gamma(&w, &shaped(0.36)).unwrap();
        assert!(focus.iter().all(|&g| (g - 0.6).abs() < 1e-12));
        let other = PowerSpectrum::zeros(FrequencyGrid::for_sampling_rate(30.0));
        assert!(matches!(compute_gamma(&w, &other), Err(Error::GridMismatch)));
        let zero = PowerSpectrum::zeros(FrequencyGrid::default());
        assert!(compute_gamma(&zero, &zero).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gamma_scale_invariance() {
        let a = shaped(1.0);
        let mut b = shaped(0.3);
        b.values[40] *= 7.0;
        let g1 = compute_gamma(&a, &b).unwrap();
        let scale = |s: &PowerSpectrum, c: f64| spectrum(s.values.iter().map(|v| v * c).collect());
        let g2 = compute_gamma(&scale(&a, 123.0), &scale(&b, 123.0)).unwrap();
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() < 1e-12 * x);
        }
    }

    #[test]
    fn wiener_examples() {
        assert!((wiener_train_gain(1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((wiener_test_gain(1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((wiener_train_gain(0.5, 1e15) - 0.5).abs() < 1e-9);
        assert!((wiener_test_gain(0.5, 1e15) - 2.0).abs() < 1e-9);
        assert!(wiener_train_gain(2.0, 0.0) < 1e-8);
        assert!(wiener_test_gain(0.5, 0.0) < 1e-8);
        assert!(wiener_train_gain(0.0, 10.0) < 1e-10);
        assert!(wiener_test_gain(0.0, 10.0) < 1e-10);
    }

    #[test]
    fn wiener_direct_formula() {
        // Hand evaluation of the train-direction gain in its original form.
        for (g, s) in [(0.3, 2.0), (1.7, 40.0), (4.0, 0.5)] {
            let inv: f64 = 1.0 / g;
            let want = inv / (inv * inv + 1.0 / s);
            assert!((wiener_train_gain(g, s) - want).abs() < 1e-15);
            assert!((wiener_test_gain(g, s) - g / (g * g + 1.0 / s)).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_calibration_spectra() {
        let w = shaped(5.0);
        let spectra = DepthSpectra { per_depth: vec![w; 12], settings_label: "a".into(), n_frames_averaged: 10 };
        let stf = build_calibration_from_spectra(&spectra, &spectra, &CalibrationConfig::default()).unwrap();
        assert_eq!(stf.per_depth.len(), 12);
        assert_eq!((stf.from_label.as_str(), stf.to_label.as_str()), ("a", "a"));
        for d in &stf.per_depth {
            assert!(d.gamma.iter().all(|&g| (g - 1.0).abs() < 1e-15));
            assert_eq!(d.fir_train.taps().len(), 151);
            assert_eq!(d.fir_train, d.fir_test);
        }
        assert!(matches!(stf.depth(12), Err(Error::DepthIndex { .. })));
    }

    #[test]
    fn empty_calibration_is_an_error() {
        assert!(matches!(
            build_calibration(&[], &[], &CalibrationConfig::default()),
            Err(Error::Empty(_))
        ));
    }
}
