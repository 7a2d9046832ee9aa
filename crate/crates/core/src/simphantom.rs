//! Parametric RF simulator for two tissue-mimicking phantom classes and a
//! calibration phantom.
//!
//! Each channel is a sparse column of point scatterers convolved with a
//! zero-phase impulse response. The response depends on the 256-sample
//! depth block the scatterer sits in:
//!
//! `H_b(f) = P(f) T(f) (f / 5 MHz)^b 10^(-alpha(f) 2 z_b / 20)`
//!
//! with `P` the Gaussian pulse spectrum, `T` the transducer response, `b`
//! the phantom's backscatter exponent and `alpha(f) = slope f^exponent`
//! dB/cm evaluated at the block centre depth `z_b`. The summed echo is then
//! scaled by the focal envelope and the output gain, and white noise is
//! added.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::RngCore;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::fft::FftPlan;
use crate::rfcore::{sample_depth_cm, RfFrame, ScanSettings, DEFAULT_AXIAL_LEN, DEFAULT_LATERAL_LEN};
use crate::{seed, Error, Result};

/// Axial block over which attenuation is held constant.
pub const ATTENUATION_BLOCK: usize = 256;
/// Longest half length of the truncated impulse responses, samples.
pub const RESPONSE_HALF_LEN: usize = 64;
/// Response samples below this fraction of the peak are trimmed.
const RESPONSE_TRIM: f64 = 1e-6;
const RESPONSE_FFT_LEN: usize = 1024;
/// Ratio of the -6 dB full width to the Gaussian standard deviation.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;
/// Reference frequency of the backscatter tilt, MHz.
pub const BACKSCATTER_REF_MHZ: f64 = 5.0;

pub const PHANTOM1_LABEL: u32 = 0;
pub const PHANTOM2_LABEL: u32 = 1;
pub const CALIBRATION_LABEL: u32 = 2;

/// Power-law attenuation `slope * f^exponent` dB/cm, `f` in MHz.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Attenuation {
    pub slope_db_cm_mhz: f64,
    pub exponent: f64,
}

impl Attenuation {
    pub fn db_per_cm(&self, f_mhz: f64) -> f64 {
        self.slope_db_cm_mhz * libm::pow(f_mhz, self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhantomSpec {
    pub label: u32,
    /// Probability that an (axial, channel) site holds a scatterer.
    pub scatterer_density: f64,
    pub attenuation: Attenuation,
    pub backscatter_exponent: f64,
    pub reflectivity_std: f64,
}

impl PhantomSpec {
    /// Class 0: linear attenuation of 0.7 dB/cm/MHz.
    pub fn phantom1() -> Self {
        Self {
            label: PHANTOM1_LABEL,
            scatterer_density: 0.25,
            attenuation: Attenuation { slope_db_cm_mhz: 0.7, exponent: 1.0 },
            backscatter_exponent: 1.0,
            reflectivity_std: 1.0,
        }
    }

    /// Class 1: `0.256 f^1.366` dB/cm.
    pub fn phantom2() -> Self {
        Self {
            label: PHANTOM2_LABEL,
            scatterer_density: 0.25,
            attenuation: Attenuation { slope_db_cm_mhz: 0.256, exponent: 1.366 },
            backscatter_exponent: 1.5,
            reflectivity_std: 0.5,
        }
    }

    /// Weakly attenuating phantom used for stable calibration acquisitions.
    pub fn calibration() -> Self {
        Self {
            label: CALIBRATION_LABEL,
            scatterer_density: 0.25,
            attenuation: Attenuation { slope_db_cm_mhz: 0.15, exponent: 1.0 },
            backscatter_exponent: 0.0,
            reflectivity_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.scatterer_density > 0.0
            && self.scatterer_density <= 1.0
            && self.attenuation.slope_db_cm_mhz >= 0.0
            && self.attenuation.exponent.is_finite()
            && self.backscatter_exponent.is_finite()
            && self.reflectivity_std > 0.0
            && self.reflectivity_std.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!("invalid phantom spec {self:?}")))
        }
    }
}

/// Imaging system: pulse, transducer, focusing and noise. The pulse centre
/// frequency and the foci come from [`ScanSettings`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SystemModel {
    /// -6 dB fractional bandwidth of the Gaussian pulse.
    pub pulse_fractional_bandwidth: f64,
    pub transducer_center_mhz: f64,
    pub transducer_fractional_bandwidth: f64,
    pub focal_amplitude: f64,
    pub focal_sigma_cm: f64,
    pub noise_std: f64,
}

impl Default for SystemModel {
    fn default() -> Self {
        Self {
            pulse_fractional_bandwidth: 1.0,
            transducer_center_mhz: 5.5,
            transducer_fractional_bandwidth: 1.3,
            focal_amplitude: 1.0,
            focal_sigma_cm: 0.5,
            noise_std: 0.003,
        }
    }
}

impl SystemModel {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let ok = pos(self.pulse_fractional_bandwidth)
            && pos(self.transducer_center_mhz)
            && pos(self.transducer_fractional_bandwidth)
            && self.focal_amplitude.is_finite()
            && self.focal_amplitude >= 0.0
            && pos(self.focal_sigma_cm)
            && self.noise_std.is_finite()
            && self.noise_std >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!("invalid system model {self:?}")))
        }
    }

    /// Amplitude spectrum of pulse and transducer at `f_mhz`.
    pub fn pulse_spectrum(&self, pulse_freq_mhz: f64, f_mhz: f64) -> f64 {
        let f = libm::fabs(f_mhz);
        let gauss = |fc: f64, fbw: f64| {
            let sigma = fbw * fc / FWHM_PER_SIGMA;
            libm::exp(-(f - fc) * (f - fc) / (2.0 * sigma * sigma))
        };
        gauss(pulse_freq_mhz, self.pulse_fractional_bandwidth)
            * gauss(self.transducer_center_mhz, self.transducer_fractional_bandwidth)
    }

    /// `g(z) = 1 + sum_f a exp(-(z - z_f)^2 / (2 sigma^2))`.
    pub fn focal_gain(&self, foci_cm: &[f64], depth_cm: f64) -> f64 {
        let s2 = 2.0 * self.focal_sigma_cm * self.focal_sigma_cm;
        1.0 + foci_cm
            .iter()
            .map(|&zf| self.focal_amplitude * libm::exp(-(depth_cm - zf) * (depth_cm - zf) / s2))
            .sum::<f64>()
    }
}

/// Sparse reflectivity field: per channel, ascending axial positions and
/// amplitudes of the scatterers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererField {
    pub n_axial: usize,
    pub n_lateral: usize,
    pub channels: Vec<Vec<(u32, f64)>>,
}

impl ScattererField {
    /// Channel-major dense array.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_axial * self.n_lateral];
        for (j, ch) in self.channels.iter().enumerate() {
            for &(i, a) in ch {
                out[j * self.n_axial + i as usize] = a;
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }
}

/// Every site independently holds a scatterer with probability `density`,
/// amplitude `Normal(0, reflectivity_std)`.
pub fn generate_scatterers(
    phantom: &PhantomSpec,
    seed: u64,
    n_axial: usize,
    n_lateral: usize,
) -> ScattererField {
    let mut rng = seed::rng(seed);
    let p = phantom.scatterer_density.clamp(0.0, 1.0);
    let amp = Normal::new(0.0, phantom.reflectivity_std.max(0.0)).expect("finite std");
    // Site occupied when a uniform u32 falls below p * 2^32.
    let threshold = libm::round(p * 4_294_967_296.0) as u64;
    let mut channels = vec![Vec::new(); n_lateral];
    if threshold > 0 {
        for ch in channels.iter_mut() {
            for i in 0..n_axial {
                if u64::from(rng.next_u32()) < threshold {
                    ch.push((i as u32, amp.sample(&mut rng)));
                }
            }
        }
    }
    ScattererField { n_axial, n_lateral, channels }
}

/// Simulator for one (phantom, settings, system) combination with the
/// depth-block impulse responses precomputed.
#[derive(Debug, Clone)]
pub struct FrameSimulator {
    phantom: PhantomSpec,
    settings: ScanSettings,
    system: SystemModel,
    axial_len: usize,
    lateral_len: usize,
    responses: Vec<Vec<f32>>,
    half_len: usize,
    envelope: Vec<f64>,
}

impl FrameSimulator {
    pub fn new(phantom: &PhantomSpec, settings: &ScanSettings, system: &SystemModel) -> Result<Self> {
        Self::with_geometry(phantom, settings, system, DEFAULT_AXIAL_LEN, DEFAULT_LATERAL_LEN)
    }

    pub fn with_geometry(
        phantom: &PhantomSpec,
        settings: &ScanSettings,
        system: &SystemModel,
        axial_len: usize,
        lateral_len: usize,
    ) -> Result<Self> {
        settings.validate()?;
        system.validate()?;
        if phantom.attenuation.slope_db_cm_mhz < 0.0 || phantom.scatterer_density < 0.0 {
            return Err(Error::InvalidArgument(alloc::format!("invalid phantom spec {phantom:?}")));
        }
        if axial_len == 0 || lateral_len == 0 {
            return Err(Error::Geometry(alloc::format!("empty frame {axial_len}x{lateral_len}")));
        }
        let fs = settings.sampling_rate_mhz;
        let n_blocks = axial_len.div_ceil(ATTENUATION_BLOCK);
        let plan = FftPlan::new(RESPONSE_FFT_LEN)?;
        let full: Vec<Vec<f64>> = (0..n_blocks)
            .map(|b| {
                let centre = (b * ATTENUATION_BLOCK + ATTENUATION_BLOCK / 2).min(axial_len);
                let z = sample_depth_cm(centre, fs);
                block_response(&plan, phantom, settings, system, z)
            })
            .collect();
        let h = RESPONSE_HALF_LEN;
        let half_len = full
            .iter()
            .map(|r| {
                let peak = r.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
                (0..=h).rev().find(|&d| libm::fabs(r[h + d]).max(libm::fabs(r[h - d])) >= RESPONSE_TRIM * peak).unwrap_or(0)
            })
            .max()
            .unwrap_or(0);
        let responses = full
            .iter()
            .map(|r| r[h - half_len..=h + half_len].iter().map(|&v| v as f32).collect())
            .collect();
        let gain = settings.output_gain();
        let envelope = (0..axial_len)
            .map(|i| gain * system.focal_gain(&settings.foci_cm, sample_depth_cm(i, fs)))
            .collect();
        Ok(Self {
            phantom: phantom.clone(),
            settings: settings.clone(),
            system: *system,
            axial_len,
            lateral_len,
            responses,
            half_len,
            envelope,
        })
    }

    pub fn phantom(&self) -> &PhantomSpec {
        &self.phantom
    }

    pub fn settings(&self) -> &ScanSettings {
        &self.settings
    }

    /// Impulse response of depth block `b`, centred on its middle sample
    /// and trimmed where it falls below `1e-6` of its peak.
    pub fn block_response(&self, b: usize) -> &[f32] {
        &self.responses[b]
    }

    /// Noise-free echo of a scatterer field, channel-major.
    pub fn echo(&self, field: &ScattererField) -> Vec<f32> {
        let (n, h) = (self.axial_len, self.half_len);
        let mut out = vec![0.0f32; n * self.lateral_len];
        for (col, scatterers) in out.chunks_exact_mut(n).zip(&field.channels) {
            for &(s, a) in scatterers {
                let s = s as usize;
                if s >= n {
                    continue;
                }
                let resp = &self.responses[s / ATTENUATION_BLOCK];
                let lo = s.saturating_sub(h);
                let hi = (s + h).min(n - 1);
                let offset = h + lo - s;
                let a = a as f32;
                for (o, r) in col[lo..=hi].iter_mut().zip(&resp[offset..]) {
                    *o += a * r;
                }
            }
            for (o, e) in col.iter_mut().zip(&self.envelope) {
                *o = (f64::from(*o) * e) as f32;
            }
        }
        out
    }

    /// Adds seeded white noise to an echo and packages the frame.
    pub fn finish(&self, echo: &[f32], noise_seed: u64, frame_id: u32) -> Result<RfFrame> {
        let std = self.system.noise_std;
        let samples: Vec<f32> = if std > 0.0 {
            let mut rng = seed::rng(noise_seed);
            echo.iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (f64::from(v) + std * z) as f32
                })
                .collect()
        } else {
            echo.to_vec()
        };
        RfFrame::new(
            samples,
            self.axial_len,
            self.lateral_len,
            self.settings.clone(),
            frame_id,
            Some(self.phantom.label),
        )
    }

    pub fn simulate(&self, seed: u64, noise_seed: u64, frame_id: u32) -> Result<RfFrame> {
        let field = generate_scatterers(&self.phantom, seed, self.axial_len, self.lateral_len);
        self.finish(&self.echo(&field), noise_seed, frame_id)
    }

    /// Frame `index` of a free-hand sequence: an independent view with its
    /// own scatterer and noise seeds.
    pub fn freehand_frame(&self, base_seed: u64, index: usize) -> Result<RfFrame> {
        let i = index as u64;
        self.simulate(seed::derive(base_seed, &[i, 0]), seed::derive(base_seed, &[i, 1]), index as u32)
    }
}

fn block_response(
    plan: &FftPlan,
    phantom: &PhantomSpec,
    settings: &ScanSettings,
    system: &SystemModel,
    depth_cm: f64,
) -> Vec<f64> {
    let n = RESPONSE_FFT_LEN;
    let df = settings.sampling_rate_mhz / n as f64;
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..=n / 2 {
        let f = k as f64 * df;
        let tilt = if f > 0.0 {
            libm::pow(f / BACKSCATTER_REF_MHZ, phantom.backscatter_exponent)
        } else if phantom.backscatter_exponent > 0.0 {
            0.0
        } else {
            1.0
        };
        let atten_db = phantom.attenuation.db_per_cm(f) * 2.0 * depth_cm;
        let h = system.pulse_spectrum(settings.pulse_freq_mhz, f) * tilt * libm::pow(10.0, -atten_db / 20.0);
        spec[k] = Complex64::new(h, 0.0);
        if k > 0 && k < n / 2 {
            spec[n - k] = spec[k];
        }
    }
    plan.inverse(&mut spec);
    let h = RESPONSE_HALF_LEN;
    (0..=2 * h).map(|i| spec[(i + n - h) % n].re).collect()
}

/// One frame of `phantom` imaged with `settings`.
pub fn simulate_frame(
    phantom: &PhantomSpec,
    settings: &ScanSettings,
    system: &SystemModel,
    seed: u64,
    noise_seed: u64,
) -> Result<RfFrame> {
    FrameSimulator::new(phantom, settings, system)?.simulate(seed, noise_seed, 0)
}

/// Stable-acquisition pair on the calibration phantom: one view for both
/// sides, `n_frames` per side differing only in noise.
pub fn simulate_calibration_pair(
    settings_a: &ScanSettings,
    settings_b: &ScanSettings,
    sys_a: &SystemModel,
    sys_b: &SystemModel,
    seed: u64,
    n_frames: usize,
) -> Result<(Vec<RfFrame>, Vec<RfFrame>)> {
    simulate_calibration_pair_on(&PhantomSpec::calibration(), settings_a, settings_b, sys_a, sys_b, seed, n_frames)
}

pub fn simulate_calibration_pair_on(
    phantom: &PhantomSpec,
    settings_a: &ScanSettings,
    settings_b: &ScanSettings,
    sys_a: &SystemModel,
    sys_b: &SystemModel,
    seed: u64,
    n_frames: usize,
) -> Result<(Vec<RfFrame>, Vec<RfFrame>)> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("calibration needs at least one frame".into()));
    }
    let field_seed = seed::derive(seed, &[0]);
    let side = |settings: &ScanSettings, sys: &SystemModel, tag: u64| -> Result<Vec<RfFrame>> {
        let sim = FrameSimulator::new(phantom, settings, sys)?;
        let field = generate_scatterers(phantom, field_seed, sim.axial_len, sim.lateral_len);
        let echo = sim.echo(&field);
        (0..n_frames)
            .map(|i| sim.finish(&echo, seed::derive(seed, &[tag, i as u64]), i as u32))
            .collect()
    };
    Ok((side(settings_a, sys_a, 1)?, side(settings_b, sys_b, 2)?))
}

/// Free-hand sequence of `n_frames` independent views.
pub fn simulate_freehand(
    phantom: &PhantomSpec,
    settings: &ScanSettings,
    system: &SystemModel,
    base_seed: u64,
    n_frames: usize,
) -> Result<Vec<RfFrame>> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("free-hand sequence needs at least one frame".into()));
    }
    let sim = FrameSimulator::new(phantom, settings, system)?;
    (0..n_frames).map(|i| sim.freehand_frame(base_seed, i)).collect()
}

/// Spectral centroid of a response, MHz; used for sanity checks.
pub fn spectral_centroid(freqs: &[f64], power: &[f64]) -> f64 {
    let total: f64 = power.iter().sum();
    freqs.iter().zip(power).map(|(f, p)| f * p).sum::<f64>() / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfcore::extract_patches;
    use crate::spectral::{average_patch_spectrum, compute_depth_spectra, estimate_snr, FrequencyGrid};
    use crate::transfer::compute_gamma;

    fn settings(label: &str, f: f64, foci: &[f64], db: f64) -> ScanSettings {
        ScanSettings::new(label, f, foci, db).unwrap()
    }

    fn quiet() -> SystemModel {
        SystemModel { noise_std: 0.0, ..SystemModel::default() }
    }

    #[test]
    fn scatterer_field_basics() {
        let mut empty = PhantomSpec::phantom1();
        empty.scatterer_density = 0.0;
        assert_eq!(generate_scatterers(&empty, 1, 100, 10).count(), 0);
        let p = PhantomSpec::phantom1();
        assert_eq!(generate_scatterers(&p, 9, 300, 7), generate_scatterers(&p, 9, 300, 7));
        assert_ne!(generate_scatterers(&p, 9, 300, 7), generate_scatterers(&p, 10, 300, 7));
    }

    #[test]
    fn scatterer_amplitude_std() {
        let mut p = PhantomSpec::phantom1();
        p.scatterer_density = 1.0;
        let field = generate_scatterers(&p, 3, 1000, 1000);
        assert_eq!(field.count(), 1_000_000);
        let dense = field.to_dense();
        let n = dense.len() as f64;
        let m = dense.iter().sum::<f64>() / n;
        let sd = (dense.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        assert!((0.99..=1.01).contains(&sd), "std {sd}");
    }

    #[test]
    fn scatterer_density_matches() {
        let p = PhantomSpec::phantom2();
        let field = generate_scatterers(&p, 4, 2080, 256);
        let frac = field.count() as f64 / (2080.0 * 256.0);
        assert!((frac - 0.25).abs() < 0.005, "{frac}");
        for ch in &field.channels {
            assert!(ch.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn output_power_is_exact_scaling() {
        let sys = quiet();
        let p = PhantomSpec::phantom1();
        let a = simulate_frame(&p, &settings("a", 9.0, &[2.0], 0.0), &sys, 5, 6).unwrap();
        let b = simulate_frame(&p, &settings("b", 9.0, &[2.0], -6.0), &sys, 5, 6).unwrap();
        let want = 10f64.powf(-6.0 / 20.0);
        assert!((want - 0.50119).abs() < 1e-5);
        let mut checked = 0;
        for (x, y) in a.samples().iter().zip(b.samples()) {
            if x.abs() > 1e-6 {
                assert!((f64::from(*y) / f64::from(*x) - want).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 100_000);
    }

    #[test]
    fn silent_frame() {
        let mut p = PhantomSpec::phantom1();
        p.scatterer_density = 0.0;
        let f = simulate_frame(&p, &settings("a", 5.0, &[2.0], 0.0), &quiet(), 1, 2).unwrap();
        assert!(f.samples().iter().all(|&v| v == 0.0));
        assert_eq!((f.axial_len(), f.lateral_len()), (2080, 256));
    }

    #[test]
    fn impulse_response_is_symmetric_and_compact() {
        let sim = FrameSimulator::new(&PhantomSpec::calibration(), &settings("a", 5.0, &[2.0], 0.0), &SystemModel::default()).unwrap();
        let h = sim.block_response(0);
        assert_eq!(h.len() % 2, 1);
        assert!(h.len() <= 2 * RESPONSE_HALF_LEN + 1);
        let c = h.len() / 2;
        let peak = h.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert_eq!(h[c].abs(), peak);
        for i in 0..h.len() {
            assert!((h[i] - h[h.len() - 1 - i]).abs() <= 1e-6 * peak);
        }
    }

    #[test]
    fn pulse_frequency_shifts_centroid() {
        let sys = quiet();
        let p = PhantomSpec::phantom1();
        let grid = FrequencyGrid::default();
        let centroid = |f: f64| {
            let frame = simulate_frame(&p, &settings("a", f, &[2.0], 0.0), &sys, 8, 9).unwrap();
            let spec = average_patch_spectrum(&extract_patches(&frame).unwrap()[5]);
            spectral_centroid(&grid.freqs(), &spec.values)
        };
        let (c5, c9) = (centroid(5.0), centroid(9.0));
        assert!(c5 < c9, "{c5} vs {c9}");
    }

    #[test]
    fn calibration_pair_shares_view() {
        let s = settings("a", 9.0, &[2.0], 0.0);
        let (a, b) = simulate_calibration_pair(&s, &s, &quiet(), &quiet(), 3, 2).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].samples(), b[1].samples());
        let (a, _) = simulate_calibration_pair(&s, &s, &SystemModel::default(), &quiet(), 3, 10).unwrap();
        assert_eq!(a.len(), 10);
        assert_ne!(a[0].samples(), a[1].samples());
    }

    #[test]
    fn minus_six_db_pair_gives_half_gamma() {
        let a = settings("a", 9.0, &[2.0], 0.0);
        let b = settings("b", 9.0, &[2.0], -6.0);
        let sys = SystemModel::default();
        let (fa, fb) = simulate_calibration_pair(&a, &b, &sys, &sys, 12, 4).unwrap();
        let (sa, sb) = (compute_depth_spectra(&fa).unwrap(), compute_depth_spectra(&fb).unwrap());
        let band = FrequencyGrid::default().band(2.0, 7.5);
        let gamma = compute_gamma(&sa.per_depth[5], &sb.per_depth[5]).unwrap();
        for k in band.clone() {
            assert!((gamma[k] - 0.5).abs() < 0.05, "bin {k}: {}", gamma[k]);
        }
    }

    #[test]
    fn high_power_scan_snr() {
        let s = settings("a", 5.0, &[2.0], 0.0);
        let sys = SystemModel::default();
        let (frames, _) = simulate_calibration_pair(&s, &s, &sys, &sys, 5, 2).unwrap();
        let spectra = compute_depth_spectra(&frames).unwrap();
        let grid = FrequencyGrid::default();
        for w in &spectra.per_depth {
            let snr = estimate_snr(w, w).unwrap();
            assert!(grid.band(2.0, 7.5).all(|k| snr.snr[k] > 100.0));
            assert!(grid.band(15.0, 20.0).all(|k| snr.snr[k] < 1.0));
        }
    }

    #[test]
    fn freehand_frames_are_independent() {
        let s = settings("a", 5.0, &[2.0], 0.0);
        let p = PhantomSpec::phantom1();
        let frames = simulate_freehand(&p, &s, &quiet(), 4, 2).unwrap();
        assert_eq!(frames.len(), 2);
        assert_ne!(frames[0].samples(), frames[1].samples());
        assert_eq!(frames[1].frame_id, 1);
        assert_eq!(frames[0].phantom_label, Some(PHANTOM1_LABEL));
        let again = FrameSimulator::new(&p, &s, &quiet()).unwrap().freehand_frame(4, 1).unwrap();
        assert_eq!(again, frames[1]);
    }

    fn band_slope(frame: &RfFrame) -> f64 {
        // Least-squares slope of the dB spectrum over 2-7.5 MHz at 2 cm.
        let grid = FrequencyGrid::default();
        let spec = average_patch_spectrum(&extract_patches(frame).unwrap()[5]);
        let band: Vec<usize> = grid.band(2.0, 7.5).collect();
        let xs: Vec<f64> = band.iter().map(|&k| grid.freq(k)).collect();
        let ys: Vec<f64> = band.iter().map(|&k| 10.0 * spec.values[k].log10()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }

    #[test]
    fn phantom_classes_are_separable() {
        let s = settings("a", 9.0, &[2.0], 0.0);
        let sys = SystemModel::default();
        let stats = |p: &PhantomSpec, base: u64| {
            let sim = FrameSimulator::new(p, &s, &sys).unwrap();
            let v: Vec<f64> = (0..100).map(|i| band_slope(&sim.freehand_frame(base, i).unwrap())).collect();
            let m = v.iter().sum::<f64>() / 100.0;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 99.0;
            (m, var)
        };
        let (m1, v1) = stats(&PhantomSpec::phantom1(), 1);
        let (m2, v2) = stats(&PhantomSpec::phantom2(), 2);
        let pooled = ((v1 + v2) / 2.0).sqrt();
        assert!((m1 - m2).abs() > 3.0 * pooled, "{m1} vs {m2}, pooled std {pooled}");
    }
}
