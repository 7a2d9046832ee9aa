//! Linear-phase FIR design by frequency sampling, response evaluation and
//! axial filtering of patches.
//!
//! The design follows the usual window method: gains are interpolated onto
//! a dense grid of `2^ceil(log2(ntaps)) + 1` points, given a linear phase of
//! `(ntaps - 1) / 2` samples, inverse transformed, truncated and Hamming
//! windowed. Filtering uses 'same' convolution with zero extension, so the
//! first and last `(ntaps - 1) / 2` output samples carry edge transients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::fft::FftPlan;
use crate::rfcore::{Patch, PATCH_LEN};
use crate::spectral::FrequencyGrid;
use crate::transfer::{SettingTransferFunction, DEFAULT_NTAPS};
use crate::{Error, Result};

/// Pass band of the denoising pre-filter, MHz.
pub const DENOISE_BAND_MHZ: (f64, f64) = (1.0, 10.0);

/// Type-I (odd length, symmetric) FIR filter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FirFilter {
    taps: Vec<f64>,
    pub sampling_rate_mhz: f64,
    /// `(freq_mhz, gain)` pairs the filter was designed from; empty for
    /// filters built from raw taps.
    pub design_gains: Vec<(f64, f64)>,
}

impl FirFilter {
    pub fn from_taps(taps: Vec<f64>, sampling_rate_mhz: f64) -> Result<Self> {
        if taps.len() % 2 == 0 {
            return Err(Error::FilterDesign(format!("{} taps, odd length required", taps.len())));
        }
        if let Some(i) = taps.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { taps, sampling_rate_mhz, design_gains: Vec::new() })
    }

    /// `c` at the centre tap of an `ntaps` filter.
    pub fn scaled_delta(c: f64, ntaps: usize, sampling_rate_mhz: f64) -> Result<Self> {
        let mut taps = vec![0.0; ntaps];
        if let Some(t) = taps.get_mut(ntaps / 2) {
            *t = c;
        }
        Self::from_taps(taps, sampling_rate_mhz)
    }

    pub fn identity(ntaps: usize, sampling_rate_mhz: f64) -> Result<Self> {
        Self::scaled_delta(1.0, ntaps, sampling_rate_mhz)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Group delay in samples.
    pub fn delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }
}

fn hamming(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    (0..m).map(|n| 0.54 - 0.46 * libm::cos(2.0 * PI * n as f64 / (m - 1) as f64)).collect()
}

/// Piecewise-linear interpolation; `xp` non-decreasing, a repeated abscissa
/// marks a jump and the left value is used at the jump itself.
fn interp(x: f64, xp: &[f64], fp: &[f64]) -> f64 {
    if x <= xp[0] {
        return fp[0];
    }
    for i in 0..xp.len() - 1 {
        let (x0, x1) = (xp[i], xp[i + 1]);
        if x <= x1 && x1 > x0 {
            return fp[i] + (fp[i + 1] - fp[i]) * (x - x0) / (x1 - x0);
        }
    }
    fp[fp.len() - 1]
}

/// Frequency-sampling design of a linear-phase FIR filter.
///
/// `freq_points_mhz` must run from 0 to the Nyquist frequency in
/// non-decreasing order; `gains` are the desired magnitudes there.
pub fn design_fir(
    freq_points_mhz: &[f64],
    gains: &[f64],
    ntaps: usize,
    sampling_rate_mhz: f64,
) -> Result<FirFilter> {
    let bad = |m: alloc::string::String| Err(Error::FilterDesign(m));
    if ntaps == 0 || ntaps % 2 == 0 {
        return bad(format!("ntaps must be odd and positive, got {ntaps}"));
    }
    if !(sampling_rate_mhz.is_finite() && sampling_rate_mhz > 0.0) {
        return bad(format!("sampling rate {sampling_rate_mhz} MHz"));
    }
    if freq_points_mhz.len() < 2 || freq_points_mhz.len() != gains.len() {
        return bad(format!(
            "{} frequencies and {} gains",
            freq_points_mhz.len(),
            gains.len()
        ));
    }
    let nyq = sampling_rate_mhz / 2.0;
    let tol = 1e-9 * nyq;
    if freq_points_mhz[0].abs() > tol {
        return bad(format!("first frequency {} MHz is not 0", freq_points_mhz[0]));
    }
    let last = freq_points_mhz[freq_points_mhz.len() - 1];
    if (last - nyq).abs() > tol {
        return bad(format!("last frequency {last} MHz is not the Nyquist frequency {nyq} MHz"));
    }
    if freq_points_mhz.windows(2).any(|w| !(w[1] >= w[0])) {
        return bad("frequencies must be ascending".into());
    }
    if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return bad("gains must be finite and non-negative".into());
    }

    let nfreqs = ntaps.next_power_of_two() + 1;
    let n = 2 * (nfreqs - 1);
    let plan = FftPlan::new(n)?;
    let half_delay = (ntaps - 1) as f64 / 2.0;
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..nfreqs {
        let x = nyq * k as f64 / (nfreqs - 1) as f64;
        let g = interp(x, freq_points_mhz, gains);
        let phase = -half_delay * PI * x / nyq;
        spec[k] = Complex64::from_polar(g, phase);
    }
    // Real inverse transform: imaginary parts at DC and Nyquist are dropped.
    spec[0].im = 0.0;
    spec[nfreqs - 1].im = 0.0;
    for k in 1..nfreqs - 1 {
        spec[n - k] = spec[k].conj();
    }
    plan.inverse(&mut spec);
    let window = hamming(ntaps);
    let mut taps: Vec<f64> = spec[..ntaps].iter().zip(&window).map(|(c, w)| c.re * w).collect();
    for i in 0..ntaps / 2 {
        let j = ntaps - 1 - i;
        let m = 0.5 * (taps[i] + taps[j]);
        taps[i] = m;
        taps[j] = m;
    }
    Ok(FirFilter {
        taps,
        sampling_rate_mhz,
        design_gains: freq_points_mhz.iter().copied().zip(gains.iter().copied()).collect(),
    })
}

/// `H(f) = sum_n taps[n] e^{-j 2 pi f n / fs}` evaluated directly.
pub fn frequency_response(filter: &FirFilter, freqs_mhz: &[f64]) -> Result<Vec<Complex64>> {
    let fs = filter.sampling_rate_mhz;
    freqs_mhz
        .iter()
        .map(|&f| {
            if !(f >= 0.0 && f <= fs / 2.0 + 1e-9) {
                return Err(Error::FrequencyRange(f));
            }
            let mut h = Complex64::new(0.0, 0.0);
            for (n, &t) in filter.taps.iter().enumerate() {
                let a = -2.0 * PI * f * n as f64 / fs;
                h += Complex64::new(t * libm::cos(a), t * libm::sin(a));
            }
            Ok(h)
        })
        .collect()
}

/// 'Same' convolution: `out[i] = sum_n taps[n] x[i + (M-1)/2 - n]`, zero
/// outside the signal.
pub fn convolve_same(signal: &[f64], filter: &FirFilter) -> Vec<f64> {
    let taps = &filter.taps;
    let half = filter.delay() as isize;
    let len = signal.len() as isize;
    (0..len)
        .map(|i| {
            let mut acc = 0.0;
            for (n, &t) in taps.iter().enumerate() {
                let j = i + half - n as isize;
                if (0..len).contains(&j) {
                    acc += t * signal[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// FFT-based 'same' convolution for a fixed signal length. Two channels are
/// filtered per transform.
#[derive(Debug, Clone)]
pub struct FftConvolver {
    plan: FftPlan,
    resp_re: Vec<f64>,
    resp_im: Vec<f64>,
    signal_len: usize,
    delay: usize,
}

impl FftConvolver {
    pub fn new(filter: &FirFilter, signal_len: usize) -> Result<Self> {
        let n = (signal_len + filter.len() - 1).next_power_of_two();
        let plan = FftPlan::new(n)?;
        let mut resp_re = vec![0.0; n];
        let mut resp_im = vec![0.0; n];
        resp_re[..filter.len()].copy_from_slice(filter.taps());
        plan.forward_split(&mut resp_re, &mut resp_im);
        Ok(Self { plan, resp_re, resp_im, signal_len, delay: filter.delay() })
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    /// Filters `a` and, if given, `b` (both `signal_len` long) into the
    /// matching outputs.
    fn apply_pair(&self, a: &[f32], b: Option<&[f32]>, re: &mut [f64], im: &mut [f64], out_a: &mut [f32], out_b: &mut [f32]) {
        let len = self.signal_len;
        re.fill(0.0);
        im.fill(0.0);
        for (s, &x) in re.iter_mut().zip(a) {
            *s = f64::from(x);
        }
        if let Some(b) = b {
            for (s, &y) in im.iter_mut().zip(b) {
                *s = f64::from(y);
            }
        }
        self.plan.forward_split(re, im);
        for (((r, i), hr), hi) in re.iter_mut().zip(im.iter_mut()).zip(&self.resp_re).zip(&self.resp_im) {
            let (xr, xi) = (*r, *i);
            *r = xr * hr - xi * hi;
            *i = xr * hi + xi * hr;
        }
        self.plan.inverse_split(re, im);
        for (o, s) in out_a.iter_mut().zip(&re[self.delay..self.delay + len]) {
            *o = *s as f32;
        }
        if b.is_some() {
            for (o, s) in out_b.iter_mut().zip(&im[self.delay..self.delay + len]) {
                *o = *s as f32;
            }
        }
    }

    /// Filters every `signal_len`-long channel of a channel-major buffer.
    pub fn apply_channels(&self, samples: &[f32]) -> Vec<f32> {
        let len = self.signal_len;
        let mut out = vec![0.0f32; samples.len()];
        let mut re = vec![0.0; self.plan.len()];
        let mut im = vec![0.0; self.plan.len()];
        let mut pairs_in = samples.chunks_exact(2 * len);
        let mut pairs_out = out.chunks_exact_mut(2 * len);
        for (src, dst) in (&mut pairs_in).zip(&mut pairs_out) {
            let (a, b) = src.split_at(len);
            let (oa, ob) = dst.split_at_mut(len);
            self.apply_pair(a, Some(b), &mut re, &mut im, oa, ob);
        }
        let rest = pairs_in.remainder();
        if !rest.is_empty() {
            let dst = pairs_out.into_remainder();
            self.apply_pair(rest, None, &mut re, &mut im, dst, &mut []);
        }
        out
    }

    /// Filters samples `start..start + signal_len` of every channel of a
    /// channel-major buffer, reading the neighbouring samples of the channel
    /// instead of zero padding where they exist. With `start = 0` and
    /// `channel_len = signal_len` this is [`apply_channels`](Self::apply_channels).
    pub fn apply_in_context(&self, samples: &[f32], channel_len: usize, start: usize) -> Vec<f32> {
        let len = self.signal_len;
        let d = self.delay;
        assert!(start + len <= channel_len && samples.len() % channel_len == 0);
        let lo = start.saturating_sub(d);
        let hi = (start + len + d).min(channel_len);
        let offset = lo + d - start;
        let n_ch = samples.len() / channel_len;
        let mut out = vec![0.0f32; n_ch * len];
        let mut re = vec![0.0; self.plan.len()];
        let mut im = vec![0.0; self.plan.len()];
        for pair in 0..n_ch.div_ceil(2) {
            let a = 2 * pair;
            re.fill(0.0);
            im.fill(0.0);
            let ca = &samples[a * channel_len..(a + 1) * channel_len];
            for (s, &x) in re[offset..].iter_mut().zip(&ca[lo..hi]) {
                *s = f64::from(x);
            }
            if a + 1 < n_ch {
                let cb = &samples[(a + 1) * channel_len..(a + 2) * channel_len];
                for (s, &x) in im[offset..].iter_mut().zip(&cb[lo..hi]) {
                    *s = f64::from(x);
                }
            }
            self.plan.forward_split(&mut re, &mut im);
            for (((r, i), hr), hi) in re.iter_mut().zip(im.iter_mut()).zip(&self.resp_re).zip(&self.resp_im) {
                let (xr, xi) = (*r, *i);
                *r = xr * hr - xi * hi;
                *i = xr * hi + xi * hr;
            }
            self.plan.inverse_split(&mut re, &mut im);
            for (o, s) in out[a * len..(a + 1) * len].iter_mut().zip(&re[2 * d..2 * d + len]) {
                *o = *s as f32;
            }
            if a + 1 < n_ch {
                for (o, s) in out[(a + 1) * len..(a + 2) * len].iter_mut().zip(&im[2 * d..2 * d + len]) {
                    *o = *s as f32;
                }
            }
        }
        out
    }

    pub fn apply_patch(&self, patch: &Patch) -> Patch {
        debug_assert_eq!(self.signal_len, PATCH_LEN);
        patch.with_samples(self.apply_channels(patch.samples()))
    }
}

/// `convolve_same` along the axial axis of every lateral channel.
pub fn apply_filter_axial(patch: &Patch, filter: &FirFilter) -> Patch {
    FftConvolver::new(filter, PATCH_LEN)
        .expect("patch-length transform is a power of two")
        .apply_patch(patch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CalibrationMode {
    /// Training-domain patch into the testing domain.
    TrainTime,
    /// Testing-domain patch into the training domain.
    TestTime,
}

/// Filters a patch with the calibration filter of its depth and relabels it
/// with the target setting.
pub fn calibrate_patch(
    patch: &Patch,
    stf: &SettingTransferFunction,
    mode: CalibrationMode,
) -> Result<Patch> {
    let depth = stf.depth(patch.depth_index)?;
    let (filter, target) = match mode {
        CalibrationMode::TrainTime => (&depth.fir_train, &stf.to_label),
        CalibrationMode::TestTime => (&depth.fir_test, &stf.from_label),
    };
    let mut out = apply_filter_axial(patch, filter);
    out.settings_label.clone_from(target);
    Ok(out)
}

/// Precomputed FFT convolvers for every depth of a transfer function.
#[derive(Debug, Clone)]
pub struct PatchCalibrator {
    per_depth: Vec<FftConvolver>,
    target_label: alloc::string::String,
}

impl PatchCalibrator {
    pub fn new(stf: &SettingTransferFunction, mode: CalibrationMode) -> Result<Self> {
        let per_depth = stf
            .per_depth
            .iter()
            .map(|d| {
                let f = match mode {
                    CalibrationMode::TrainTime => &d.fir_train,
                    CalibrationMode::TestTime => &d.fir_test,
                };
                FftConvolver::new(f, PATCH_LEN)
            })
            .collect::<Result<Vec<_>>>()?;
        let target_label = match mode {
            CalibrationMode::TrainTime => stf.to_label.clone(),
            CalibrationMode::TestTime => stf.from_label.clone(),
        };
        Ok(Self { per_depth, target_label })
    }

    pub fn apply(&self, patch: &Patch) -> Result<Patch> {
        let conv = self
            .per_depth
            .get(patch.depth_index)
            .ok_or(Error::DepthIndex { index: patch.depth_index, count: self.per_depth.len() })?;
        let mut out = conv.apply_patch(patch);
        out.settings_label.clone_from(&self.target_label);
        Ok(out)
    }

    /// Calibrates `patch`, which was cut from the channel-major `samples`
    /// of `axial_len` per channel, filtering with the surrounding samples
    /// rather than zero padding at the patch edges.
    pub fn apply_in_frame(&self, samples: &[f32], axial_len: usize, patch: &Patch) -> Result<Patch> {
        let conv = self
            .per_depth
            .get(patch.depth_index)
            .ok_or(Error::DepthIndex { index: patch.depth_index, count: self.per_depth.len() })?;
        if samples.len() != axial_len * patch.lateral_len() || patch.axial_start + PATCH_LEN > axial_len {
            return Err(Error::Geometry(format!(
                "patch at {} does not fit a {}-sample, {}-channel buffer",
                patch.axial_start,
                axial_len,
                patch.lateral_len()
            )));
        }
        let mut out = patch.with_samples(conv.apply_in_context(samples, axial_len, patch.axial_start));
        out.settings_label.clone_from(&self.target_label);
        Ok(out)
    }
}

/// The 151-tap 1–10 MHz band-pass applied to every patch before anything
/// else, designed on the 256-point grid of `sampling_rate_mhz`.
pub fn denoising_filter(sampling_rate_mhz: f64) -> Result<FirFilter> {
    let grid = FrequencyGrid::for_sampling_rate(sampling_rate_mhz);
    let freqs = grid.freqs();
    let gains: Vec<f64> = freqs
        .iter()
        .map(|&f| if f >= DENOISE_BAND_MHZ.0 && f <= DENOISE_BAND_MHZ.1 { 1.0 } else { 0.0 })
        .collect();
    design_fir(&freqs, &gains, DEFAULT_NTAPS, sampling_rate_mhz)
}
