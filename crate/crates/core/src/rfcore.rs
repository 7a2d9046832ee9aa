//! RF frames, patches and scanner settings.
//!
//! Frames and patches store samples as `f32`, channel-major: all axial
//! samples of lateral channel 0, then channel 1, and so on. Every axial
//! operation in the crate therefore works on contiguous slices.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::{seed, Error, Result};

/// Pulse-echo speed of sound used for every depth mapping.
pub const SPEED_OF_SOUND_M_S: f64 = 1540.0;
/// Axial (and, at default geometry, lateral) patch size in samples.
pub const PATCH_LEN: usize = 256;
/// Axial sample at which the shallowest patch starts.
pub const FIRST_PATCH_START: usize = 400;
/// Axial step between consecutive patches (80% overlap).
pub const PATCH_STEP: usize = 100;
/// Number of patches, hence calibration depths, per default frame.
pub const N_DEPTHS: usize = 12;
pub const DEFAULT_AXIAL_LEN: usize = 2080;
pub const DEFAULT_LATERAL_LEN: usize = 256;
pub const DEFAULT_SAMPLING_RATE_MHZ: f64 = 40.0;
/// Shortest frame that still admits one patch.
pub const MIN_AXIAL_LEN: usize = FIRST_PATCH_START + PATCH_LEN;
/// Shortest frame that admits all [`N_DEPTHS`] patches.
pub const FULL_AXIAL_LEN: usize = FIRST_PATCH_START + (N_DEPTHS - 1) * PATCH_STEP + PATCH_LEN;

#[cfg(feature = "serde")]
fn default_sampling_rate() -> f64 {
    DEFAULT_SAMPLING_RATE_MHZ
}

/// Acquisition knobs whose train/test mismatch calibration removes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScanSettings {
    pub label: String,
    pub pulse_freq_mhz: f64,
    pub foci_cm: Vec<f64>,
    /// Output power relative to the maximum, in dB (never positive).
    pub output_power_db: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_sampling_rate"))]
    pub sampling_rate_mhz: f64,
}

impl ScanSettings {
    /// Builds and validates settings at the default 40 MHz sampling rate.
    pub fn new(
        label: &str,
        pulse_freq_mhz: f64,
        foci_cm: &[f64],
        output_power_db: f64,
    ) -> Result<Self> {
        let settings = Self {
            label: label.to_string(),
            pulse_freq_mhz,
            foci_cm: foci_cm.to_vec(),
            output_power_db,
            sampling_rate_mhz: DEFAULT_SAMPLING_RATE_MHZ,
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSettings(msg));
        if self.label.is_empty() {
            return bad("empty label".into());
        }
        if !(self.pulse_freq_mhz.is_finite() && self.pulse_freq_mhz > 0.0) {
            return bad(format!("pulse frequency {} MHz", self.pulse_freq_mhz));
        }
        if !(self.sampling_rate_mhz.is_finite() && self.sampling_rate_mhz > 0.0) {
            return bad(format!("sampling rate {} MHz", self.sampling_rate_mhz));
        }
        if self.sampling_rate_mhz <= 2.0 * self.pulse_freq_mhz {
            return bad(format!(
                "sampling rate {} MHz is not above twice the pulse frequency {} MHz",
                self.sampling_rate_mhz, self.pulse_freq_mhz
            ));
        }
        if !(self.output_power_db.is_finite() && self.output_power_db <= 0.0) {
            return bad(format!("output power {} dB must be <= 0", self.output_power_db));
        }
        if self.foci_cm.is_empty() {
            return bad("no focal depth".into());
        }
        let max_depth = sample_depth_cm(DEFAULT_AXIAL_LEN, self.sampling_rate_mhz);
        for (i, &f) in self.foci_cm.iter().enumerate() {
            if !(f.is_finite() && f > 0.0 && f <= max_depth) {
                return bad(format!("focus {f} cm outside (0, {max_depth:.3}] cm"));
            }
            if i > 0 && f < self.foci_cm[i - 1] {
                return bad("foci must be sorted ascending".into());
            }
        }
        Ok(())
    }

    /// Linear amplitude factor of the output power setting.
    pub fn output_gain(&self) -> f64 {
        libm::pow(10.0, self.output_power_db / 20.0)
    }
}

/// Depth in cm of axial sample `sample` (pulse-echo, c = 1540 m/s).
pub fn sample_depth_cm(sample: usize, sampling_rate_mhz: f64) -> f64 {
    sample as f64 * SPEED_OF_SOUND_M_S / (2.0 * sampling_rate_mhz * 1e6) * 100.0
}

/// Centre depth in cm of the patch with the given depth index.
pub fn depth_of_patch(depth_index: usize, sampling_rate_mhz: f64) -> Result<f64> {
    if depth_index >= N_DEPTHS {
        return Err(Error::DepthIndex { index: depth_index, count: N_DEPTHS });
    }
    let centre = FIRST_PATCH_START + depth_index * PATCH_STEP + PATCH_LEN / 2;
    Ok(sample_depth_cm(centre, sampling_rate_mhz))
}

/// Depth index whose patch centre is closest to `depth_cm`.
pub fn nearest_depth_index(depth_cm: f64, sampling_rate_mhz: f64) -> usize {
    (0..N_DEPTHS)
        .min_by(|&a, &b| {
            let da = libm::fabs(depth_of_patch(a, sampling_rate_mhz).unwrap_or(0.0) - depth_cm);
            let db = libm::fabs(depth_of_patch(b, sampling_rate_mhz).unwrap_or(0.0) - depth_cm);
            da.total_cmp(&db)
        })
        .unwrap_or(0)
}

/// Post-beamformed RF frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    samples: Vec<f32>,
    axial_len: usize,
    lateral_len: usize,
    pub settings: ScanSettings,
    pub frame_id: u32,
    pub phantom_label: Option<u32>,
}

impl RfFrame {
    /// `samples` is channel-major and must hold `axial_len * lateral_len`
    /// finite values.
    pub fn new(
        samples: Vec<f32>,
        axial_len: usize,
        lateral_len: usize,
        settings: ScanSettings,
        frame_id: u32,
        phantom_label: Option<u32>,
    ) -> Result<Self> {
        if axial_len == 0 || lateral_len == 0 {
            return Err(Error::Geometry(format!("empty frame {axial_len}x{lateral_len}")));
        }
        if samples.len() != axial_len * lateral_len {
            return Err(Error::Length {
                expected: axial_len * lateral_len,
                actual: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { samples, axial_len, lateral_len, settings, frame_id, phantom_label })
    }

    pub fn zeros(axial_len: usize, lateral_len: usize, settings: ScanSettings) -> Self {
        Self {
            samples: vec![0.0; axial_len * lateral_len],
            axial_len,
            lateral_len,
            settings,
            frame_id: 0,
            phantom_label: None,
        }
    }

    pub fn axial_len(&self) -> usize {
        self.axial_len
    }

    pub fn lateral_len(&self) -> usize {
        self.lateral_len
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn channel(&self, j: usize) -> &[f32] {
        &self.samples[j * self.axial_len..(j + 1) * self.axial_len]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f32]> {
        self.samples.chunks_exact(self.axial_len)
    }

    /// Sample at axial index `i`, lateral channel `j`.
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.samples[j * self.axial_len + i]
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// 256-sample axial window across all channels of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    samples: Vec<f32>,
    lateral_len: usize,
    pub axial_start: usize,
    pub depth_index: usize,
    pub label: Option<u32>,
    pub settings_label: String,
    pub frame_id: u32,
}

impl Patch {
    /// Builds a patch from channel-major samples. `axial_start` must lie on
    /// the patch grid (400, 500, ...); the depth index follows from it.
    pub fn new(
        samples: Vec<f32>,
        lateral_len: usize,
        axial_start: usize,
        label: Option<u32>,
        settings_label: &str,
    ) -> Result<Self> {
        if lateral_len == 0 || samples.len() != PATCH_LEN * lateral_len {
            return Err(Error::Length { expected: PATCH_LEN * lateral_len, actual: samples.len() });
        }
        let depth_index = depth_index_of_start(axial_start)?;
        Ok(Self {
            samples,
            lateral_len,
            axial_start,
            depth_index,
            label,
            settings_label: settings_label.to_string(),
            frame_id: 0,
        })
    }

    pub fn lateral_len(&self) -> usize {
        self.lateral_len
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn channel(&self, j: usize) -> &[f32] {
        &self.samples[j * PATCH_LEN..(j + 1) * PATCH_LEN]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f32]> {
        self.samples.chunks_exact(PATCH_LEN)
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.samples[j * PATCH_LEN + i]
    }

    /// Same metadata, new samples (used by filters).
    pub fn with_samples(&self, samples: Vec<f32>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self { samples, settings_label: self.settings_label.clone(), ..*self }
    }

    /// Horizontal flip: channel order reversed.
    pub fn flipped_lateral(&self) -> Self {
        let mut samples = Vec::with_capacity(self.samples.len());
        for ch in self.samples.chunks_exact(PATCH_LEN).rev() {
            samples.extend_from_slice(ch);
        }
        self.with_samples(samples)
    }
}

fn depth_index_of_start(axial_start: usize) -> Result<usize> {
    if axial_start < FIRST_PATCH_START || (axial_start - FIRST_PATCH_START) % PATCH_STEP != 0 {
        return Err(Error::Geometry(format!("patch start {axial_start} is off the patch grid")));
    }
    let index = (axial_start - FIRST_PATCH_START) / PATCH_STEP;
    if index >= N_DEPTHS {
        return Err(Error::DepthIndex { index, count: N_DEPTHS });
    }
    Ok(index)
}

/// Number of patches a frame of `axial_len` samples admits.
pub fn patch_count(axial_len: usize) -> usize {
    if axial_len < MIN_AXIAL_LEN {
        0
    } else {
        ((axial_len - MIN_AXIAL_LEN) / PATCH_STEP + 1).min(N_DEPTHS)
    }
}

/// Cuts the frame into axially overlapping patches starting at sample 400,
/// 500, ..., each spanning every lateral channel.
pub fn extract_patches(frame: &RfFrame) -> Result<Vec<Patch>> {
    let count = patch_count(frame.axial_len());
    if count == 0 {
        return Err(Error::Geometry(format!(
            "frame has {} axial samples, at least {MIN_AXIAL_LEN} required",
            frame.axial_len()
        )));
    }
    let mut patches = Vec::with_capacity(count);
    for depth_index in 0..count {
        let start = FIRST_PATCH_START + depth_index * PATCH_STEP;
        let mut samples = Vec::with_capacity(PATCH_LEN * frame.lateral_len());
        for ch in frame.channels() {
            samples.extend_from_slice(&ch[start..start + PATCH_LEN]);
        }
        patches.push(Patch {
            samples,
            lateral_len: frame.lateral_len(),
            axial_start: start,
            depth_index,
            label: frame.phantom_label,
            settings_label: frame.settings.label.clone(),
            frame_id: frame.frame_id,
        });
    }
    Ok(patches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// Patches with labels, tagged by the split they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatchSet {
    pub patches: Vec<Patch>,
    pub split_tag: SplitTag,
    pub seed: u64,
}

impl LabeledPatchSet {
    pub fn from_frames(frames: &[RfFrame], split_tag: SplitTag, seed: u64) -> Result<Self> {
        let mut patches = Vec::new();
        for f in frames {
            patches.extend(extract_patches(f)?);
        }
        Ok(Self { patches, split_tag, seed })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Index form of a frame split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// `round(n * fraction)`, the size of a fractional selection.
pub fn selection_count(n: usize, fraction: f64) -> usize {
    (libm::round(n as f64 * fraction) as usize).min(n)
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx
}

/// Seeded split of `n` frames: `round(n * train_fraction)` go to training,
/// the rest is halved into validation and test (validation gets the floor).
pub fn split_indices(n: usize, seed: u64, train_fraction: f64) -> Result<FrameSplit> {
    if n == 0 {
        return Err(Error::Empty("frame list"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let idx = shuffled(n, seed);
    let n_train = selection_count(n, train_fraction);
    let n_val = (n - n_train) / 2;
    Ok(FrameSplit {
        train: idx[..n_train].to_vec(),
        validation: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

/// Seeded selection of `n_select` of `n` test-setting frames, halved into
/// validation and test. The unselected remainder is returned as `train`.
pub fn select_eval_indices(n: usize, seed: u64, n_select: usize) -> Result<FrameSplit> {
    if n == 0 {
        return Err(Error::Empty("frame list"));
    }
    if n_select == 0 || n_select > n {
        return Err(Error::InvalidArgument(format!("cannot select {n_select} of {n} frames")));
    }
    let idx = shuffled(n, seed);
    let n_val = n_select / 2;
    Ok(FrameSplit {
        validation: idx[..n_val].to_vec(),
        test: idx[n_val..n_select].to_vec(),
        train: idx[n_select..].to_vec(),
    })
}

/// Splits whole frames (never patches, so overlapping patches of one frame
/// cannot leak across splits).
pub fn split_frames<T: Clone>(
    frames: &[T],
    seed: u64,
    train_fraction: f64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let split = split_indices(frames.len(), seed, train_fraction)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| frames[i].clone()).collect::<Vec<_>>();
    Ok((pick(&split.train), pick(&split.validation), pick(&split.test)))
}
