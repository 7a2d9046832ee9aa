//! Experiment and suite configuration files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stfcal_core::learn::AdamHyper;
use stfcal_core::rfcore::selection_count;
use stfcal_core::transfer::{DEFAULT_CALIBRATION_FRAMES, DEFAULT_NTAPS};
use stfcal_core::{PhantomSpec, ScanSettings, SnrMode, SystemModel, TrainConfig};

/// Training-setting defaults shared by every mismatch.
pub const BASE_PULSE_MHZ: f64 = 9.0;
pub const BASE_FOCUS_CM: f64 = 2.0;
pub const BASE_POWER_DB: f64 = 0.0;

/// Which scanner knob differs between training and testing data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mismatch {
    /// 9 MHz to 5 MHz pulse.
    PulseFrequency,
    /// Single focus at 2 cm to foci at 1 and 3 cm.
    Focus,
    /// 0 dB to -6 dB output power.
    OutputPower,
}

pub fn settings_label(pulse_mhz: f64, foci_cm: &[f64], power_db: f64) -> String {
    let foci: Vec<String> = foci_cm.iter().map(|f| f.to_string()).collect();
    format!("{pulse_mhz}mhz_f{}_{power_db}db", foci.join("+"))
}

/// Validated settings labelled with [`settings_label`].
pub fn scan_settings(pulse_mhz: f64, foci_cm: &[f64], power_db: f64) -> stfcal_core::Result<ScanSettings> {
    ScanSettings::new(&settings_label(pulse_mhz, foci_cm, power_db), pulse_mhz, foci_cm, power_db)
}

fn settings(pulse_mhz: f64, foci_cm: &[f64], power_db: f64) -> ScanSettings {
    scan_settings(pulse_mhz, foci_cm, power_db).expect("built-in settings are valid")
}

impl Mismatch {
    pub const ALL: [Mismatch; 3] = [Mismatch::PulseFrequency, Mismatch::Focus, Mismatch::OutputPower];

    pub fn train_settings(&self) -> ScanSettings {
        settings(BASE_PULSE_MHZ, &[BASE_FOCUS_CM], BASE_POWER_DB)
    }

    pub fn test_settings(&self) -> ScanSettings {
        match self {
            Mismatch::PulseFrequency => settings(5.0, &[BASE_FOCUS_CM], BASE_POWER_DB),
            Mismatch::Focus => settings(BASE_PULSE_MHZ, &[1.0, 3.0], BASE_POWER_DB),
            Mismatch::OutputPower => settings(BASE_PULSE_MHZ, &[BASE_FOCUS_CM], -6.0),
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            Mismatch::PulseFrequency => "Pulse frequency 9 -> 5 MHz",
            Mismatch::Focus => "Focus 2 cm -> 1, 3 cm",
            Mismatch::OutputPower => "Output power 0 -> -6 dB",
        }
    }
}

/// How training and testing data are prepared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// Train and test at the testing setting.
    Benchmark,
    NoCalibration,
    /// Each training patch calibrated with probability `p`.
    TrainTime { p: f64 },
    TestTime,
    /// Fine-tune on `n_frames` testing-setting frames per phantom.
    TransferLearning { n_frames: usize },
}

impl Mode {
    pub fn name(&self) -> String {
        match self {
            Mode::Benchmark => "Benchmark".into(),
            Mode::NoCalibration => "No Calibration".into(),
            Mode::TrainTime { p } if *p == 1.0 => "Train-time Calibration".into(),
            Mode::TrainTime { p } => format!("Train-time Calibration w.p. {p}"),
            Mode::TestTime => "Test-time Calibration".into(),
            Mode::TransferLearning { n_frames } => format!("TL ({n_frames} frames)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Stable-acquisition frames per side of the calibration pair.
    pub calibration_frames: usize,
    pub ntaps: usize,
    /// Fraction of training-setting frames used for training.
    pub train_fraction: f64,
    /// Fraction of testing-setting frames set aside for validation and test.
    pub eval_fraction: f64,
    pub system: SystemModel,
    /// Class 0 and class 1 phantoms.
    pub phantoms: [PhantomSpec; 2],
    pub calibration_phantom: PhantomSpec,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            calibration_frames: DEFAULT_CALIBRATION_FRAMES,
            ntaps: DEFAULT_NTAPS,
            train_fraction: 0.8,
            eval_fraction: 750.0 / 2014.0,
            system: SystemModel::default(),
            phantoms: [PhantomSpec::phantom1(), PhantomSpec::phantom2()],
            calibration_phantom: PhantomSpec::calibration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub flip_probability: f64,
    pub fine_tune_learning_rate: f64,
    pub fine_tune_epochs: usize,
    pub adam: AdamHyper,
}

/// Desk-scale defaults tuned for the spectral classifier.
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_EPOCHS: usize = 10;

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            batch_size: t.batch_size,
            flip_probability: t.flip_probability,
            fine_tune_learning_rate: DEFAULT_LEARNING_RATE,
            fine_tune_epochs: DEFAULT_EPOCHS,
            adam: t.adam,
        }
    }
}

impl TrainingConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            flip_probability: self.flip_probability,
            adam: self.adam,
        }
    }

    pub fn fine_tune_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.fine_tune_learning_rate,
            epochs: self.fine_tune_epochs,
            ..self.train_config(seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub base: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { base: 20_240_601 }
    }
}

fn default_repetitions() -> usize {
    10
}

fn default_frames() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_frames")]
    pub frames_per_phantom: usize,
    #[serde(default)]
    pub snr_mode: SnrMode,
    pub mismatch: Mismatch,
    pub mode: Mode,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
}

/// Frame counts per phantom and repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Unselected testing-setting frames: benchmark training and TL pool.
    pub pool: usize,
}

impl ExperimentConfig {
    pub fn new(mismatch: Mismatch, mode: Mode) -> Self {
        Self {
            repetitions: default_repetitions(),
            frames_per_phantom: default_frames(),
            snr_mode: SnrMode::default(),
            mismatch,
            mode,
            simulator: SimulatorConfig::default(),
            training: TrainingConfig::default(),
            seeds: SeedConfig::default(),
        }
    }

    pub fn frame_counts(&self) -> FrameCounts {
        let n = self.frames_per_phantom;
        let train = selection_count(n, self.simulator.train_fraction);
        let selected = selection_count(n, self.simulator.eval_fraction);
        FrameCounts { train, validation: selected / 2, test: selected - selected / 2, pool: n - selected }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 2 {
            bail!("repetitions must be at least 2 for a standard deviation, got {}", self.repetitions);
        }
        let s = &self.simulator;
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            bail!("train_fraction {} outside (0, 1)", s.train_fraction);
        }
        if !(s.eval_fraction > 0.0 && s.eval_fraction < 1.0) {
            bail!("eval_fraction {} outside (0, 1)", s.eval_fraction);
        }
        if s.calibration_frames == 0 {
            bail!("calibration_frames must be positive");
        }
        if s.ntaps % 2 == 0 || s.ntaps < 3 {
            bail!("ntaps {} must be odd and at least 3", s.ntaps);
        }
        s.system.validate()?;
        for (k, p) in s.phantoms.iter().enumerate() {
            p.validate()?;
            if p.label != k as u32 {
                bail!("phantom {k} carries label {}", p.label);
            }
        }
        s.calibration_phantom.validate()?;
        if self.seeds.base > i64::MAX as u64 {
            bail!("base seed {} does not fit a signed 64-bit integer", self.seeds.base);
        }
        self.training.train_config(0).validate()?;
        self.training.fine_tune_config(0).validate()?;
        let c = self.frame_counts();
        if c.train == 0 || c.test == 0 {
            bail!("{} frames per phantom leave an empty train or test split", self.frames_per_phantom);
        }
        match self.mode {
            Mode::TrainTime { p } if !(p > 0.0 && p <= 1.0) => bail!("mixing probability {p} outside (0, 1]"),
            Mode::Benchmark if c.pool == 0 => bail!("no testing-setting frames left for benchmark training"),
            Mode::TransferLearning { n_frames } if n_frames == 0 || n_frames > c.pool => {
                bail!("transfer learning needs {n_frames} frames per phantom but the pool holds {}", c.pool)
            }
            _ => Ok(()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex.
    pub fn digest(&self) -> String {
        let h = Sha256::digest(self.to_toml().as_bytes());
        h.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Training overrides of one suite row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverride {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub fine_tune_learning_rate: Option<f64>,
    pub fine_tune_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteRow {
    pub mode: Mode,
    #[serde(default)]
    pub training: TrainingOverride,
}

/// A mismatch-by-mode grid sharing everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_frames")]
    pub frames_per_phantom: usize,
    #[serde(default)]
    pub snr_mode: SnrMode,
    pub mismatches: Vec<Mismatch>,
    pub rows: Vec<SuiteRow>,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
}

impl SuiteConfig {
    /// Mismatch-major list of experiment configs.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &mismatch in &self.mismatches {
            for row in &self.rows {
                let mut training = self.training.clone();
                let o = &row.training;
                training.learning_rate = o.learning_rate.unwrap_or(training.learning_rate);
                training.epochs = o.epochs.unwrap_or(training.epochs);
                training.fine_tune_learning_rate = o.fine_tune_learning_rate.unwrap_or(training.fine_tune_learning_rate);
                training.fine_tune_epochs = o.fine_tune_epochs.unwrap_or(training.fine_tune_epochs);
                out.push(ExperimentConfig {
                    repetitions: self.repetitions,
                    frames_per_phantom: self.frames_per_phantom,
                    snr_mode: self.snr_mode,
                    mismatch,
                    mode: row.mode,
                    simulator: self.simulator.clone(),
                    training,
                    seeds: self.seeds,
                });
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let c = ExperimentConfig::new(Mismatch::PulseFrequency, Mode::Benchmark).frame_counts();
        assert_eq!(c, FrameCounts { train: 160, validation: 37, test: 37, pool: 126 });
    }

    #[test]
    fn toml_round_trip_and_digest() {
        let cfg = ExperimentConfig::new(Mismatch::Focus, Mode::TrainTime { p: 0.75 });
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_eq!(cfg.digest().len(), 64);
        let other = ExperimentConfig::new(Mismatch::Focus, Mode::TrainTime { p: 0.9 });
        assert_ne!(other.digest(), cfg.digest());
    }

    #[test]
    fn minimal_file() {
        let cfg: ExperimentConfig = toml::from_str(
            "[mismatch]\nkind = \"output_power\"\n[mode]\nkind = \"transfer_learning\"\nn_frames = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::TransferLearning { n_frames: 10 });
        assert_eq!(cfg.repetitions, 10);
        cfg.validate().unwrap();
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1\n[mismatch]\nkind = \"focus\"\n[mode]\nkind = \"benchmark\"\n").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::new(Mismatch::Focus, Mode::TrainTime { p: 0.0 });
        assert!(cfg.validate().is_err());
        for p in [0.5, 0.75, 0.9, 1.0, 0.01] {
            cfg.mode = Mode::TrainTime { p };
            cfg.validate().unwrap();
        }
        cfg.repetitions = 1;
        assert!(cfg.validate().is_err());
        cfg.repetitions = 2;
        cfg.mode = Mode::TransferLearning { n_frames: 127 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn settings_per_mismatch() {
        for m in Mismatch::ALL {
            let (a, b) = (m.train_settings(), m.test_settings());
            assert_eq!(a.label, "9mhz_f2_0db");
            assert_ne!(a, b);
        }
        assert_eq!(Mismatch::Focus.test_settings().label, "9mhz_f1+3_0db");
        assert_eq!(Mismatch::OutputPower.test_settings().label, "9mhz_f2_-6db");
    }

    #[test]
    fn suite_expansion() {
        let s: SuiteConfig = toml::from_str(
            "mismatches = [{ kind = \"focus\" }, { kind = \"pulse_frequency\" }]\n\
             [[rows]]\nmode = { kind = \"benchmark\" }\n\
             [[rows]]\nmode = { kind = \"test_time\" }\ntraining = { epochs = 3 }\n",
        )
        .unwrap();
        let e = s.expand();
        assert_eq!(e.len(), 4);
        assert_eq!(e[1].training.epochs, 3);
        assert_eq!(e[0].training.epochs, DEFAULT_EPOCHS);
        assert_eq!(e[2].mismatch, Mismatch::PulseFrequency);
    }
}
