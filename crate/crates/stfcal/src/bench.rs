//! Experiment harness: repeated seeded runs of every calibration mode.
//!
//! Configurations that agree on everything but mode and training share the
//! simulated frames of each repetition, and configurations whose training
//! setting coincides also share the training-setting frames. Sharing never
//! changes a result: every random stream is derived from the base seed, the
//! repetition index and the setting label alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stfcal_core::firdes::{denoising_filter, FftConvolver, PatchCalibrator};
use stfcal_core::learn::{accuracy, fine_tune_examples, train_examples, Example, Featurizer};
use stfcal_core::rfcore::{extract_patches, select_eval_indices, split_indices, DEFAULT_AXIAL_LEN};
use stfcal_core::seed;
use stfcal_core::simphantom::{simulate_calibration_pair_on, FrameSimulator};
use stfcal_core::transfer::build_calibration;
use stfcal_core::{CalibrationConfig, CalibrationMode, PhantomSpec, RfFrame, ScanSettings, SettingTransferFunction};

use crate::config::{ExperimentConfig, Mismatch, Mode, SimulatorConfig};

const STREAM_FRAMES: u64 = 1;
const STREAM_TRAIN_SPLIT: u64 = 2;
const STREAM_EVAL_SPLIT: u64 = 3;
const STREAM_CALIBRATION: u64 = 4;
const STREAM_TRAINING: u64 = 5;
const STREAM_MIXING: u64 = 6;
const STREAM_FINE_TUNE: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub mismatch: Mismatch,
    pub mode: Mode,
    pub mean_accuracy: f64,
    /// Sample standard deviation (n - 1) over `per_run`.
    pub std_accuracy: f64,
    /// Accuracy of every repetition, in repetition order.
    pub per_run: Vec<f64>,
    pub wall_time_s: f64,
    pub config_digest: String,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One row of a suite: a result or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub config: ExperimentConfig,
    pub result: Option<ExperimentResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub entries: Vec<SuiteEntry>,
    /// Time spent simulating and featurizing, shared by all rows.
    pub data_wall_time_s: f64,
    pub wall_time_s: f64,
}

impl SuiteOutcome {
    pub fn table(&self) -> String {
        render_table(&self.entries)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let out = run_suite(std::slice::from_ref(config))?;
    let entry = out.entries.into_iter().next().expect("one entry per config");
    match (entry.result, entry.error) {
        (Some(r), _) => Ok(r),
        (None, e) => Err(anyhow!(e.unwrap_or_default())),
    }
}

/// Runs every config; a failing config marks its row and leaves the others
/// untouched.
pub fn run_suite(configs: &[ExperimentConfig]) -> Result<SuiteOutcome> {
    if configs.is_empty() {
        bail!("empty suite");
    }
    let start = Instant::now();
    let mut errors: Vec<Option<String>> = configs.iter().map(|c| c.validate().err().map(|e| format!("{e:#}"))).collect();
    let plan = Plan::new(configs, &errors);
    let n_reps = plan.max_repetitions();

    let data_time = std::sync::Mutex::new(0.0f64);
    let per_rep: Vec<Vec<(usize, Result<f64, String>, f64)>> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let (rows, secs) = plan.run_repetition(configs, r);
            *data_time.lock().unwrap() += secs;
            rows
        })
        .collect();

    let mut runs: Vec<Vec<f64>> = vec![Vec::new(); configs.len()];
    let mut times = vec![0.0; configs.len()];
    for rows in per_rep {
        for (i, acc, secs) in rows {
            times[i] += secs;
            match acc {
                Ok(a) => runs[i].push(a),
                Err(e) => {
                    errors[i].get_or_insert(e);
                }
            }
        }
    }
    let entries = configs
        .iter()
        .zip(errors)
        .zip(runs)
        .zip(times)
        .map(|(((config, error), per_run), wall)| {
            let result = error.is_none().then(|| {
                let (mean, std) = mean_std(&per_run);
                ExperimentResult {
                    mismatch: config.mismatch,
                    mode: config.mode,
                    mean_accuracy: mean,
                    std_accuracy: std,
                    per_run,
                    wall_time_s: wall,
                    config_digest: config.digest(),
                }
            });
            SuiteEntry { config: config.clone(), result, error }
        })
        .collect();
    Ok(SuiteOutcome {
        entries,
        data_wall_time_s: data_time.into_inner().unwrap(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Text table, one block per mismatch in order of first appearance.
pub fn render_table(entries: &[SuiteEntry]) -> String {
    let mut order: Vec<Mismatch> = Vec::new();
    for e in entries {
        if !order.contains(&e.config.mismatch) {
            order.push(e.config.mismatch);
        }
    }
    let width = entries.iter().map(|e| e.config.mode.name().chars().count()).max().unwrap_or(0).max(15);
    let mut out = String::new();
    for m in order {
        let _ = writeln!(out, "{}", m.title());
        let _ = writeln!(out, "{:<width$} | Accuracy (%)", "Experiment Type");
        let _ = writeln!(out, "{}-+-{}", "-".repeat(width), "-".repeat(16));
        for e in entries.iter().filter(|e| e.config.mismatch == m) {
            let cell = match (&e.result, &e.error) {
                (Some(r), _) => format!("{:.2} ± {:.2}", 100.0 * r.mean_accuracy, 100.0 * r.std_accuracy),
                (None, err) => format!("FAILED: {}", err.as_deref().unwrap_or("unknown error")),
            };
            let _ = writeln!(out, "{:<width$} | {}", e.config.mode.name(), cell);
        }
        out.push('\n');
    }
    out
}

/// Denoised features of one frame's patches, in depth order.
type FrameExamples = Vec<Example>;

/// Denoises whole frames, then featurizes each patch raw and calibrated.
/// Filtering a frame before cutting it keeps zero-padding transients out of
/// the patches; calibration filters read the frame around each patch for
/// the same reason.
struct Processor {
    denoise: FftConvolver,
    axial_len: usize,
    featurizer: Featurizer,
}

impl Processor {
    fn new(fs: f64, axial_len: usize) -> Result<Self> {
        Ok(Self {
            denoise: FftConvolver::new(&denoising_filter(fs)?, axial_len)?,
            axial_len,
            featurizer: Featurizer::default(),
        })
    }

    /// Raw features plus, for each calibrator, calibrated features.
    fn frame(&self, frame: &RfFrame, calibrators: &[&PatchCalibrator]) -> Result<(FrameExamples, Vec<FrameExamples>)> {
        let label = frame.phantom_label.ok_or_else(|| anyhow!("frame {} has no phantom label", frame.frame_id))? as usize;
        if frame.axial_len() != self.axial_len {
            bail!("frame {} has {} axial samples, expected {}", frame.frame_id, frame.axial_len(), self.axial_len);
        }
        let clean = denoise_frame(&self.denoise, frame)?;
        let mut raw = Vec::new();
        let mut cal = vec![Vec::new(); calibrators.len()];
        for patch in extract_patches(&clean)? {
            raw.push(Example::new(label, self.featurizer.featurize(&patch)));
            for (c, out) in calibrators.iter().zip(cal.iter_mut()) {
                let p = c.apply_in_frame(clean.samples(), self.axial_len, &patch)?;
                out.push(Example::new(label, self.featurizer.featurize(&p)));
            }
        }
        Ok((raw, cal))
    }
}

/// Harness features of a standalone frame: denoised, cut into patches and,
/// with a calibrator, calibrated in frame context.
pub fn frame_examples(frame: &RfFrame, calibrator: Option<&PatchCalibrator>) -> Result<Vec<Example>> {
    let p = Processor::new(frame.settings.sampling_rate_mhz, frame.axial_len())?;
    let cals: Vec<&PatchCalibrator> = calibrator.into_iter().collect();
    let (raw, cal) = p.frame(frame, &cals)?;
    Ok(cal.into_iter().next().unwrap_or(raw))
}

/// Frame with every channel band-passed by `denoise`.
pub fn denoise_frame(denoise: &FftConvolver, frame: &RfFrame) -> Result<RfFrame> {
    let samples = denoise.apply_channels(frame.samples());
    Ok(RfFrame::new(
        samples,
        frame.axial_len(),
        frame.lateral_len(),
        frame.settings.clone(),
        frame.frame_id,
        frame.phantom_label,
    )?)
}

/// Identity of the simulated data, ignoring mode and training.
#[derive(Serialize)]
struct ScenarioKey<'a> {
    mismatch: Mismatch,
    frames_per_phantom: usize,
    snr_mode: stfcal_core::SnrMode,
    simulator: &'a SimulatorConfig,
    base: u64,
}

#[derive(Serialize)]
struct TrainKey<'a> {
    settings: ScanSettings,
    frames_per_phantom: usize,
    train_fraction: f64,
    system: &'a stfcal_core::SystemModel,
    phantoms: &'a [PhantomSpec; 2],
    base: u64,
}

struct Scenario {
    /// Representative config.
    lead: usize,
    members: Vec<usize>,
    reps: usize,
    need_train_cal: bool,
    need_test_cal: bool,
    /// Pool frames per phantom to featurize.
    pool_frames: usize,
}

struct TrainGroup {
    lead: usize,
    scenarios: Vec<usize>,
    reps: usize,
}

struct Plan {
    scenarios: Vec<Scenario>,
    groups: Vec<TrainGroup>,
}

fn key_string<T: Serialize>(k: &T) -> String {
    toml::to_string(k).expect("key serializes")
}

impl Plan {
    fn new(configs: &[ExperimentConfig], errors: &[Option<String>]) -> Self {
        let mut scenario_ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut scenarios: Vec<Scenario> = Vec::new();
        for (i, c) in configs.iter().enumerate() {
            if errors[i].is_some() {
                continue;
            }
            let key = key_string(&ScenarioKey {
                mismatch: c.mismatch,
                frames_per_phantom: c.frames_per_phantom,
                snr_mode: c.snr_mode,
                simulator: &c.simulator,
                base: c.seeds.base,
            });
            let id = *scenario_ids.entry(key).or_insert_with(|| {
                scenarios.push(Scenario {
                    lead: i,
                    members: Vec::new(),
                    reps: 0,
                    need_train_cal: false,
                    need_test_cal: false,
                    pool_frames: 0,
                });
                scenarios.len() - 1
            });
            let s = &mut scenarios[id];
            s.members.push(i);
            s.reps = s.reps.max(c.repetitions);
            match c.mode {
                Mode::TrainTime { .. } => s.need_train_cal = true,
                Mode::TestTime => s.need_test_cal = true,
                Mode::Benchmark => s.pool_frames = s.pool_frames.max(c.frame_counts().pool),
                Mode::TransferLearning { n_frames } => s.pool_frames = s.pool_frames.max(n_frames),
                Mode::NoCalibration => {}
            }
        }
        let mut group_ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut groups: Vec<TrainGroup> = Vec::new();
        for (sid, s) in scenarios.iter().enumerate() {
            let c = &configs[s.lead];
            let key = key_string(&TrainKey {
                settings: c.mismatch.train_settings(),
                frames_per_phantom: c.frames_per_phantom,
                train_fraction: c.simulator.train_fraction,
                system: &c.simulator.system,
                phantoms: &c.simulator.phantoms,
                base: c.seeds.base,
            });
            let id = *group_ids.entry(key).or_insert_with(|| {
                groups.push(TrainGroup { lead: s.lead, scenarios: Vec::new(), reps: 0 });
                groups.len() - 1
            });
            groups[id].scenarios.push(sid);
            groups[id].reps = groups[id].reps.max(s.reps);
        }
        Self { scenarios, groups }
    }

    fn max_repetitions(&self) -> usize {
        self.scenarios.iter().map(|s| s.reps).max().unwrap_or(0)
    }

    /// Accuracy of every config that runs repetition `r`, with the seconds
    /// spent on its training; also returns the data preparation time.
    fn run_repetition(&self, configs: &[ExperimentConfig], r: usize) -> (Vec<(usize, Result<f64, String>, f64)>, f64) {
        let t0 = Instant::now();
        let mut data: Vec<Option<Result<RepData, String>>> = (0..self.scenarios.len()).map(|_| None).collect();
        for g in self.groups.iter().filter(|g| g.reps > r) {
            let active: Vec<usize> = g.scenarios.iter().copied().filter(|&s| self.scenarios[s].reps > r).collect();
            match self.group_data(configs, g, &active, r) {
                Ok(list) => {
                    for (sid, d) in active.iter().zip(list) {
                        data[*sid] = Some(d.map_err(|e| format!("{e:#}")));
                    }
                }
                Err(e) => {
                    for &sid in &active {
                        data[sid] = Some(Err(format!("{e:#}")));
                    }
                }
            }
        }
        let data_secs = t0.elapsed().as_secs_f64();
        let mut rows = Vec::new();
        for (sid, s) in self.scenarios.iter().enumerate() {
            let Some(d) = &data[sid] else { continue };
            for &i in &s.members {
                if configs[i].repetitions <= r {
                    continue;
                }
                let t = Instant::now();
                let acc = match d {
                    Ok(d) => evaluate_mode(&configs[i], d, r).map_err(|e| format!("{e:#}")),
                    Err(e) => Err(e.clone()),
                };
                rows.push((i, acc, t.elapsed().as_secs_f64()));
            }
        }
        (rows, data_secs)
    }

    /// Data of repetition `r` for the given scenarios of a training group.
    fn group_data(
        &self,
        configs: &[ExperimentConfig],
        group: &TrainGroup,
        active: &[usize],
        r: usize,
    ) -> Result<Vec<Result<RepData>>> {
        let lead = &configs[group.lead];
        let processor = Processor::new(lead.mismatch.train_settings().sampling_rate_mhz, DEFAULT_AXIAL_LEN)?;
        let rep_seed = seed::derive(lead.seeds.base, &[r as u64]);

        let mut stfs: Vec<Result<Option<SettingTransferFunction>>> = Vec::new();
        for &sid in active {
            let s = &self.scenarios[sid];
            stfs.push(if s.need_train_cal || s.need_test_cal {
                calibration(&configs[s.lead], rep_seed).map(Some)
            } else {
                Ok(None)
            });
        }
        let mut calibrators: Vec<PatchCalibrator> = Vec::new();
        let mut owner: Vec<Option<usize>> = Vec::new();
        for (k, &sid) in active.iter().enumerate() {
            match (&stfs[k], self.scenarios[sid].need_train_cal) {
                (Ok(Some(stf)), true) => {
                    owner.push(Some(calibrators.len()));
                    calibrators.push(PatchCalibrator::new(stf, CalibrationMode::TrainTime)?);
                }
                _ => owner.push(None),
            }
        }
        let refs: Vec<&PatchCalibrator> = calibrators.iter().collect();

        let train_settings = lead.mismatch.train_settings();
        let n_train = lead.frame_counts().train;
        let mut train_raw = Vec::new();
        let mut train_cal: Vec<Vec<FrameExamples>> = vec![Vec::new(); refs.len()];
        for phantom in &lead.simulator.phantoms {
            let split_seed = seed::derive(rep_seed, &[STREAM_TRAIN_SPLIT, seed::label_hash(&train_settings.label), u64::from(phantom.label)]);
            let split = split_indices(lead.frames_per_phantom, split_seed, lead.simulator.train_fraction)?;
            debug_assert_eq!(split.train.len(), n_train);
            let sim = FrameSimulator::new(phantom, &train_settings, &lead.simulator.system)?;
            let base = frame_seed(rep_seed, &train_settings, phantom);
            for &idx in &split.train {
                let frame = sim.freehand_frame(base, idx)?;
                let (raw, cal) = processor.frame(&frame, &refs)?;
                train_raw.push(raw);
                for (dst, c) in train_cal.iter_mut().zip(cal) {
                    dst.push(c);
                }
            }
        }

        let mut out = Vec::new();
        for (k, &sid) in active.iter().enumerate() {
            let s = &self.scenarios[sid];
            let stf = match std::mem::replace(&mut stfs[k], Ok(None)) {
                Ok(stf) => stf,
                Err(e) => {
                    out.push(Err(e));
                    continue;
                }
            };
            let cal = owner[k].map(|o| std::mem::take(&mut train_cal[o]));
            out.push(scenario_data(&configs[s.lead], s, &processor, rep_seed, stf, train_raw.clone(), cal));
        }
        Ok(out)
    }
}

fn frame_seed(rep_seed: u64, settings: &ScanSettings, phantom: &PhantomSpec) -> u64 {
    seed::derive(rep_seed, &[STREAM_FRAMES, seed::label_hash(&settings.label), u64::from(phantom.label)])
}

fn calibration(config: &ExperimentConfig, rep_seed: u64) -> Result<SettingTransferFunction> {
    let (a, b) = (config.mismatch.train_settings(), config.mismatch.test_settings());
    let cal_seed = seed::derive(rep_seed, &[STREAM_CALIBRATION, seed::label_hash(&a.label), seed::label_hash(&b.label)]);
    let sys = &config.simulator.system;
    let (fa, fb) = simulate_calibration_pair_on(&config.simulator.calibration_phantom, &a, &b, sys, sys, cal_seed, config.simulator.calibration_frames)?;
    let cc = CalibrationConfig { ntaps: config.simulator.ntaps, snr_mode: config.snr_mode };
    Ok(build_calibration(&fa, &fb, &cc)?)
}

/// Everything the modes of one scenario need for one repetition.
struct RepData {
    train_raw: Vec<FrameExamples>,
    train_cal: Option<Vec<FrameExamples>>,
    test_raw: Vec<FrameExamples>,
    test_cal: Option<Vec<FrameExamples>>,
    /// Per phantom, the pool frames in selection order.
    pool: [Vec<FrameExamples>; 2],
}

fn scenario_data(
    config: &ExperimentConfig,
    scenario: &Scenario,
    processor: &Processor,
    rep_seed: u64,
    stf: Option<SettingTransferFunction>,
    train_raw: Vec<FrameExamples>,
    train_cal: Option<Vec<FrameExamples>>,
) -> Result<RepData> {
    let test_settings = config.mismatch.test_settings();
    let test_calibrator = match (&stf, scenario.need_test_cal) {
        (Some(stf), true) => Some(PatchCalibrator::new(stf, CalibrationMode::TestTime)?),
        _ => None,
    };
    let refs: Vec<&PatchCalibrator> = test_calibrator.iter().collect();
    let counts = config.frame_counts();
    let n_select = counts.validation + counts.test;
    let mut test_raw = Vec::new();
    let mut test_cal = Vec::new();
    let mut pool: [Vec<FrameExamples>; 2] = [Vec::new(), Vec::new()];
    for (k, phantom) in config.simulator.phantoms.iter().enumerate() {
        let split_seed = seed::derive(rep_seed, &[STREAM_EVAL_SPLIT, seed::label_hash(&test_settings.label), u64::from(phantom.label)]);
        let split = select_eval_indices(config.frames_per_phantom, split_seed, n_select)?;
        let sim = FrameSimulator::new(phantom, &test_settings, &config.simulator.system)?;
        let base = frame_seed(rep_seed, &test_settings, phantom);
        for &idx in &split.test {
            let (raw, cal) = processor.frame(&sim.freehand_frame(base, idx)?, &refs)?;
            test_raw.push(raw);
            test_cal.extend(cal);
        }
        for &idx in split.train.iter().take(scenario.pool_frames) {
            pool[k].push(processor.frame(&sim.freehand_frame(base, idx)?, &[])?.0);
        }
    }
    Ok(RepData {
        train_raw,
        train_cal,
        test_raw,
        test_cal: scenario.need_test_cal.then_some(test_cal),
        pool,
    })
}

fn flatten(frames: &[FrameExamples]) -> Vec<Example> {
    frames.iter().flatten().cloned().collect()
}

fn evaluate_mode(config: &ExperimentConfig, data: &RepData, r: usize) -> Result<f64> {
    let rep_seed = seed::derive(config.seeds.base, &[r as u64]);
    let train_cfg = config.training.train_config(seed::derive(rep_seed, &[STREAM_TRAINING]));
    let test_raw = flatten(&data.test_raw);
    let model = match config.mode {
        Mode::Benchmark => {
            let pool: Vec<Example> = data.pool.iter().flat_map(|p| flatten(p)).collect();
            train_examples(&pool, &train_cfg)?
        }
        Mode::NoCalibration => train_examples(&flatten(&data.train_raw), &train_cfg)?,
        Mode::TrainTime { p } => {
            let cal = data.train_cal.as_ref().ok_or_else(|| anyhow!("calibrated training data missing"))?;
            let mut rng = seed::rng(seed::derive(rep_seed, &[STREAM_MIXING]));
            let mut mixed = Vec::new();
            for (raw, cal) in data.train_raw.iter().zip(cal) {
                for (a, b) in raw.iter().zip(cal) {
                    let u: f64 = rng.random();
                    mixed.push(if u < p { b.clone() } else { a.clone() });
                }
            }
            train_examples(&mixed, &train_cfg)?
        }
        Mode::TestTime => {
            let model = train_examples(&flatten(&data.train_raw), &train_cfg)?;
            let cal = data.test_cal.as_ref().ok_or_else(|| anyhow!("calibrated test data missing"))?;
            return Ok(accuracy(&model, &flatten(cal))?);
        }
        Mode::TransferLearning { n_frames } => {
            let base = train_examples(&flatten(&data.train_raw), &train_cfg)?;
            let mut small = Vec::new();
            for p in &data.pool {
                if p.len() < n_frames {
                    bail!("pool holds {} frames, transfer learning needs {n_frames}", p.len());
                }
                small.extend(flatten(&p[..n_frames]));
            }
            let ft = config.training.fine_tune_config(seed::derive(rep_seed, &[STREAM_FINE_TUNE]));
            fine_tune_examples(&base, &small, &ft)?
        }
    };
    Ok(accuracy(&model, &test_raw)?)
}
