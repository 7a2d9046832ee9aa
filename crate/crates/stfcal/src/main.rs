use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use stfcal::bench::{frame_examples, run_suite, ExperimentResult};
use stfcal::config::{scan_settings, ExperimentConfig, Mismatch, Mode, SuiteConfig};
use stfcal::{export, plot, urf};
use stfcal_core::firdes::{design_fir, frequency_response, PatchCalibrator};
use stfcal_core::learn::{accuracy, train_examples, Example};
use stfcal_core::rfcore::{depth_of_patch, extract_patches, FIRST_PATCH_START, PATCH_STEP};
use stfcal_core::simphantom::{simulate_calibration_pair_on, simulate_freehand};
use stfcal_core::spectral::{compute_depth_spectra, SpectrumEstimator};
use stfcal_core::transfer::build_calibration;
use stfcal_core::{CalibrationConfig, CalibrationMode, DepthSpectra, FrequencyGrid, RfFrame};

#[derive(Parser)]
#[command(name = "stfcal", version, about = "Setting-transfer-function calibration for ultrasound RF data")]
struct Cli {
    /// Experiment config (suite config for `suite`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the base seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomArg {
    Phantom1,
    Phantom2,
    Calibration,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate frames and write them as URF files.
    Simulate {
        #[arg(long, value_enum, default_value = "phantom1")]
        phantom: PhantomArg,
        #[arg(long, default_value_t = 9.0)]
        pulse_mhz: f64,
        /// Focal depths in cm; repeat for multiple foci.
        #[arg(long = "focus", default_values_t = [2.0])]
        foci: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        power_db: f64,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// One view for every frame, as in a stable calibration acquisition.
        #[arg(long)]
        stable: bool,
    },
    /// Build a transfer function from two directories of calibration frames.
    Calibrate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Design a band-pass FIR and export its taps and response.
    DesignFilter {
        #[arg(long, default_value_t = 1.0)]
        low_mhz: f64,
        #[arg(long, default_value_t = 10.0)]
        high_mhz: f64,
        #[arg(long, default_value_t = 151)]
        ntaps: usize,
        #[arg(long, default_value_t = 40.0)]
        fs_mhz: f64,
    },
    /// Cut frames into depth patches and export patch geometry and spectra.
    ExtractPatches {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a classifier on labelled frames.
    Train {
        /// Frame directories, typically one per phantom.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Apply train-time calibration with this transfer function.
        #[arg(long)]
        stf: Option<PathBuf>,
    },
    /// Accuracy of a model on labelled frames.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Apply test-time calibration with this transfer function.
        #[arg(long)]
        stf: Option<PathBuf>,
    },
    /// Run one experiment from --config.
    Experiment,
    /// Run a suite from --config and print the result table.
    Suite,
    /// Calibration plot data at one depth.
    Plot {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Depth index; defaults to the patch nearest 2 cm.
        #[arg(long)]
        depth: Option<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct ExperimentRecord {
    result: ExperimentResult,
    config: ExperimentConfig,
}

#[derive(Serialize)]
struct EvaluationRecord {
    model: String,
    data: String,
    calibrated: bool,
    n_patches: usize,
    accuracy: f64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Simulate { phantom, pulse_mhz, foci, power_db, frames, stable } => {
            let config = experiment_config(&cli, false)?;
            let sim = &config.simulator;
            let spec = match phantom {
                PhantomArg::Phantom1 => sim.phantoms[0].clone(),
                PhantomArg::Phantom2 => sim.phantoms[1].clone(),
                PhantomArg::Calibration => sim.calibration_phantom.clone(),
            };
            let settings = scan_settings(*pulse_mhz, foci, *power_db)?;
            let seed = config.seeds.base;
            let data = if *stable {
                simulate_calibration_pair_on(&spec, &settings, &settings, &sim.system, &sim.system, seed, *frames)?.0
            } else {
                simulate_freehand(&spec, &settings, &sim.system, seed, *frames)?
            };
            let paths = urf::save_frames(&cli.out, &data)?;
            println!("wrote {} frames of {} to {}", paths.len(), settings.label, cli.out.display());
        }
        Command::Calibrate { train, test } => {
            let config = experiment_config(&cli, false)?;
            let (a, b) = (load_frames(train)?, load_frames(test)?);
            let cc = CalibrationConfig { ntaps: config.simulator.ntaps, snr_mode: config.snr_mode };
            let stf = build_calibration(&a, &b, &cc)?;
            let path = cli.out.join("stf.toml");
            export::save_stf(&path, &stf)?;
            let (sa, sb) = (compute_depth_spectra(&a)?, compute_depth_spectra(&b)?);
            write_spectra(&cli.out.join("train_spectra.csv"), &sa)?;
            write_spectra(&cli.out.join("test_spectra.csv"), &sb)?;
            println!("{} -> {}: wrote {}", stf.from_label, stf.to_label, path.display());
        }
        Command::DesignFilter { low_mhz, high_mhz, ntaps, fs_mhz } => {
            if !(low_mhz < high_mhz) {
                bail!("empty band {low_mhz}..{high_mhz} MHz");
            }
            let freqs = FrequencyGrid::for_sampling_rate(*fs_mhz).freqs();
            let gains: Vec<f64> = freqs.iter().map(|f| if (*low_mhz..=*high_mhz).contains(f) { 1.0 } else { 0.0 }).collect();
            let filter = design_fir(&freqs, &gains, *ntaps, *fs_mhz)?;
            export::write_csv_file(&cli.out.join("filter_taps.csv"), |w| export::write_filter_csv(w, &filter))?;
            export::write_csv_file(&cli.out.join("filter_response.csv"), |w| export::write_response_csv(w, &filter, &freqs))?;
            let h = frequency_response(&filter, &[(low_mhz + high_mhz) / 2.0])?;
            println!("{ntaps} taps, gain {:.4} at band centre", h[0].norm());
        }
        Command::ExtractPatches { input } => {
            let frames = load_frames(input)?;
            let estimator = SpectrumEstimator::new(FrequencyGrid::for_sampling_rate(frames[0].settings.sampling_rate_mhz));
            for frame in &frames {
                let patches = extract_patches(frame)?;
                let stem = urf::frame_file_name(frame).trim_end_matches(".urf").to_string();
                let fs = frame.settings.sampling_rate_mhz;
                let mut geometry = String::from("depth_index,start_sample,depth_cm\n");
                for d in 0..patches.len() {
                    geometry.push_str(&format!("{d},{},{}\n", FIRST_PATCH_START + d * PATCH_STEP, depth_of_patch(d, fs)?));
                }
                std::fs::write(cli.out.join(format!("{stem}_patches.csv")), geometry)?;
                let spectra = DepthSpectra {
                    per_depth: patches.iter().map(|p| estimator.patch_average(p)).collect(),
                    settings_label: frame.settings.label.clone(),
                    n_frames_averaged: 1,
                };
                write_spectra(&cli.out.join(format!("{stem}_spectra.csv")), &spectra)?;
            }
            println!("{} frames, {} patches each", frames.len(), extract_patches(&frames[0])?.len());
        }
        Command::Train { data, stf } => {
            let config = experiment_config(&cli, false)?;
            let calibrator = calibrator(stf.as_deref(), CalibrationMode::TrainTime)?;
            let examples = examples(&load_all(data)?, calibrator.as_ref())?;
            let model = train_examples(&examples, &config.training.train_config(config.seeds.base))?;
            let path = cli.out.join("model.toml");
            export::save_model(&path, &model)?;
            println!("trained on {} patches, training accuracy {:.4}; wrote {}", examples.len(), accuracy(&model, &examples)?, path.display());
        }
        Command::Evaluate { model, data, stf } => {
            let m = export::load_model(model)?;
            let calibrator = calibrator(stf.as_deref(), CalibrationMode::TestTime)?;
            let examples = examples(&load_all(data)?, calibrator.as_ref())?;
            let record = EvaluationRecord {
                model: model.display().to_string(),
                data: data.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(","),
                calibrated: calibrator.is_some(),
                n_patches: examples.len(),
                accuracy: accuracy(&m, &examples)?,
            };
            export::save_toml(&cli.out.join("evaluation.toml"), &record)?;
            println!("accuracy {:.4} on {} patches", record.accuracy, record.n_patches);
        }
        Command::Experiment => {
            let config = experiment_config(&cli, true)?;
            let outcome = run_suite(std::slice::from_ref(&config))?;
            let table = outcome.table();
            let entry = &outcome.entries[0];
            let Some(result) = entry.result.clone() else {
                bail!("experiment failed: {}", entry.error.as_deref().unwrap_or("unknown error"));
            };
            export::save_toml(&cli.out.join("result.toml"), &ExperimentRecord { result, config })?;
            std::fs::write(cli.out.join("table.txt"), &table)?;
            print!("{table}");
        }
        Command::Suite => {
            let mut suite = match &cli.config {
                Some(path) => SuiteConfig::load(path)?,
                None => bail!("suite needs --config"),
            };
            if let Some(seed) = cli.seed {
                suite.seeds.base = seed;
            }
            let outcome = run_suite(&suite.expand())?;
            let table = outcome.table();
            export::save_toml(&cli.out.join("suite_results.toml"), &outcome)?;
            std::fs::write(cli.out.join("table.txt"), &table)?;
            print!("{table}");
            println!("wall time {:.1} s", outcome.wall_time_s);
        }
        Command::Plot { train, test, depth } => {
            let config = experiment_config(&cli, false)?;
            let (a, b) = (load_frames(train)?, load_frames(test)?);
            let cc = CalibrationConfig { ntaps: config.simulator.ntaps, snr_mode: config.snr_mode };
            let stf = build_calibration(&a, &b, &cc)?;
            let (sa, sb) = (compute_depth_spectra(&a)?, compute_depth_spectra(&b)?);
            let depth = depth.unwrap_or_else(|| plot::default_depth_index(a[0].settings.sampling_rate_mhz));
            let (csv, svg) = plot::emit_calibration_plots(&stf, (&sa, &sb), depth, &cli.out)?;
            println!("wrote {} and {}", csv.display(), svg.display());
        }
    }
    Ok(())
}

/// The --config experiment or the defaults, with --seed applied.
fn experiment_config(cli: &Cli, required: bool) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if required => bail!("this command needs --config"),
        None => ExperimentConfig::new(Mismatch::PulseFrequency, Mode::Benchmark),
    };
    if let Some(seed) = cli.seed {
        config.seeds.base = seed;
    }
    config.validate()?;
    Ok(config)
}

fn load_frames(dir: &Path) -> Result<Vec<RfFrame>> {
    let frames = urf::load_dir(dir)?;
    if frames.is_empty() {
        bail!("no .urf frames in {}", dir.display());
    }
    Ok(frames)
}

fn load_all(dirs: &[PathBuf]) -> Result<Vec<RfFrame>> {
    let mut frames = Vec::new();
    for d in dirs {
        frames.extend(load_frames(d)?);
    }
    Ok(frames)
}

fn write_spectra(path: &Path, spectra: &DepthSpectra) -> Result<()> {
    export::write_csv_file(path, |w| export::write_depth_spectra_csv(w, spectra))
}

fn calibrator(stf: Option<&Path>, mode: CalibrationMode) -> Result<Option<PatchCalibrator>> {
    stf.map(|p| Ok(PatchCalibrator::new(&export::load_stf(p)?, mode)?)).transpose()
}

fn examples(frames: &[RfFrame], calibrator: Option<&PatchCalibrator>) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for frame in frames {
        out.extend(frame_examples(frame, calibrator)?);
    }
    Ok(out)
}
