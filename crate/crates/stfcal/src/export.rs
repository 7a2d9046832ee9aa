//! CSV exports and TOML persistence of calibrations and models.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use stfcal_core::firdes::frequency_response;
use stfcal_core::{ClassifierModel, DepthSpectra, FirFilter, PowerSpectrum, SettingTransferFunction};

pub fn write_spectrum_csv<W: Write>(mut w: W, spectrum: &PowerSpectrum) -> Result<()> {
    writeln!(w, "freq_mhz,power")?;
    for (k, v) in spectrum.values.iter().enumerate() {
        writeln!(w, "{},{}", spectrum.grid.freq(k), v)?;
    }
    Ok(())
}

/// All depths stacked, one row per bin and depth.
pub fn write_depth_spectra_csv<W: Write>(mut w: W, spectra: &DepthSpectra) -> Result<()> {
    writeln!(w, "freq_mhz,power,depth_index")?;
    for (d, s) in spectra.per_depth.iter().enumerate() {
        for (k, v) in s.values.iter().enumerate() {
            writeln!(w, "{},{},{}", s.grid.freq(k), v, d)?;
        }
    }
    Ok(())
}

pub fn write_filter_csv<W: Write>(mut w: W, filter: &FirFilter) -> Result<()> {
    writeln!(w, "tap_index,value")?;
    for (i, t) in filter.taps().iter().enumerate() {
        writeln!(w, "{i},{t}")?;
    }
    Ok(())
}

pub fn write_response_csv<W: Write>(mut w: W, filter: &FirFilter, freqs_mhz: &[f64]) -> Result<()> {
    let h = frequency_response(filter, freqs_mhz)?;
    writeln!(w, "freq_mhz,magnitude,phase_rad")?;
    for (f, z) in freqs_mhz.iter().zip(&h) {
        writeln!(w, "{},{},{}", f, z.norm(), z.arg())?;
    }
    Ok(())
}

pub fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub fn save_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn check_filter(f: &FirFilter) -> Result<()> {
    FirFilter::from_taps(f.taps().to_vec(), f.sampling_rate_mhz)?;
    Ok(())
}

pub fn save_stf(path: &Path, stf: &SettingTransferFunction) -> Result<()> {
    save_toml(path, stf)
}

/// Loads a transfer function and re-checks what deserialization skips.
pub fn load_stf(path: &Path) -> Result<SettingTransferFunction> {
    let stf: SettingTransferFunction = load_toml(path)?;
    if stf.per_depth.is_empty() {
        bail!("{}: no depths", path.display());
    }
    for d in &stf.per_depth {
        let n = d.snr.grid.n_bins;
        if [d.gamma.len(), d.gamma_wiener_train.len(), d.gamma_wiener_test.len(), d.snr.snr.len()]
            .iter()
            .any(|&l| l != n)
        {
            bail!("{}: array lengths disagree with the {n}-bin grid", path.display());
        }
        check_filter(&d.fir_train)?;
        check_filter(&d.fir_test)?;
    }
    Ok(stf)
}

pub fn save_model(path: &Path, model: &ClassifierModel) -> Result<()> {
    save_toml(path, model)
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    let model: ClassifierModel = load_toml(path)?;
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stfcal_core::firdes::denoising_filter;
    use stfcal_core::FrequencyGrid;

    #[test]
    fn spectrum_csv_shape() {
        let s = PowerSpectrum::zeros(FrequencyGrid::default());
        let mut out = Vec::new();
        write_spectrum_csv(&mut out, &s).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "freq_mhz,power");
        assert_eq!(lines.len(), 130);
        assert_eq!(lines[2], "0.15625,0");
        assert_eq!(lines[129], "20,0");
    }

    #[test]
    fn filter_csv_and_response() {
        let f = denoising_filter(40.0).unwrap();
        let mut out = Vec::new();
        write_filter_csv(&mut out, &f).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 152);
        let mut out = Vec::new();
        write_response_csv(&mut out, &f, &[0.0, 5.0, 20.0]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let row: Vec<f64> = text.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0], 5.0);
        assert!((row[1] - 1.0).abs() < 0.02);
        let mut out = Vec::new();
        assert!(write_response_csv(&mut out, &f, &[25.0]).is_err());
    }

    #[test]
    fn model_toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        let mut m = ClassifierModel::zeros(2, 3);
        m.weights = vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0, 0.0, -1e300];
        m.config_digest = "abc".into();
        save_model(&p, &m).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
        std::fs::write(&p, "n_classes = 2\nn_features = 3\nweights = [1.0]\nconfig_digest = \"\"\n").unwrap();
        assert!(load_model(&p).is_err());
    }
}
