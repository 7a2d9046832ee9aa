//! Calibration plots: a CSV of the curves at one depth plus a two-panel SVG.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stfcal_core::firdes::frequency_response;
use stfcal_core::rfcore::nearest_depth_index;
use stfcal_core::{DepthSpectra, SettingTransferFunction};

pub const DEFAULT_PLOT_DEPTH_CM: f64 = 2.0;

/// Depth index of the patch closest to 2 cm.
pub fn default_depth_index(sampling_rate_mhz: f64) -> usize {
    nearest_depth_index(DEFAULT_PLOT_DEPTH_CM, sampling_rate_mhz)
}

/// One row per frequency bin at a single depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurves {
    pub depth_index: usize,
    pub freq_mhz: Vec<f64>,
    pub w_train: Vec<f64>,
    pub w_test: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Train-direction regularized gain, the one applied to training data.
    pub gamma_wiener: Vec<f64>,
    pub fir_response_magnitude: Vec<f64>,
}

pub fn calibration_curves(
    stf: &SettingTransferFunction,
    spectra: (&DepthSpectra, &DepthSpectra),
    depth_index: usize,
) -> Result<CalibrationCurves> {
    let depth = stf.depth(depth_index)?;
    let (train, test) = spectra;
    let (Some(w_train), Some(w_test)) = (train.per_depth.get(depth_index), test.per_depth.get(depth_index)) else {
        bail!("depth index {depth_index} outside the spectra ({} depths)", train.per_depth.len().min(test.per_depth.len()));
    };
    let n = depth.gamma.len();
    if w_train.values.len() != n || w_test.values.len() != n {
        bail!("spectra have {} and {} bins, transfer has {n}", w_train.values.len(), w_test.values.len());
    }
    let freq_mhz = depth.snr.grid.freqs();
    let fir_response_magnitude = frequency_response(&depth.fir_train, &freq_mhz)?.iter().map(|z| z.norm()).collect();
    Ok(CalibrationCurves {
        depth_index,
        freq_mhz,
        w_train: w_train.values.clone(),
        w_test: w_test.values.clone(),
        gamma: depth.gamma.clone(),
        gamma_wiener: depth.gamma_wiener_train.clone(),
        fir_response_magnitude,
    })
}

pub fn write_curves_csv<W: Write>(mut w: W, c: &CalibrationCurves) -> Result<()> {
    writeln!(w, "freq_mhz,w_train,w_test,gamma,gamma_wiener,fir_response_magnitude")?;
    for k in 0..c.freq_mhz.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.freq_mhz[k], c.w_train[k], c.w_test[k], c.gamma[k], c.gamma_wiener[k], c.fir_response_magnitude[k]
        )?;
    }
    Ok(())
}

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Panel {
    fn point(&self, x: f64, y: f64) -> (f64, f64) {
        let y = y.clamp(self.ymin, self.ymax);
        (
            self.x0 + self.w * x / self.xmax,
            self.y0 + self.h * (1.0 - (y - self.ymin) / (self.ymax - self.ymin)),
        )
    }

    fn frame(&self, svg: &mut String, title: &str, ylabel: &str) {
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{title}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 - 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">Frequency (MHz)</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 35.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" text-anchor="middle" font-size="12" transform="rotate(-90 {x} {y})">{ylabel}</text>"#,
            x = self.x0 - 45.0,
            y = self.y0 + self.h / 2.0
        );
        for i in 0..=4 {
            let f = self.xmax * i as f64 / 4.0;
            let (x, _) = self.point(f, self.ymin);
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{}" text-anchor="middle" font-size="10">{f:.0}</text>"#,
                self.y0 + self.h + 15.0
            );
            let v = self.ymin + (self.ymax - self.ymin) * i as f64 / 4.0;
            let (_, y) = self.point(0.0, v);
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{v:.2}</text>"#,
                self.x0 - 5.0,
                y + 3.0
            );
        }
    }

    fn line(&self, svg: &mut String, xs: &[f64], ys: &[f64], colour: &str, dash: &str) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let (px, py) = self.point(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" stroke-dasharray="{dash}" points="{}"/>"#,
            pts.join(" ")
        );
    }

    fn legend(&self, svg: &mut String, entries: &[(&str, &str)]) {
        for (i, (name, colour)) in entries.iter().enumerate() {
            let y = self.y0 + 15.0 + 16.0 * i as f64;
            let x = self.x0 + self.w - 150.0;
            let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{colour}" stroke-width="2"/>"#, x + 20.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11">{name}</text>"#, x + 25.0, y + 4.0);
        }
    }
}

fn db(values: &[f64], reference: f64) -> Vec<f64> {
    values.iter().map(|&v| 10.0 * (v.max(1e-30) / reference).log10()).collect()
}

pub fn render_svg(c: &CalibrationCurves) -> String {
    let xmax = c.freq_mhz.last().copied().unwrap_or(1.0).max(1e-9);
    let reference = c.w_train.iter().chain(&c.w_test).fold(1e-30_f64, |a, &b| a.max(b));
    let train_db = db(&c.w_train, reference);
    let test_db = db(&c.w_test, reference);
    let gain_max = c
        .gamma
        .iter()
        .chain(&c.gamma_wiener)
        .chain(&c.fir_response_magnitude)
        .zip(c.freq_mhz.iter().cycle())
        .filter(|(_, &f)| (2.0..=7.5).contains(&f))
        .fold(1.0_f64, |a, (&g, _)| a.max(g));

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="1000" height="420" font-family="sans-serif">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let left = Panel { x0: 70.0, y0: 40.0, w: 380.0, h: 320.0, xmax, ymin: -80.0, ymax: 0.0 };
    left.frame(&mut svg, &format!("Power spectra, depth {}", c.depth_index), "Power (dB)");
    left.line(&mut svg, &c.freq_mhz, &train_db, "#1f77b4", "none");
    left.line(&mut svg, &c.freq_mhz, &test_db, "#d62728", "none");
    left.legend(&mut svg, &[("W_train", "#1f77b4"), ("W_test", "#d62728")]);

    let right = Panel { x0: 580.0, y0: 40.0, w: 380.0, h: 320.0, xmax, ymin: 0.0, ymax: (gain_max * 1.2).ceil() };
    right.frame(&mut svg, "Transfer function", "Magnitude");
    right.line(&mut svg, &c.freq_mhz, &c.gamma, "#2ca02c", "none");
    right.line(&mut svg, &c.freq_mhz, &c.gamma_wiener, "#9467bd", "6,3");
    right.line(&mut svg, &c.freq_mhz, &c.fir_response_magnitude, "#ff7f0e", "2,2");
    right.legend(&mut svg, &[("Gamma", "#2ca02c"), ("Gamma Wiener", "#9467bd"), ("FIR response", "#ff7f0e")]);
    svg.push_str("</svg>\n");
    svg
}

/// Writes `calibration_depth<NN>.csv` and `.svg` into `dir` and returns both paths.
pub fn emit_calibration_plots(
    stf: &SettingTransferFunction,
    spectra: (&DepthSpectra, &DepthSpectra),
    depth_index: usize,
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let curves = calibration_curves(stf, spectra, depth_index)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = format!("calibration_depth{depth_index:02}");
    let csv = dir.join(format!("{stem}.csv"));
    let svg = dir.join(format!("{stem}.svg"));
    let mut buf = Vec::new();
    write_curves_csv(&mut buf, &curves)?;
    std::fs::write(&csv, buf).with_context(|| format!("writing {}", csv.display()))?;
    std::fs::write(&svg, render_svg(&curves)).with_context(|| format!("writing {}", svg.display()))?;
    Ok((csv, svg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use stfcal_core::spectral::{FrequencyGrid, SnrProfile};
    use stfcal_core::PowerSpectrum;

    fn spectra(scale: f64) -> DepthSpectra {
        let g = FrequencyGrid::default();
        let w = PowerSpectrum::new(g, g.freqs().iter().map(|f| scale * (-(f - 6.0) * (f - 6.0) / 8.0).exp()).collect()).unwrap();
        DepthSpectra { per_depth: vec![w; 12], settings_label: "x".into(), n_frames_averaged: 1 }
    }

    #[test]
    fn identity_curves_are_flat() {
        let s = spectra(1.0);
        let g = FrequencyGrid::default();
        let stf = SettingTransferFunction::uniform(vec![1.0; 129], SnrProfile::constant(g, 1e9), 151, "a", "a").unwrap();
        let c = calibration_curves(&stf, (&s, &s), 5).unwrap();
        for k in g.band(2.0, 7.5) {
            assert!((c.gamma[k] - 1.0).abs() < 1e-12);
            assert!((c.gamma_wiener[k] - 1.0).abs() < 1e-6);
            assert!((c.fir_response_magnitude[k] - 1.0).abs() < 0.02);
        }
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &c).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 130);
    }

    #[test]
    fn emits_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = spectra(1.0);
        let g = FrequencyGrid::default();
        let stf = SettingTransferFunction::uniform(vec![0.5; 129], SnrProfile::constant(g, 1e6), 151, "a", "b").unwrap();
        let (csv, svg) = emit_calibration_plots(&stf, (&s, &spectra(0.25)), default_depth_index(40.0), dir.path()).unwrap();
        assert!(csv.ends_with("calibration_depth05.csv"));
        let text = std::fs::read_to_string(svg).unwrap();
        assert!(text.starts_with("<svg") && text.matches("<polyline").count() == 5);
        assert!(calibration_curves(&stf, (&s, &s), 12).is_err());
    }
}
