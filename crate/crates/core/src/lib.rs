//! Setting-transfer-function calibration for deep-learning tissue
//! classification on raw ultrasound RF data.
//!
//! The crate is `no_std` (it needs `alloc`). It holds the numerical pieces:
//!
//! * [`rfcore`]: RF frames, patches, scanner settings, patch geometry and
//!   frame splitting.
//! * [`spectral`]: axial power spectra, depth-dependent calibration spectra,
//!   noise floor and SNR estimation.
//! * [`transfer`]: setting transfer functions and their Wiener-regularized
//!   forms for train-time and test-time calibration.
//! * [`firdes`]: linear-phase FIR synthesis by frequency sampling, 'same'
//!   convolution and patch filtering.
//! * [`simphantom`]: a parametric RF simulator for tissue-mimicking phantoms.
//! * [`learn`]: log-spectral features, softmax regression, Adam.
//!
//! File formats, the experiment harness and the CLI live in the `stfcal`
//! companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod error;
pub mod fft;
pub mod firdes;
pub mod learn;
pub mod rfcore;
pub mod seed;
pub mod simphantom;
pub mod spectral;
pub mod transfer;

pub use error::{Error, Result};
pub use firdes::{CalibrationMode, FirFilter};
pub use learn::{ClassifierModel, FeatureVector, TrainConfig};
pub use rfcore::{LabeledPatchSet, Patch, RfFrame, ScanSettings, SplitTag};
pub use simphantom::{PhantomSpec, SystemModel};
pub use spectral::{DepthSpectra, FrequencyGrid, PowerSpectrum, SnrMode, SnrProfile};
pub use transfer::{CalibrationConfig, SettingTransferFunction};
