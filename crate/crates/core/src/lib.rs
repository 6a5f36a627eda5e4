//! Calibration toolkit for electron-multiplying CCD cameras.
//!
//! The crate simulates an EMCCD illuminated by spatially correlated twin
//! beams, fits the detector noise model to frame histograms and measures the
//! absolute detection efficiency from the quantum correlations of the two
//! beams, both in the analog and in the photon-counting regime.
//!
//! * [`model`]: densities and tail probabilities of the camera output.
//! * [`source`]: twin-beam photoelectron maps and their analytic moments.
//! * [`readout`]: rendering of photoelectrons into counts, thresholding.
//! * [`estim`]: histogram fits and the efficiency estimators.
//! * [`frameio`]: the EMF1 frame file format, CSV tables and SVG plots.
//! * [`cli`]: the `emccd-cal` command line.

pub mod cli;
pub mod error;
pub mod estim;
pub mod frameio;
pub mod model;
pub mod quad;
pub mod readout;
pub mod rng;
pub mod source;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
