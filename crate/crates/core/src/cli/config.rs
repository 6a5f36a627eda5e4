//! Run configuration.
//!
//! A run is described by one JSON document with the top-level keys
//! `detector`, `source`, `seed`, `regions`, `threshold_grid` and
//! `output_dir`. Unknown keys are rejected at every level.
//!
//! The `source` block describes the dim twin-beam run used for photon
//! counting. Optional sub-blocks `dark`, `gain` and `analog` describe the
//! other acquisitions; their `width` and `height` are beam sizes as for the
//! counting run (the camera frame is twice as wide) and default to it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estim::{Rect, RegionPair};
use crate::model::{EmccdParams, Threshold};
use crate::source::SourceParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Simulation truth. The photoelectron yield of the beams is set by
    /// `source.eta1` and `source.eta2`; `eta0` is only recorded.
    pub detector: EmccdParams,
    pub source: SourceConfig,
    pub seed: u64,
    pub regions: RegionsConfig,
    pub threshold_grid: Vec<f64>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub modes_per_pair: u32,
    pub mean_per_mode: f64,
    pub eta1: f64,
    pub eta2: f64,
    #[serde(default)]
    pub crosstalk: f64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default)]
    pub dark: DarkRun,
    #[serde(default)]
    pub gain: GainRun,
    #[serde(default)]
    pub analog: AnalogRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarkRun {
    pub width: Option<usize>,
    pub height: Option<usize>,
    #[serde(default = "default_fit_frames")]
    pub frames: usize,
}

/// Uniform dim illumination for the gain fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainRun {
    pub width: Option<usize>,
    pub height: Option<usize>,
    #[serde(default = "default_fit_frames")]
    pub frames: usize,
    /// Mean photoelectrons per pixel per frame.
    #[serde(default = "default_gain_mean")]
    pub mean_photoelectrons: f64,
}

/// Bright twin-beam run read out in the proportional regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalogRun {
    pub width: Option<usize>,
    pub height: Option<usize>,
    #[serde(default = "default_analog_frames")]
    pub frames: usize,
    /// Mean photoelectrons per pixel per frame in beam 1.
    #[serde(default = "default_analog_mean")]
    pub mean_photoelectrons: f64,
    #[serde(default = "default_analog_modes")]
    pub modes_per_pair: u32,
}

fn default_fit_frames() -> usize {
    35
}
fn default_gain_mean() -> f64 {
    0.1
}
fn default_analog_frames() -> usize {
    1000
}
fn default_analog_mean() -> f64 {
    5.0
}
fn default_analog_modes() -> u32 {
    10_000
}

impl Default for DarkRun {
    fn default() -> Self {
        DarkRun {
            width: None,
            height: None,
            frames: default_fit_frames(),
        }
    }
}

impl Default for GainRun {
    fn default() -> Self {
        GainRun {
            width: None,
            height: None,
            frames: default_fit_frames(),
            mean_photoelectrons: default_gain_mean(),
        }
    }
}

impl Default for AnalogRun {
    fn default() -> Self {
        AnalogRun {
            width: None,
            height: None,
            frames: default_analog_frames(),
            mean_photoelectrons: default_analog_mean(),
            modes_per_pair: default_analog_modes(),
        }
    }
}

/// Camera frame of an acquisition: `(frame width, frame height, frames)`.
pub type FrameShape = (usize, usize, usize);

impl SourceConfig {
    /// The dim twin-beam run.
    pub fn counting(&self) -> SourceParams {
        SourceParams {
            modes_per_pair: self.modes_per_pair,
            mean_per_mode: self.mean_per_mode,
            eta1: self.eta1,
            eta2: self.eta2,
            crosstalk: self.crosstalk,
            width: self.width,
            height: self.height,
            frames: self.frames,
        }
    }

    /// The bright run, with the mean photon number per mode chosen so that
    /// beam 1 collects `mean_photoelectrons` per pixel.
    pub fn analog(&self) -> Result<SourceParams> {
        let a = &self.analog;
        if !(a.mean_photoelectrons > 0.0 && a.mean_photoelectrons.is_finite()) {
            return Err(Error::invalid("analog mean_photoelectrons must be > 0"));
        }
        if self.eta1 <= 0.0 {
            return Err(Error::invalid("an analog run needs eta1 > 0"));
        }
        if a.modes_per_pair == 0 {
            return Err(Error::invalid("analog modes_per_pair must be >= 1"));
        }
        let p = SourceParams {
            modes_per_pair: a.modes_per_pair,
            mean_per_mode: a.mean_photoelectrons / (self.eta1 * a.modes_per_pair as f64),
            width: a.width.unwrap_or(self.width),
            height: a.height.unwrap_or(self.height),
            frames: a.frames,
            ..self.counting()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dark_shape(&self) -> FrameShape {
        let d = &self.dark;
        (
            2 * d.width.unwrap_or(self.width),
            d.height.unwrap_or(self.height),
            d.frames,
        )
    }

    pub fn gain_shape(&self) -> FrameShape {
        let g = &self.gain;
        (
            2 * g.width.unwrap_or(self.width),
            g.height.unwrap_or(self.height),
            g.frames,
        )
    }
}

/// Correlated areas. By default a square of up to 100×100 pixels centred in
/// beam 1 is paired pixel by pixel with its point reflection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsConfig {
    /// Beam-1 rectangle in camera coordinates.
    #[serde(default)]
    pub beam1: Option<Rect>,
    /// Explicit beam-2 rectangle. When given, the two rectangles are
    /// compared as whole-region sums instead of the conjugate pairing.
    #[serde(default)]
    pub beam2: Option<Rect>,
    /// Side of the conjugate cells in pixels; 0 treats the whole rectangle
    /// as one cell. Defaults to 1.
    #[serde(default)]
    pub cell: Option<usize>,
    /// Overrides the geometric factor computed from the pairing.
    #[serde(default)]
    pub geometric_factor: Option<f64>,
}

const DEFAULT_REGION: usize = 100;

impl RegionsConfig {
    pub fn pair(&self, frame_width: usize, frame_height: usize) -> Result<RegionPair> {
        let beam1 = match self.beam1 {
            Some(r) => r,
            None => {
                let half = frame_width / 2;
                let size = DEFAULT_REGION.min(half).min(frame_height);
                if size == 0 {
                    return Err(Error::EmptyRegion);
                }
                Rect::new((half - size) / 2, (frame_height - size) / 2, size, size)
            }
        };
        match (self.beam2, self.cell) {
            (Some(_), Some(c)) if c != 0 => Err(Error::invalid(
                "cell tiling applies to the conjugate pairing only; drop regions.cell or regions.beam2",
            )),
            (Some(beam2), _) => RegionPair::from_rects(frame_width, frame_height, beam1, beam2),
            (None, cell) => {
                let cell = match cell.unwrap_or(1) {
                    0 => None,
                    k => Some(k),
                };
                RegionPair::conjugate(frame_width, frame_height, beam1, cell)
            }
        }
    }

    /// The configured override, or the factor implied by the pairing.
    pub fn factor(&self, pair: &RegionPair, crosstalk: f64) -> Result<f64> {
        match self.geometric_factor {
            Some(a) => Ok(a),
            None => pair.geometric_factor(crosstalk),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.source.counting().validate()?;
        for (name, (w, h, _)) in [
            ("dark", self.source.dark_shape()),
            ("gain", self.source.gain_shape()),
        ] {
            if w == 0 || h == 0 {
                return Err(Error::invalid(format!(
                    "{name} frames must be at least 1x1"
                )));
            }
        }
        if self.threshold_grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("threshold_grid holds a non-finite value"));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<Threshold> {
        self.threshold_grid.iter().map(|&t| Threshold(t)).collect()
    }
}
