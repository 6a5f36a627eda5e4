//! Rendering of photoelectron maps into ADC counts, and threshold
//! discrimination.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{sample_em_output, EmccdParams, Threshold};
use crate::rng::{substream, Purpose};
use crate::source::{generate_pair, SourceParams};

pub const MAX_COUNTS: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Photoelectrons,
    Counts,
    Clicks,
}

impl FrameKind {
    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Photoelectrons => "photoelectrons",
            FrameKind::Counts => "counts",
            FrameKind::Clicks => "clicks",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameData {
    Photoelectrons(Vec<u32>),
    Counts(Vec<u16>),
    /// 0/1 per pixel.
    Clicks(Vec<u8>),
}

impl FrameData {
    pub fn len(&self) -> usize {
        match self {
            FrameData::Photoelectrons(v) => v.len(),
            FrameData::Counts(v) => v.len(),
            FrameData::Clicks(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A stack of `n_frames` row-major `width × height` frames stored frame after frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStack {
    width: usize,
    height: usize,
    data: FrameData,
}

impl FrameStack {
    pub fn new(width: usize, height: usize, data: FrameData) -> Result<Self> {
        let frame = width * height;
        if frame == 0 && !data.is_empty() {
            return Err(Error::invalid("zero-sized frames cannot hold data"));
        }
        if frame > 0 && !data.len().is_multiple_of(frame) {
            return Err(Error::invalid(format!(
                "data length {} is not a multiple of the frame size {width}x{height}",
                data.len()
            )));
        }
        if let FrameData::Clicks(v) = &data {
            if v.iter().any(|&c| c > 1) {
                return Err(Error::invalid("click frames may only contain 0 and 1"));
            }
        }
        Ok(FrameStack {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height
    }

    pub fn n_frames(&self) -> usize {
        match self.frame_len() {
            0 => 0,
            f => self.data.len() / f,
        }
    }

    pub fn kind(&self) -> FrameKind {
        match self.data {
            FrameData::Photoelectrons(_) => FrameKind::Photoelectrons,
            FrameData::Counts(_) => FrameKind::Counts,
            FrameData::Clicks(_) => FrameKind::Clicks,
        }
    }

    pub fn data(&self) -> &FrameData {
        &self.data
    }

    pub fn into_data(self) -> FrameData {
        self.data
    }

    pub fn counts(&self) -> Result<&[u16]> {
        match &self.data {
            FrameData::Counts(v) => Ok(v),
            _ => Err(self.wrong_kind(FrameKind::Counts)),
        }
    }

    pub fn clicks(&self) -> Result<&[u8]> {
        match &self.data {
            FrameData::Clicks(v) => Ok(v),
            _ => Err(self.wrong_kind(FrameKind::Clicks)),
        }
    }

    pub fn photoelectrons(&self) -> Result<&[u32]> {
        match &self.data {
            FrameData::Photoelectrons(v) => Ok(v),
            _ => Err(self.wrong_kind(FrameKind::Photoelectrons)),
        }
    }

    fn wrong_kind(&self, expected: FrameKind) -> Error {
        Error::WrongKind {
            expected: expected.name(),
            found: self.kind().name(),
        }
    }
}

/// How charge is converted into counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadoutMode {
    /// Stochastic multiplication register plus clock-induced charge.
    #[default]
    ElectronMultiplying,
    /// Analog regime: the register is bypassed, each photoelectron
    /// contributes exactly `g` counts and no spurious charge is produced.
    Proportional,
}

fn quantize(x: f64) -> u16 {
    x.round().clamp(0.0, MAX_COUNTS as f64) as u16
}

/// Renders one photoelectron map through the electron-multiplying chain.
pub fn render_frame<R: Rng + ?Sized>(
    pe: &[u32],
    params: &EmccdParams,
    rng: &mut R,
) -> Result<Vec<u16>> {
    render_frame_with(pe, params, ReadoutMode::ElectronMultiplying, rng)
}

pub fn render_frame_with<R: Rng + ?Sized>(
    pe: &[u32],
    params: &EmccdParams,
    mode: ReadoutMode,
    rng: &mut R,
) -> Result<Vec<u16>> {
    params.validate()?;
    let read = Normal::new(params.mu, params.sigma).expect("validated sigma");
    let cic = Exp::new(1.0 / params.g_sc).expect("validated g_sc");
    let out = pe
        .iter()
        .map(|&n| {
            let mut x = match mode {
                ReadoutMode::ElectronMultiplying => {
                    let mut x = sample_em_output(n, params.g, rng).expect("validated gain");
                    if params.p_sc > 0.0 && rng.random::<f64>() < params.p_sc {
                        x += cic.sample(rng);
                    }
                    x
                }
                ReadoutMode::Proportional => n as f64 * params.g,
            };
            x += read.sample(rng);
            quantize(x)
        })
        .collect();
    Ok(out)
}

/// Dark frames: `render_frame` applied to all-zero photoelectron maps.
/// Frame `i` uses the substream `(seed, Dark, i)`.
pub fn render_dark_stack(
    width: usize,
    height: usize,
    n_frames: usize,
    params: &EmccdParams,
    seed: u64,
) -> Result<FrameStack> {
    params.validate()?;
    if n_frames > 0 && (width == 0 || height == 0) {
        return Err(Error::invalid("frame dimensions must be > 0"));
    }
    let zeros = vec![0u32; width * height];
    let frames: Vec<Vec<u16>> = (0..n_frames)
        .into_par_iter()
        .map(|i| {
            render_frame(
                &zeros,
                params,
                &mut substream(seed, Purpose::Dark, i as u64),
            )
        })
        .collect::<Result<_>>()?;
    FrameStack::new(width, height, FrameData::Counts(frames.concat()))
}

/// Renders every frame of a photoelectron stack; frame `i` uses `(seed, Readout, i)`.
pub fn render_stack(
    pe: &FrameStack,
    params: &EmccdParams,
    mode: ReadoutMode,
    seed: u64,
) -> Result<FrameStack> {
    let data = pe.photoelectrons()?;
    let n = pe.frame_len();
    let frames: Vec<Vec<u16>> = (0..pe.n_frames())
        .into_par_iter()
        .map(|i| {
            render_frame_with(
                &data[i * n..(i + 1) * n],
                params,
                mode,
                &mut substream(seed, Purpose::Readout, i as u64),
            )
        })
        .collect::<Result<_>>()?;
    FrameStack::new(pe.width(), pe.height(), FrameData::Counts(frames.concat()))
}

/// Twin-beam photoelectron camera frames (`2·width × height`), frame `i`
/// drawn from `(seed, Source, i)`.
pub fn twin_beam_photoelectrons(source: &SourceParams, seed: u64) -> Result<FrameStack> {
    source.validate()?;
    let frames: Vec<Vec<u32>> = (0..source.frames)
        .into_par_iter()
        .map(|i| {
            generate_pair(source, i, &mut substream(seed, Purpose::Source, i as u64))
                .map(|p| p.to_camera_frame())
        })
        .collect::<Result<_>>()?;
    FrameStack::new(
        source.frame_width(),
        source.height,
        FrameData::Photoelectrons(frames.concat()),
    )
}

/// Generates and renders twin-beam frames in one pass without keeping the
/// photoelectron maps. Identical to `render_stack(twin_beam_photoelectrons(..))`.
pub fn render_twin_beam_stack(
    source: &SourceParams,
    params: &EmccdParams,
    mode: ReadoutMode,
    seed: u64,
) -> Result<FrameStack> {
    source.validate()?;
    params.validate()?;
    let frames: Vec<Vec<u16>> = (0..source.frames)
        .into_par_iter()
        .map(|i| {
            let pair = generate_pair(source, i, &mut substream(seed, Purpose::Source, i as u64))?;
            render_frame_with(
                &pair.to_camera_frame(),
                params,
                mode,
                &mut substream(seed, Purpose::Readout, i as u64),
            )
        })
        .collect::<Result<_>>()?;
    FrameStack::new(
        source.frame_width(),
        source.height,
        FrameData::Counts(frames.concat()),
    )
}

/// Uniformly illuminated frames: every pixel receives a Poisson number of
/// photoelectrons with mean `mean_pe`, read through the electron-multiplying
/// chain. Frame `i` draws both from `(seed, Gain, i)`.
pub fn render_flat_field_stack(
    width: usize,
    height: usize,
    n_frames: usize,
    mean_pe: f64,
    params: &EmccdParams,
    seed: u64,
) -> Result<FrameStack> {
    params.validate()?;
    if !(mean_pe >= 0.0 && mean_pe.is_finite()) {
        return Err(Error::invalid(format!(
            "mean photoelectrons must be >= 0, got {mean_pe}"
        )));
    }
    if n_frames > 0 && (width == 0 || height == 0) {
        return Err(Error::invalid("frame dimensions must be > 0"));
    }
    let poisson = (mean_pe > 0.0).then(|| Poisson::new(mean_pe).expect("positive mean"));
    let frames: Vec<Vec<u16>> = (0..n_frames)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Purpose::Gain, i as u64);
            let pe: Vec<u32> = (0..width * height)
                .map(|_| poisson.as_ref().map_or(0, |d| d.sample(&mut rng) as u32))
                .collect();
            render_frame(&pe, params, &mut rng)
        })
        .collect::<Result<_>>()?;
    FrameStack::new(width, height, FrameData::Counts(frames.concat()))
}

/// Photon-counting discrimination: a pixel clicks when `counts > T`.
pub fn apply_threshold(stack: &FrameStack, t: Threshold) -> Result<FrameStack> {
    let counts = stack.counts()?;
    let t = t.value();
    let clicks = counts.par_iter().map(|&c| u8::from(c as f64 > t)).collect();
    FrameStack::new(stack.width(), stack.height(), FrameData::Clicks(clicks))
}
