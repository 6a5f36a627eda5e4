//! Twin-beam absolute calibration.
//!
//! The two beams are compared through a list of conjugate cell pairs. Each
//! frame contributes one sample `(N₁, N₂)` per cell pair, where `N₁` and `N₂`
//! are cell quantities (photoelectron equivalents summed over the cell in the
//! analog regime, no-click indicators in the counting regime). The noise
//! reduction factor
//!
//! ```text
//! ζ = Var(N₁ − α·N₂) / ⟨N₁ + α·N₂⟩,   α = ⟨N₁⟩ / ⟨N₂⟩
//! ```
//!
//! obeys `ζ = (1 + α)/2 − η·A` for a pure twin-beam signal, which is inverted
//! for `η`. Detector noise that is uncorrelated between the beams adds a
//! known variance; it is removed from `Var(N₁ − α·N₂)` before the inversion.
//!
//! Uncertainties come from a delete-one jackknife over contiguous blocks of
//! frames.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{DetectorFit, Estimate};
use crate::error::{Error, Result};
use crate::model::{eta_of_threshold, noise_click_prob, EmccdParams, Threshold};
use crate::readout::FrameStack;
use crate::stats::{block_ranges, jackknife_covariance, jackknife_se};

/// Upper limit on the number of jackknife blocks.
pub const MAX_BLOCKS: usize = 50;

/// Jackknife blocks of a threshold sweep. The covariance between thresholds
/// needs many more resamples than there are thresholds.
pub const CURVE_BLOCKS: usize = 200;

/// Axis-aligned pixel rectangle in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    fn check(&self, frame_width: usize, frame_height: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyRegion);
        }
        if self.x + self.width > frame_width || self.y + self.height > frame_height {
            return Err(Error::invalid(format!(
                "rectangle {self:?} exceeds the {frame_width}x{frame_height} frame"
            )));
        }
        Ok(())
    }

    /// Row-major pixel indices of the rectangle in a frame `frame_width` wide.
    pub fn pixels(&self, frame_width: usize) -> Vec<usize> {
        (self.y..self.y + self.height)
            .flat_map(|y| (self.x..self.x + self.width).map(move |x| y * frame_width + x))
            .collect()
    }
}

/// A set of pixels of a camera frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    frame_width: usize,
    frame_height: usize,
    pixels: Vec<usize>,
}

impl Region {
    pub fn from_rect(frame_width: usize, frame_height: usize, rect: Rect) -> Result<Self> {
        rect.check(frame_width, frame_height)?;
        Ok(Region {
            frame_width,
            frame_height,
            pixels: rect.pixels(frame_width),
        })
    }

    /// Pixels whose mask entry is `true`.
    pub fn from_mask(frame_width: usize, frame_height: usize, mask: &[bool]) -> Result<Self> {
        if mask.len() != frame_width * frame_height {
            return Err(Error::invalid("mask size does not match the frame"));
        }
        let pixels: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect();
        if pixels.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(Region {
            frame_width,
            frame_height,
            pixels,
        })
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    fn check_stack(&self, stack: &FrameStack) -> Result<()> {
        if stack.width() != self.frame_width || stack.height() != self.frame_height {
            return Err(Error::invalid(format!(
                "region defined on {}x{} frames, stack is {}x{}",
                self.frame_width,
                self.frame_height,
                stack.width(),
                stack.height()
            )));
        }
        Ok(())
    }
}

/// One pair of correlated cells, as pixel indices of the camera frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellPair {
    pub beam1: Vec<usize>,
    pub beam2: Vec<usize>,
}

/// Correlated areas of the two beams, split into conjugate cell pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPair {
    frame_width: usize,
    frame_height: usize,
    cells: Vec<CellPair>,
}

impl RegionPair {
    pub fn new(frame_width: usize, frame_height: usize, cells: Vec<CellPair>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let n = frame_width * frame_height;
        for c in &cells {
            if c.beam1.is_empty() || c.beam2.is_empty() {
                return Err(Error::EmptyRegion);
            }
            if c.beam1.iter().chain(&c.beam2).any(|&p| p >= n) {
                return Err(Error::invalid("cell pixel outside the frame"));
            }
        }
        Ok(RegionPair {
            frame_width,
            frame_height,
            cells,
        })
    }

    /// `beam1` and its point reflection through the frame centre, tiled into
    /// `cell × cell` conjugate cell pairs (`None`: the whole rectangle is one
    /// cell). Rows or columns that do not fill a whole tile are left out.
    pub fn conjugate(
        frame_width: usize,
        frame_height: usize,
        beam1: Rect,
        cell: Option<usize>,
    ) -> Result<Self> {
        beam1.check(frame_width, frame_height)?;
        let last = frame_width * frame_height - 1;
        let reflect = |pixels: Vec<usize>| -> CellPair {
            let beam2 = pixels.iter().map(|&p| last - p).collect();
            CellPair {
                beam1: pixels,
                beam2,
            }
        };
        let cells = match cell {
            None => vec![reflect(beam1.pixels(frame_width))],
            Some(0) => return Err(Error::invalid("cell size must be >= 1")),
            Some(k) => {
                let mut cells = Vec::with_capacity((beam1.width / k) * (beam1.height / k));
                for ty in 0..beam1.height / k {
                    for tx in 0..beam1.width / k {
                        let tile = Rect::new(beam1.x + tx * k, beam1.y + ty * k, k, k);
                        cells.push(reflect(tile.pixels(frame_width)));
                    }
                }
                cells
            }
        };
        RegionPair::new(frame_width, frame_height, cells)
    }

    /// Two arbitrary rectangles compared as a single pair of region sums.
    pub fn from_rects(
        frame_width: usize,
        frame_height: usize,
        beam1: Rect,
        beam2: Rect,
    ) -> Result<Self> {
        beam1.check(frame_width, frame_height)?;
        beam2.check(frame_width, frame_height)?;
        RegionPair::new(
            frame_width,
            frame_height,
            vec![CellPair {
                beam1: beam1.pixels(frame_width),
                beam2: beam2.pixels(frame_width),
            }],
        )
    }

    /// A `size × size` square centred in the left half of the frame and its
    /// conjugate, compared pixel by pixel.
    pub fn centered(frame_width: usize, frame_height: usize, size: usize) -> Result<Self> {
        let half = frame_width / 2;
        if size == 0 || size > half || size > frame_height {
            return Err(Error::invalid(format!(
                "a {size}x{size} region does not fit in a beam of {half}x{frame_height}"
            )));
        }
        let rect = Rect::new((half - size) / 2, (frame_height - size) / 2, size, size);
        RegionPair::conjugate(frame_width, frame_height, rect, Some(1))
    }

    /// Geometric collection factor of the pairing for a twin-beam camera
    /// frame (beam 1 on the left half, beam 2 reflected on the right half)
    /// whose beam-2 photons are displaced to one of the 8 neighbours with
    /// probability `crosstalk`.
    ///
    /// It is the expected number of partners of beam-1 photons that land in
    /// the paired beam-2 cell, divided by the beam-2 cell size, summed over
    /// cells. For pixel-by-pixel conjugate cells it equals `1 − crosstalk`.
    pub fn geometric_factor(&self, crosstalk: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&crosstalk) {
            return Err(Error::invalid(format!(
                "crosstalk must lie in [0, 1), got {crosstalk}"
            )));
        }
        let (fw, fh) = (self.frame_width, self.frame_height);
        if fw % 2 != 0 {
            return Err(Error::invalid("a twin-beam frame has an even width"));
        }
        let half = fw / 2;
        let last = fw * fh - 1;
        let mut partners = 0.0;
        let mut beam2_pixels = 0usize;
        for cell in &self.cells {
            if cell.beam1.iter().any(|&p| p % fw >= half)
                || cell.beam2.iter().any(|&p| p % fw < half)
            {
                return Err(Error::invalid(
                    "geometric factor needs beam 1 in the left half and beam 2 in the right half",
                ));
            }
            let beam2: std::collections::HashSet<usize> = cell.beam2.iter().copied().collect();
            for &p in &cell.beam1 {
                let q = last - p;
                let (qx, qy) = ((q % fw) as isize, (q / fw) as isize);
                let mut hit = if beam2.contains(&q) {
                    1.0 - crosstalk
                } else {
                    0.0
                };
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (nx, ny) = (qx + dx, qy + dy);
                        if (dx, dy) == (0, 0)
                            || nx < half as isize
                            || nx >= fw as isize
                            || ny < 0
                            || ny >= fh as isize
                        {
                            continue;
                        }
                        if beam2.contains(&(ny as usize * fw + nx as usize)) {
                            hit += crosstalk / 8.0;
                        }
                    }
                }
                partners += hit;
            }
            beam2_pixels += cell.beam2.len();
        }
        Ok(partners / beam2_pixels as f64)
    }

    pub fn cells(&self) -> &[CellPair] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// All beam-1 pixels as one region.
    pub fn beam1_region(&self) -> Region {
        self.region(|c| &c.beam1)
    }

    pub fn beam2_region(&self) -> Region {
        self.region(|c| &c.beam2)
    }

    fn region(&self, side: impl Fn(&CellPair) -> &Vec<usize>) -> Region {
        Region {
            frame_width: self.frame_width,
            frame_height: self.frame_height,
            pixels: self
                .cells
                .iter()
                .flat_map(|c| side(c).iter().copied())
                .collect(),
        }
    }

    /// Mean number of pixels per cell in each beam.
    fn mean_cell_sizes(&self) -> (f64, f64) {
        let n = self.cells.len() as f64;
        let r1: usize = self.cells.iter().map(|c| c.beam1.len()).sum();
        let r2: usize = self.cells.iter().map(|c| c.beam2.len()).sum();
        (r1 as f64 / n, r2 as f64 / n)
    }

    fn check_stack(&self, stack: &FrameStack) -> Result<()> {
        Region {
            frame_width: self.frame_width,
            frame_height: self.frame_height,
            pixels: Vec::new(),
        }
        .check_stack(stack)
    }
}

/// Sample moments of the two region sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairStatistics {
    pub n1_mean: f64,
    pub n2_mean: f64,
    pub alpha: f64,
    pub zeta: f64,
    /// Covariance `⟨N₁N₂⟩ − ⟨N₁⟩⟨N₂⟩`.
    #[serde(rename = "C")]
    pub c: f64,
    pub var1: f64,
    pub var2: f64,
    pub n_samples: u64,
}

impl PairStatistics {
    /// Sample variance of `N₁ − α·N₂`.
    pub fn difference_variance(&self) -> f64 {
        self.var1 + self.alpha * self.alpha * self.var2 - 2.0 * self.alpha * self.c
    }

    pub fn balanced_sum(&self) -> f64 {
        self.n1_mean + self.alpha * self.n2_mean
    }
}

/// Sums of deviations from a fixed shift, so that block contributions can be
/// added and removed exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: f64,
    s1: f64,
    s2: f64,
    s11: f64,
    s22: f64,
    s12: f64,
}

impl Moments {
    fn push(&mut self, a: f64, b: f64) {
        self.n += 1.0;
        self.s1 += a;
        self.s2 += b;
        self.s11 += a * a;
        self.s22 += b * b;
        self.s12 += a * b;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.s1 += o.s1;
        self.s2 += o.s2;
        self.s11 += o.s11;
        self.s22 += o.s22;
        self.s12 += o.s12;
    }

    fn minus(&self, o: &Moments) -> Moments {
        Moments {
            n: self.n - o.n,
            s1: self.s1 - o.s1,
            s2: self.s2 - o.s2,
            s11: self.s11 - o.s11,
            s22: self.s22 - o.s22,
            s12: self.s12 - o.s12,
        }
    }

    fn statistics(&self, shift: (f64, f64)) -> Result<PairStatistics> {
        let n = self.n;
        if n < 2.0 {
            return Err(Error::DegenerateInput(format!(
                "{n} samples, need at least 2"
            )));
        }
        let n1_mean = shift.0 + self.s1 / n;
        let n2_mean = shift.1 + self.s2 / n;
        if n2_mean == 0.0 || !n2_mean.is_finite() {
            return Err(Error::DegenerateInput("mean of N2 is zero".into()));
        }
        let var1 = (self.s11 - self.s1 * self.s1 / n) / (n - 1.0);
        let var2 = (self.s22 - self.s2 * self.s2 / n) / (n - 1.0);
        let c = (self.s12 - self.s1 * self.s2 / n) / (n - 1.0);
        let alpha = n1_mean / n2_mean;
        let mut s = PairStatistics {
            n1_mean,
            n2_mean,
            alpha,
            zeta: 0.0,
            c,
            var1,
            var2,
            n_samples: n as u64,
        };
        let denom = s.balanced_sum();
        if denom == 0.0 {
            return Err(Error::DegenerateInput(
                "mean of N1 + alpha N2 is zero".into(),
            ));
        }
        s.zeta = s.difference_variance() / denom;
        Ok(s)
    }
}

/// Statistics of two equally long series of region sums (two-pass, unbiased
/// variance estimator).
pub fn pair_statistics(n1: &[f64], n2: &[f64]) -> Result<PairStatistics> {
    if n1.len() != n2.len() {
        return Err(Error::invalid(format!(
            "series lengths differ: {} vs {}",
            n1.len(),
            n2.len()
        )));
    }
    if n1.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "{} samples, need at least 2",
            n1.len()
        )));
    }
    let n = n1.len() as f64;
    let shift = (n1.iter().sum::<f64>() / n, n2.iter().sum::<f64>() / n);
    let mut m = Moments::default();
    for (a, b) in n1.iter().zip(n2) {
        m.push(a - shift.0, b - shift.1);
    }
    m.statistics(shift)
}

/// Per-frame moments of the cell sums of `value(frame, pixel)`, grouped into
/// contiguous frame blocks.
struct BlockMoments {
    shift: (f64, f64),
    blocks: Vec<Moments>,
    total: Moments,
}

impl BlockMoments {
    /// `value(frame, pixels)` is the sample contributed by one side of a
    /// cell in one frame.
    fn collect<F>(
        n_frames: usize,
        max_blocks: usize,
        regions: &RegionPair,
        value: F,
    ) -> Result<Self>
    where
        F: Fn(usize, &[usize]) -> f64 + Sync,
    {
        if n_frames == 0 {
            return Err(Error::EmptyStack);
        }
        let sums = |f: usize| -> Vec<(f64, f64)> {
            regions
                .cells
                .iter()
                .map(|c| (value(f, &c.beam1), value(f, &c.beam2)))
                .collect()
        };
        // the mean cell sums of the first frame are close enough to the
        // overall means to keep the shifted sums well conditioned
        let first = sums(0);
        let k = first.len() as f64;
        let shift = (
            first.iter().map(|s| s.0).sum::<f64>() / k,
            first.iter().map(|s| s.1).sum::<f64>() / k,
        );
        let per_frame: Vec<Moments> = (0..n_frames)
            .into_par_iter()
            .map(|f| {
                let mut m = Moments::default();
                for (a, b) in sums(f) {
                    m.push(a - shift.0, b - shift.1);
                }
                m
            })
            .collect();
        let blocks: Vec<Moments> = block_ranges(n_frames, max_blocks)
            .into_iter()
            .map(|r| {
                let mut m = Moments::default();
                per_frame[r].iter().for_each(|x| m.merge(x));
                m
            })
            .collect();
        let mut total = Moments::default();
        blocks.iter().for_each(|b| total.merge(b));
        Ok(BlockMoments {
            shift,
            blocks,
            total,
        })
    }

    fn statistics(&self) -> Result<PairStatistics> {
        self.total.statistics(self.shift)
    }

    /// `f(statistics)` with each block left out in turn.
    fn replicates<F: Fn(&PairStatistics) -> f64>(&self, f: F) -> Result<Vec<f64>> {
        self.blocks
            .iter()
            .map(|b| self.total.minus(b).statistics(self.shift).map(|s| f(&s)))
            .collect()
    }

    /// Jackknife standard error of `f(statistics)`.
    fn jackknife<F: Fn(&PairStatistics) -> f64>(&self, f: F) -> Result<f64> {
        if self.blocks.len() < 2 {
            return Ok(f64::NAN);
        }
        Ok(jackknife_se(&self.replicates(f)?))
    }
}

fn check_a(a: f64) -> Result<()> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::invalid(format!("A must lie in (0, 1], got {a}")));
    }
    Ok(())
}

/// Result of the analog-regime calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalogCalibration {
    /// Efficiency from the noise reduction factor.
    pub eta0: Estimate,
    /// Cross-check from the covariance, `C / (A·⟨N₁⟩)`.
    pub eta0_c: Estimate,
    /// Noise reduction factor after removing the read-noise variance.
    pub zeta_corrected: Estimate,
    pub stats: PairStatistics,
    /// Whether the two estimates agree within 3 combined uncertainties.
    pub consistent: bool,
    pub blocks: usize,
}

/// Analog-regime efficiency from a bright twin-beam counts stack.
///
/// Every pixel is converted to photoelectron equivalents `(x − μ)/g`. The
/// read noise adds `(σ/g)²` per pixel to both beams independently and is
/// subtracted from the difference variance. Uncertainties combine the frame
/// jackknife with the uncertainties of `μ`, `σ` and `g` in `conversion`.
pub fn estimate_eta_analog(
    stack: &FrameStack,
    regions: &RegionPair,
    a: f64,
    conversion: &DetectorFit,
) -> Result<AnalogCalibration> {
    check_a(a)?;
    regions.check_stack(stack)?;
    let counts = stack.counts()?;
    let g = conversion
        .g
        .ok_or_else(|| Error::invalid("analog conversion needs the EM gain"))?;
    let (mu, sigma) = (conversion.mu, conversion.sigma);
    if !(g.value > 0.0 && sigma.value > 0.0) {
        return Err(Error::invalid(
            "analog conversion needs g > 0 and sigma > 0",
        ));
    }
    let len = stack.frame_len();
    let moments = BlockMoments::collect(stack.n_frames(), MAX_BLOCKS, regions, |f, pixels| {
        let frame = &counts[f * len..(f + 1) * len];
        pixels
            .iter()
            .map(|&p| (frame[p] as f64 - mu.value) / g.value)
            .sum()
    })?;

    let (r1, r2) = regions.mean_cell_sizes();
    let read_var = (sigma.value / g.value).powi(2);
    let zeta_corr = |s: &PairStatistics, read_var: f64| {
        (s.difference_variance() - read_var * (r1 + s.alpha * s.alpha * r2)) / s.balanced_sum()
    };
    let eta = |s: &PairStatistics| ((1.0 + s.alpha) / 2.0 - zeta_corr(s, read_var)) / a;
    let eta_c = |s: &PairStatistics| s.c / (a * s.n1_mean);

    let stats = moments.statistics()?;
    let zeta = zeta_corr(&stats, read_var);
    let eta0 = eta(&stats);
    let eta0_c = eta_c(&stats);

    let se_eta = moments.jackknife(eta)?;
    let se_eta_c = moments.jackknife(eta_c)?;

    // conversion uncertainties: ζ and C/⟨N₁⟩ scale as 1/g
    let g_rel = g.uncertainty / g.value;
    let eta_g = zeta / a * g_rel;
    let eta_c_g = eta0_c * g_rel;
    // a bias shift moves every cell sum by −R·δμ/g
    let shifted = moments.total.statistics((
        moments.shift.0 - r1 * mu.uncertainty / g.value,
        moments.shift.1 - r2 * mu.uncertainty / g.value,
    ))?;
    let eta_mu = (eta(&shifted) - eta0).abs();
    let eta_c_mu = (eta_c(&shifted) - eta0_c).abs();
    let eta_sigma = 2.0 * read_var * (r1 + stats.alpha.powi(2) * r2) / stats.balanced_sum()
        * sigma.uncertainty
        / sigma.value
        / a;

    let u_eta = (se_eta.powi(2) + eta_g.powi(2) + eta_mu.powi(2) + eta_sigma.powi(2)).sqrt();
    let u_eta_c = (se_eta_c.powi(2) + eta_c_g.powi(2) + eta_c_mu.powi(2)).sqrt();
    let consistent = (eta0 - eta0_c).abs() <= 3.0 * (u_eta.powi(2) + u_eta_c.powi(2)).sqrt();
    if !consistent {
        log::warn!("inconsistent analog estimates: eta0 = {eta0:.5} ± {u_eta:.5}, from C: {eta0_c:.5} ± {u_eta_c:.5}");
    }
    Ok(AnalogCalibration {
        eta0: Estimate::new(eta0, u_eta),
        eta0_c: Estimate::new(eta0_c, u_eta_c),
        zeta_corrected: Estimate::new(zeta, (u_eta * a).max(0.0)),
        stats,
        consistent,
        blocks: moments.blocks.len(),
    })
}

/// Click statistics of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickCounts {
    /// Mean clicks in the region per frame.
    pub n_click: f64,
    /// Expected noise clicks in the region per frame.
    pub n_noise: f64,
    /// `n_click − n_noise`; negative values are kept.
    pub n_true: f64,
}

/// Counts the clicks of `region` and removes the expected noise clicks
/// predicted by the fitted noise model at the quantized threshold level.
pub fn count_region_clicks(
    clicks: &FrameStack,
    region: &Region,
    t: Threshold,
    params: &EmccdParams,
) -> Result<ClickCounts> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    region.check_stack(clicks)?;
    let data = clicks.clicks()?;
    let n_frames = clicks.n_frames();
    if n_frames == 0 {
        return Err(Error::EmptyStack);
    }
    let len = clicks.frame_len();
    let total: u64 = (0..n_frames)
        .map(|f| {
            region
                .pixels
                .iter()
                .map(|&p| data[f * len + p] as u64)
                .sum::<u64>()
        })
        .sum();
    let n_click = total as f64 / n_frames as f64;
    let n_noise = region.len() as f64 * noise_click_prob(t.quantized_level(), params)?;
    Ok(ClickCounts {
        n_click,
        n_noise,
        n_true: n_click - n_noise,
    })
}

/// Measured and predicted efficiency and noise versus threshold.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationCurve {
    pub thresholds: Vec<f64>,
    pub eta_measured: Vec<f64>,
    pub eta_uncert: Vec<f64>,
    pub noise_measured: Vec<f64>,
    pub noise_uncert: Vec<f64>,
    pub eta_predicted: Vec<f64>,
    pub noise_predicted: Vec<f64>,
    /// Thresholds below `μ + 2σ`, where the single-event model is not valid.
    pub below_validity: Vec<bool>,
    /// Efficiency from the covariance, `C / (A·⟨N₁⟩)`.
    pub eta_cross_check: Vec<f64>,
    /// Covariance of `eta_measured` between thresholds; empty when unknown.
    #[serde(default)]
    pub eta_covariance: Vec<Vec<f64>>,
    /// Covariance of `noise_measured` between thresholds; empty when unknown.
    #[serde(default)]
    pub noise_covariance: Vec<Vec<f64>>,
    /// Number of resamples behind the covariances.
    #[serde(default)]
    pub covariance_resamples: usize,
}

impl CalibrationCurve {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.thresholds.len();
        let lens = [
            self.eta_measured.len(),
            self.eta_uncert.len(),
            self.noise_measured.len(),
            self.noise_uncert.len(),
            self.eta_predicted.len(),
            self.noise_predicted.len(),
            self.below_validity.len(),
            self.eta_cross_check.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::invalid("calibration curve columns differ in length"));
        }
        for cov in [&self.eta_covariance, &self.noise_covariance] {
            if !cov.is_empty() && (cov.len() != n || cov.iter().any(|r| r.len() != n)) {
                return Err(Error::invalid(
                    "calibration curve covariance is not square in the thresholds",
                ));
            }
        }
        Ok(())
    }
}

struct CurvePoint {
    eta: f64,
    /// Leave-one-block-out values over the counting stack.
    eta_replicates: Vec<f64>,
    /// `∂η/∂ν`.
    nu_slope: f64,
    eta_c: f64,
    noise: f64,
    noise_replicates: Vec<f64>,
    eta_pred: f64,
    noise_pred: f64,
}

/// Photon-counting efficiency curve.
///
/// Each pixel is discriminated at `counts > T`. A pixel is a binary
/// detector, so the click sums of a cell saturate: with `λ` photons per pixel
/// the plain ζ inversion overestimates `η` by about `η·λ`. The relation is
/// therefore applied to the Poisson-equivalent moments of the cells,
/// obtained from the probabilities that a cell shows no click at all:
///
/// ```text
/// L₂  = −ln P(N₂ = 0) + R₂·ln(1 − ν)          (detected events, beam 2)
/// L₁₂ = ln[P(N₁ = 0, N₂ = 0) / (P(N₁ = 0)·P(N₂ = 0))]   (shared events)
/// η   = L₁₂ / (A·L₂)
/// ```
///
/// `ν` is the predicted noise click probability of a pixel; noise clicks are
/// independent between pixels and drop out of `L₁₂`. For Poissonian light
/// this is the exact form of `ζ = (1 + α)/2 − η·A`. Cells are assumed to be
/// of equal size.
///
/// `eta_cross_check` holds the covariance route `C/(A·⟨N₁⟩)` on the cell
/// sums of `n_true` per pixel (clicks minus `ν`), without the saturation
/// correction.
///
/// The noise columns are the click rate of the `dark` stack next to the
/// prediction of the noise model.
///
/// Uncertainties come from a delete-one-block jackknife (up to
/// [`CURVE_BLOCKS`] blocks of frames of the counting stack, blocks of pixels
/// of the dark stack), which also yields the covariance between thresholds:
/// all points reuse the same photons, so their errors are strongly
/// correlated. The `η` covariance adds the effect of an error in `ν` as large
/// as the uncertainty of the dark click rate. At low light the signal click
/// rate is not much above `ν`, and this term dominates near `μ + 2σ`.
pub fn estimate_eta_counting(
    counts: &FrameStack,
    dark: &FrameStack,
    regions: &RegionPair,
    thresholds: &[Threshold],
    a: f64,
    params: &EmccdParams,
) -> Result<CalibrationCurve> {
    check_a(a)?;
    params.validate()?;
    regions.check_stack(counts)?;
    let data = counts.counts()?;
    let dark_data = dark.counts()?;
    if dark.n_frames() == 0 {
        return Err(Error::EmptyStack);
    }
    let floor = params.validity_threshold();
    for t in thresholds.iter().filter(|t| t.value() < floor) {
        log::warn!(
            "threshold {} is below mu + 2 sigma = {floor:.2}; single-event model not valid",
            t.value()
        );
    }

    let len = counts.frame_len();
    let (_, r2) = regions.mean_cell_sizes();
    let points = thresholds
        .par_iter()
        .map(|&t| -> Result<CurvePoint> {
            let level = t.quantized_level();
            let nu = noise_click_prob(level, params)?;
            if nu >= 1.0 {
                return Err(Error::DegenerateInput(format!(
                    "every pixel is a noise click at T = {}",
                    t.value()
                )));
            }
            let tv = t.value();
            let clicks = |f: usize, pixels: &[usize]| {
                let frame = &data[f * len..(f + 1) * len];
                pixels.iter().filter(|&&p| frame[p] as f64 > tv).count()
            };
            let empty =
                BlockMoments::collect(counts.n_frames(), CURVE_BLOCKS, regions, |f, px| {
                    (clicks(f, px) == 0) as u8 as f64
                })?;
            let n_true =
                BlockMoments::collect(counts.n_frames(), CURVE_BLOCKS, regions, |f, px| {
                    clicks(f, px) as f64 - nu * px.len() as f64
                })?;

            let eta = |s: &PairStatistics| {
                let (p1, p2) = (s.n1_mean, s.n2_mean);
                let shared = (1.0 + s.c / (p1 * p2)).ln();
                let events2 = -p2.ln() + r2 * (-nu).ln_1p();
                shared / (a * events2)
            };
            let eta_c = |s: &PairStatistics| s.c / (a * s.n1_mean);
            let stats = empty.statistics()?;
            if !(stats.n1_mean > 0.0 && stats.n2_mean > 0.0) {
                return Err(Error::DegenerateInput(format!(
                    "no frame without clicks in a cell at T = {tv}; use smaller cells or less light"
                )));
            }

            let (noise, noise_replicates) = dark_click_rate(dark_data, tv);
            let value = eta(&stats);
            let events2 = -stats.n2_mean.ln() + r2 * (-nu).ln_1p();
            Ok(CurvePoint {
                eta: value,
                eta_replicates: empty.replicates(eta)?,
                nu_slope: value * r2 / ((1.0 - nu) * events2),
                eta_c: eta_c(&n_true.statistics()?),
                noise,
                noise_replicates,
                eta_pred: eta_of_threshold(level, params)?,
                noise_pred: nu,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let transpose = |get: fn(&CurvePoint) -> &Vec<f64>| -> Vec<Vec<f64>> {
        let k = points.first().map_or(0, |p| get(p).len());
        (0..k)
            .map(|b| points.iter().map(|p| get(p)[b]).collect())
            .collect()
    };
    let eta_jk = jackknife_covariance(&transpose(|p| &p.eta_replicates));
    let noise_cov = jackknife_covariance(&transpose(|p| &p.noise_replicates));
    // ν comes from the fitted noise model, which is known about as well as
    // the dark click rate it was fitted to; that error propagates into η
    // through ∂η/∂ν and is shared between thresholds.
    let eta_cov: Vec<Vec<f64>> = (0..points.len())
        .map(|i| {
            (0..points.len())
                .map(|j| eta_jk[i][j] + points[i].nu_slope * points[j].nu_slope * noise_cov[i][j])
                .collect()
        })
        .collect();
    let resamples = points
        .first()
        .map_or(0, |p| p.eta_replicates.len().min(p.noise_replicates.len()));
    let diag_sqrt = |cov: &Vec<Vec<f64>>| {
        (0..cov.len())
            .map(|i| cov[i][i].sqrt())
            .collect::<Vec<f64>>()
    };

    let curve = CalibrationCurve {
        thresholds: thresholds.iter().map(|t| t.value()).collect(),
        eta_measured: points.iter().map(|p| p.eta).collect(),
        eta_uncert: diag_sqrt(&eta_cov),
        noise_measured: points.iter().map(|p| p.noise).collect(),
        noise_uncert: diag_sqrt(&noise_cov),
        eta_predicted: points.iter().map(|p| p.eta_pred).collect(),
        noise_predicted: points.iter().map(|p| p.noise_pred).collect(),
        below_validity: thresholds.iter().map(|t| t.value() < floor).collect(),
        eta_cross_check: points.iter().map(|p| p.eta_c).collect(),
        eta_covariance: eta_cov,
        noise_covariance: noise_cov,
        covariance_resamples: resamples,
    };
    curve.validate()?;
    Ok(curve)
}

/// Click rate per pixel of a dark stack and its leave-one-block-out values.
/// Dark pixels are independent, so the stack is cut into blocks of pixels
/// regardless of frame boundaries.
fn dark_click_rate(data: &[u16], t: f64) -> (f64, Vec<f64>) {
    let ranges = block_ranges(data.len(), CURVE_BLOCKS);
    let blocks: Vec<f64> = ranges
        .iter()
        .map(|r| data[r.clone()].iter().filter(|&&c| c as f64 > t).count() as f64)
        .collect();
    let pixels = data.len() as f64;
    let total: f64 = blocks.iter().sum();
    let loo = blocks
        .iter()
        .zip(&ranges)
        .map(|(b, r)| (total - b) / (pixels - r.len() as f64))
        .collect();
    (total / pixels, loo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::FrameData;

    #[test]
    fn identical_series_have_zero_zeta() {
        let n: Vec<f64> = (0..100).map(|i| (i % 7) as f64 + 3.0).collect();
        let s = pair_statistics(&n, &n).unwrap();
        assert!(s.zeta.abs() < 1e-12);
        assert!((s.alpha - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scaling_exponents() {
        let n1: Vec<f64> = (0..50).map(|i| ((i * 13) % 11) as f64 + 1.0).collect();
        let n2: Vec<f64> = (0..50).map(|i| ((i * 7) % 5) as f64 + 2.0).collect();
        let s = pair_statistics(&n1, &n2).unwrap();
        let c = 3.5;
        let n1c: Vec<f64> = n1.iter().map(|x| c * x).collect();
        let n2c: Vec<f64> = n2.iter().map(|x| c * x).collect();
        let sc = pair_statistics(&n1c, &n2c).unwrap();
        assert!((sc.alpha - s.alpha).abs() < 1e-12);
        assert!((sc.c / s.c - c * c).abs() < 1e-9);
        assert!((sc.zeta / s.zeta - c).abs() < 1e-9);
    }

    #[test]
    fn pair_statistics_errors() {
        assert!(matches!(
            pair_statistics(&[1.0], &[1.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            pair_statistics(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(pair_statistics(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn conjugate_cells_reflect_through_centre() {
        let r = RegionPair::conjugate(8, 4, Rect::new(0, 0, 2, 2), Some(1)).unwrap();
        assert_eq!(r.n_cells(), 4);
        // (0,0) ↔ (7,3)
        assert_eq!(
            r.cells()[0],
            CellPair {
                beam1: vec![0],
                beam2: vec![31]
            }
        );
        let whole = RegionPair::conjugate(8, 4, Rect::new(1, 1, 2, 2), None).unwrap();
        assert_eq!(whole.n_cells(), 1);
        assert_eq!(whole.cells()[0].beam1.len(), 4);
        assert!(RegionPair::conjugate(8, 4, Rect::new(7, 0, 2, 2), None).is_err());
    }

    #[test]
    fn geometric_factor_of_pairings() {
        let px = RegionPair::centered(40, 20, 10).unwrap();
        assert!((px.geometric_factor(0.2).unwrap() - 0.8).abs() < 1e-12);
        let whole = RegionPair::conjugate(40, 20, Rect::new(5, 5, 10, 10), None).unwrap();
        // 36 interior pixels keep all 8 neighbours, the 64 on the rim lose some
        let a = whole.geometric_factor(0.2).unwrap();
        assert!(a > 0.8 && a < 1.0, "{a}");
        let wide =
            RegionPair::from_rects(40, 20, Rect::new(5, 5, 10, 10), Rect::new(20, 0, 20, 20))
                .unwrap();
        assert!((wide.geometric_factor(0.0).unwrap() - 0.25).abs() < 1e-12);
        let wrong =
            RegionPair::from_rects(40, 20, Rect::new(25, 5, 2, 2), Rect::new(20, 0, 20, 20))
                .unwrap();
        assert!(wrong.geometric_factor(0.0).is_err());
    }

    #[test]
    fn centered_region_is_inside_beam_one() {
        let r = RegionPair::centered(400, 400, 100).unwrap();
        assert_eq!(r.n_cells(), 10_000);
        assert!(r.beam1_region().pixels().iter().all(|p| p % 400 < 200));
        assert!(r.beam2_region().pixels().iter().all(|p| p % 400 >= 200));
    }

    #[test]
    fn click_counts_additivity_and_infinite_threshold() {
        let p = EmccdParams::REFERENCE;
        let clicks: Vec<u8> = (0..4 * 4 * 3).map(|i| ((i * 5) % 3 == 0) as u8).collect();
        let s = FrameStack::new(4, 4, FrameData::Clicks(clicks)).unwrap();
        let t = Threshold(560.0);
        let left = Region::from_rect(4, 4, Rect::new(0, 0, 2, 4)).unwrap();
        let right = Region::from_rect(4, 4, Rect::new(2, 0, 2, 4)).unwrap();
        let all = Region::from_rect(4, 4, Rect::new(0, 0, 4, 4)).unwrap();
        let (a, b, u) = (
            count_region_clicks(&s, &left, t, &p).unwrap(),
            count_region_clicks(&s, &right, t, &p).unwrap(),
            count_region_clicks(&s, &all, t, &p).unwrap(),
        );
        assert!((a.n_true + b.n_true - u.n_true).abs() < 1e-12);
        assert_eq!(u.n_true, u.n_click - u.n_noise);

        let none = FrameStack::new(4, 4, FrameData::Clicks(vec![0; 48])).unwrap();
        let c = count_region_clicks(&none, &all, Threshold(f64::INFINITY), &p).unwrap();
        assert_eq!((c.n_click, c.n_noise, c.n_true), (0.0, 0.0, 0.0));
        assert!(matches!(
            Region::from_mask(4, 4, &[false; 16]),
            Err(Error::EmptyRegion)
        ));
    }
}
