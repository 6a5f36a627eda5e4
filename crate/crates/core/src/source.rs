//! Twin-beam illumination: spatially correlated photoelectron maps and the
//! analytic statistics they obey.
//!
//! Every conjugate pixel pair receives the photons of `M` independent
//! thermal (geometric) modes. Each photon is present in both beams and is
//! then detected in beam `i` with probability `eta_i`. A detected beam-2
//! photon lands, with probability `crosstalk`, on one of the 8 neighbours of
//! its conjugate pixel instead, which lowers the pixel-pair collection
//! factor to `A = 1 − crosstalk`.
//!
//! Beam 1 occupies the left half of the camera frame and beam 2 the right
//! half. Conjugate pixels are related by point reflection through the frame
//! centre; the mapping is exposed through [`conjugate_pixel`] and callers
//! should go through it (or [`crate::estim::RegionPair`]) rather than
//! re-deriving it.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Low-illumination limit on the incident photons per pixel for counting runs.
pub const MAX_COUNTING_P_PH: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    /// Modes per conjugate pixel pair.
    pub modes_per_pair: u32,
    /// Mean photon number per mode.
    pub mean_per_mode: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub crosstalk: f64,
    /// Width of each beam's region in pixels; the camera frame is twice as wide.
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if self.modes_per_pair == 0 {
            return Err(Error::invalid("modes_per_pair must be >= 1"));
        }
        if !(self.mean_per_mode >= 0.0 && self.mean_per_mode.is_finite()) {
            return Err(Error::invalid(format!(
                "mean_per_mode must be >= 0, got {}",
                self.mean_per_mode
            )));
        }
        for (name, eta) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {eta}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.crosstalk) {
            return Err(Error::invalid(format!(
                "crosstalk must lie in [0, 1), got {}",
                self.crosstalk
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("beam region must be at least 1x1"));
        }
        Ok(())
    }

    /// Pixel-pair geometric collection factor.
    pub fn geometric_factor(&self) -> f64 {
        1.0 - self.crosstalk
    }

    /// Expected incident photons per pixel.
    pub fn p_ph(&self) -> f64 {
        self.modes_per_pair as f64 * self.mean_per_mode
    }

    pub fn frame_width(&self) -> usize {
        2 * self.width
    }

    pub fn check_low_illumination(&self) -> Result<()> {
        let p_ph = self.p_ph();
        if p_ph >= MAX_COUNTING_P_PH {
            return Err(Error::LowIllumination {
                p_ph,
                limit: MAX_COUNTING_P_PH,
            });
        }
        Ok(())
    }
}

/// Conjugate of pixel `(x, y)` in a `width × height` camera frame.
pub fn conjugate_pixel(x: usize, y: usize, width: usize, height: usize) -> (usize, usize) {
    (width - 1 - x, height - 1 - y)
}

/// Photoelectron maps of both beams for one frame, each `width × height`
/// in camera orientation (beam 2 already reflected).
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoelectronFramePair {
    pub width: usize,
    pub height: usize,
    pub frame1: Vec<u32>,
    pub frame2: Vec<u32>,
    pub frame_index: usize,
}

impl PhotoelectronFramePair {
    /// Lays both beams side by side into one `2·width × height` camera frame.
    pub fn to_camera_frame(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(2 * self.frame1.len());
        for y in 0..self.height {
            let row = y * self.width..(y + 1) * self.width;
            out.extend_from_slice(&self.frame1[row.clone()]);
            out.extend_from_slice(&self.frame2[row]);
        }
        out
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Draws one frame of twin-beam photoelectrons.
pub fn generate_pair<R: Rng + ?Sized>(
    params: &SourceParams,
    frame_index: usize,
    rng: &mut R,
) -> Result<PhotoelectronFramePair> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let mut frame1 = vec![0u32; w * h];
    let mut frame2 = vec![0u32; w * h];

    let intensity = (params.mean_per_mode > 0.0).then(|| {
        Gamma::new(params.modes_per_pair as f64, params.mean_per_mode).expect("validated")
    });

    for y in 0..h {
        for x in 0..w {
            // Gamma–Poisson mixture: exact negative binomial, i.e. the sum of
            // M geometric mode populations.
            let n = match &intensity {
                Some(gamma) => {
                    let lambda: f64 = gamma.sample(rng);
                    if lambda > 0.0 {
                        Poisson::new(lambda).expect("positive rate").sample(rng) as u64
                    } else {
                        0
                    }
                }
                None => 0,
            };
            if n == 0 {
                continue;
            }
            let k1 = thin(n, params.eta1, rng);
            let k2 = thin(n, params.eta2, rng);
            frame1[y * w + x] += k1 as u32;

            let (cx, cy) = conjugate_pixel(x, y, w, h);
            let displaced = thin(k2, params.crosstalk, rng);
            frame2[cy * w + cx] += (k2 - displaced) as u32;
            for _ in 0..displaced {
                let (dx, dy) = NEIGHBOURS[rng.random_range(0..8)];
                let nx = cx as isize + dx;
                let ny = cy as isize + dy;
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    frame2[ny as usize * w + nx as usize] += 1;
                }
            }
        }
    }
    Ok(PhotoelectronFramePair {
        width: w,
        height: h,
        frame1,
        frame2,
        frame_index,
    })
}

fn thin<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 || n == 0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid probability").sample(rng)
    }
}

/// Per-pixel moments implied by the source model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMomentsTheory {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
}

/// Means, variances and covariance of the conjugate-pixel photoelectron counts.
pub fn analytic_pair_stats(params: &SourceParams) -> Result<PairMomentsTheory> {
    params.validate()?;
    let m = params.modes_per_pair as f64;
    let mu = params.mean_per_mode;
    let (e1, e2) = (params.eta1, params.eta2);
    Ok(PairMomentsTheory {
        mean1: m * mu * e1,
        mean2: m * mu * e2,
        var1: m * mu * e1 * (1.0 + e1 * mu),
        var2: m * mu * e2 * (1.0 + e2 * mu),
        cov: params.geometric_factor() * e1 * e2 * m * mu * (1.0 + mu),
    })
}

/// Noise reduction factor expected for efficiency `eta`, balance `alpha`
/// and geometric factor `a`: `(1 + α)/2 − η·A`.
pub fn theoretical_nrf(eta: f64, alpha: f64, a: f64) -> Result<f64> {
    check_eta_a(eta, a)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    Ok((1.0 + alpha) / 2.0 - eta * a)
}

/// Covariance expected between the two regions: `η·A·⟨N₁⟩`.
pub fn theoretical_correlation(eta: f64, a: f64, n1_mean: f64) -> Result<f64> {
    check_eta_a(eta, a)?;
    if !(n1_mean >= 0.0 && n1_mean.is_finite()) {
        return Err(Error::invalid(format!(
            "n1_mean must be >= 0, got {n1_mean}"
        )));
    }
    Ok(eta * a * n1_mean)
}

fn check_eta_a(eta: f64, a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta must lie in [0, 1], got {eta}")));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::invalid(format!("A must lie in (0, 1], got {a}")));
    }
    Ok(())
}
