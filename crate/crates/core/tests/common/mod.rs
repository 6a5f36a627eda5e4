//! Reference values computed without the crate's closed forms.
//!
//! The single-photon response is evaluated as the literal convolution of an
//! exponential with a Gaussian, integrated with composite Gauss–Legendre
//! panels a fraction of `σ` wide. The cumulative distributions are written
//! out from textbook formulas.

#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use emccd_cal::model::EmccdParams;

/// Truth used throughout the tests.
pub const TRUTH: EmccdParams = EmccdParams {
    g: 147.0,
    g_sc: 141.0,
    p_sc: 0.0044,
    mu: 507.9,
    sigma: 24.88,
    eta0: 0.54,
};

const GL_ORDER: usize = 20;

/// Nodes and weights of the 20-point Gauss–Legendre rule on [−1, 1].
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        (0..n)
            .map(|i| {
                let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    // Legendre recurrence for P_n(x) and its derivative
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let k = k as f64;
                        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let step = p1 / dp;
                    x -= step;
                    if step.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

/// ∫ f over [a, b] cut into panels no wider than `panel`.
pub fn panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panel: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = ((b - a) / panel).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let rule = gauss_legendre();
    (0..n)
        .map(|i| {
            let lo = a + i as f64 * h;
            let mid = lo + 0.5 * h;
            rule.iter()
                .map(|&(x, w)| w * f(mid + 0.5 * h * x))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

fn gaussian(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// P(Z > z) for a standard normal.
pub fn upper_normal(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

const REACH: f64 = 14.0;

/// Density of one amplified photoelectron plus read noise,
/// `∫₀^∞ e^{−y/g}/g · φ((x − μ − y)/σ)/σ dy`.
pub fn p1_density(x: f64, g: f64, mu: f64, sigma: f64) -> f64 {
    let lo = (x - mu - REACH * sigma).max(0.0);
    let hi = (x - mu + REACH * sigma).max(0.0);
    panels(
        |y| (-y / g).exp() / g * gaussian((x - mu - y) / sigma) / sigma,
        lo,
        hi,
        0.5 * sigma,
    )
}

/// `P₁(x ≥ t) = ∫₀^∞ e^{−y/g}/g · P(μ + y + σZ ≥ t) dy`. Beyond
/// `t − μ + 14σ` the Gaussian factor is 1 to double precision and the
/// exponential integrates in closed form.
pub fn p1_tail(t: f64, g: f64, mu: f64, sigma: f64) -> f64 {
    let lo = (t - mu - REACH * sigma).max(0.0);
    let hi = (t - mu + REACH * sigma).max(0.0);
    panels(
        |y| (-y / g).exp() / g * upper_normal((t - mu - y) / sigma),
        lo,
        hi,
        0.5 * sigma,
    ) + (-hi / g).exp()
}

/// CDF of `μ + σZ + E` with `E` exponential of mean `g`.
pub fn emg_cdf(x: f64, g: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    let phi = 1.0 - upper_normal(z);
    phi - ((sigma * sigma) / (2.0 * g * g) - (x - mu) / g).exp()
        * (1.0 - upper_normal(z - sigma / g))
}

/// CDF of the dark-pixel output: read noise, plus one CIC electron with
/// probability `p_sc`.
pub fn dark_cdf(x: f64, p: &EmccdParams) -> f64 {
    let read = 1.0 - upper_normal((x - p.mu) / p.sigma);
    (1.0 - p.p_sc) * read + p.p_sc * emg_cdf(x, p.g_sc, p.mu, p.sigma)
}

/// Probability that an integer-rounded dark pixel reads more than `t`.
pub fn dark_click_prob(t: f64, p: &EmccdParams) -> f64 {
    1.0 - dark_cdf(t.floor() + 0.5, p)
}

/// Probability that an integer-rounded single-photon pixel reads more than `t`.
pub fn p1_click_prob(t: f64, p: &EmccdParams) -> f64 {
    p1_tail(t.floor() + 0.5, p.g, p.mu, p.sigma)
}

/// Probabilities of the multimode thermal law thinned to mean `m·μ·η`:
/// a negative binomial with `m` trials. Entries `0..len`.
pub fn thermal_pmf(m: u32, mean_per_mode: f64, len: usize) -> Vec<f64> {
    let q = mean_per_mode / (1.0 + mean_per_mode);
    let m = m as f64;
    let mut out = Vec::with_capacity(len);
    let mut p = (1.0 - q).powf(m);
    for k in 0..len {
        out.push(p);
        p *= (k as f64 + m) / (k as f64 + 1.0) * q;
    }
    out
}

/// Relative difference, with `|reference|` as the scale.
pub fn rel_diff(value: f64, reference: f64) -> f64 {
    if value == reference {
        0.0
    } else {
        (value - reference).abs() / reference.abs()
    }
}

/// Runs the `emccd-cal` binary with `args` and returns its exit status.
/// Standard output and error are captured and discarded.
pub fn cli(args: &[&str]) -> i32 {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_emccd-cal"))
        .args(args)
        .output()
        .expect("running emccd-cal");
    out.status.code().expect("emccd-cal terminated by a signal")
}

/// Largest relative disagreement between the closed forms and the
/// convolution oracle, over `sets` random parameter sets and `points`
/// abscissae each: `(density, tail)`.
pub fn closed_form_disagreement(sets: usize, points: usize, seed: u64) -> (f64, f64) {
    use emccd_cal::model::{single_photon_response_pdf, single_photon_tail, Threshold};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_pdf, mut worst_tail) = (0.0f64, 0.0f64);
    for _ in 0..sets {
        let p = EmccdParams {
            g: rng.random_range(20.0..500.0),
            g_sc: rng.random_range(20.0..500.0),
            p_sc: rng.random_range(0.0..0.05),
            mu: rng.random_range(100.0..1000.0),
            sigma: rng.random_range(5.0..60.0),
            eta0: rng.random_range(0.1..1.0),
        };
        // from the Gaussian flank to far into the exponential tail
        let lo = p.mu - 5.0 * p.sigma;
        let hi = p.mu + 15.0 * p.g;
        for k in 0..points {
            let x = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            let d = single_photon_response_pdf(x, &p).unwrap();
            worst_pdf = worst_pdf.max(rel_diff(d, p1_density(x, p.g, p.mu, p.sigma)));
            let t = single_photon_tail(Threshold(x), &p).unwrap();
            worst_tail = worst_tail.max(rel_diff(t, p1_tail(x, p.g, p.mu, p.sigma)));
        }
    }
    (worst_pdf, worst_tail)
}

/// Chi-square test of `samples` Erlang draws from `sample_em_output(n, g)`
/// against the Erlang CDF, in bins of `g/10`.
pub fn em_output_gof(n: u32, g: f64, samples: usize, seed: u64) -> emccd_cal::stats::ChiSquareTest {
    use emccd_cal::model::sample_em_output;
    use emccd_cal::rng::{substream, Purpose};
    use statrs::distribution::{ContinuousCDF, Gamma};

    let width = g / 10.0;
    let bins = (n as f64 * 10.0 + 200.0) as usize;
    let mut observed = vec![0.0; bins + 1];
    let mut rng = substream(seed, Purpose::Test, n as u64);
    for _ in 0..samples {
        let x = sample_em_output(n, g, &mut rng).unwrap();
        let k = ((x / width) as usize).min(bins);
        observed[k] += 1.0;
    }
    let law = Gamma::new(n as f64, 1.0 / g).unwrap();
    let total = samples as f64;
    let mut expected: Vec<f64> = (0..bins)
        .map(|k| total * (law.cdf((k + 1) as f64 * width) - law.cdf(k as f64 * width)))
        .collect();
    expected.push(total * law.sf(bins as f64 * width));
    emccd_cal::stats::chi_square_gof(&observed, &expected, 5.0, 0)
}

/// Chi-square test of rendered dark pixels against the rounded dark law.
pub fn dark_frame_gof(
    width: usize,
    height: usize,
    frames: usize,
    p: &EmccdParams,
    seed: u64,
) -> emccd_cal::stats::ChiSquareTest {
    let stack = emccd_cal::readout::render_dark_stack(width, height, frames, p, seed).unwrap();
    let counts = stack.counts().unwrap();
    let lo = (p.mu - 10.0 * p.sigma).floor() as usize;
    let hi = (p.mu + 30.0 * p.g_sc) as usize;
    // bin 0 collects everything up to `lo`, the last bin everything above `hi`
    let mut observed = vec![0.0; hi - lo + 2];
    for &c in counts {
        let c = c as usize;
        let k = if c <= lo {
            0
        } else {
            (c - lo).min(hi - lo + 1)
        };
        observed[k] += 1.0;
    }
    let total = counts.len() as f64;
    let cdf = |k: usize| dark_cdf(k as f64 + 0.5, p);
    let mut expected = vec![total * cdf(lo)];
    expected.extend((lo + 1..=hi).map(|k| total * (cdf(k) - cdf(k - 1))));
    expected.push(total * (1.0 - cdf(hi)));
    emccd_cal::stats::chi_square_gof(&observed, &expected, 5.0, 0)
}

/// One cell of the ζ relation check.
#[derive(Debug, Clone, Copy)]
pub struct ZetaCase {
    pub eta: f64,
    pub alpha: f64,
    pub a: f64,
    pub measured: f64,
    pub se: f64,
    pub theory: f64,
    pub samples: usize,
}

impl ZetaCase {
    pub fn pull(&self) -> f64 {
        let d = self.measured - self.theory;
        // a perfectly correlated pair has ζ = 0 with zero spread; allow
        // for the rounding of the moment sums
        if d.abs() < 1e-12 {
            0.0
        } else {
            d / self.se
        }
    }
}

/// Measures ζ on about 10⁵ single-pixel region sums of simulated twin
/// beams and returns it with a frame-block standard error.
///
/// Beam 2 is collected with efficiency `η/α`, so `α = η₁/η₂`, and its
/// photons are displaced with probability `1 − A`. For `η = 0` the two
/// beams come from independent runs, each with efficiency ½ on beam 1.
pub fn zeta_case(eta: f64, alpha: f64, a: f64, seed: u64) -> ZetaCase {
    use emccd_cal::estim::{pair_statistics, Rect, RegionPair};
    use emccd_cal::readout::twin_beam_photoelectrons;
    use emccd_cal::source::{theoretical_nrf, SourceParams};

    const SIDE: usize = 40;
    const FRAMES: usize = 70;
    const BLOCKS: usize = 35;
    let eta1 = if eta == 0.0 { 0.5 } else { eta };
    let params = SourceParams {
        modes_per_pair: 10_000,
        mean_per_mode: 4e-4,
        eta1,
        eta2: eta1 / alpha,
        crosstalk: 1.0 - a,
        width: SIDE,
        height: SIDE,
        frames: FRAMES,
    };
    let one = twin_beam_photoelectrons(&params, seed).unwrap();
    let other = if eta == 0.0 {
        twin_beam_photoelectrons(&params, seed ^ 0x5eed).unwrap()
    } else {
        one.clone()
    };
    // pixel cells one pixel in from the edge, so every displaced photon
    // stays on the sensor
    let pairs = RegionPair::conjugate(2 * SIDE, SIDE, Rect::new(1, 1, SIDE - 2, SIDE - 2), Some(1))
        .unwrap();
    let len = one.frame_len();
    let (pe1, pe2) = (
        one.photoelectrons().unwrap(),
        other.photoelectrons().unwrap(),
    );
    let per_frame = |f: usize| -> (Vec<f64>, Vec<f64>) {
        pairs
            .cells()
            .iter()
            .map(|c| {
                (
                    c.beam1
                        .iter()
                        .map(|&p| pe1[f * len + p] as f64)
                        .sum::<f64>(),
                    c.beam2
                        .iter()
                        .map(|&p| pe2[f * len + p] as f64)
                        .sum::<f64>(),
                )
            })
            .unzip()
    };
    let mut blocks: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); BLOCKS];
    for f in 0..FRAMES {
        let (x, y) = per_frame(f);
        let b = f * BLOCKS / FRAMES;
        blocks[b].0.extend(x);
        blocks[b].1.extend(y);
    }
    let all1: Vec<f64> = blocks.iter().flat_map(|b| b.0.iter().copied()).collect();
    let all2: Vec<f64> = blocks.iter().flat_map(|b| b.1.iter().copied()).collect();
    let measured = pair_statistics(&all1, &all2).unwrap().zeta;
    let zs: Vec<f64> = blocks
        .iter()
        .map(|(x, y)| pair_statistics(x, y).unwrap().zeta)
        .collect();
    let k = zs.len() as f64;
    let mean = zs.iter().sum::<f64>() / k;
    let se = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
    ZetaCase {
        eta,
        alpha,
        a,
        measured,
        se,
        theory: theoretical_nrf(eta, alpha, a).unwrap(),
        samples: all1.len(),
    }
}

/// All sixteen combinations of the ζ relation check.
pub fn zeta_grid(seed: u64) -> Vec<ZetaCase> {
    let mut out = Vec::new();
    for (i, eta) in [0.0, 0.25, 0.54, 1.0].into_iter().enumerate() {
        for (j, alpha) in [1.0, 1.5].into_iter().enumerate() {
            for (k, a) in [1.0, 0.8].into_iter().enumerate() {
                out.push(zeta_case(eta, alpha, a, seed + (i * 4 + j * 2 + k) as u64));
            }
        }
    }
    out
}

/// Random frame stacks of every pixel type, empty stacks included.
pub fn arb_stack() -> impl proptest::strategy::Strategy<Value = emccd_cal::readout::FrameStack> {
    use emccd_cal::readout::{FrameData, FrameStack};
    use proptest::prelude::*;

    (1usize..24, 1usize..24, 0usize..5, 0u8..3).prop_flat_map(|(w, h, n, kind)| {
        let len = w * h * n;
        let data = match kind {
            0 => proptest::collection::vec(any::<u16>(), len)
                .prop_map(FrameData::Counts)
                .boxed(),
            1 => proptest::collection::vec(0u8..=1, len)
                .prop_map(FrameData::Clicks)
                .boxed(),
            _ => proptest::collection::vec(any::<u32>(), len)
                .prop_map(FrameData::Photoelectrons)
                .boxed(),
        };
        data.prop_map(move |d| FrameStack::new(w, h, d).unwrap())
    })
}

/// Path of a configuration shipped with the repository.
pub fn shipped_config(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

/// Writes `configs/<name>` with `edit` applied into `dir` and returns the path.
pub fn edited_config(
    name: &str,
    dir: &std::path::Path,
    edit: impl FnOnce(&mut serde_json::Value),
) -> std::path::PathBuf {
    let text = std::fs::read_to_string(shipped_config(name)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    edit(&mut v);
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

/// Every step of the pipeline into `out`; returns the exit codes in order
/// simulate ×4, fit, calibrate, sweep, compare.
pub fn run_pipeline(config: &std::path::Path, out: &std::path::Path, extra: &[&str]) -> Vec<i32> {
    let c = config.to_str().unwrap();
    let o = out.to_str().unwrap();
    let mut codes = Vec::new();
    let with = |args: &[&str]| {
        let mut v: Vec<&str> = args.to_vec();
        v.extend_from_slice(extra);
        cli(&v)
    };
    for mode in ["dark", "gain", "analog", "counting"] {
        codes.push(with(&[
            "simulate", "--config", c, "--mode", mode, "--out", o,
        ]));
    }
    let dark = out.join("dark.emf");
    let gain = out.join("gain.emf");
    codes.push(with(&[
        "fit",
        "--dark",
        dark.to_str().unwrap(),
        "--illuminated",
        gain.to_str().unwrap(),
        "--out",
        o,
    ]));
    codes.push(with(&["calibrate", "--config", c, "--out", o]));
    codes.push(with(&["sweep", "--config", c, "--out", o]));
    let curve = out.join("curve.csv");
    codes.push(with(&["compare", "--curve", curve.to_str().unwrap()]));
    codes
}
