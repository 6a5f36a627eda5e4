//! Histogram fits of the detector parameters.
//!
//! * Read noise: weighted least squares of a bin-integrated Gaussian on the
//!   core of a dark histogram (Poisson weights).
//! * Spurious charge and EM gain: the far tail beyond `mu + 4·sigma` is an
//!   exponential in counts, fitted as a Poisson log-linear regression with
//!   the known Gaussian remnant as background.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::histogram::{build_group_histograms, Histogram};
use crate::error::{Error, Result};
use crate::model::{noise_click_prob, EmccdParams, Threshold};
use crate::readout::FrameStack;
use crate::special::normal_sf;
use crate::stats::{block_ranges, jackknife_se};

const MAX_ITERATIONS: usize = 200;
const MIN_BINS: usize = 5;

/// A value with its one-standard-deviation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimate {
    pub value: f64,
    pub uncertainty: f64,
}

impl Estimate {
    pub fn new(value: f64, uncertainty: f64) -> Self {
        Estimate { value, uncertainty }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimates: BTreeMap<String, Estimate>,
    /// Fit range in counts.
    pub window: (f64, f64),
    /// Pearson chi-square per degree of freedom.
    pub goodness: f64,
    pub bins_used: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<Estimate> {
        self.estimates.get(name).copied()
    }

    /// Value of a parameter this fit is known to produce.
    pub fn value(&self, name: &str) -> f64 {
        self.estimates[name].value
    }
}

/// Robust width: half the interquartile range over the normal-quartile constant.
pub fn robust_width(hist: &Histogram) -> f64 {
    0.5 * (hist.quantile(0.75) - hist.quantile(0.25)) / 0.6745
}

fn bins_in_window(hist: &Histogram, window: (f64, f64)) -> Vec<usize> {
    (0..hist.len())
        .filter(|&k| {
            let c = hist.center(k);
            c >= window.0 && c <= window.1
        })
        .collect()
}

fn check_window(hist: &Histogram, window: (f64, f64)) -> Result<(f64, f64)> {
    if !(window.0 < window.1) {
        return Err(Error::invalid(format!("empty fit window {window:?}")));
    }
    let (lo, hi) = hist.span();
    Ok((window.0.max(lo), window.1.min(hi)))
}

fn gauss_mass(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    normal_sf((lo - mu) / sigma) - normal_sf((hi - mu) / sigma)
}

fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Inverts a small symmetric positive definite matrix in place.
fn invert<const N: usize>(m: [[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let mut a = m;
    let mut inv = [[0.0; N]; N];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < f64::MIN_POSITIVE || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..N {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..N {
            if i != col {
                let f = a[i][col];
                for j in 0..N {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

/// Gaussian fit on the read-noise core of a histogram.
///
/// The default window is `[mode − 3s, mode + 2s]` with `s` the robust width.
/// Returns `mu` and `sigma` (plus the fitted `amplitude` in entries).
pub fn fit_read_noise(hist: &Histogram, window: Option<(f64, f64)>) -> Result<FitResult> {
    fit_read_noise_with_background(hist, window, |_, _| 0.0)
}

pub(crate) fn default_read_noise_window(hist: &Histogram) -> (f64, f64) {
    let s = robust_width(hist).max(hist.bin_width());
    let mode = hist.center(hist.mode_bin());
    (mode - 3.0 * s, mode + 2.0 * s)
}

/// As [`fit_read_noise`], with `background(lo, hi)` expected entries per bin
/// added to the Gaussian (e.g. the spurious-charge contribution).
pub fn fit_read_noise_with_background<B: Fn(f64, f64) -> f64>(
    hist: &Histogram,
    window: Option<(f64, f64)>,
    background: B,
) -> Result<FitResult> {
    if hist.total() == 0 {
        return Err(Error::EmptyStack);
    }
    let window = check_window(
        hist,
        window.unwrap_or_else(|| default_read_noise_window(hist)),
    )?;
    let bins = bins_in_window(hist, window);
    if bins.len() < MIN_BINS {
        return Err(Error::FitFailure(format!(
            "read-noise window {window:?} holds {} bins, need at least {MIN_BINS}",
            bins.len()
        )));
    }
    let data: Vec<(f64, f64, f64, f64)> = bins
        .iter()
        .map(|&k| {
            let (lo, hi) = (hist.edge(k), hist.edge(k + 1));
            (lo, hi, hist.bin_counts()[k] as f64, background(lo, hi))
        })
        .collect();

    let mode = hist.center(hist.mode_bin());
    let s0 = robust_width(hist).max(hist.bin_width());
    let in_window: f64 = data.iter().map(|d| d.2 - d.3).sum();
    let frac0 = gauss_mass(window.0, window.1, mode, s0).max(1e-3);
    let mut theta = [in_window / frac0, mode, s0];

    let eval = |t: &[f64; 3]| -> (f64, Vec<([f64; 3], f64, f64)>) {
        let mut chi2 = 0.0;
        let mut rows = Vec::with_capacity(data.len());
        for &(lo, hi, n, bg) in &data {
            let (za, zb) = ((lo - t[1]) / t[2], (hi - t[1]) / t[2]);
            let f = gauss_mass(lo, hi, t[1], t[2]);
            let (pa, pb) = (std_pdf(za), std_pdf(zb));
            let model = t[0] * f + bg;
            let jac = [
                f,
                t[0] * (pa - pb) / t[2],
                t[0] * (za * pa - zb * pb) / t[2],
            ];
            let w = 1.0 / n.max(1.0);
            chi2 += w * (n - model).powi(2);
            rows.push((jac, n - model, w));
        }
        (chi2, rows)
    };

    let normal_matrix = |rows: &[([f64; 3], f64, f64)]| {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (j, r, w) in rows {
            for a in 0..3 {
                jtr[a] += w * j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += w * j[a] * j[b];
                }
            }
        }
        (jtj, jtr)
    };

    let mut lambda = 1e-3;
    let (mut chi2, mut rows) = eval(&theta);
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (jtj, jtr) = normal_matrix(&rows);
        let mut damped = jtj;
        for (a, row) in damped.iter_mut().enumerate() {
            row[a] += lambda * jtj[a][a];
        }
        let Some(inv) = invert(damped) else {
            lambda *= 10.0;
            continue;
        };
        let step: Vec<f64> = (0..3)
            .map(|a| (0..3).map(|b| inv[a][b] * jtr[b]).sum())
            .collect();
        let trial = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
        if trial[0] <= 0.0 || trial[2] <= 0.0 {
            lambda *= 10.0;
            continue;
        }
        let (chi2_t, rows_t) = eval(&trial);
        if chi2_t <= chi2 {
            let small = (0..3).all(|a| step[a].abs() <= 1e-12 * theta[a].abs().max(1e-12));
            let flat = (chi2 - chi2_t) <= 1e-14 * chi2.max(1e-300);
            theta = trial;
            chi2 = chi2_t;
            rows = rows_t;
            lambda = (lambda * 0.1).max(1e-12);
            if small || flat {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // no further progress possible: at the minimum within f64 resolution
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::FitFailure(format!(
            "read-noise fit did not converge in {MAX_ITERATIONS} iterations"
        )));
    }
    let (jtj, _) = normal_matrix(&rows);
    let cov =
        invert(jtj).ok_or_else(|| Error::FitFailure("singular read-noise covariance".into()))?;
    let err = |i: usize| cov[i][i].max(0.0).sqrt();
    let mut estimates = BTreeMap::new();
    estimates.insert("amplitude".to_string(), Estimate::new(theta[0], err(0)));
    estimates.insert("mu".to_string(), Estimate::new(theta[1], err(1)));
    estimates.insert("sigma".to_string(), Estimate::new(theta[2], err(2)));
    Ok(FitResult {
        estimates,
        window,
        goodness: chi2 / (data.len() as f64 - 3.0).max(1.0),
        bins_used: data.len(),
    })
}

/// Fraction of entries in the Gaussian pedestal, from the mass below `mu`.
fn pedestal_fraction(hist: &Histogram, mu: f64) -> f64 {
    let mut below = 0.0;
    for (k, &c) in hist.bin_counts().iter().enumerate() {
        let (lo, hi) = (hist.edge(k), hist.edge(k + 1));
        if hi <= mu {
            below += c as f64;
        } else if lo < mu {
            below += c as f64 * (mu - lo) / (hi - lo);
        }
    }
    (2.0 * below / hist.total() as f64).min(1.0)
}

struct TailBin {
    /// Bin centre relative to the bias.
    x: f64,
    n: f64,
    background: f64,
    /// Multiplicative shape correction of the exponential at this bin.
    shape: f64,
}

struct TailFit {
    /// `ln` of the expected entries of the exponential component at `x = 0`.
    intercept: f64,
    slope: f64,
    cov: [[f64; 2]; 2],
    goodness: f64,
}

/// Poisson maximum-likelihood fit of `n_k ~ background_k + shape_k·exp(a + b·x_k)`.
fn fit_exponential_tail(bins: &[TailBin], what: &str) -> Result<TailFit> {
    // log-linear least squares over bins with a positive excess, weights n
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut nonzero = 0;
    for b in bins {
        let excess = b.n - b.background;
        if b.n > 0.0 && excess > 0.0 {
            let y = (excess / b.shape).ln();
            let w = b.n;
            sw += w;
            sx += w * b.x;
            sy += w * y;
            sxx += w * b.x * b.x;
            sxy += w * b.x * y;
            nonzero += 1;
        }
    }
    if nonzero < MIN_BINS {
        return Err(Error::FitFailure(format!(
            "{what}: {nonzero} populated tail bins, need at least {MIN_BINS}"
        )));
    }
    let det = sw * sxx - sx * sx;
    if det <= 0.0 {
        return Err(Error::FitFailure(format!("{what}: degenerate tail")));
    }
    let mut b = (sw * sxy - sx * sy) / det;
    let mut a = (sy - b * sx) / sw;
    if !(b < 0.0) {
        return Err(Error::FitFailure(format!("{what}: tail does not decay")));
    }

    let loglik = |a: f64, b: f64| -> f64 {
        bins.iter()
            .map(|t| {
                let lam = t.background + t.shape * (a + b * t.x).exp();
                if lam > 0.0 {
                    t.n * lam.ln() - lam
                } else if t.n > 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            })
            .sum()
    };
    let info_and_grad = |a: f64, b: f64| {
        let mut info = [[0.0; 2]; 2];
        let mut grad = [0.0; 2];
        for t in bins {
            let s = t.shape * (a + b * t.x).exp();
            let lam = t.background + s;
            if lam <= 0.0 {
                continue;
            }
            let d = [s, s * t.x];
            for i in 0..2 {
                grad[i] += (t.n / lam - 1.0) * d[i];
                for j in 0..2 {
                    info[i][j] += d[i] * d[j] / lam;
                }
            }
        }
        (info, grad)
    };

    let mut ll = loglik(a, b);
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (info, grad) = info_and_grad(a, b);
        let inv = invert(info)
            .ok_or_else(|| Error::FitFailure(format!("{what}: singular information matrix")))?;
        let da = inv[0][0] * grad[0] + inv[0][1] * grad[1];
        let db = inv[1][0] * grad[0] + inv[1][1] * grad[1];
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-6 {
            let (ta, tb) = (a + step * da, b + step * db);
            let tll = loglik(ta, tb);
            if tb < 0.0 && tll >= ll - 1e-9 * ll.abs().max(1.0) {
                a = ta;
                b = tb;
                ll = tll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        let small = (step * db).abs() <= 1e-12 * b.abs() && (step * da).abs() <= 1e-10;
        if !accepted || small {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure(format!(
            "{what}: no convergence in {MAX_ITERATIONS} iterations"
        )));
    }
    let (info, _) = info_and_grad(a, b);
    let cov =
        invert(info).ok_or_else(|| Error::FitFailure(format!("{what}: singular covariance")))?;
    let chi2: f64 = bins
        .iter()
        .map(|t| {
            let lam = t.background + t.shape * (a + b * t.x).exp();
            if lam > 0.0 {
                (t.n - lam).powi(2) / lam
            } else {
                0.0
            }
        })
        .sum();
    Ok(TailFit {
        intercept: a,
        slope: b,
        cov,
        goodness: chi2 / (bins.len() as f64 - 2.0).max(1.0),
    })
}

fn default_tail_window(hist: &Histogram, mu: f64, sigma: f64) -> (f64, f64) {
    (mu + 4.0 * sigma, hist.span().1)
}

fn check_noise_inputs(hist: &Histogram, mu: f64, sigma: f64) -> Result<()> {
    if hist.total() == 0 {
        return Err(Error::EmptyStack);
    }
    if !(sigma > 0.0) || !mu.is_finite() {
        return Err(Error::invalid("tail fit needs finite mu and sigma > 0"));
    }
    Ok(())
}

/// Spurious-charge fit on the far tail of a dark histogram.
///
/// Returns `g_sc` from the exponential slope and `p_sc` from the fitted
/// amplitude, normalised with the CIC branch of the dark-noise density.
pub fn fit_cic(
    hist: &Histogram,
    mu: f64,
    sigma: f64,
    window: Option<(f64, f64)>,
) -> Result<FitResult> {
    check_noise_inputs(hist, mu, sigma)?;
    let window = check_window(
        hist,
        window.unwrap_or_else(|| default_tail_window(hist, mu, sigma)),
    )?;
    let idx = bins_in_window(hist, window);
    let total = hist.total() as f64;
    let w = hist.bin_width();
    let pedestal = pedestal_fraction(hist, mu);

    let p_of = |a: f64, b: f64| {
        let g = -1.0 / b;
        (a - 0.5 * (sigma / g).powi(2)).exp() / (total * 2.0 * (w / (2.0 * g)).sinh())
    };

    let mut p_sc = 0.0;
    let mut fit = None;
    for _ in 0..2 {
        let bins: Vec<TailBin> = idx
            .iter()
            .map(|&k| TailBin {
                x: hist.center(k) - mu,
                n: hist.bin_counts()[k] as f64,
                background: total
                    * pedestal
                    * (1.0 - p_sc)
                    * gauss_mass(hist.edge(k), hist.edge(k + 1), mu, sigma),
                shape: 1.0,
            })
            .collect();
        let f = fit_exponential_tail(&bins, "spurious-charge fit")?;
        p_sc = p_of(f.intercept, f.slope);
        fit = Some(f);
    }
    let f = fit.expect("loop ran");
    let g_sc = -1.0 / f.slope;
    let g_err = f.cov[1][1].sqrt() / (f.slope * f.slope);

    // delta method for p_sc(a, b)
    let ha = 1e-6;
    let hb = 1e-6 * f.slope.abs();
    let dp_da = (p_of(f.intercept + ha, f.slope) - p_of(f.intercept - ha, f.slope)) / (2.0 * ha);
    let dp_db = (p_of(f.intercept, f.slope + hb) - p_of(f.intercept, f.slope - hb)) / (2.0 * hb);
    let p_var = dp_da * dp_da * f.cov[0][0]
        + 2.0 * dp_da * dp_db * f.cov[0][1]
        + dp_db * dp_db * f.cov[1][1];

    let mut estimates = BTreeMap::new();
    estimates.insert("g_sc".to_string(), Estimate::new(g_sc, g_err));
    estimates.insert(
        "p_sc".to_string(),
        Estimate::new(p_sc, p_var.max(0.0).sqrt()),
    );
    Ok(FitResult {
        estimates,
        window,
        goodness: f.goodness,
        bins_used: idx.len(),
    })
}

/// Options for [`fit_gain`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GainFitOptions {
    /// Account for pixels holding two or more photoelectrons, whose Erlang
    /// tails flatten the slope. Photoelectron numbers are taken as
    /// Poissonian with `⟨n⟩` estimated from the mean signal of the histogram.
    pub multi_event_correction: bool,
    /// Mean counts added by spurious charge (`p_sc·g_sc`), removed before
    /// estimating `⟨n⟩`.
    pub cic_mean: f64,
}

/// Tail of a Poisson number of photoelectrons (mean `λ`) through the
/// register, relative to the single-photoelectron exponential: with
/// `u = λ·x/g` the `k+1` photoelectron term adds `u^k / (k!·(k+1)!)`.
fn poisson_mixture_shape(u: f64) -> f64 {
    if u <= 0.0 {
        return 1.0;
    }
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..200 {
        term *= u / (k as f64 * (k + 1) as f64);
        sum += term;
        if term < 1e-16 * sum {
            break;
        }
    }
    sum
}

/// EM-gain fit on the far tail of an illuminated histogram.
pub fn fit_gain(
    hist: &Histogram,
    mu: f64,
    sigma: f64,
    window: Option<(f64, f64)>,
    options: GainFitOptions,
) -> Result<FitResult> {
    check_noise_inputs(hist, mu, sigma)?;
    let window = check_window(
        hist,
        window.unwrap_or_else(|| default_tail_window(hist, mu, sigma)),
    )?;
    let idx = bins_in_window(hist, window);
    let total = hist.total() as f64;
    let pedestal = pedestal_fraction(hist, mu);
    let signal_mean = hist.mean() - mu - options.cic_mean;

    let mut g = None::<f64>;
    let mut fit = None;
    for _ in 0..20 {
        let ratio = match (options.multi_event_correction, g) {
            (true, Some(g)) => 0.5 * (signal_mean / g).max(0.0),
            _ => 0.0,
        };
        let bins: Vec<TailBin> = idx
            .iter()
            .map(|&k| {
                let x = hist.center(k) - mu;
                let shape = match g {
                    Some(g) if ratio > 0.0 => {
                        poisson_mixture_shape(2.0 * ratio * (x - sigma * sigma / g) / g)
                    }
                    _ => 1.0,
                };
                TailBin {
                    x,
                    n: hist.bin_counts()[k] as f64,
                    background: total
                        * pedestal
                        * gauss_mass(hist.edge(k), hist.edge(k + 1), mu, sigma),
                    shape,
                }
            })
            .collect();
        let f = fit_exponential_tail(&bins, "gain fit")?;
        let new_g = -1.0 / f.slope;
        let done = g.is_some_and(|old| (new_g - old).abs() <= 1e-10 * old)
            || !options.multi_event_correction;
        g = Some(new_g);
        fit = Some(f);
        if done {
            break;
        }
    }
    let f = fit.expect("loop ran");
    let g = -1.0 / f.slope;
    let mut estimates = BTreeMap::new();
    estimates.insert(
        "g".to_string(),
        Estimate::new(g, f.cov[1][1].sqrt() / (f.slope * f.slope)),
    );
    Ok(FitResult {
        estimates,
        window,
        goodness: f.goodness,
        bins_used: idx.len(),
    })
}

/// All detector parameters recovered from histograms (`eta0` excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorFit {
    pub mu: Estimate,
    pub sigma: Estimate,
    pub p_sc: Estimate,
    pub g_sc: Estimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Estimate>,
}

impl DetectorFit {
    /// Full parameter set; requires the gain to have been fitted.
    pub fn to_params(&self, eta0: f64) -> Result<EmccdParams> {
        let g = self
            .g
            .ok_or_else(|| Error::invalid("gain was not fitted (no illuminated stack)"))?;
        let p = EmccdParams {
            g: g.value,
            g_sc: self.g_sc.value,
            p_sc: self.p_sc.value.max(0.0),
            mu: self.mu.value,
            sigma: self.sigma.value,
            eta0,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Read noise and spurious charge from a dark histogram.
///
/// The Gaussian and tail fits are alternated once: the read-noise core is
/// refitted with the fitted spurious-charge contribution as background, then
/// the tail is refitted with the refined `mu`, `sigma`.
pub fn fit_dark(hist: &Histogram) -> Result<(FitResult, FitResult)> {
    let window = default_read_noise_window(hist);
    let rn = fit_read_noise(hist, Some(window))?;
    let cic = fit_cic(hist, rn.value("mu"), rn.value("sigma"), None)?;

    let total = hist.total() as f64;
    let probe = EmccdParams {
        g: 1.0,
        eta0: 1.0,
        mu: rn.value("mu"),
        sigma: rn.value("sigma"),
        g_sc: cic.value("g_sc"),
        p_sc: 0.0,
    };
    let p_sc = cic.value("p_sc").clamp(0.0, 0.999);
    // CIC entries per bin: p_sc·N·(CIC tail at lo − at hi), using the noise
    // model with p_sc = 1 to isolate the branch.
    let branch = EmccdParams {
        p_sc: 0.999_999_999,
        ..probe
    };
    let rn2 = fit_read_noise_with_background(hist, Some(window), |lo, hi| {
        let lo_t = noise_click_prob(Threshold(lo), &branch).unwrap_or(0.0);
        let hi_t = noise_click_prob(Threshold(hi), &branch).unwrap_or(0.0);
        total * p_sc * (lo_t - hi_t).max(0.0)
    })?;
    let cic2 = fit_cic(hist, rn2.value("mu"), rn2.value("sigma"), None)?;
    Ok((rn2, cic2))
}

struct StageFits {
    read_noise: FitResult,
    cic: FitResult,
    gain: Option<FitResult>,
}

fn fit_stages(dark: &Histogram, illuminated: Option<&Histogram>) -> Result<StageFits> {
    let (read_noise, cic) = fit_dark(dark)?;
    let gain = match illuminated {
        Some(h) => {
            let opts = GainFitOptions {
                multi_event_correction: true,
                cic_mean: cic.value("p_sc") * cic.value("g_sc"),
            };
            Some(fit_gain(
                h,
                read_noise.value("mu"),
                read_noise.value("sigma"),
                None,
                opts,
            )?)
        }
        None => None,
    };
    Ok(StageFits {
        read_noise,
        cic,
        gain,
    })
}

impl StageFits {
    fn detector(&self) -> DetectorFit {
        DetectorFit {
            mu: self.read_noise.get("mu").expect("fitted"),
            sigma: self.read_noise.get("sigma").expect("fitted"),
            p_sc: self.cic.get("p_sc").expect("fitted"),
            g_sc: self.cic.get("g_sc").expect("fitted"),
            g: self.gain.as_ref().map(|f| f.get("g").expect("fitted")),
        }
    }
}

/// Runs the dark fits and, when an illuminated histogram is supplied, the
/// gain fit. Uncertainties are those of the fit covariance.
pub fn fit_detector(dark: &Histogram, illuminated: Option<&Histogram>) -> Result<DetectorFit> {
    Ok(fit_stages(dark, illuminated)?.detector())
}

/// Detector fit of whole stacks with frame-resampled uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorReport {
    /// Estimates with delete-one-block jackknife uncertainties.
    pub params: DetectorFit,
    /// The individual fits, uncertainties from the fit covariance.
    pub read_noise: FitResult,
    pub cic: FitResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<FitResult>,
    /// Number of frame blocks used for resampling.
    pub blocks: usize,
}

/// Fits the detector parameters to a dark stack (and an illuminated one)
/// and estimates their uncertainties by refitting with each block of
/// frames left out in turn. With a single frame the covariance
/// uncertainties are kept.
pub fn fit_detector_stacks(
    dark: &FrameStack,
    illuminated: Option<&FrameStack>,
) -> Result<DetectorReport> {
    let dark_blocks = block_ranges(dark.n_frames(), super::MAX_BLOCKS);
    let (dark_all, dark_parts) = build_group_histograms(dark, 1, &dark_blocks)?;
    let ill = match illuminated {
        Some(s) => {
            let blocks = block_ranges(s.n_frames(), super::MAX_BLOCKS);
            Some(build_group_histograms(s, 1, &blocks)?)
        }
        None => None,
    };
    let full = fit_stages(&dark_all, ill.as_ref().map(|i| &i.0))?;
    let mut params = full.detector();

    let resample =
        |all: &Histogram, parts: &[Histogram], fit: &dyn Fn(&Histogram) -> Result<DetectorFit>| {
            parts
                .iter()
                .map(|p| fit(&all.minus(p)?))
                .collect::<Result<Vec<DetectorFit>>>()
        };
    let se = |fits: &[DetectorFit], pick: fn(&DetectorFit) -> f64| {
        jackknife_se(&fits.iter().map(pick).collect::<Vec<_>>())
    };

    if dark_parts.len() >= 2 {
        let ill_all = ill.as_ref().map(|i| &i.0);
        let fits = resample(&dark_all, &dark_parts, &|h| {
            Ok(fit_stages(h, ill_all)?.detector())
        })?;
        params.mu.uncertainty = se(&fits, |f| f.mu.value);
        params.sigma.uncertainty = se(&fits, |f| f.sigma.value);
        params.p_sc.uncertainty = se(&fits, |f| f.p_sc.value);
        params.g_sc.uncertainty = se(&fits, |f| f.g_sc.value);
    }
    if let (Some((ill_all, ill_parts)), Some(g)) = (&ill, params.g.as_mut()) {
        if ill_parts.len() >= 2 {
            let fits = resample(ill_all, ill_parts, &|h| {
                let opts = GainFitOptions {
                    multi_event_correction: true,
                    cic_mean: full.cic.value("p_sc") * full.cic.value("g_sc"),
                };
                let f = fit_gain(
                    h,
                    full.read_noise.value("mu"),
                    full.read_noise.value("sigma"),
                    None,
                    opts,
                )?;
                Ok(DetectorFit {
                    g: f.get("g"),
                    ..full.detector()
                })
            })?;
            g.uncertainty = se(&fits, |f| f.g.expect("fitted").value);
        }
    }
    Ok(DetectorReport {
        params,
        read_noise: full.read_noise,
        cic: full.cic,
        gain: full.gain,
        blocks: dark_parts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Noise-free histogram of entries expected from a Gaussian.
    fn gaussian_hist(total: f64, mu: f64, sigma: f64, lo: f64, n: usize) -> Histogram {
        let bins = (0..n)
            .map(|k| {
                let a = lo + k as f64;
                (total * gauss_mass(a, a + 1.0, mu, sigma)).round() as u64
            })
            .collect();
        Histogram::from_bins(lo, 1.0, bins).unwrap()
    }

    fn exp_hist(total: f64, mu: f64, g: f64, lo: f64, n: usize) -> Histogram {
        let bins = (0..n)
            .map(|k| {
                let a = lo + k as f64 - mu;
                (total * ((-a / g).exp() - (-(a + 1.0) / g).exp())).round() as u64
            })
            .collect();
        Histogram::from_bins(lo, 1.0, bins).unwrap()
    }

    #[test]
    fn noiseless_gaussian_is_recovered_exactly() {
        let h = gaussian_hist(1e14, 507.9, 24.88, 300.5, 420);
        let f = fit_read_noise(&h, None).unwrap();
        assert!((f.value("mu") - 507.9).abs() < 1e-8, "{}", f.value("mu"));
        assert!(
            (f.value("sigma") - 24.88).abs() < 1e-8,
            "{}",
            f.value("sigma")
        );
    }

    #[test]
    fn narrow_window_is_a_fit_failure() {
        let h = gaussian_hist(1e6, 507.9, 24.88, 300.5, 420);
        let err = fit_read_noise(&h, Some((507.0, 510.0))).unwrap_err();
        assert!(matches!(err, Error::FitFailure(_)));
    }

    #[test]
    fn exact_exponential_tail_gives_slope() {
        // pure exponential starting far above the bias: no Gaussian pedestal
        let h = exp_hist(1e13, 0.0, 141.0, 200.5, 3000);
        let f = fit_cic(&h, 0.0, 10.0, None).unwrap();
        assert!(
            (f.value("g_sc") - 141.0).abs() < 1e-6 * 141.0,
            "{}",
            f.value("g_sc")
        );

        let f = fit_gain(&h, 0.0, 10.0, None, GainFitOptions::default()).unwrap();
        assert!((f.value("g") - 141.0).abs() < 1e-6 * 141.0);
    }

    #[test]
    fn tail_without_counts_fails() {
        let h = gaussian_hist(1e6, 507.9, 24.88, 300.5, 420);
        assert!(matches!(
            fit_cic(&h, 507.9, 24.88, None),
            Err(Error::FitFailure(_))
        ));
    }

    #[test]
    fn mixture_shape_series() {
        assert_eq!(poisson_mixture_shape(-1.0), 1.0);
        assert!(
            (poisson_mixture_shape(0.1) - (1.0 + 0.05 + 0.01 / 12.0 + 0.001 / 144.0)).abs() < 1e-7
        );
        // I1(2√u)/√u at u = 4: I1(4) = 9.759465153704
        assert!((poisson_mixture_shape(4.0) - 9.759_465_153_704_45 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn detector_fit_requires_gain_for_params() {
        let e = Estimate::new(1.0, 0.1);
        let fit = DetectorFit {
            mu: e,
            sigma: e,
            p_sc: Estimate::new(0.0, 0.0),
            g_sc: e,
            g: None,
        };
        assert!(fit.to_params(0.5).is_err());
        let fit = DetectorFit {
            g: Some(Estimate::new(100.0, 1.0)),
            ..fit
        };
        assert_eq!(fit.to_params(0.5).unwrap().g, 100.0);
    }
}
