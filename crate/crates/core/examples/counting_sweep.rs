//! Efficiency versus threshold in the photon-counting regime.
//!
//! ```text
//! cargo run --release --example counting_sweep
//! ```
//!
//! Dim twin beams (0.01 photons per pixel) are thresholded at a range of
//! levels. The measured efficiency is compared with `η₀·P₁(x ≥ T)` and the
//! dark click rate with the noise model, using the covariance between
//! thresholds for the chi-square.

use emccd_cal::cli::compare_curve;
use emccd_cal::estim::{estimate_eta_counting, RegionPair};
use emccd_cal::model::{EmccdParams, Threshold};
use emccd_cal::readout::{render_dark_stack, render_twin_beam_stack, ReadoutMode};
use emccd_cal::source::SourceParams;

fn main() -> emccd_cal::Result<()> {
    let truth = EmccdParams::REFERENCE;
    let source = SourceParams {
        modes_per_pair: 1000,
        mean_per_mode: 1e-5,
        eta1: truth.eta0,
        eta2: truth.eta0,
        crosstalk: 0.0,
        width: 80,
        height: 80,
        frames: 1000,
    };
    source.check_low_illumination()?;
    let counts = render_twin_beam_stack(&source, &truth, ReadoutMode::ElectronMultiplying, 21)?;
    let dark = render_dark_stack(160, 80, 50, &truth, 22)?;
    let regions = RegionPair::centered(counts.width(), counts.height(), 80)?;
    let thresholds: Vec<Threshold> = (560..=900)
        .step_by(40)
        .map(|t| Threshold(t as f64))
        .collect();

    // the truth stands in for fitted parameters here
    let curve = estimate_eta_counting(&counts, &dark, &regions, &thresholds, 1.0, &truth)?;
    println!("    T   eta measured        predicted   noise measured          predicted");
    for i in 0..curve.len() {
        println!(
            "{:5} {:7.4} ± {:<7.4} {:9.4}   {:9.3e} ± {:<9.2e} {:9.3e}",
            curve.thresholds[i],
            curve.eta_measured[i],
            curve.eta_uncert[i],
            curve.eta_predicted[i],
            curve.noise_measured[i],
            curve.noise_uncert[i],
            curve.noise_predicted[i],
        );
    }
    let report = compare_curve(&curve)?;
    println!(
        "\nreduced chi-square: eta {:.2} (ignoring correlations {:.2}), noise {:.2}",
        report.eta.reduced_chi_square,
        report.eta.diagonal_reduced_chi_square,
        report.noise.reduced_chi_square
    );
    Ok(())
}
