//! Absolute efficiency in the analog regime.
//!
//! ```text
//! cargo run --release --example analog_calibration
//! ```
//!
//! Bright twin beams (about 5 photoelectrons per pixel) are read out
//! proportionally. Counts are converted to photoelectrons with the fitted
//! bias and gain, the read-noise variance is removed from the difference
//! `N₁ − αN₂`, and `η₀` follows from `ζ = (1 + α)/2 − η₀·A`.

use emccd_cal::estim::{estimate_eta_analog, fit_detector_stacks, RegionPair};
use emccd_cal::model::EmccdParams;
use emccd_cal::readout::{
    render_dark_stack, render_flat_field_stack, render_twin_beam_stack, ReadoutMode,
};
use emccd_cal::source::SourceParams;

fn main() -> emccd_cal::Result<()> {
    let truth = EmccdParams::REFERENCE;
    let dark = render_dark_stack(200, 200, 20, &truth, 11)?;
    let lit = render_flat_field_stack(200, 200, 20, 0.1, &truth, 12)?;
    let detector = fit_detector_stacks(&dark, Some(&lit))?.params;

    let modes = 10_000;
    let source = SourceParams {
        modes_per_pair: modes,
        mean_per_mode: 5.0 / (truth.eta0 * modes as f64),
        eta1: truth.eta0,
        eta2: truth.eta0,
        crosstalk: 0.0,
        width: 60,
        height: 60,
        frames: 300,
    };
    let stack = render_twin_beam_stack(&source, &truth, ReadoutMode::Proportional, 13)?;
    let regions = RegionPair::centered(stack.width(), stack.height(), 50)?;
    let a = regions.geometric_factor(source.crosstalk)?;
    let cal = estimate_eta_analog(&stack, &regions, a, &detector)?;

    let s = cal.stats;
    println!(
        "<N1> = {:.3}, <N2> = {:.3}, alpha = {:.4}",
        s.n1_mean, s.n2_mean, s.alpha
    );
    println!(
        "zeta (read noise removed) = {:.4} ± {:.4}",
        cal.zeta_corrected.value, cal.zeta_corrected.uncertainty
    );
    println!(
        "eta0 from zeta            = {:.4} ± {:.4}",
        cal.eta0.value, cal.eta0.uncertainty
    );
    println!(
        "eta0 from C               = {:.4} ± {:.4}",
        cal.eta0_c.value, cal.eta0_c.uncertainty
    );
    println!("truth                     = {}", truth.eta0);
    println!("consistent: {}", cal.consistent);
    Ok(())
}
