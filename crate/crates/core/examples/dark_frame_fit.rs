//! Read noise and clock-induced charge from dark frames.
//!
//! ```text
//! cargo run --example dark_frame_fit [histogram.svg]
//! ```
//!
//! Renders dark frames of the reference camera, fits the Gaussian core and
//! the exponential spurious-charge tail of their histogram, and optionally
//! plots the histogram with the fitted model on a log scale.

use std::path::PathBuf;

use emccd_cal::estim::{build_histogram, fit_detector_stacks};
use emccd_cal::frameio::{write_svg, Plot};
use emccd_cal::model::{noise_click_prob, EmccdParams, Threshold};
use emccd_cal::readout::render_dark_stack;

fn main() -> emccd_cal::Result<()> {
    let truth = EmccdParams::REFERENCE;
    let dark = render_dark_stack(200, 200, 20, &truth, 7)?;
    let report = fit_detector_stacks(&dark, None)?;
    let p = report.params;
    println!("             fitted                    truth");
    println!(
        "mu     {:9.3} ± {:<9.3}      {}",
        p.mu.value, p.mu.uncertainty, truth.mu
    );
    println!(
        "sigma  {:9.4} ± {:<9.4}      {}",
        p.sigma.value, p.sigma.uncertainty, truth.sigma
    );
    println!(
        "p_sc   {:9.5} ± {:<9.5}      {}",
        p.p_sc.value, p.p_sc.uncertainty, truth.p_sc
    );
    println!(
        "g_sc   {:9.2} ± {:<9.2}      {}",
        p.g_sc.value, p.g_sc.uncertainty, truth.g_sc
    );
    println!("(uncertainties from {} frame blocks)", report.blocks);

    if let Some(path) = std::env::args_os().nth(1).map(PathBuf::from) {
        let hist = build_histogram(&dark, 4)?;
        let fitted = emccd_cal::model::EmccdParams {
            mu: p.mu.value,
            sigma: p.sigma.value,
            p_sc: p.p_sc.value,
            g_sc: p.g_sc.value,
            ..truth
        };
        let n = hist.total() as f64;
        let model = |lo: f64, hi: f64| {
            n * (noise_click_prob(Threshold(lo), &fitted).unwrap()
                - noise_click_prob(Threshold(hi), &fitted).unwrap())
        };
        let mut plot = Plot::histogram(&hist, Some(&model), true);
        plot.options.title = "Dark frames".into();
        write_svg(&plot, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
