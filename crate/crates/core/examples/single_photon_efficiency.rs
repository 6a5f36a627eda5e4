//! Threshold efficiency and noise click probability of the reference camera.
//!
//! ```text
//! cargo run --example single_photon_efficiency
//! ```
//!
//! A pixel clicks when its counts exceed `T`. The probability that one
//! photon makes it click is `η(T) = η₀·P₁(x ≥ T)`; without light a pixel
//! still clicks with probability `Noise(T)`, from read noise below about
//! `μ + 4σ` and from clock-induced charge above.

use emccd_cal::model::{
    click_prob, eta_of_threshold, noise_click_prob, single_photon_tail, EmccdParams, Threshold,
};

fn main() -> emccd_cal::Result<()> {
    let p = EmccdParams::REFERENCE;
    println!("{p:?}");
    println!(
        "single-event model valid from T = mu + 2 sigma = {:.2}\n",
        p.validity_threshold()
    );
    println!("    T     P1(x>=T)   eta(T)     Noise(T)     P_click(p_ph = 0.01)");
    for t in (500..=900).step_by(40) {
        let t = Threshold(t as f64);
        println!(
            "{:5} {:10.5} {:10.5} {:12.4e} {:12.4e}",
            t.value(),
            single_photon_tail(t, &p)?,
            eta_of_threshold(t, &p)?,
            noise_click_prob(t, &p)?,
            click_prob(t, 0.01, &p)?,
        );
    }

    // integer counts: `counts > 560` is the continuous level 560.5
    let t = Threshold(560.0);
    println!(
        "\nT = 560 on rounded counts uses level {} -> eta {:.5}",
        t.quantized_level().value(),
        eta_of_threshold(t.quantized_level(), &p)?
    );
    Ok(())
}
