//! Samples the multiplication register and compares the draws with the
//! Erlang density.
//!
//! ```text
//! cargo run --example em_register
//! ```

use emccd_cal::model::{em_gain_pdf, sample_em_output, GainDensity};
use emccd_cal::rng::{substream, Purpose};

fn main() -> emccd_cal::Result<()> {
    let g = 147.0;
    let mut rng = substream(1, Purpose::Test, 0);

    assert_eq!(em_gain_pdf(0.0, 0, g)?, GainDensity::PointMassAtZero);
    println!(
        "n = 0 leaves the register empty: {:?}",
        em_gain_pdf(0.0, 0, g)?
    );

    println!("\n n   mean      n·g     var/(n·g²)");
    for n in 1..=5u32 {
        let draws: Vec<f64> = (0..200_000)
            .map(|_| sample_em_output(n, g, &mut rng))
            .collect::<emccd_cal::Result<_>>()?;
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        println!(
            "{n:2} {m:8.2} {:8.1} {:8.4}",
            n as f64 * g,
            v / (n as f64 * g * g)
        );
    }

    // a histogram of single-electron outputs against the exponential density
    let width = 50.0;
    let mut bins = [0u32; 12];
    let total = 200_000;
    for _ in 0..total {
        let x = sample_em_output(1, g, &mut rng)?;
        if let Some(b) = bins.get_mut((x / width) as usize) {
            *b += 1;
        }
    }
    println!("\n  counts      sampled   density·width");
    for (k, &c) in bins.iter().enumerate() {
        let x = (k as f64 + 0.5) * width;
        let d = em_gain_pdf(x, 1, g)?.density().unwrap_or(0.0);
        println!(
            "{:4}-{:<4} {:10.5} {:12.5}",
            k as f64 * width,
            (k + 1) as f64 * width,
            c as f64 / total as f64,
            d * width
        );
    }
    Ok(())
}
