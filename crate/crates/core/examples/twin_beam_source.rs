//! Twin-beam photoelectron maps and their correlations.
//!
//! ```text
//! cargo run --example twin_beam_source
//! ```
//!
//! Pairs each beam-1 pixel with its conjugate in beam 2 and compares the
//! measured noise reduction factor `ζ` and covariance `C` with
//! `ζ = (1 + α)/2 − η·A` and `C = η·A·⟨N₁⟩`.

use emccd_cal::estim::{pair_statistics, RegionPair};
use emccd_cal::readout::twin_beam_photoelectrons;
use emccd_cal::source::{
    analytic_pair_stats, theoretical_correlation, theoretical_nrf, SourceParams,
};

fn main() -> emccd_cal::Result<()> {
    for crosstalk in [0.0, 0.2] {
        let source = SourceParams {
            modes_per_pair: 2000,
            mean_per_mode: 1e-3,
            eta1: 0.54,
            eta2: 0.54,
            crosstalk,
            width: 60,
            height: 60,
            frames: 40,
        };
        let stack = twin_beam_photoelectrons(&source, 42)?;
        let pairs = RegionPair::centered(stack.width(), stack.height(), 50)?;
        let a = pairs.geometric_factor(crosstalk)?;

        let pe = stack.photoelectrons()?;
        let len = stack.frame_len();
        let (mut n1, mut n2) = (Vec::new(), Vec::new());
        for f in 0..stack.n_frames() {
            for c in pairs.cells() {
                n1.push(c.beam1.iter().map(|&p| pe[f * len + p] as f64).sum());
                n2.push(c.beam2.iter().map(|&p| pe[f * len + p] as f64).sum());
            }
        }
        let s = pair_statistics(&n1, &n2)?;
        let theory = analytic_pair_stats(&source)?;
        println!(
            "crosstalk {crosstalk}: A = {a}, {} pixel pairs",
            s.n_samples
        );
        println!(
            "  <N1>  measured {:.4}  model {:.4}",
            s.n1_mean, theory.mean1
        );
        println!("  Var1  measured {:.4}  model {:.4}", s.var1, theory.var1);
        println!(
            "  C     measured {:.4}  relation {:.4}",
            s.c,
            theoretical_correlation(source.eta1, a, s.n1_mean)?
        );
        println!(
            "  zeta  measured {:.4}  relation {:.4}",
            s.zeta,
            theoretical_nrf(source.eta1, s.alpha, a)?
        );
    }
    Ok(())
}
