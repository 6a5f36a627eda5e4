//! Writing and reading the on-disk formats.
//!
//! ```text
//! cargo run --example frame_files [directory]
//! ```
//!
//! Frame stacks are stored as EMF1 files (a 20-byte little-endian header
//! followed by the pixels) with a JSON sidecar, curves as CSV with a JSON
//! covariance companion, plots as SVG.

use std::path::PathBuf;

use emccd_cal::estim::CalibrationCurve;
use emccd_cal::frameio::{
    covariance_path, read_curve_covariance, read_curve_csv, read_meta, read_stack,
    write_curve_covariance, write_curve_csv, write_stack, write_svg, Plot, Provenance,
};
use emccd_cal::model::{EmccdParams, Threshold};
use emccd_cal::readout::{apply_threshold, render_dark_stack};

fn main() -> emccd_cal::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("emccd-cal-frame-files"));
    std::fs::create_dir_all(&dir).map_err(|e| emccd_cal::Error::Parse(e.to_string()))?;

    let p = EmccdParams::REFERENCE;
    let dark = render_dark_stack(64, 32, 5, &p, 99)?;
    let path = dir.join("dark.emf");
    let provenance = Provenance {
        seed: Some(99),
        params: serde_json::json!({ "detector": p }),
    };
    write_stack(&dark, &path, &provenance)?;
    let back = read_stack(&path)?;
    assert_eq!(back, dark);
    let meta = read_meta(&path)?;
    println!(
        "{}: {} {}x{}x{}, seed {:?}",
        path.display(),
        meta.kind,
        meta.width,
        meta.height,
        meta.n_frames,
        meta.seed
    );

    let clicks = apply_threshold(&dark, Threshold(600.0))?;
    let click_path = dir.join("clicks.emf");
    write_stack(&clicks, &click_path, &Provenance::default())?;
    let n: usize = read_stack(&click_path)?
        .clicks()?
        .iter()
        .map(|&c| c as usize)
        .sum();
    println!("{}: {n} clicks above 600", click_path.display());

    let curve = CalibrationCurve {
        thresholds: vec![600.0, 700.0],
        eta_measured: vec![0.29, 0.15],
        eta_uncert: vec![0.01, 0.01],
        eta_predicted: vec![0.2926, 0.1485],
        noise_measured: vec![2.4e-3, 1.2e-3],
        noise_uncert: vec![1e-4, 1e-4],
        noise_predicted: vec![2.43e-3, 1.17e-3],
        below_validity: vec![false, false],
        eta_cross_check: vec![f64::NAN, f64::NAN],
        eta_covariance: vec![vec![1e-4, 6e-5], vec![6e-5, 1e-4]],
        noise_covariance: vec![vec![1e-8, 0.0], vec![0.0, 1e-8]],
        covariance_resamples: 200,
    };
    let csv = dir.join("curve.csv");
    write_curve_csv(&curve, &csv)?;
    write_curve_covariance(&curve, &covariance_path(&csv))?;
    let mut back = read_curve_csv(&csv)?;
    read_curve_covariance(&mut back, &covariance_path(&csv))?;
    assert_eq!(back.eta_measured, curve.eta_measured);
    assert_eq!(back.eta_covariance, curve.eta_covariance);
    println!(
        "{}:\n{}",
        csv.display(),
        std::fs::read_to_string(&csv).unwrap_or_default()
    );

    let svg = dir.join("eta_curve.svg");
    write_svg(&Plot::eta_curve(&curve), &svg)?;
    println!("wrote {}", svg.display());
    Ok(())
}
