//! Parameter estimation: histogram fits of the detector noise model and the
//! twin-beam efficiency estimators.

mod fit;
mod histogram;
mod twin;

pub use fit::{
    fit_cic, fit_dark, fit_detector, fit_detector_stacks, fit_gain, fit_read_noise,
    fit_read_noise_with_background, robust_width, DetectorFit, DetectorReport, Estimate, FitResult,
    GainFitOptions,
};
pub use histogram::{build_group_histograms, build_histogram, Histogram};
pub use twin::{
    count_region_clicks, estimate_eta_analog, estimate_eta_counting, pair_statistics,
    AnalogCalibration, CalibrationCurve, CellPair, ClickCounts, PairStatistics, Rect, Region,
    RegionPair, MAX_BLOCKS,
};
