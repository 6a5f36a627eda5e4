//! The `emccd-cal` command line.
//!
//! Five subcommands chain into the calibration workflow:
//!
//! ```text
//! simulate --mode dark|gain|analog|counting   frame stacks (EMF1 + sidecar)
//! fit --dark D [--illuminated G]              fit.json
//! calibrate --analog A --fit F                calibration.json
//! sweep --counting C --dark D --fit F --calibration K
//!                                             curve.csv (+ curve.cov.json),
//!                                             eta_curve.svg, noise_curve.svg
//! compare --curve curve.csv                   compare.json
//! ```
//!
//! Input paths default to the standard file names inside the output
//! directory, which is `--out`, else the config's `output_dir`, else the
//! directory of the first input.
//!
//! Exit codes: 0 success, 2 usage or parse error, 3 I/O or frame-file
//! error, 4 contract violation, 5 estimation failure, 6 measured and
//! predicted curves disagree.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use config::{AnalogRun, DarkRun, FrameShape, GainRun, RegionsConfig, RunConfig, SourceConfig};

use crate::error::{Error, Result};
use crate::estim::{
    estimate_eta_analog, estimate_eta_counting, fit_detector_stacks, AnalogCalibration,
    CalibrationCurve, DetectorReport, Estimate,
};
use crate::frameio::{
    covariance_path, read_curve_covariance, read_curve_csv, read_stack, write_curve_covariance,
    write_curve_csv, write_curve_csv_flagged, write_stack, write_svg, Plot, Provenance,
};
use crate::readout::{
    render_dark_stack, render_flat_field_stack, render_twin_beam_stack, ReadoutMode,
};
use crate::rng::{derive_seed, Purpose};
use crate::stats::correlated_chi_square;

/// Prints a line of the report on standard output. A closed pipe is not
/// an error: the files on disk are the results.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONTRACT: i32 = 4;
pub const EXIT_ESTIMATION: i32 = 5;
pub const EXIT_DISAGREEMENT: i32 = 6;

/// Largest reduced chi-square at which `compare` reports agreement.
pub const MAX_REDUCED_CHI_SQUARE: f64 = 2.0;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::Parse(_) => EXIT_USAGE,
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::TruncatedPayload { .. }
        | Error::TrailingData { .. }
        | Error::UnsupportedVersion { .. }
        | Error::UnknownDtype { .. } => EXIT_IO,
        Error::LowIllumination { .. }
        | Error::WrongKind { .. }
        | Error::EmptyStack
        | Error::EmptyRegion => EXIT_CONTRACT,
        Error::FitFailure(_) | Error::DegenerateInput(_) | Error::EmptyData => EXIT_ESTIMATION,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "emccd-cal",
    version,
    about = "EMCCD absolute calibration with twin beams"
)]
struct Cli {
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Dark,
    Gain,
    Analog,
    Counting,
}

impl Mode {
    fn file_name(self) -> &'static str {
        match self {
            Mode::Dark => DARK_FILE,
            Mode::Gain => GAIN_FILE,
            Mode::Analog => ANALOG_FILE,
            Mode::Counting => COUNTING_FILE,
        }
    }
}

const DARK_FILE: &str = "dark.emf";
const GAIN_FILE: &str = "gain.emf";
const ANALOG_FILE: &str = "analog.emf";
const COUNTING_FILE: &str = "counting.emf";
const FIT_FILE: &str = "fit.json";
const CALIBRATION_FILE: &str = "calibration.json";
const CURVE_FILE: &str = "curve.csv";
const COMPARE_FILE: &str = "compare.json";

#[derive(Debug, Subcommand)]
enum Command {
    /// Render frame stacks from the run configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the detector noise model to a dark stack and optionally the gain
    /// to a dimly illuminated stack.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dark: Option<PathBuf>,
        #[arg(long)]
        illuminated: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analog efficiency from a bright twin-beam stack.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        analog: Option<PathBuf>,
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Efficiency and noise versus threshold from a dim twin-beam stack.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        counting: Option<PathBuf>,
        #[arg(long)]
        dark: Option<PathBuf>,
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pulls and reduced chi-square of a curve against its prediction.
    Compare {
        #[arg(long)]
        curve: PathBuf,
        /// Covariance between thresholds; defaults to the `.cov.json`
        /// companion of the curve when present.
        #[arg(long)]
        covariance: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return EXIT_USAGE;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("EMCCD_CAL_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Simulate {
            config,
            mode,
            out,
            seed,
        } => {
            let config = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| config.output_dir.clone());
            simulate(&config, mode, &out, seed.unwrap_or(config.seed))?;
            Ok(EXIT_OK)
        }
        Command::Fit {
            config,
            dark,
            illuminated,
            out,
        } => {
            let config = config.map(|c| RunConfig::load(&c)).transpose()?;
            let out = output_dir(out, config.as_ref(), dark.as_deref())?;
            let dark = dark.unwrap_or_else(|| out.join(DARK_FILE));
            fit(&dark, illuminated.as_deref(), &out)?;
            Ok(EXIT_OK)
        }
        Command::Calibrate {
            config,
            analog,
            fit,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| config.output_dir.clone());
            let analog = analog.unwrap_or_else(|| out.join(ANALOG_FILE));
            let fit = fit.unwrap_or_else(|| out.join(FIT_FILE));
            calibrate(&config, &analog, &fit, &out)?;
            Ok(EXIT_OK)
        }
        Command::Sweep {
            config,
            counting,
            dark,
            fit,
            calibration,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| config.output_dir.clone());
            let inputs = SweepInputs {
                counting: counting.unwrap_or_else(|| out.join(COUNTING_FILE)),
                dark: dark.unwrap_or_else(|| out.join(DARK_FILE)),
                fit: fit.unwrap_or_else(|| out.join(FIT_FILE)),
                calibration: calibration.unwrap_or_else(|| out.join(CALIBRATION_FILE)),
            };
            sweep(&config, &inputs, &out)?;
            Ok(EXIT_OK)
        }
        Command::Compare {
            curve,
            covariance,
            out,
        } => {
            let out = output_dir(out, None, Some(&curve))?;
            let report = compare(&curve, covariance.as_deref(), &out)?;
            Ok(if report.agree {
                EXIT_OK
            } else {
                EXIT_DISAGREEMENT
            })
        }
    }
}

fn output_dir(
    out: Option<PathBuf>,
    config: Option<&RunConfig>,
    input: Option<&Path>,
) -> Result<PathBuf> {
    if let Some(o) = out {
        return Ok(o);
    }
    if let Some(c) = config {
        return Ok(c.output_dir.clone());
    }
    match input {
        Some(p) => Ok(p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => Err(Error::invalid("give --out, --config or an input path")),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Renders the stack of one acquisition into `out/<mode>.emf` and returns
/// its path.
fn simulate(config: &RunConfig, mode: Mode, out: &Path, seed: u64) -> Result<PathBuf> {
    let detector = &config.detector;
    let src = &config.source;
    let (stack, params) = match mode {
        Mode::Dark => {
            let (w, h, n) = src.dark_shape();
            let s = derive_seed(seed, Purpose::Dark);
            (
                render_dark_stack(w, h, n, detector, s)?,
                serde_json::to_value(&src.dark),
            )
        }
        Mode::Gain => {
            let (w, h, n) = src.gain_shape();
            let s = derive_seed(seed, Purpose::Gain);
            let mean = src.gain.mean_photoelectrons;
            (
                render_flat_field_stack(w, h, n, mean, detector, s)?,
                serde_json::to_value(&src.gain),
            )
        }
        Mode::Analog => {
            let source = src.analog()?;
            let s = derive_seed(seed, Purpose::Analog);
            say!("mean photons per pixel: {}", source.p_ph());
            (
                render_twin_beam_stack(&source, detector, ReadoutMode::Proportional, s)?,
                serde_json::to_value(source),
            )
        }
        Mode::Counting => {
            let source = src.counting();
            source.validate()?;
            source.check_low_illumination()?;
            let s = derive_seed(seed, Purpose::Counting);
            say!("p_ph: {}", source.p_ph());
            (
                render_twin_beam_stack(&source, detector, ReadoutMode::ElectronMultiplying, s)?,
                serde_json::to_value(source),
            )
        }
    };
    let params = params.map_err(|e| Error::Parse(e.to_string()))?;
    create_dir(out)?;
    let path = out.join(mode.file_name());
    let provenance = Provenance {
        seed: Some(seed),
        params: serde_json::json!({
            "mode": format!("{mode:?}").to_lowercase(),
            "detector": detector,
            "acquisition": params,
        }),
    };
    write_stack(&stack, &path, &provenance)?;
    say!("wrote {}", path.display());
    Ok(path)
}

fn fit(dark: &Path, illuminated: Option<&Path>, out: &Path) -> Result<DetectorReport> {
    let dark = read_stack(dark)?;
    let illuminated = illuminated.map(read_stack).transpose()?;
    let report = fit_detector_stacks(&dark, illuminated.as_ref())?;
    create_dir(out)?;
    let path = out.join(FIT_FILE);
    write_json(&report, &path)?;
    let p = &report.params;
    say!("mu    = {}", show(p.mu));
    say!("sigma = {}", show(p.sigma));
    say!("p_sc  = {}", show(p.p_sc));
    say!("g_sc  = {}", show(p.g_sc));
    if let Some(g) = p.g {
        say!("g     = {}", show(g));
    }
    say!("wrote {}", path.display());
    Ok(report)
}

fn show(e: Estimate) -> String {
    format!("{:.6} ± {:.6}", e.value, e.uncertainty)
}

/// Contents of `calibration.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationReport {
    pub geometric_factor: f64,
    pub calibration: AnalogCalibration,
}

fn calibrate(
    config: &RunConfig,
    analog: &Path,
    fit: &Path,
    out: &Path,
) -> Result<CalibrationReport> {
    let stack = read_stack(analog)?;
    let fit: DetectorReport = read_json(fit)?;
    let regions = config.regions.pair(stack.width(), stack.height())?;
    let a = config.regions.factor(&regions, config.source.crosstalk)?;
    let calibration = estimate_eta_analog(&stack, &regions, a, &fit.params)?;
    if !calibration.consistent {
        log::warn!(
            "noise-reduction and covariance estimates disagree: {} vs {}",
            show(calibration.eta0),
            show(calibration.eta0_c)
        );
    }
    let report = CalibrationReport {
        geometric_factor: a,
        calibration,
    };
    create_dir(out)?;
    let path = out.join(CALIBRATION_FILE);
    write_json(&report, &path)?;
    say!("eta0 = {}", show(calibration.eta0));
    say!("eta0 from covariance = {}", show(calibration.eta0_c));
    say!("wrote {}", path.display());
    Ok(report)
}

struct SweepInputs {
    counting: PathBuf,
    dark: PathBuf,
    fit: PathBuf,
    calibration: PathBuf,
}

fn sweep(config: &RunConfig, inputs: &SweepInputs, out: &Path) -> Result<CalibrationCurve> {
    let thresholds = config.thresholds();
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold_grid is empty"));
    }
    let fit: DetectorReport = read_json(&inputs.fit)?;
    let calibration: CalibrationReport = read_json(&inputs.calibration)?;
    let params = fit.params.to_params(calibration.calibration.eta0.value)?;
    let counting = read_stack(&inputs.counting)?;
    let dark = read_stack(&inputs.dark)?;
    let regions = config.regions.pair(counting.width(), counting.height())?;
    let a = config.regions.factor(&regions, config.source.crosstalk)?;
    let curve = estimate_eta_counting(&counting, &dark, &regions, &thresholds, a, &params)?;

    create_dir(out)?;
    let csv = out.join(CURVE_FILE);
    let flagged = curve.below_validity.iter().filter(|&&b| b).count();
    if flagged > 0 {
        log::warn!(
            "{flagged} of {} thresholds lie below mu + 2 sigma = {:.2}",
            curve.len(),
            params.validity_threshold()
        );
        write_curve_csv_flagged(&curve, &csv)?;
    } else {
        write_curve_csv(&curve, &csv)?;
    }
    let eta_svg = out.join("eta_curve.svg");
    let noise_svg = out.join("noise_curve.svg");
    let cov = covariance_path(&csv);
    write_curve_covariance(&curve, &cov)?;
    write_svg(&Plot::eta_curve(&curve), &eta_svg)?;
    write_svg(&Plot::noise_curve(&curve), &noise_svg)?;
    for path in [&csv, &cov, &eta_svg, &noise_svg] {
        say!("wrote {}", path.display());
    }
    Ok(curve)
}

/// Agreement of one measured column with its prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesComparison {
    pub thresholds: Vec<f64>,
    /// `(measured − predicted) / uncertainty` per point.
    pub pulls: Vec<f64>,
    /// Mean squared pull, ignoring correlations between thresholds.
    pub diagonal_reduced_chi_square: f64,
    /// `rᵀ Σ⁻¹ r / n` with the covariance between thresholds when it is
    /// known, otherwise equal to the diagonal value.
    pub reduced_chi_square: f64,
    pub correlated: bool,
}

impl SeriesComparison {
    fn new(
        thresholds: Vec<f64>,
        measured: &[f64],
        uncert: &[f64],
        predicted: &[f64],
        covariance: Option<(Vec<Vec<f64>>, usize)>,
        what: &str,
    ) -> Result<Self> {
        let mut pulls = Vec::with_capacity(measured.len());
        for i in 0..measured.len() {
            let s = uncert[i];
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Parse(format!(
                    "{what} uncertainty at T = {} is {s}; cannot form a pull",
                    thresholds[i]
                )));
            }
            pulls.push((measured[i] - predicted[i]) / s);
        }
        if pulls.is_empty() {
            return Err(Error::DegenerateInput(
                "no threshold at or above mu + 2 sigma to compare".into(),
            ));
        }
        let n = pulls.len() as f64;
        let diagonal = pulls.iter().map(|p| p * p).sum::<f64>() / n;
        let correlated = match covariance {
            Some((cov, resamples)) => {
                let residuals: Vec<f64> = (0..measured.len())
                    .map(|i| measured[i] - predicted[i])
                    .collect();
                Some(correlated_chi_square(&residuals, &cov, Some(resamples))? / n)
            }
            None => None,
        };
        Ok(SeriesComparison {
            thresholds,
            pulls,
            diagonal_reduced_chi_square: diagonal,
            reduced_chi_square: correlated.unwrap_or(diagonal),
            correlated: correlated.is_some(),
        })
    }
}

/// Contents of `compare.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareReport {
    pub eta: SeriesComparison,
    pub noise: SeriesComparison,
    /// Both reduced chi-squares are at most [`MAX_REDUCED_CHI_SQUARE`].
    pub agree: bool,
}

/// Compares the valid points of a curve with their predictions, using the
/// covariance between thresholds when the curve carries it.
pub fn compare_curve(curve: &CalibrationCurve) -> Result<CompareReport> {
    curve.validate()?;
    let valid: Vec<usize> = (0..curve.len())
        .filter(|&i| !curve.below_validity[i])
        .collect();
    let pick = |v: &[f64]| valid.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let sub = |cov: &[Vec<f64>]| {
        (!cov.is_empty()).then(|| {
            let m = valid
                .iter()
                .map(|&i| valid.iter().map(|&j| cov[i][j]).collect())
                .collect();
            (m, curve.covariance_resamples)
        })
    };
    let t = pick(&curve.thresholds);
    let eta = SeriesComparison::new(
        t.clone(),
        &pick(&curve.eta_measured),
        &pick(&curve.eta_uncert),
        &pick(&curve.eta_predicted),
        sub(&curve.eta_covariance),
        "efficiency",
    )?;
    let noise = SeriesComparison::new(
        t,
        &pick(&curve.noise_measured),
        &pick(&curve.noise_uncert),
        &pick(&curve.noise_predicted),
        sub(&curve.noise_covariance),
        "noise",
    )?;
    let agree = eta.reduced_chi_square <= MAX_REDUCED_CHI_SQUARE
        && noise.reduced_chi_square <= MAX_REDUCED_CHI_SQUARE;
    Ok(CompareReport { eta, noise, agree })
}

fn compare(curve_path: &Path, covariance: Option<&Path>, out: &Path) -> Result<CompareReport> {
    let mut curve = read_curve_csv(curve_path)?;
    let sibling = covariance_path(curve_path);
    match covariance {
        Some(p) => read_curve_covariance(&mut curve, p)?,
        None if sibling.exists() => read_curve_covariance(&mut curve, &sibling)?,
        None => log::warn!(
            "no covariance file {}; treating thresholds as independent",
            sibling.display()
        ),
    }
    let report = compare_curve(&curve)?;
    create_dir(out)?;
    let path = out.join(COMPARE_FILE);
    write_json(&report, &path)?;
    for (name, s) in [("eta", &report.eta), ("noise", &report.noise)] {
        let worst = s.pulls.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        say!(
            "{name}: {} points, reduced chi-square {:.3} ({}), diagonal {:.3}, largest |pull| {:.2}",
            s.pulls.len(),
            s.reduced_chi_square,
            if s.correlated { "with covariance" } else { "independent points" },
            s.diagonal_reduced_chi_square,
            worst
        );
    }
    say!("{}", if report.agree { "agree" } else { "disagree" });
    say!("wrote {}", path.display());
    Ok(report)
}
