//! Self-contained SVG plots: measured points with error bars and a predicted
//! curve.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estim::{CalibrationCurve, Histogram};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 76.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    /// One-sigma error bar; 0 draws none.
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plot {
    pub points: Vec<PlotPoint>,
    pub line: Vec<(f64, f64)>,
    pub options: PlotOptions,
}

impl Plot {
    /// Measured and predicted efficiency versus threshold.
    pub fn eta_curve(curve: &CalibrationCurve) -> Self {
        Plot {
            points: (0..curve.len())
                .map(|i| PlotPoint {
                    x: curve.thresholds[i],
                    y: curve.eta_measured[i],
                    err: curve.eta_uncert[i],
                })
                .collect(),
            line: curve
                .thresholds
                .iter()
                .copied()
                .zip(curve.eta_predicted.iter().copied())
                .collect(),
            options: PlotOptions {
                title: "Threshold efficiency".into(),
                x_label: "threshold T [counts]".into(),
                y_label: "η(T)".into(),
                log_y: false,
            },
        }
    }

    /// Measured and predicted noise click probability, log scale.
    pub fn noise_curve(curve: &CalibrationCurve) -> Self {
        Plot {
            points: (0..curve.len())
                .map(|i| PlotPoint {
                    x: curve.thresholds[i],
                    y: curve.noise_measured[i],
                    err: curve.noise_uncert[i],
                })
                .collect(),
            line: curve
                .thresholds
                .iter()
                .copied()
                .zip(curve.noise_predicted.iter().copied())
                .collect(),
            options: PlotOptions {
                title: "Noise clicks per pixel per frame".into(),
                x_label: "threshold T [counts]".into(),
                y_label: "Noise(T)".into(),
                log_y: true,
            },
        }
    }

    /// Histogram entries with Poisson error bars, and optionally the
    /// expected entries per bin `model(lo, hi)` as a line.
    pub fn histogram(
        hist: &Histogram,
        model: Option<&dyn Fn(f64, f64) -> f64>,
        log_y: bool,
    ) -> Self {
        let points = (0..hist.len())
            .map(|k| {
                let n = hist.bin_counts()[k] as f64;
                PlotPoint {
                    x: hist.center(k),
                    y: n,
                    err: n.sqrt(),
                }
            })
            .collect();
        let line = match model {
            Some(f) => (0..hist.len())
                .map(|k| (hist.center(k), f(hist.edge(k), hist.edge(k + 1))))
                .collect(),
            None => Vec::new(),
        };
        Plot {
            points,
            line,
            options: PlotOptions {
                title: "Counts histogram".into(),
                x_label: "counts".into(),
                y_label: "entries".into(),
                log_y,
            },
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round tick spacing giving roughly `target` intervals over `range`.
fn tick_step(range: f64, target: f64) -> f64 {
    let raw = range / target;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        let (v, lo, hi) = if self.log {
            (v.log10(), self.lo, self.hi)
        } else {
            (v, self.lo, self.hi)
        };
        (v - lo) / (hi - lo)
    }
}

/// Renders the plot as SVG text.
pub fn render_svg(plot: &Plot) -> Result<String> {
    let log = plot.options.log_y;
    let usable = |y: f64| y.is_finite() && (!log || y > 0.0);
    let points: Vec<&PlotPoint> = plot
        .points
        .iter()
        .filter(|p| p.x.is_finite() && usable(p.y))
        .collect();
    let line: Vec<(f64, f64)> = plot
        .line
        .iter()
        .copied()
        .filter(|&(x, y)| x.is_finite() && usable(y))
        .collect();
    if points.is_empty() && line.is_empty() {
        return Err(Error::EmptyData);
    }

    let xs = points.iter().map(|p| p.x).chain(line.iter().map(|l| l.0));
    let (mut x_lo, mut x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    if x_hi <= x_lo {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    let mut ys: Vec<f64> = line.iter().map(|l| l.1).collect();
    for p in &points {
        ys.push(p.y);
        let err = if p.err.is_finite() { p.err.abs() } else { 0.0 };
        ys.push(p.y + err);
        if !log || p.y - err > 0.0 {
            ys.push(p.y - err);
        }
    }
    let (y_min, y_max) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| {
            (a.min(y), b.max(y))
        });
    let y_axis = if log {
        let lo = y_min.log10().floor();
        let hi = y_max.log10().ceil().max(lo + 1.0);
        Axis { lo, hi, log: true }
    } else {
        let pad = if y_max > y_min {
            0.05 * (y_max - y_min)
        } else {
            0.5 * y_max.abs().max(1.0)
        };
        Axis {
            lo: y_min - pad,
            hi: y_max + pad,
            log: false,
        }
    };
    let x_axis = Axis {
        lo: x_lo,
        hi: x_hi,
        log: false,
    };

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + x_axis.map(x) * pw;
    let py = |y: f64| TOP + (1.0 - y_axis.map(y)) * ph;

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        w,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&plot.options.title)
    )
    .unwrap();
    writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();

    // x ticks
    let step = tick_step(x_hi - x_lo, 6.0);
    let mut t = (x_lo / step).ceil() * step;
    while t <= x_hi + 1e-9 * step {
        let x = px(t);
        writeln!(
            w,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            TOP + ph,
            TOP + ph + 5.0
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            fmt_tick(t, step)
        )
        .unwrap();
        t += step;
    }
    // y ticks
    if log {
        let mut d = y_axis.lo;
        while d <= y_axis.hi + 1e-9 {
            let y = py(10f64.powf(d));
            writeln!(
                w,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#,
                LEFT - 5.0
            )
            .unwrap();
            writeln!(
                w,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">10<tspan dy="-6" font-size="9">{}</tspan></text>"#,
                LEFT - 8.0,
                y + 4.0,
                d as i64
            )
            .unwrap();
            d += 1.0;
        }
    } else {
        let step = tick_step(y_axis.hi - y_axis.lo, 6.0);
        let mut t = (y_axis.lo / step).ceil() * step;
        while t <= y_axis.hi + 1e-9 * step {
            let y = py(t);
            writeln!(
                w,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#,
                LEFT - 5.0
            )
            .unwrap();
            writeln!(
                w,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                y + 4.0,
                fmt_tick(t, step)
            )
            .unwrap();
            t += step;
        }
    }
    writeln!(
        w,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&plot.options.x_label)
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&plot.options.y_label)
    )
    .unwrap();

    if !line.is_empty() {
        let coords: Vec<String> = line
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            w,
            r#"<polyline class="predicted" fill="none" stroke="crimson" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        )
        .unwrap();
    }
    writeln!(w, r#"<g class="measured" stroke="navy" fill="navy">"#).unwrap();
    let y_floor = if log {
        10f64.powf(y_axis.lo)
    } else {
        f64::NEG_INFINITY
    };
    for p in &points {
        let (x, y) = (px(p.x), py(p.y));
        if p.err.is_finite() && p.err > 0.0 {
            let top = py(p.y + p.err);
            let bottom = py((p.y - p.err).max(y_floor));
            writeln!(
                w,
                r#"<line x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{bottom:.2}"/>"#
            )
            .unwrap();
        }
        writeln!(w, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5"/>"#).unwrap();
    }
    writeln!(w, "</g>").unwrap();
    writeln!(w, "</svg>").unwrap();
    Ok(s)
}

pub fn write_svg(plot: &Plot, path: &Path) -> Result<()> {
    let text = render_svg(plot)?;
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_plot_is_an_error() {
        assert!(matches!(
            render_svg(&Plot::default()),
            Err(Error::EmptyData)
        ));
        let only_zero = Plot {
            points: vec![PlotPoint {
                x: 1.0,
                y: 0.0,
                err: 0.0,
            }],
            options: PlotOptions {
                log_y: true,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(render_svg(&only_zero), Err(Error::EmptyData)));
    }

    #[test]
    fn log_axis_has_decade_labels() {
        let hist = Histogram::from_bins(0.0, 1.0, vec![1000, 100, 10, 1]).unwrap();
        let svg = render_svg(&Plot::histogram(&hist, None, true)).unwrap();
        for d in ["0", "1", "2", "3"] {
            assert!(
                svg.contains(&format!(r#"10<tspan dy="-6" font-size="9">{d}</tspan>"#)),
                "{d}"
            );
        }
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(tick_step(340.0, 6.0), 50.0);
        assert_eq!(tick_step(0.35, 6.0), 0.05);
        assert_eq!(fmt_tick(0.05, 0.05), "0.05");
    }

    #[test]
    fn titles_are_escaped() {
        let plot = Plot {
            line: vec![(0.0, 1.0), (1.0, 2.0)],
            options: PlotOptions {
                title: "a < b & c".into(),
                ..Default::default()
            },
            ..Default::default()
        };
        let svg = render_svg(&plot).unwrap();
        assert!(svg.contains("a &lt; b &amp; c"));
    }
}
