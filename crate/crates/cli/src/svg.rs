//! Minimal deterministic SVG line plots: axes, ticks, labels, legend.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlotError {
    #[error("nothing to plot: series list is empty")]
    NoSeries,
    #[error("series '{0}' has no points")]
    EmptySeries(String),
    #[error("series '{series}' has non-finite data")]
    NonFinite { series: String },
    #[error("log {axis} axis needs positive data, series '{series}' contains {value}")]
    NonPositive {
        series: String,
        axis: &'static str,
        value: f64,
    },
    #[error("writing {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: AxisScale,
    pub y_scale: AxisScale,
}

impl PlotSpec {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_scale: AxisScale, y_scale: AxisScale) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_scale,
            y_scale,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Axis {
    scale: AxisScale,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(scale: AxisScale, min: f64, max: f64) -> Self {
        let (mut lo, mut hi) = match scale {
            AxisScale::Linear => (min, max),
            AxisScale::Log => (min.log10(), max.log10()),
        };
        if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
            lo -= 0.5;
            hi += 0.5;
        } else {
            let pad = 0.03 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { scale, lo, hi }
    }

    fn transform(&self, v: f64) -> f64 {
        match self.scale {
            AxisScale::Linear => v,
            AxisScale::Log => v.log10(),
        }
    }

    /// Fraction of the axis span in [0, 1].
    fn frac(&self, v: f64) -> f64 {
        (self.transform(v) - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            AxisScale::Linear => linear_ticks(self.lo, self.hi),
            AxisScale::Log => {
                let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
                if b - a >= 1 {
                    let step = ((b - a) / 6 + 1).max(1);
                    (a..=b).step_by(step as usize).map(|k| 10f64.powi(k)).collect()
                } else {
                    // Less than a decade on screen: fall back to linear ticks in value space.
                    linear_ticks(10f64.powf(self.lo), 10f64.powf(self.hi))
                        .into_iter()
                        .filter(|v| *v > 0.0)
                        .collect()
                }
            }
        }
    }
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        let s = format!("{v:.0e}");
        return s;
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Renders the plot to an SVG document string.
pub fn render_svg_lineplot(series: &[Series], spec: &PlotSpec) -> Result<String, PlotError> {
    if series.is_empty() {
        return Err(PlotError::NoSeries);
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        if s.points.is_empty() {
            return Err(PlotError::EmptySeries(s.label.clone()));
        }
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                return Err(PlotError::NonFinite {
                    series: s.label.clone(),
                });
            }
            if spec.x_scale == AxisScale::Log && x <= 0.0 {
                return Err(PlotError::NonPositive {
                    series: s.label.clone(),
                    axis: "x",
                    value: x,
                });
            }
            if spec.y_scale == AxisScale::Log && y <= 0.0 {
                return Err(PlotError::NonPositive {
                    series: s.label.clone(),
                    axis: "y",
                    value: y,
                });
            }
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    let xa = Axis::new(spec.x_scale, xmin, xmax);
    let ya = Axis::new(spec.y_scale, ymin, ymax);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

    let mut out = String::new();
    let w = &mut out;
    // Writing to a String cannot fail.
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        w,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        w,
        r#"<rect class="frame" x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(w, r#"<g class="ticks" stroke="black">"#);
    let mut labels = String::new();
    for t in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            w,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}"/>"#,
            TOP + ph,
            TOP + ph + 5.0
        );
        let _ = writeln!(
            labels,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            tick_label(t)
        );
    }
    for t in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            w,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            labels,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, r#"<g class="tick-labels">"#);
    w.push_str(&labels);
    let _ = writeln!(w, "</g>");
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        w,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.label),
            pts.join(" ")
        );
    }
    let _ = writeln!(w, r#"<g class="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x0 = LEFT + pw + 12.0;
        let _ = writeln!(
            w,
            r#"<line x1="{x0:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#,
            x0 + 20.0
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            x0 + 26.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, "</svg>");
    Ok(out)
}

/// Renders and writes the plot to `path`.
pub fn emit_svg_lineplot(series: &[Series], spec: &PlotSpec, path: &Path) -> Result<(), PlotError> {
    let svg = render_svg_lineplot(series, spec)?;
    fs::write(path, svg).map_err(|e| PlotError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(x: AxisScale, y: AxisScale) -> PlotSpec {
        PlotSpec::new("t & <title>", "x", "y", x, y)
    }

    #[test]
    fn rejects_bad_input() {
        let s = spec(AxisScale::Linear, AxisScale::Linear);
        assert_eq!(render_svg_lineplot(&[], &s), Err(PlotError::NoSeries));
        assert!(matches!(
            render_svg_lineplot(&[Series::new("a", vec![])], &s),
            Err(PlotError::EmptySeries(_))
        ));
        let err = render_svg_lineplot(
            &[Series::new("neg", vec![(1.0, -1.0)])],
            &spec(AxisScale::Linear, AxisScale::Log),
        )
        .unwrap_err();
        assert!(err.to_string().contains("'neg'"));
    }

    #[test]
    fn output_is_deterministic_and_escaped() {
        let s = [Series::new("a<b", vec![(0.0, 1.0), (1.0, 2.0)])];
        let a = render_svg_lineplot(&s, &spec(AxisScale::Linear, AxisScale::Linear)).unwrap();
        let b = render_svg_lineplot(&s, &spec(AxisScale::Linear, AxisScale::Linear)).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("a&lt;b") && a.contains("t &amp; &lt;title&gt;"));
    }

    #[test]
    fn constant_series_gets_a_span() {
        let s = [Series::new("flat", vec![(1.0, 3.0), (2.0, 3.0)])];
        let svg = render_svg_lineplot(&s, &spec(AxisScale::Linear, AxisScale::Log)).unwrap();
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(
            linear_ticks(0.0, 1.0),
            vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]
        );
        assert_eq!(tick_label(0.6000000000000001), "0.6");
        assert_eq!(tick_label(1e-6), "1e-6");
    }
}
