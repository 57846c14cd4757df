//! Log-log SVG figure: per-`n` means with standard-error bars and the fitted
//! power law as a dashed line.

use std::fmt::Write;

use super::rate::RateFit;
use super::sweep::SweepResult;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlotPoint {
    pub n: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogLogPlot {
    pub title: String,
    pub y_label: String,
    pub points: Vec<PlotPoint>,
    pub fit: Option<RateFit>,
}

impl LogLogPlot {
    pub fn from_sweep(sweep: &SweepResult, fit: Option<RateFit>) -> Self {
        Self {
            title: format!("{}, k = {}", sweep.config.model.label(), sweep.config.k),
            y_label: format!("mean {}", sweep.loss_name()),
            points: sweep
                .summary
                .iter()
                .map(|s| PlotPoint {
                    n: s.n as f64,
                    mean: s.mean_loss,
                    stderr: s.stderr,
                })
                .collect(),
            fit,
        }
    }

    pub fn to_svg(&self) -> String {
        let pts: Vec<&PlotPoint> = self.points.iter().filter(|p| p.n > 0.0 && p.mean > 0.0 && p.mean.is_finite()).collect();
        let (x_lo, x_hi) = decade_range(pts.iter().map(|p| p.n));
        let (y_lo, y_hi) = decade_range(pts.iter().flat_map(|p| {
            let se = if p.stderr.is_finite() { p.stderr } else { 0.0 };
            [p.mean + se, if p.mean - se > 0.0 { p.mean - se } else { p.mean }]
        }));
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let sx = |n: f64| LEFT + (n.log10() - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = |v: f64| TOP + (y_hi - v.log10()) / (y_hi - y_lo) * plot_h;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title));

        // grid and ticks
        for (lo, hi, horizontal) in [(x_lo, x_hi, false), (y_lo, y_hi, true)] {
            let decades = (hi - lo).round() as i32;
            for e in (lo as i32)..=(hi as i32) {
                let v = 10f64.powi(e);
                if horizontal {
                    let y = sy(v);
                    let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, WIDTH - RIGHT);
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">10<tspan dy="-6" font-size="9">{e}</tspan></text>"#,
                        LEFT - 6.0,
                        y + 4.0
                    );
                } else {
                    let x = sx(v);
                    let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/>"##, HEIGHT - BOTTOM);
                    let _ = writeln!(
                        s,
                        r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">10<tspan dy="-6" font-size="9">{e}</tspan></text>"#,
                        HEIGHT - BOTTOM + 20.0
                    );
                }
                if decades <= 3 && e < hi as i32 {
                    for m in 2..10 {
                        let v = f64::from(m) * 10f64.powi(e);
                        if horizontal {
                            let y = sy(v);
                            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#333333"/>"##, LEFT + 4.0);
                        } else {
                            let x = sx(v);
                            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333333"/>"##, HEIGHT - BOTTOM - 4.0, HEIGHT - BOTTOM);
                        }
                    }
                }
            }
        }
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333333"/>"##
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">sample size n</text>"#, LEFT + plot_w / 2.0, HEIGHT - 16.0);
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        if let Some(fit) = self.fit {
            let (n0, n1) = (10f64.powf(x_lo), 10f64.powf(x_hi));
            let f = |n: f64| (fit.intercept + fit.slope * n.ln()).exp();
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#1f77b4" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
                sx(n0),
                sy(f(n0)),
                sx(n1),
                sy(f(n1))
            );
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#1f77b4">fitted slope {:.3} (R² {:.3})</text>"##,
                WIDTH - RIGHT - 8.0,
                TOP + 18.0,
                fit.slope,
                fit.r_squared
            );
        }
        let _ = writeln!(s, r#"<clipPath id="area"><rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}"/></clipPath>"#);
        let _ = writeln!(s, r#"<g clip-path="url(#area)">"#);
        for p in &pts {
            let x = sx(p.n);
            if p.stderr.is_finite() && p.stderr > 0.0 {
                let top = sy(p.mean + p.stderr);
                let bottom = if p.mean - p.stderr > 0.0 { sy(p.mean - p.stderr) } else { TOP + plot_h };
                let _ = writeln!(
                    s,
                    r##"<path d="M{:.2} {top:.2}H{:.2}M{x:.2} {top:.2}V{bottom:.2}M{:.2} {bottom:.2}H{:.2}" stroke="#ff7f0e" fill="none"/>"##,
                    x - 3.0,
                    x + 3.0,
                    x - 3.0,
                    x + 3.0
                );
            }
            let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="#ff7f0e"/>"##, sy(p.mean));
        }
        let _ = writeln!(s, "</g>");
        s.push_str("</svg>\n");
        s
    }
}

/// Whole decades enclosing the positive finite values; `(0, 1)` if none.
fn decade_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| *v > 0.0 && v.is_finite()) {
        lo = lo.min(v.log10());
        hi = hi.max(v.log10());
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_points_bars_and_fit() {
        let plot = LogLogPlot {
            title: "model1 <test>".into(),
            y_label: "mean dbar".into(),
            points: vec![
                PlotPoint { n: 100.0, mean: 0.1, stderr: 0.01 },
                PlotPoint { n: 1000.0, mean: 0.03, stderr: 0.005 },
                PlotPoint { n: 10000.0, mean: 0.01, stderr: f64::NAN },
            ],
            fit: Some(RateFit {
                slope: -0.5,
                intercept: 0.0,
                r_squared: 0.99,
                points: 3,
            }),
        };
        let svg = plot.to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("stroke=\"#ff7f0e\" fill=\"none\"").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("&lt;test&gt;"));
    }

    #[test]
    fn decades() {
        assert_eq!(decade_range([150.0, 9000.0].into_iter()), (2.0, 4.0));
        assert_eq!(decade_range([100.0].into_iter()), (2.0, 3.0));
        assert_eq!(decade_range(std::iter::empty()), (0.0, 1.0));
    }
}
