//! Minimal SVG charts for evaluation artifacts.

use std::fmt::Write;

use super::{EvalReport, HistBin};
use super::metrics::CmcPoint;

const W: f64 = 480.0;
const H: f64 = 360.0;
const M: f64 = 48.0;

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        M + v / self.x_max * (W - 2.0 * M)
    }

    fn y(&self, v: f64) -> f64 {
        H - M - v / self.y_max * (H - 2.0 * M)
    }
}

fn open(title: &str, x_label: &str, y_label: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = write!(
        s,
        r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#,
        H - M,
        W - M,
        H - M,
        H - M
    );
    let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = write!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for k in 0..=4 {
        let xv = f.x_max * k as f64 / 4.0;
        let yv = f.y_max * k as f64 / 4.0;
        let _ = write!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.2}</text>"#, f.x(xv), H - M + 16.0);
        let _ = write!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#, M - 4.0, f.y(yv) + 4.0);
    }
    s
}

pub fn cmc_svg(points: &[CmcPoint]) -> String {
    let f = Frame {
        x_max: points.last().map(|p| p.threshold).unwrap_or(1.0).max(1e-9),
        y_max: 1.0,
    };
    let mut s = open("Cumulative matching curve", "absolute error threshold", "fraction of images", &f);
    let pts: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", f.x(p.threshold), f.y(p.fraction)))
        .collect();
    let _ = write!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, pts.join(" "));
    s.push_str("</svg>\n");
    s
}

pub fn histogram_svg(bins: &[HistBin]) -> String {
    let f = Frame {
        x_max: bins.last().map(|b| b.high).unwrap_or(1.0).max(1e-9),
        y_max: bins.iter().map(|b| b.count).max().unwrap_or(1).max(1) as f64,
    };
    let mut s = open("Absolute error histogram", "absolute error", "images", &f);
    for b in bins {
        let (x0, x1) = (f.x(b.low), f.x(b.high));
        let y = f.y(b.count as f64);
        let _ = write!(
            s,
            r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white"/>"#,
            (x1 - x0).max(0.0),
            (H - M - y).max(0.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn scatter_svg(report: &EvalReport) -> String {
    let top = report
        .predictions
        .iter()
        .flat_map(|r| [r.y_true, r.p_total])
        .fold(1.0f64, f64::max);
    let f = Frame { x_max: top, y_max: top };
    let mut s = open("Predicted vs true score", "true score", "predicted score", &f);
    let _ = write!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4"/>"#,
        f.x(0.0),
        f.y(0.0),
        f.x(top),
        f.y(top)
    );
    for r in &report.predictions {
        let _ = write!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="crimson" fill-opacity="0.6"/>"#,
            f.x(r.y_true),
            f.y(r.p_total.max(0.0))
        );
    }
    s.push_str("</svg>\n");
    s
}
