//! Minimal SVG line charts with two independent y-axes: ground-truth ATE on
//! the left, GTF ATE on the right, parameter value along x (log-scaled for
//! log grids).

use std::fmt::Write as _;

use crate::tuner::{AblationCurve, SelectBy, Spacing, SweepDocument, SweepPoint, select_optimum};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 80.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const GT_COLOR: &str = "#2e9e44";
const GTF_COLOR: &str = "#d6337f";
const NOMINAL_COLOR: &str = "#2f6fd6";

struct Axis {
    min: f64,
    max: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Option<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            return None;
        }
        if min == max {
            let pad = if min == 0.0 { 1.0 } else { min.abs() * 0.1 };
            if log {
                min /= 2.0;
                max *= 2.0;
            } else {
                min -= pad;
                max += pad;
            }
        }
        Some(Self { min, max, log })
    }

    fn frac(&self, v: f64) -> f64 {
        if self.log {
            (v.ln() - self.min.ln()) / (self.max.ln() - self.min.ln())
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }
}

fn x_pixel(axis: &Axis, v: f64) -> f64 {
    MARGIN_LEFT + axis.frac(v) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
}

fn y_pixel(axis: &Axis, v: f64) -> f64 {
    HEIGHT - MARGIN_BOTTOM - axis.frac(v) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
}

fn polyline(svg: &mut String, pts: &[(f64, f64)], color: &str, width: f64) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    let _ = write!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
        coords.join(" ")
    );
    for (x, y) in pts {
        let _ = write!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
    }
}

fn marker(svg: &mut String, x: f64, y: f64, color: &str) {
    let _ = write!(
        svg,
        r#"<circle cx="{x:.1}" cy="{y:.1}" r="7" fill="none" stroke="{color}" stroke-width="2.5"/>"#
    );
}

fn tick_labels(svg: &mut String, axis: &Axis, x: f64, anchor: &str, color: &str) {
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let v = if axis.log {
            (axis.min.ln() + f * (axis.max.ln() - axis.min.ln())).exp()
        } else {
            axis.min + f * (axis.max - axis.min)
        };
        let y = y_pixel(axis, v);
        let _ = write!(
            svg,
            r#"<text x="{x:.1}" y="{y:.1}" fill="{color}" font-family="sans-serif" font-size="11" text-anchor="{anchor}" dominant-baseline="middle">{v:.3e}</text>"#
        );
    }
}

fn frame(title: &str, x_label: &str, x_axis: &Axis) -> String {
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg version="1.1" xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    let _ = write!(
        svg,
        r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        x1 - x0,
        y1 - y0
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let v = if x_axis.log {
            (x_axis.min.ln() + f * (x_axis.max.ln() - x_axis.min.ln())).exp()
        } else {
            x_axis.min + f * (x_axis.max - x_axis.min)
        };
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{v:.3e}</text>"#,
            x_pixel(x_axis, v),
            y1 + 18.0
        );
    }
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Sweep chart: GT ATE (left axis, green) and GTF ATE (right axis, pink),
/// with the nominal, GT-selected and GTF-selected points circled.
pub fn sweep_svg(doc: &SweepDocument) -> String {
    let log = doc.grid.spacing == Spacing::Log;
    let points = &doc.points;
    let x_axis = Axis::fit(points.iter().map(|p| p.value), log)
        .unwrap_or(Axis { min: 0.0, max: 1.0, log: false });
    let mut svg = frame(
        &format!("GTF ATE sweep over {}", doc.grid.param_name),
        &doc.grid.param_name,
        &x_axis,
    );

    let gtf: Vec<(f64, f64)> = points.iter().filter_map(|p| p.gtf_score().map(|s| (p.value, s))).collect();
    let gt: Vec<(f64, f64)> = points.iter().filter_map(|p| p.gt_score().map(|s| (p.value, s))).collect();

    if let Some(axis) = Axis::fit(gt.iter().map(|p| p.1), false) {
        let px: Vec<_> = gt.iter().map(|(v, s)| (x_pixel(&x_axis, *v), y_pixel(&axis, *s))).collect();
        polyline(&mut svg, &px, GT_COLOR, 2.0);
        tick_labels(&mut svg, &axis, MARGIN_LEFT - 6.0, "end", GT_COLOR);
        axis_title(&mut svg, "ATE (ground truth)", 16.0, GT_COLOR);
        if let Some(nominal) = points.iter().find(|p| p.value == doc.grid.nominal).and_then(SweepPoint::gt_score) {
            marker(&mut svg, x_pixel(&x_axis, doc.grid.nominal), y_pixel(&axis, nominal), NOMINAL_COLOR);
        }
        if let Ok(i) = select_optimum(points, doc.grid.nominal, SelectBy::GroundTruth) {
            let p = &points[i];
            marker(&mut svg, x_pixel(&x_axis, p.value), y_pixel(&axis, p.gt_ate.unwrap_or_default()), GT_COLOR);
        }
        if let Ok(i) = select_optimum(points, doc.grid.nominal, SelectBy::Gtf) {
            if let Some(s) = points[i].gt_score() {
                marker(&mut svg, x_pixel(&x_axis, points[i].value), y_pixel(&axis, s), GTF_COLOR);
            }
        }
    }
    if let Some(axis) = Axis::fit(gtf.iter().map(|p| p.1), false) {
        let px: Vec<_> = gtf.iter().map(|(v, s)| (x_pixel(&x_axis, *v), y_pixel(&axis, *s))).collect();
        polyline(&mut svg, &px, GTF_COLOR, 2.0);
        tick_labels(&mut svg, &axis, WIDTH - MARGIN_RIGHT + 6.0, "start", GTF_COLOR);
        axis_title(&mut svg, "GTF ATE", WIDTH - 16.0, GTF_COLOR);
    }
    svg.push_str("</svg>\n");
    svg
}

fn axis_title(svg: &mut String, text: &str, x: f64, color: &str) {
    let y = HEIGHT / 2.0;
    let _ = write!(
        svg,
        r#"<text x="{x}" y="{y}" fill="{color}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 {x} {y})">{}</text>"#,
        escape(text)
    );
}

/// One GTF curve per noise level, darker for larger noise, on a shared right
/// axis; the ground-truth curve of the first level (if any) on the left.
pub fn ablation_svg(param_name: &str, spacing: Spacing, curves: &[AblationCurve]) -> String {
    let log = spacing == Spacing::Log;
    let x_axis = Axis::fit(curves.iter().flat_map(|c| c.points.iter().map(|p| p.value)), log)
        .unwrap_or(Axis { min: 0.0, max: 1.0, log: false });
    let mut svg = frame(&format!("GTF ATE vs input noise over {param_name}"), param_name, &x_axis);
    if let Some(first) = curves.first() {
        let gt: Vec<(f64, f64)> = first.points.iter().filter_map(|p| p.gt_score().map(|s| (p.value, s))).collect();
        if let Some(axis) = Axis::fit(gt.iter().map(|p| p.1), false) {
            let px: Vec<_> = gt.iter().map(|(v, s)| (x_pixel(&x_axis, *v), y_pixel(&axis, *s))).collect();
            polyline(&mut svg, &px, GT_COLOR, 2.0);
            tick_labels(&mut svg, &axis, MARGIN_LEFT - 6.0, "end", GT_COLOR);
            axis_title(&mut svg, "ATE (ground truth)", 16.0, GT_COLOR);
        }
    }
    let all = curves.iter().flat_map(|c| c.points.iter().filter_map(SweepPoint::gtf_score));
    if let Some(axis) = Axis::fit(all, false) {
        for (i, curve) in curves.iter().enumerate() {
            // 0 = light pink, 1 = dark magenta
            let t = if curves.len() > 1 { i as f64 / (curves.len() - 1) as f64 } else { 1.0 };
            let color = format!(
                "rgb({},{},{})",
                (245.0 - 120.0 * t) as u8,
                (180.0 - 170.0 * t) as u8,
                (210.0 - 120.0 * t) as u8
            );
            let px: Vec<_> = curve
                .points
                .iter()
                .filter_map(|p| p.gtf_score().map(|s| (x_pixel(&x_axis, p.value), y_pixel(&axis, s))))
                .collect();
            polyline(&mut svg, &px, &color, 1.5);
            if let Some(opt) = curve.optimum {
                let p = &curve.points[opt];
                if let Some(s) = p.gtf_score() {
                    marker(&mut svg, x_pixel(&x_axis, p.value), y_pixel(&axis, s), &color);
                }
            }
        }
        tick_labels(&mut svg, &axis, WIDTH - MARGIN_RIGHT + 6.0, "start", GTF_COLOR);
        axis_title(&mut svg, "GTF ATE", WIDTH - 16.0, GTF_COLOR);
    }
    svg.push_str("</svg>\n");
    svg
}
