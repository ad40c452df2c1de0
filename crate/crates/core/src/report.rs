//! SVG rendering of selection and sensitivity results.
//!
//! Output is plain SVG 1.1 text with no external assets. An optional
//! provenance string is embedded as an XML comment after the root element.

use std::fmt::Write as _;

use crate::pme::PmeReport;
use crate::selection::SelectionResult;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

const PALETTE: [&str; 10] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, provenance: Option<&str>) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    if let Some(p) = provenance {
        let _ = writeln!(out, "<!-- {} -->", p.replace("--", "- -"));
    }
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let pad = lo.abs().max(1.0) * 0.1;
        return (lo - pad, hi + pad);
    }
    let pad = 0.08 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(out, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, MARGIN / 2.0, escape(title));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 15.0, escape(x_label));
        let _ = writeln!(
            out,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(y_label)
        );
        for i in 0..=4 {
            let v = self.y0 + (self.y1 - self.y0) * i as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(out, r#"<line x1="{}" y1="{y:.1}" x2="{l}" y2="{y:.1}" stroke="black"/>"#, l - 4.0);
            let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, y + 4.0, fmt_tick(v));
        }
    }
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Pareto front: mean variance per subset size, annotated with the most
/// frequent subset and its frequency; the plain-run optimum is a triangle.
pub fn pareto_svg(result: &SelectionResult, provenance: Option<&str>) -> String {
    let mut out = String::new();
    open(&mut out, provenance);
    let pts: Vec<(usize, f64, &crate::selection::ParetoEntry)> =
        result.pareto.entries.iter().filter_map(|e| e.mean_v.map(|v| (e.size, v, e))).collect();
    let chosen = (result.chosen.variables.len(), result.chosen.report.v);
    let vs: Vec<f64> = pts.iter().map(|p| p.1).chain([chosen.1]).collect();
    let (y0, y1) = nice_range(vs.iter().copied().fold(f64::INFINITY, f64::min), vs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let max_size = result.pareto.entries.len().saturating_sub(1).max(1) as f64;
    let f = Frame { x0: -0.5, x1: max_size + 0.5, y0, y1 };
    f.axes(&mut out, &format!("Pareto front: {}", result.target), "number of selected variables", "prediction variance V");
    for e in &result.pareto.entries {
        let x = f.px(e.size as f64);
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - MARGIN + 16.0, e.size);
    }
    let line: Vec<String> = pts.iter().map(|(s, v, _)| format!("{:.1},{:.1}", f.px(*s as f64), f.py(*v))).collect();
    if line.len() > 1 {
        let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#4e79a7"/>"##, line.join(" "));
    }
    for (s, v, e) in &pts {
        let (x, y) = (f.px(*s as f64), f.py(*v));
        let _ = writeln!(out, r##"<circle cx="{x:.1}" cy="{y:.1}" r="5" fill="#4e79a7"/>"##);
        let label = if e.modal_labels.is_empty() { "(none)".to_string() } else { e.modal_labels.join(",") };
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#, y - 18.0, escape(&label));
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{:.0}%</text>"#, y - 8.0, e.modal_frequency);
    }
    let (x, y) = (f.px(chosen.0 as f64), f.py(chosen.1));
    let _ = writeln!(
        out,
        r##"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" fill="#2ca02c"><title>optimal subset</title></polygon>"##,
        x,
        y - 7.0,
        x - 7.0,
        y + 5.0,
        x + 7.0,
        y + 5.0
    );
    out.push_str("</svg>\n");
    out
}

/// Rounds percentages to tenths so that the rounded values keep the sum of
/// the inputs (largest-remainder method).
fn round_tenths(values: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = values.iter().map(|v| v.max(0.0) * 10.0).collect();
    let target = scaled.iter().sum::<f64>().round() as i64;
    let mut units: Vec<i64> = scaled.iter().map(|v| v.floor() as i64).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())));
    let missing = (target - units.iter().sum::<i64>()).max(0) as usize;
    for &i in order.iter().take(missing) {
        units[i] += 1;
    }
    units.into_iter().map(|u| u as f64 / 10.0).collect()
}

/// Pie chart of the PME shares and the model-error share, in percent with
/// one decimal. Labels are rounded so that they add up to the same total as
/// the shares.
pub fn pie_svg(report: &PmeReport, provenance: Option<&str>) -> String {
    let mut out = String::new();
    open(&mut out, provenance);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="15">Variance decomposition: {}</text>"#,
        WIDTH / 2.0,
        MARGIN / 2.0,
        escape(&report.target)
    );
    let mut slices: Vec<(String, f64)> = report.inputs.iter().map(|s| (s.variable.clone(), s.share)).collect();
    slices.push(("model error".into(), report.model_error_share));
    let total: f64 = slices.iter().map(|s| s.1.max(0.0)).sum();
    let labels = round_tenths(&slices.iter().map(|s| s.1).collect::<Vec<_>>());
    let (cx, cy, r) = (WIDTH * 0.38, HEIGHT / 2.0 + 10.0, 140.0);
    let mut angle = -std::f64::consts::FRAC_PI_2;
    for (i, (name, share)) in slices.iter().enumerate() {
        let color = if i + 1 == slices.len() { "#cccccc" } else { PALETTE[i % PALETTE.len()] };
        let frac = if total > 0.0 { share.max(0.0) / total } else { 0.0 };
        if frac >= 0.999_999 {
            let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="{r}" fill="{color}"/>"#);
        } else if frac > 0.0 {
            let end = angle + frac * std::f64::consts::TAU;
            let (x0, y0) = (cx + r * angle.cos(), cy + r * angle.sin());
            let (x1, y1) = (cx + r * end.cos(), cy + r * end.sin());
            let large = u8::from(frac > 0.5);
            let _ = writeln!(
                out,
                r#"<path d="M{cx},{cy} L{x0:.2},{y0:.2} A{r},{r} 0 {large} 1 {x1:.2},{y1:.2} Z" fill="{color}" stroke="white"/>"#
            );
            angle = end;
        }
        let ly = MARGIN + 20.0 * i as f64;
        let lx = WIDTH * 0.7;
        let _ = writeln!(out, r#"<rect x="{lx}" y="{:.1}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly:.1}">{} {:.1}%</text>"#, lx + 18.0, escape(name), labels[i]);
    }
    out.push_str("</svg>\n");
    out
}

/// Line chart of `ys` against `xs`; non-finite points break the line.
pub fn curve_svg(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], provenance: Option<&str>) -> String {
    let mut out = String::new();
    open(&mut out, provenance);
    let finite: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)).collect();
    let (x0, x1) = nice_range(
        finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = nice_range(
        finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).min(0.0),
        finite.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    if finite.is_empty() {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">no finite values</text>"#, WIDTH / 2.0, HEIGHT / 2.0);
        out.push_str("</svg>\n");
        return out;
    }
    let f = Frame { x0, x1, y0, y1 };
    f.axes(&mut out, title, x_label, y_label);
    for i in 0..=4 {
        let v = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, f.px(v), HEIGHT - MARGIN + 16.0, fmt_tick(v));
    }
    let mut segment: Vec<String> = Vec::new();
    let flush = |seg: &mut Vec<String>, out: &mut String| {
        if seg.len() > 1 {
            let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#4e79a7" stroke-width="2"/>"##, seg.join(" "));
        }
        seg.clear();
    };
    for (x, y) in xs.iter().zip(ys) {
        if x.is_finite() && y.is_finite() {
            segment.push(format!("{:.1},{:.1}", f.px(*x), f.py(*y)));
        } else {
            flush(&mut segment, &mut out);
        }
    }
    flush(&mut segment, &mut out);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pme::{PmeShare, SamplerKind};

    #[test]
    fn pie_labels_use_one_decimal() {
        let report = PmeReport {
            target: "y<1>".into(),
            inputs: vec![
                PmeShare { variable: "x".into(), delta: 1.0, share: 61.234 },
                PmeShare { variable: "z1".into(), delta: 0.5, share: 30.0 },
            ],
            model_error_share: 8.766,
            total_variance: 1.6,
            var_h: 1.5,
            theta_sq: 0.1,
            tolerance: 0.5,
            samples: 100,
            seed: 1,
            sampler: SamplerKind::GaussianAnalytic,
            floor_hit: false,
            warnings: vec![],
        };
        let svg = pie_svg(&report, Some("config_hash=abc"));
        assert!(svg.contains("x 61.2%"));
        assert!(svg.contains("model error 8.8%"));
        assert!(svg.contains("y&lt;1&gt;"));
        assert!(svg.contains("<!-- config_hash=abc -->"));
        assert_eq!(svg.matches("<path d=\"M").count(), 3);
    }

    #[test]
    fn rounded_labels_keep_the_total() {
        let r = round_tenths(&[33.333, 33.333, 33.334]);
        assert!((r.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert_eq!(round_tenths(&[12.34, 87.66]), vec![12.3, 87.7]);
        let many = [14.26, 14.26, 14.26, 14.26, 14.26, 14.26, 14.44];
        assert!((round_tenths(&many).iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn curve_breaks_on_infinite_values() {
        let svg = curve_svg("r", "w", "delta", &[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 1.1, f64::INFINITY, 1.2, 1.3], None);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
