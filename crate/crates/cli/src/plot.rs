//! SVG curves of ELBO, RE and KL per epoch from a metrics file.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::metrics::MetricsRecord;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 50.0;

fn colour(split: &str) -> &'static str {
    match split {
        "train" => "#1f77b4",
        "validation" => "#d62728",
        _ => "#2ca02c",
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders three panels (ELBO, RE, KL) with one line per split. Splits with
/// a single record (e.g. the final test score) are drawn as points.
pub fn render_svg(records: &[MetricsRecord]) -> String {
    type Field = fn(&MetricsRecord) -> f64;
    let panels: [(&str, Field); 3] = [("ELBO", |r| r.elbo), ("RE", |r| r.re), ("KL", |r| r.kl)];
    let width = 3.0 * (PANEL_W + MARGIN) + MARGIN;
    let height = PANEL_H + 2.0 * MARGIN + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let mut by_split: BTreeMap<&str, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        by_split.entry(r.split.as_str()).or_default().push(r);
    }
    let (e_min, e_max) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
        (a.min(r.epoch as f64), b.max(r.epoch as f64))
    });
    let e_span = if e_max > e_min { e_max - e_min } else { 1.0 };

    for (p, (title, get)) in panels.iter().enumerate() {
        let x0 = MARGIN + p as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let (v_min, v_max) = records
            .iter()
            .map(get)
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (v_min, v_max) = if v_min.is_finite() { (v_min, v_max) } else { (0.0, 1.0) };
        let v_span = if v_max > v_min { v_max - v_min } else { 1.0 };
        let sx = |e: f64| x0 + (e - e_min) / e_span * PANEL_W;
        let sy = |v: f64| y0 + PANEL_H - (v - v_min) / v_span * PANEL_H;

        let _ = writeln!(
            svg,
            r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#, x0 + PANEL_W / 2.0, y0 - 10.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, y0 + 4.0, fmt_tick(v_max));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, y0 + PANEL_H, fmt_tick(v_min));
        let _ = writeln!(svg, r#"<text x="{x0}" y="{}">{}</text>"#, y0 + PANEL_H + 14.0, e_min);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 + PANEL_W, y0 + PANEL_H + 14.0, e_max);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, x0 + PANEL_W / 2.0, y0 + PANEL_H + 14.0);

        for (split, rs) in &by_split {
            let pts: Vec<(f64, f64)> = rs.iter().map(|r| (sx(r.epoch as f64), sy(get(r)))).filter(|(_, y)| y.is_finite()).collect();
            if pts.len() == 1 {
                let (x, y) = pts[0];
                let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}"/>"#, colour(split));
            } else if !pts.is_empty() {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                    path.join(" "),
                    colour(split)
                );
            }
        }
    }

    for (i, split) in by_split.keys().enumerate() {
        let x = MARGIN + i as f64 * 110.0;
        let y = height - 12.0;
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="14" height="4" fill="{}"/>"#, y - 4.0, colour(split));
        let _ = writeln!(svg, r#"<text x="{}" y="{y}">{split}</text>"#, x + 18.0);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_lines_and_points() {
        let mut records = Vec::new();
        for e in 1..=5 {
            records.push(MetricsRecord::new(e, "train", -100.0 + e as f64, 20.0, 1.0));
            records.push(MetricsRecord::new(e, "validation", -101.0 + e as f64, 21.0, 1.0));
        }
        records.push(MetricsRecord::new(4, "test", -97.0, 21.0, 1.0));
        let svg = render_svg(&records);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_input_still_renders() {
        let svg = render_svg(&[]);
        assert!(svg.contains("ELBO") && !svg.contains("NaN"));
    }
}
