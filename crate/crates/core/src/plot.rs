//! Minimal standalone SVG charts: bars, lines and critical-difference
//! diagrams. Output is plain text and deterministic.

use std::fmt::Write;

use crate::eval::stats::CdDiagram;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, title: &str, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, y_label: &str, y_max: f64) {
    let (x0, y0, y1) = (MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{:.1}" y2="{y0}" stroke="black"/>"#, W - MARGIN / 2.0);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let y = y0 - (y0 - y1) * i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

/// Vertical bars, one per label, on a `[0, max(1, values)]` axis.
pub fn bar_chart(title: &str, y_label: &str, labels: &[&str], values: &[f64]) -> String {
    let mut out = String::new();
    open(&mut out, title, W, H);
    let y_max = values.iter().copied().fold(1.0f64, f64::max);
    axes(&mut out, y_label, y_max);
    let slot = (W - 1.5 * MARGIN) / labels.len().max(1) as f64;
    let plot_h = H - 2.0 * MARGIN;
    for (i, (label, v)) in labels.iter().zip(values).enumerate() {
        let h = plot_h * v.max(0.0) / y_max;
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            out,
            r#"<rect class="bar" x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
            H - MARGIN - h,
            slot * 0.7,
            COLORS[i % COLORS.len()],
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            H - MARGIN + 16.0,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#,
            x + slot * 0.35,
            H - MARGIN - h - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Polylines on `[0, 1] × [0, 1]` with a legend and an optional dashed
/// horizontal reference line.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], reference: Option<f64>) -> String {
    let mut out = String::new();
    open(&mut out, title, W, H);
    axes(&mut out, y_label, 1.0);
    let (pw, ph) = (W - 1.5 * MARGIN, H - 2.0 * MARGIN);
    let px = |x: f64| MARGIN + pw * x.clamp(0.0, 1.0);
    let py = |y: f64| H - MARGIN - ph * y.clamp(0.0, 1.0);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            H - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN + pw / 2.0,
        H - 16.0,
        escape(x_label)
    );
    if let Some(r) = reference {
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#888" stroke-dasharray="4 4"/>"##,
            px(0.0),
            py(r),
            px(1.0),
            py(r)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.x.iter().zip(s.y).map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline class="curve" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(s.name),
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let lx = W - MARGIN - 150.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text class="legend" x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Rank axis with one tick per classifier and a bar joining each clique
/// of classifiers whose rank gap is below the critical difference.
pub fn cd_diagram(title: &str, d: &CdDiagram) -> String {
    let k = d.names.len();
    let h = 140.0 + 22.0 * k as f64;
    let mut out = String::new();
    open(&mut out, title, W, h);
    let lo = 1.0;
    let hi = (k.max(2)) as f64;
    let (x0, x1, axis_y) = (MARGIN * 2.0, W - MARGIN * 2.0, 70.0);
    let px = |r: f64| x0 + (x1 - x0) * (r - lo) / (hi - lo);
    let _ = writeln!(out, r#"<line x1="{x0:.1}" y1="{axis_y}" x2="{x1:.1}" y2="{axis_y}" stroke="black"/>"#);
    for r in 1..=k.max(2) {
        let x = px(r as f64);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{axis_y}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{r}</text>"#,
            axis_y - 5.0,
            axis_y - 9.0
        );
    }
    let _ = writeln!(
        out,
        r#"<line class="cd" x1="{x0:.1}" y1="44" x2="{:.1}" y2="44" stroke="black" stroke-width="2"/><text x="{x0:.1}" y="40">CD = {:.3}</text>"#,
        x0 + (x1 - x0) * d.cd / (hi - lo),
        d.cd
    );
    for (i, (name, r)) in d.names.iter().zip(&d.mean_ranks).enumerate() {
        let x = px(*r);
        let y = axis_y + 40.0 + 22.0 * i as f64;
        let left = i < k.div_ceil(2);
        let (tx, anchor) = if left { (x0 - 10.0, "end") } else { (x1 + 10.0, "start") };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="black" points="{x:.1},{axis_y} {x:.1},{y:.1} {tx:.1},{y:.1}"/><text class="name" x="{:.1}" y="{:.1}" text-anchor="{anchor}">{} ({r:.2})</text>"#,
            if left { tx - 2.0 } else { tx + 2.0 },
            y + 4.0,
            escape(name)
        );
    }
    for (j, (a, b)) in d.cliques.iter().enumerate() {
        if a == b {
            continue;
        }
        let y = axis_y + 12.0 + 6.0 * j as f64;
        let _ = writeln!(
            out,
            r#"<line class="clique" x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="black" stroke-width="4"/>"#,
            px(d.mean_ranks[*a]) - 3.0,
            px(d.mean_ranks[*b]) + 3.0
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_are_counted() {
        let s = bar_chart("shares", "share", &["Static", "Labs", "Meds", "Text"], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(s.matches(r#"class="bar""#).count(), 4);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
    }

    #[test]
    fn curves_are_labeled() {
        let x = [0.0, 0.5, 1.0];
        let y = [0.9, 0.4, 0.1];
        let series: Vec<Series> = ["High to Low", "Random", "Low to High"]
            .iter()
            .map(|n| Series { name: n, x: &x, y: &y })
            .collect();
        let s = line_plot("faithfulness", "masked", "output", &series, Some(0.5));
        assert_eq!(s.matches(r#"class="curve""#).count(), 3);
        assert!(s.contains("Low to High"));
    }

    #[test]
    fn names_are_escaped() {
        let d = CdDiagram {
            names: vec!["a<b".into(), "c".into(), "d".into()],
            mean_ranks: vec![1.0, 2.0, 3.0],
            cd: 1.5,
            cliques: vec![(0, 1), (1, 2)],
        };
        let s = cd_diagram("cd", &d);
        assert!(s.contains("a&lt;b"));
        assert_eq!(s.matches(r#"class="clique""#).count(), 2);
    }
}
