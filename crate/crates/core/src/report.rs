//! Plain-file reports: pmf tables and grouped bar charts.

use std::fmt::Write as _;

use crate::distributions::Pmf;

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One row per support point, one column per series.
pub fn pmf_table_csv(series: &[(&str, &Pmf)]) -> String {
    let mut out = String::from("k");
    for (name, _) in series {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let support = series.iter().map(|(_, p)| p.support_max()).max().unwrap_or(0);
    for k in 0..=support {
        let _ = write!(out, "{k}");
        for (_, p) in series {
            let _ = write!(out, ",{}", p.get(k));
        }
        out.push('\n');
    }
    out
}

/// Grouped bar chart of several pmfs over a shared support.
pub fn bar_chart_svg(title: &str, series: &[(&str, &Pmf)]) -> String {
    let (width, height) = (760.0, 380.0);
    let (left, right, top, bottom) = (56.0, 16.0, 40.0, 48.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let support = series.iter().map(|(_, p)| p.support_max()).max().unwrap_or(0);
    let ymax = series
        .iter()
        .flat_map(|(_, p)| p.mass().iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let slot = plot_w / (support + 1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let base = top + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        left + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{base}" stroke="black"/>"#
    );
    for tick in 0..=4 {
        let v = ymax * f64::from(tick) / 4.0;
        let y = base - plot_h * f64::from(tick) / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.3}</text>"#,
            left - 4.0,
            y + 3.0
        );
    }
    for k in 0..=support {
        let x = left + slot * (k as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{k}</text>"#,
            base + 14.0
        );
    }
    for (s, (name, pmf)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let _ = writeln!(svg, r#"<g fill="{color}"><title>{}</title>"#, escape(name));
        for (k, &m) in pmf.mass().iter().enumerate() {
            let h = plot_h * m / ymax;
            let x = left + slot * k as f64 + slot * 0.1 + bar * s as f64;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}"/>"#,
                base - h
            );
        }
        let _ = writeln!(svg, "</g>");
        let ly = top + 14.0 * s as f64;
        let lx = left + plot_w - 150.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{color}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 14.0,
            ly + 9.0,
            escape(name)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">meals eaten out per week</text>"#,
        left + plot_w / 2.0,
        height - 8.0
    );
    svg.push_str("</svg>\n");
    svg
}
