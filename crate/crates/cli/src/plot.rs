//! Static SVG line and grouped-bar charts.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 58.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick positions on a 1-2-5 grid covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).floor() as i64;
    let end = (hi / step).ceil() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str, desc: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, "<desc>{}</desc>", escape(desc));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[(f64, String)], y_ticks: &[f64], x_label: &str, y_label: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    for &t in y_ticks {
        let y = f.py(t);
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#e0e0e0"/>"##);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    for (t, label) in x_ticks {
        let x = f.px(*t);
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="#333"/>"##, y0 + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 18.0, escape(label));
    }
    let _ = writeln!(
        out,
        r##"<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, labels: &[&str]) {
    let x = WIDTH - RIGHT + 14.0;
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="14" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 20.0, escape(label));
    }
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

/// One polyline per series; non-finite points break the line.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], desc: &str) -> String {
    let xs = || series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).filter(|v| v.is_finite());
    let x_lo = xs().fold(f64::INFINITY, f64::min);
    let x_hi = xs().fold(f64::NEG_INFINITY, f64::max);
    let (x_lo, x_hi) = if x_lo.is_finite() && x_hi > x_lo { (x_lo, x_hi) } else { (0.0, 1.0) };
    let (y_lo, y_hi) = y_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let y_ticks = nice_ticks(y_lo, y_hi, 6);
    let f = Frame {
        x_lo,
        x_hi,
        y_lo: y_ticks[0],
        y_hi: *y_ticks.last().unwrap(),
    };
    let x_ticks: Vec<(f64, String)> = nice_ticks(x_lo, x_hi, 8)
        .into_iter()
        .filter(|t| *t >= x_lo - 1e-9 && *t <= x_hi + 1e-9)
        .map(|t| (t, tick_label(t)))
        .collect();

    let mut out = String::new();
    header(&mut out, title, desc);
    axes(&mut out, &f, &x_ticks, &y_ticks, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for run in s.points.split(|p| !p.0.is_finite() || !p.1.is_finite()) {
            if run.is_empty() {
                continue;
            }
            let pts: Vec<String> = run.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.6"/>"#,
                pts.join(" ")
            );
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: `values[s][g]` is the height of series `s` in group `g`.
/// Non-finite heights are left out.
pub fn bar_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    groups: &[String],
    series: &[(String, Vec<f64>)],
    desc: &str,
) -> String {
    let (y_lo, y_hi) = y_range(series.iter().flat_map(|s| s.1.iter().copied()));
    let y_ticks = nice_ticks(y_lo, y_hi, 6);
    let n = groups.len().max(1) as f64;
    let f = Frame {
        x_lo: 0.0,
        x_hi: n,
        y_lo: y_ticks[0],
        y_hi: *y_ticks.last().unwrap(),
    };
    let x_ticks: Vec<(f64, String)> = groups.iter().enumerate().map(|(i, g)| (i as f64 + 0.5, g.clone())).collect();

    let mut out = String::new();
    header(&mut out, title, desc);
    axes(&mut out, &f, &x_ticks, &y_ticks, x_label, y_label);
    let slot = (f.px(1.0) - f.px(0.0)) * 0.8 / series.len().max(1) as f64;
    for (s, (_, values)) in series.iter().enumerate() {
        let colour = PALETTE[s % PALETTE.len()];
        for (g, &v) in values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let x = f.px(g as f64 + 0.1) + slot * s as f64;
            let (top, base) = (f.py(v.max(f.y_lo)), f.py(f.y_lo));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
                slot * 0.92,
                (base - top).max(0.0)
            );
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.0.as_str()).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range_on_a_125_grid() {
        let t = nice_ticks(0.0, 1.0, 5);
        assert_eq!(t.len(), 6);
        assert!((t[3] - 0.6).abs() < 1e-12 && t[5] == 1.0);
        let t = nice_ticks(0.0, 24.9, 8);
        assert_eq!((t[0], *t.last().unwrap()), (0.0, 25.0));
    }

    #[test]
    fn line_chart_breaks_at_nan_and_escapes_text() {
        let s = Series {
            label: "a<b".into(),
            points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 0.5), (3.0, 0.25)],
        };
        let svg = line_chart("t", "x", "y", &[s], "k = \"v\"");
        assert_eq!(svg.matches("<polyline points=").count() - 1, 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("k = &quot;v&quot;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn bar_chart_draws_one_rect_per_finite_value() {
        let groups = vec!["32".to_string(), "64".to_string()];
        let series = vec![("a".to_string(), vec![0.2, 0.1]), ("b".to_string(), vec![0.3, f64::NAN])];
        let svg = bar_chart("t", "x", "y", &groups, &series, "");
        // background + 3 bars + 2 legend swatches
        assert_eq!(svg.matches("<rect").count(), 6);
    }
}
