//! Minimal SVG line and box plots. Every plot embeds its data as a CSV
//! comment so outputs can be diffed and re-read.

use std::fmt::Write;

use vsmile_core::backtest::BoxStats;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    /// Draw markers only.
    pub scatter: bool,
    pub series: Vec<Series>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.04 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad, log }
    }

    fn unit(&self, v: f64) -> Option<f64> {
        let v = if self.log { v.log10() } else { v };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn tick_label(&self, u: f64) -> String {
        let v = self.lo + u * (self.hi - self.lo);
        let v = if self.log { 10f64.powf(v) } else { v };
        if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
            format!("{v:.2e}")
        } else {
            format!("{v:.3}")
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(svg: &mut String, title: &str, x_label: &str, y_label: &str, x: &Axis, y: &Axis, meta: &str) {
    let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, "<!-- {meta} -->");
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + w / 2.0, escape(title));
    let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let px = LEFT + u * w;
        let py = TOP + h - u * h;
        let _ = writeln!(svg, r#"<line x1="{px}" y1="{}" x2="{px}" y2="{}" stroke="black"/>"#, TOP + h, TOP + h + 4.0);
        let _ = writeln!(svg, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, TOP + h + 16.0, x.tick_label(u));
        let _ = writeln!(svg, r#"<line x1="{}" y1="{py}" x2="{LEFT}" y2="{py}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, y.tick_label(u));
    }
    let x_suffix = if x.log { " (log)" } else { "" };
    let y_suffix = if y.log { " (log)" } else { "" };
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}{x_suffix}</text>"#,
        LEFT + w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}{y_suffix}</text>"#,
        TOP + h / 2.0,
        TOP + h / 2.0,
        escape(y_label)
    );
}

fn legend(svg: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 16.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 8.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 14.0, y + 1.0, escape(name));
    }
}

fn coord(v: f64) -> String {
    format!("{:.2}", v)
}

pub fn render(plot: &Plot, meta: &str) -> String {
    let x = Axis::fit(plot.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), plot.log_x);
    let y = Axis::fit(plot.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), plot.log_y);
    let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let mut svg = String::new();
    frame(&mut svg, &plot.title, &plot.x_label, &plot.y_label, &x, &y, meta);
    for (i, s) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter_map(|&(a, b)| Some((LEFT + x.unit(a)? * w, TOP + h - y.unit(b)? * h)))
            .collect();
        if plot.scatter || pts.len() == 1 {
            for (px, py) in &pts {
                let _ = writeln!(svg, r#"<circle cx="{}" cy="{}" r="2.5" fill="{color}"/>"#, coord(*px), coord(*py));
            }
        } else {
            let path: Vec<String> = pts.iter().map(|(px, py)| format!("{},{}", coord(*px), coord(*py))).collect();
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        }
    }
    let names: Vec<&str> = plot.series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut svg, &names);
    svg.push_str("<!-- data\nseries,x,y\n");
    for s in &plot.series {
        for (a, b) in &s.points {
            let _ = writeln!(svg, "{},{a},{b}", s.name);
        }
    }
    svg.push_str("-->\n</svg>\n");
    svg
}

/// One box per `(group, position)`: quartile box, median line, whiskers.
pub fn render_boxes(title: &str, x_label: &str, y_label: &str, groups: &[(String, Vec<(f64, BoxStats)>)], meta: &str) -> String {
    let all = || groups.iter().flat_map(|(_, b)| b.iter());
    let x = Axis::fit(all().map(|(p, _)| *p), false);
    let y = Axis::fit(all().flat_map(|(_, s)| [s.whisker_low, s.whisker_high]), false);
    let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let n_groups = groups.len().max(1) as f64;
    let slot = w / (all().count().max(1) as f64 / n_groups + 1.0) / n_groups;
    let mut svg = String::new();
    frame(&mut svg, title, x_label, y_label, &x, &y, meta);
    for (gi, (_, boxes)) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let offset = (gi as f64 - (n_groups - 1.0) / 2.0) * slot;
        for (pos, s) in boxes {
            let cx = LEFT + x.unit(*pos).unwrap_or(0.0) * w + offset;
            let py = |v: f64| TOP + h - y.unit(v).unwrap_or(0.0) * h;
            let half = 0.35 * slot;
            let _ = writeln!(
                svg,
                r#"<line x1="{c}" y1="{}" x2="{c}" y2="{}" stroke="{color}"/>"#,
                coord(py(s.whisker_low)),
                coord(py(s.whisker_high)),
                c = coord(cx)
            );
            let _ = writeln!(
                svg,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="white" stroke="{color}"/>"#,
                coord(cx - half),
                coord(py(s.p75)),
                coord(2.0 * half),
                coord((py(s.p25) - py(s.p75)).max(0.0))
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{m}" x2="{}" y2="{m}" stroke="{color}" stroke-width="2"/>"#,
                coord(cx - half),
                coord(cx + half),
                m = coord(py(s.p50))
            );
        }
    }
    let names: Vec<&str> = groups.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut svg, &names);
    svg.push_str("<!-- data\ngroup,x,n,p25,p50,p75,whisker_low,whisker_high\n");
    for (name, boxes) in groups {
        for (pos, s) in boxes {
            let _ = writeln!(svg, "{name},{pos},{},{},{},{},{},{}", s.n, s.p25, s.p50, s.p75, s.whisker_low, s.whisker_high);
        }
    }
    svg.push_str("-->\n</svg>\n");
    svg
}

/// Reads the embedded data table back from a rendered plot.
pub fn embedded_data(svg: &str) -> Option<Vec<String>> {
    let start = svg.find("<!-- data\n")? + "<!-- data\n".len();
    let end = start + svg[start..].find("-->")?;
    Some(svg[start..end].lines().map(str::to_string).collect())
}
