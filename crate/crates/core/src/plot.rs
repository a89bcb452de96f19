//! Minimal SVG charts for evaluation reports.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 90.0;
const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

/// One bar: label, height and half-width of its error bar.
#[derive(Debug, Clone)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    out: String,
    y_min: f64,
    y_max: f64,
}

impl Canvas {
    fn new(title: &str, y_label: &str, y_min: f64, y_max: f64) -> Self {
        let mut out = String::new();
        let _ = write!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>
"#,
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            escape(title),
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            escape(y_label)
        );
        let mut c = Self { out, y_min, y_max };
        c.axes();
        c
    }

    fn plot_w(&self) -> f64 {
        WIDTH - MARGIN_L - MARGIN_R
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v - self.y_min) / (self.y_max - self.y_min);
        HEIGHT - MARGIN_B - t.clamp(0.0, 1.0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }

    fn axes(&mut self) {
        let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
        for i in 0..=5 {
            let v = self.y_min + (self.y_max - self.y_min) * i as f64 / 5.0;
            let y = self.y(v);
            let _ = writeln!(
                self.out,
                r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
                x0 - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            self.out,
            r#"<line x1="{x0}" y1="{}" x2="{x0}" y2="{}" stroke="black"/>"#,
            MARGIN_T,
            HEIGHT - MARGIN_B
        );
    }

    fn legend(&mut self, names: &[&str]) {
        for (i, name) in names.iter().enumerate() {
            let y = MARGIN_T + 18.0 * i as f64;
            let x = WIDTH - MARGIN_R + 12.0;
            let _ = writeln!(
                self.out,
                r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                PALETTE[i % PALETTE.len()],
                x + 18.0,
                y + 10.0,
                escape(name)
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn value_range<I: IntoIterator<Item = f64>>(values: I) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi <= lo {
        (lo, lo + 1.0)
    } else {
        (lo, hi + 0.05 * (hi - lo))
    }
}

/// Bars grouped by category, one colour per series. `groups[g][s]` is the
/// bar for category `g` in series `s`. A single series gives a plain bar
/// chart.
pub fn grouped_bar_chart(title: &str, y_label: &str, categories: &[String], series_names: &[&str], groups: &[Vec<Bar>]) -> String {
    let (lo, hi) = value_range(groups.iter().flatten().map(|b| b.value + b.error));
    let mut c = Canvas::new(title, y_label, lo, hi);
    let n_series = series_names.len().max(1);
    let slot = c.plot_w() / categories.len().max(1) as f64;
    let bar_w = slot * 0.8 / n_series as f64;
    for (g, (cat, bars)) in categories.iter().zip(groups).enumerate() {
        let x_slot = MARGIN_L + slot * g as f64 + slot * 0.1;
        for (s, bar) in bars.iter().enumerate() {
            let x = x_slot + bar_w * s as f64;
            let (top, base) = (c.y(bar.value), c.y(lo.max(0.0)));
            let (y0, h) = if top < base { (top, base - top) } else { (base, top - base) };
            let mid = x + bar_w / 2.0;
            let _ = writeln!(
                c.out,
                r#"<rect x="{x:.1}" y="{y0:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{} {:.4} ± {:.4}</title></rect>"#,
                bar_w * 0.92,
                PALETTE[s % PALETTE.len()],
                escape(&bar.label),
                bar.value,
                bar.error
            );
            if bar.error > 0.0 {
                let (ya, yb) = (c.y(bar.value - bar.error), c.y(bar.value + bar.error));
                let _ = writeln!(
                    c.out,
                    r#"<path d="M{mid:.1},{ya:.1}V{yb:.1}M{:.1},{ya:.1}h8M{:.1},{yb:.1}h8" stroke="black"/>"#,
                    mid - 4.0,
                    mid - 4.0
                );
            }
        }
        let lx = x_slot + slot * 0.4;
        let ly = HEIGHT - MARGIN_B + 14.0;
        let _ = writeln!(
            c.out,
            r#"<text transform="translate({lx:.1},{ly:.1}) rotate(30)">{}</text>"#,
            escape(cat)
        );
    }
    if series_names.len() > 1 {
        c.legend(series_names);
    }
    c.finish()
}

/// Plain bar chart with error bars.
pub fn bar_chart(title: &str, y_label: &str, bars: &[Bar]) -> String {
    let cats: Vec<String> = bars.iter().map(|b| b.label.clone()).collect();
    let groups: Vec<Vec<Bar>> = bars.iter().map(|b| vec![b.clone()]).collect();
    grouped_bar_chart(title, y_label, &cats, &[], &groups)
}

/// Polylines over a shared x axis in `[x_min, x_max]`.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (lo, hi) = value_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (x_min, x_max) = {
        let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let (a, b) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if a.is_finite() && b > a { (a, b) } else { (0.0, 1.0) }
    };
    let mut c = Canvas::new(title, y_label, lo, hi);
    let x = |v: f64| MARGIN_L + (v - x_min) / (x_max - x_min) * (WIDTH - MARGIN_L - MARGIN_R);
    for i in 0..=4 {
        let v = x_min + (x_max - x_min) * i as f64 / 4.0;
        let _ = writeln!(
            c.out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{v:.2}</text>"#,
            x(v),
            HEIGHT - MARGIN_B + 16.0
        );
    }
    let _ = writeln!(
        c.out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - MARGIN_B + 40.0,
        escape(x_label)
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(px, py)| format!("{:.1},{:.1}", x(px), c.y(py)))
            .collect();
        let _ = writeln!(
            c.out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    c.legend(&names);
    c.finish()
}
