//! CSV tables and SVG line-plot panels.

use std::fmt::Write as _;

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.headers.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// CSV text with nine decimals per value.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.9}")))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            x,
            y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

impl Panel {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, series: Vec<Series>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            series,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 260.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn panel_svg(out: &mut String, p: &Panel, top: f64) {
    let (x0, x1) = range(p.series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = range(p.series.iter().flat_map(|s| s.y.iter().copied()));
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + MARGIN + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{:.2}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##,
        top + MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        top + MARGIN - 16.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        top + HEIGHT - 12.0,
        escape(&p.x_label)
    );
    for (v, anchor, x) in [(x0, "start", MARGIN), (x1, "end", WIDTH - MARGIN)] {
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="{anchor}">{v:.3}</text>"#,
            top + HEIGHT - MARGIN + 12.0
        );
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{v:.3}</text>"#,
            MARGIN - 4.0,
            y + 3.0
        );
    }
    for (k, s) in p.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> =
            s.x.iter()
                .zip(&s.y)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 4.0,
            top + MARGIN + 12.0 * (k as f64 + 1.0),
            escape(&s.label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Vertically stacked line-plot panels as one SVG document.
pub fn svg_panels(panels: &[Panel]) -> String {
    let height = HEIGHT * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, p) in panels.iter().enumerate() {
        panel_svg(&mut out, p, i as f64 * HEIGHT);
    }
    out.push_str("</svg>\n");
    out
}
