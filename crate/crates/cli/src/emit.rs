//! CSV tables and SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// A table whose first column is the abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Columns drawn against column 0.
    pub plot: Vec<usize>,
    pub log_x: bool,
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            plot: Vec::new(),
            log_x: false,
        }
    }

    pub fn plotting(mut self, cols: &[&str]) -> Self {
        self.plot = cols
            .iter()
            .map(|c| self.columns.iter().position(|n| n == c).expect("plotted column exists"))
            .collect();
        self
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Shortest round-trip decimal; exponent notation outside `[1e-4, 1e15)`.
pub fn format_number(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// RFC 4180: header row, CRLF line ends, quoting where needed.
pub fn csv_string(s: &Series) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(&s.columns).expect("in-memory write");
    for row in &s.rows {
        w.write_record(row.iter().map(|x| format_number(*x))).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 output")
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-300_f64.max(1e-12 * hi.abs()) {
        let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Self-contained polyline plot with ticked axes and a legend.
pub fn svg_string(s: &Series) -> String {
    let tx = |x: f64| if s.log_x { x.log10() } else { x };
    let xs: Vec<f64> = s.rows.iter().map(|r| tx(r[0])).collect();
    let (x0, x1) = range(xs.iter().copied());
    let (y0, y1) = range(s.plot.iter().flat_map(|&c| s.rows.iter().map(move |r| r[c])));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(&s.name));
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{:.2},{:.2}V{:.2}H{:.2}" fill="none" stroke="black"/>"#,
        LEFT,
        TOP,
        TOP + ph,
        LEFT + pw
    );
    for k in 0..=TICKS {
        let f = k as f64 / TICKS as f64;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (gx, gy) = (px(xv), py(yv));
        let xl = if s.log_x { format!("1e{xv:.2}") } else { format!("{xv:.4}") };
        let _ = writeln!(
            out,
            r#"<line x1="{gx:.2}" y1="{:.2}" x2="{gx:.2}" y2="{:.2}" stroke="black"/><text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            escape(&xl)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{gy:.2}" x2="{LEFT:.2}" y2="{gy:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            gy + 4.0,
            escape(&format!("{yv:.4e}"))
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + 0.5 * pw,
        HEIGHT - 10.0,
        escape(&if s.log_x { format!("log10 {}", s.columns[0]) } else { s.columns[0].clone() })
    );
    for (k, &c) in s.plot.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let points: Vec<String> = s
            .rows
            .iter()
            .zip(&xs)
            .filter(|(r, x)| r[c].is_finite() && x.is_finite())
            .map(|(r, &x)| format!("{:.2},{:.2}", px(x), py(r[c])))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let ly = TOP + 14.0 * k as f64 + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            LEFT + pw + 10.0,
            LEFT + pw + 30.0,
            LEFT + pw + 35.0,
            ly + 4.0,
            escape(&s.columns[c])
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Series {
        let mut s = Series::new("demo", &["t", "a,b", "c"]).plotting(&["a,b", "c"]);
        s.push(vec![0.0, 1.5, 2e-7]);
        s.push(vec![1.0, -0.25, f64::NAN]);
        s
    }

    #[test]
    fn csv_quotes_and_line_ends() {
        let text = csv_string(&sample());
        assert_eq!(text, "t,\"a,b\",c\r\n0,1.5,2e-7\r\n1,-0.25,NaN\r\n");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 6.02e23, -1.5e-9, 12345.678] {
            assert_eq!(format_number(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn svg_has_one_polyline_per_plotted_column() {
        let svg = svg_string(&sample());
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a,b"));
    }

    #[test]
    fn flat_and_empty_series_still_render() {
        let mut s = Series::new("flat", &["t", "y"]).plotting(&["y"]);
        s.push(vec![0.0, 0.0]);
        s.push(vec![1.0, 0.0]);
        assert!(svg_string(&s).contains("<polyline"));
        let e = Series::new("empty", &["t", "y"]).plotting(&["y"]);
        assert!(svg_string(&e).ends_with("</svg>\n"));
    }
}
