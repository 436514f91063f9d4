//! Bit-exact matrix persistence (the MEQ1 container), a reader for the NPY
//! v1.0 files external tools dump momentum matrices into, and deterministic
//! CSV/SVG emission for experiment results.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

// ── MEQ1 container ───────────────────────────────────────────────────────────

const MEQ1_MAGIC: &[u8; 4] = b"MEQ1";

/// Writes `a` to `path` as magic "MEQ1", two little-endian u32 dimensions,
/// then the entries as little-endian f64 in row-major order.
pub fn meq1_write(path: &Path, a: &Matrix) -> Result<()> {
    let (rows, cols) = (a.rows(), a.cols());
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(Error::InvalidDimensions(format!(
            "{rows}x{cols} does not fit the 32-bit dimension fields"
        )));
    }
    let mut bytes = Vec::with_capacity(12 + 8 * rows * cols);
    bytes.extend_from_slice(MEQ1_MAGIC);
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in a.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a matrix written by [`meq1_write`]. The round trip is bit-exact,
/// negative zeros and subnormals included.
///
/// # Errors
/// `Parse` for a bad magic, a truncated or oversized payload, or dimensions
/// that overflow; `NonFinite` if the payload holds NaN or infinities.
pub fn meq1_read(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 {
        return Err(Error::Parse(format!(
            "truncated header: {} bytes, need at least 12",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MEQ1_MAGIC {
        return Err(Error::Parse(format!(
            "bad magic {:?}, expected \"MEQ1\"",
            &bytes[0..4]
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| {
            Error::Parse(format!("dimensions {rows}x{cols} overflow the payload size"))
        })?;
    let expected = 12 + count;
    if bytes.len() < expected {
        return Err(Error::Parse(format!(
            "truncated payload for {rows}x{cols}: {} bytes, need {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Parse(format!(
            "{} trailing bytes after a {rows}x{cols} payload",
            bytes.len() - expected
        )));
    }
    let values = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, values)
}

// ── NPY v1.0 reader ──────────────────────────────────────────────────────────

/// Reads a 2-D little-endian float64 C-order array from an NPY v1.0 file.
/// Anything else is refused rather than silently converted.
///
/// # Errors
/// `Parse` for malformed files or headers; `Domain` for a supported file
/// whose dtype, memory order, or rank this reader does not accept.
pub fn npy_read(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < 10 {
        return Err(Error::Parse(format!(
            "file too short for an NPY header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..6] != b"\x93NUMPY" {
        return Err(Error::Parse("bad magic, expected \\x93NUMPY".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::Domain(format!(
            "unsupported format: NPY version {major}.{minor}, only 1.0 is handled"
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(Error::Parse(format!(
            "declared header length {header_len} exceeds the file"
        )));
    }
    let header = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| Error::Parse("header is not valid ASCII".into()))?;

    let descr = header_field(header, "descr")?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    if descr != "<f8" {
        return Err(Error::Domain(format!(
            "unsupported format: dtype {descr}, only little-endian float64 ('<f8') is handled"
        )));
    }
    let order = header_field(header, "fortran_order")?;
    match order {
        "False" => {}
        "True" => {
            return Err(Error::Domain(
                "unsupported format: Fortran-order layout, only C order is handled".into(),
            ))
        }
        other => return Err(Error::Parse(format!("bad fortran_order value {other}"))),
    }
    let shape = header_field(header, "shape")?;
    let dims = parse_shape(shape)?;
    if dims.len() != 2 {
        return Err(Error::Domain(format!(
            "unsupported rank: shape ({}) has {} dimensions, need exactly 2",
            shape.trim_start_matches('(').trim_end_matches(')'),
            dims.len()
        )));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| {
            Error::Parse(format!("shape {rows}x{cols} overflows the payload size"))
        })?;
    let payload = &bytes[data_start..];
    if payload.len() != count {
        return Err(Error::Parse(format!(
            "payload holds {} bytes, a {rows}x{cols} float64 array needs {count}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, values)
}

/// Extracts the raw text of one `'key': value` entry from an NPY header dict.
fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pattern = format!("'{key}':");
    let start = header
        .find(&pattern)
        .ok_or_else(|| Error::Parse(format!("header is missing the {key} field")))?
        + pattern.len();
    let rest = header[start..].trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')
            .map(|i| i + 1)
            .ok_or_else(|| Error::Parse("unterminated shape tuple".into()))?
    } else {
        rest.find([',', '}'])
            .ok_or_else(|| Error::Parse(format!("unterminated {key} value")))?
    };
    Ok(rest[..end].trim())
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let inner = text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::Parse(format!("bad shape tuple {text}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad shape entry {s}")))
        })
        .collect()
}

// ── CSV emission ─────────────────────────────────────────────────────────────

/// One CSV cell. Reals print with 17 significant digits so the exact 64-bit
/// value survives the text round trip.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvField {
    Int(i64),
    Uint(u64),
    Real(f64),
    Text(String),
}

impl CsvField {
    fn render(&self) -> String {
        match self {
            CsvField::Int(v) => v.to_string(),
            CsvField::Uint(v) => v.to_string(),
            CsvField::Real(v) => format!("{v:.16e}"),
            CsvField::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

/// A rectangular table with a header row.
#[derive(Debug, Clone)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<CsvField>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// # Errors
    /// `Usage` when the row width does not match the header.
    pub fn push_row(&mut self, row: Vec<CsvField>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Usage(format!(
                "row has {} fields, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Renders the table as CSV bytes with Unix line endings.
///
/// # Errors
/// `Usage` for a table with no data rows.
pub fn emit_csv(table: &CsvTable) -> Result<Vec<u8>> {
    if table.rows.is_empty() {
        return Err(Error::Usage("refusing to emit a CSV with no rows".into()));
    }
    let mut out = String::new();
    out.push_str(&table.header.join(","));
    out.push('\n');
    for row in &table.rows {
        let line: Vec<String> = row.iter().map(CsvField::render).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out.into_bytes())
}

// ── SVG line charts ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: AxisScale,
    pub y_scale: AxisScale,
}

/// One polyline: a legend label and its (x, y) points.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 500.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Renders the series as a self-contained 800x500 line chart. Output bytes
/// are a pure function of the input. Points with a nonpositive coordinate on
/// a log axis are dropped.
///
/// # Errors
/// `Usage` when no series are given; `Domain` when no plottable points
/// remain after log filtering.
pub fn emit_svg(series: &[Series], axes: &Axes) -> Result<Vec<u8>> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Usage("refusing to plot an empty series list".into()));
    }
    let keep = |v: f64, scale: AxisScale| scale == AxisScale::Linear || v > 0.0;
    let transform = |v: f64, scale: AxisScale| match scale {
        AxisScale::Linear => v,
        AxisScale::Log => v.log10(),
    };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() && keep(x, axes.x_scale) && keep(y, axes.y_scale) {
                xs.push(transform(x, axes.x_scale));
                ys.push(transform(y, axes.y_scale));
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::Domain(
            "no plottable points (log axes drop nonpositive coordinates)".into(),
        ));
    }
    let range = |vals: &[f64]| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in vals {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x_lo, x_hi) = range(&xs);
    let (y_lo, y_hi) = range(&ys);
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let px = |v: f64| MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |v: f64| MARGIN_T + plot_h - (v - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        escape_xml(&axes.title)
    ));
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L:.2}\" y=\"{MARGIN_T:.2}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#333333\"/>\n"
    ));

    for (value, label) in ticks(x_lo, x_hi, axes.x_scale) {
        let x = px(value);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#cccccc\"/>\n",
            MARGIN_T,
            MARGIN_T + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{label}</text>\n",
            MARGIN_T + plot_h + 18.0
        ));
    }
    for (value, label) in ticks(y_lo, y_hi, axes.y_scale) {
        let y = py(value);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#cccccc\"/>\n",
            MARGIN_L,
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"12\">{label}</text>\n",
            MARGIN_L - 6.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        SVG_H - 12.0,
        escape_xml(&axes.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape_xml(&axes.y_label)
    ));

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|&&(x, y)| {
                x.is_finite() && y.is_finite() && keep(x, axes.x_scale) && keep(y, axes.y_scale)
            })
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    px(transform(x, axes.x_scale)),
                    py(transform(y, axes.y_scale))
                )
            })
            .collect();
        if coords.is_empty() {
            continue;
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        let ly = MARGIN_T + 14.0 + 18.0 * idx as f64;
        let lx = MARGIN_L + plot_w - 150.0;
        svg.push_str(&format!(
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            lx + 24.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>\n",
            lx + 30.0,
            ly + 4.0,
            escape_xml(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg.into_bytes())
}

/// Tick positions and labels in transformed (plot) coordinates. Log axes tick
/// every whole decade with "1e{k}" labels; linear axes use a 1/2/5 ladder.
fn ticks(lo: f64, hi: f64, scale: AxisScale) -> Vec<(f64, String)> {
    match scale {
        AxisScale::Log => {
            let first = lo.ceil() as i64;
            let last = hi.floor() as i64;
            let mut step = 1;
            while (last - first) / step > 10 {
                step += 1;
            }
            (first..=last)
                .step_by(step as usize)
                .map(|k| (k as f64, format!("1e{k}")))
                .collect()
        }
        AxisScale::Linear => {
            let span = hi - lo;
            let raw = span / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|&s| span / s <= 6.0)
                .unwrap_or(mag * 10.0);
            let first = (lo / step).ceil() as i64;
            let last = (hi / step).floor() as i64;
            (first..=last)
                .map(|i| {
                    let v = i as f64 * step;
                    (v, format!("{v}"))
                })
                .collect()
        }
    }
}

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
