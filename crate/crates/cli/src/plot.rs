use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 40.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Linear map from a data range onto a pixel range. A degenerate data range
/// is widened by one unit on each side.
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        };
        Axis {
            lo,
            hi,
            px_lo,
            px_hi,
        }
    }

    pub fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

pub type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Plot-area axes for `series`: x maps onto `[LEFT, WIDTH - RIGHT]`, y onto
/// `[HEIGHT - BOTTOM, TOP]`.
pub fn axes(series: &Series) -> (Axis, Axis) {
    let pts = || series.values().flatten();
    let (x0, x1) = range(pts().map(|p| p.0));
    let (y0, y1) = range(pts().map(|p| p.1));
    let (x0, x1) = if x0 > x1 { (0.0, 1.0) } else { (x0, x1) };
    let (y0, y1) = if y0 > y1 { (0.0, 1.0) } else { (y0, y1) };
    (
        Axis::new(x0, x1, LEFT, WIDTH - RIGHT),
        Axis::new(y0, y1, HEIGHT - BOTTOM, TOP),
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render_svg(series: &Series) -> Result<String> {
    if series.is_empty() {
        return Err(CliError::Plot("no series".into()));
    }
    if let Some((name, _)) = series.iter().find(|(_, pts)| pts.is_empty()) {
        return Err(CliError::Plot(format!("series {name:?} is empty")));
    }
    let (ax, ay) = axes(series);
    let (x_lo, x_hi) = (LEFT, WIDTH - RIGHT);
    let (y_lo, y_hi) = (HEIGHT - BOTTOM, TOP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{x_lo}" y1="{y_lo}" x2="{x_hi}" y2="{y_lo}"/><line x1="{x_lo}" y1="{y_lo}" x2="{x_lo}" y2="{y_hi}"/></g>"#
    );
    let (xmin, xmax) = (ax.lo, ax.hi);
    let (ymin, ymax) = (ay.lo, ay.hi);
    let _ = writeln!(
        s,
        r#"<g font-family="sans-serif" font-size="11"><text x="{x_lo}" y="{}" text-anchor="middle">{xmin:.4}</text><text x="{x_hi}" y="{}" text-anchor="middle">{xmax:.4}</text><text x="{}" y="{y_lo}" text-anchor="end">{ymin:.4}</text><text x="{}" y="{}" text-anchor="end">{ymax:.4}</text></g>"#,
        y_lo + 16.0,
        y_lo + 16.0,
        x_lo - 4.0,
        x_lo - 4.0,
        y_hi + 4.0
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", ax.map(x), ay.map(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = x_hi + 12.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg_lineplot(series: &Series, path: &Path) -> Result<()> {
    let svg = render_svg(series)?;
    std::fs::write(path, svg).map_err(|e| CliError::io(path, e))
}
