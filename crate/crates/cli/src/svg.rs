//! Dependency-free SVG emission. Everything is plain string assembly with
//! fixed-precision numbers, so a rerun on identical inputs produces
//! byte-identical files.

use biodiv_core::artifacts::fmt_g;
use biodiv_core::grid::GridSpec;

const CELL_PX: usize = 24;
const MARGIN: usize = 20;
const LEGEND_W: usize = 90;

/// Categorical fill colors; labels beyond the palette wrap around.
const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1",
    "#ff9da7", "#9c755f", "#bab0ac",
];

const MISSING: &str = "#d9d9d9";

fn lerp_channel(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round().clamp(0.0, 255.0) as u8
}

/// Light-to-dark blue ramp.
fn ramp(t: f64) -> String {
    let (lo, hi) = ((0xf7, 0xfb, 0xff), (0x08, 0x30, 0x6b));
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp_channel(lo.0, hi.0, t),
        lerp_channel(lo.1, hi.1, t),
        lerp_channel(lo.2, hi.2, t)
    )
}

struct Canvas {
    body: String,
    w: usize,
    h: usize,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Canvas {
        Canvas { body: String::new(), w, h }
    }

    fn rect(&mut self, x: usize, y: usize, w: usize, h: usize, fill: &str) {
        self.body.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"{fill}\"/>\n"
        ));
    }

    fn text(&mut self, x: usize, y: usize, size: usize, s: &str) {
        self.body.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"{size}\">{s}</text>\n"
        ));
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        self.body.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{fill}\"/>\n",
            fmt_g(cx),
            fmt_g(cy),
            fmt_g(r)
        ));
    }

    fn finish(self, title: &str) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
             viewBox=\"0 0 {} {}\">\n<title>{}</title>\n\
             <rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n{}</svg>\n",
            self.w, self.h, self.w, self.h, title, self.w, self.h, self.body
        )
    }
}

/// Pixel position of a cell; y is flipped so row 0 sits at the bottom.
fn cell_px(spec: &GridSpec, cell: usize) -> (usize, usize) {
    let (xi, yi) = spec.cell_indices(cell);
    (MARGIN + xi * CELL_PX, MARGIN + (spec.ny - 1 - yi) * CELL_PX)
}

/// One rectangle per cell, linear color scale, vertical legend with the
/// value range. Cells absent from `values` stay gray.
pub fn heatmap_continuous(values: &[(usize, f64)], spec: &GridSpec, title: &str) -> String {
    let w = 2 * MARGIN + spec.nx * CELL_PX + LEGEND_W;
    let h = 2 * MARGIN + spec.ny * CELL_PX;
    let mut canvas = Canvas::new(w, h);
    let finite: Vec<f64> = values.iter().map(|&(_, v)| v).filter(|v| v.is_finite()).collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if (hi - lo).abs() < 1e-300 { 1.0 } else { hi - lo };
    let mut filled = vec![None; spec.nx * spec.ny];
    for &(cell, v) in values {
        if cell < filled.len() {
            filled[cell] = Some(v);
        }
    }
    for cell in 0..filled.len() {
        let (x, y) = cell_px(spec, cell);
        let fill = match filled[cell] {
            Some(v) if v.is_finite() => ramp(((v - lo) / span).clamp(0.0, 1.0)),
            _ => MISSING.to_string(),
        };
        canvas.rect(x, y, CELL_PX, CELL_PX, &fill);
    }
    // legend: ten sample swatches, high at the top
    let lx = MARGIN + spec.nx * CELL_PX + 20;
    let lh = (spec.ny * CELL_PX).max(100);
    for i in 0..10 {
        let t = 1.0 - (i as f64 + 0.5) / 10.0;
        canvas.rect(lx, MARGIN + i * lh / 10, 16, lh / 10 + 1, &ramp(t));
    }
    if !finite.is_empty() {
        canvas.text(lx + 20, MARGIN + 10, 11, &fmt_g(hi));
        canvas.text(lx + 20, MARGIN + lh, 11, &fmt_g(lo));
    }
    canvas.finish(title)
}

/// One rectangle per cell, one palette color per label.
pub fn heatmap_categorical(labels: &[(usize, usize)], spec: &GridSpec, title: &str) -> String {
    let w = 2 * MARGIN + spec.nx * CELL_PX + LEGEND_W;
    let h = 2 * MARGIN + spec.ny * CELL_PX;
    let mut canvas = Canvas::new(w, h);
    let mut filled = vec![None; spec.nx * spec.ny];
    let mut max_label = 0usize;
    for &(cell, lab) in labels {
        if cell < filled.len() {
            filled[cell] = Some(lab);
            max_label = max_label.max(lab);
        }
    }
    for cell in 0..filled.len() {
        let (x, y) = cell_px(spec, cell);
        let fill = match filled[cell] {
            Some(lab) => PALETTE[lab % PALETTE.len()],
            None => MISSING,
        };
        canvas.rect(x, y, CELL_PX, CELL_PX, fill);
    }
    let lx = MARGIN + spec.nx * CELL_PX + 20;
    for lab in 0..=max_label.min(PALETTE.len() - 1) {
        canvas.rect(lx, MARGIN + lab * 20, 14, 14, PALETTE[lab % PALETTE.len()]);
        canvas.text(lx + 20, MARGIN + lab * 20 + 11, 11, &lab.to_string());
    }
    canvas.finish(title)
}

/// Scatter of (x, y) points on a white background with axis labels at the
/// data extremes; used for the empirical variogram.
pub fn scatter(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h) = (480usize, 320usize);
    let (m_left, m_right, m_top, m_bottom) = (56.0, 16.0, 24.0, 40.0);
    let mut canvas = Canvas::new(w, h);
    if points.is_empty() {
        return canvas.finish(title);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (x0, x1) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (0.0f64.min(ys.iter().cloned().fold(f64::INFINITY, f64::min)), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let xs_span = if (x1 - x0).abs() < 1e-300 { 1.0 } else { x1 - x0 };
    let ys_span = if (y1 - y0).abs() < 1e-300 { 1.0 } else { y1 - y0 };
    let plot_w = w as f64 - m_left - m_right;
    let plot_h = h as f64 - m_top - m_bottom;
    for &(x, y) in points {
        let cx = m_left + (x - x0) / xs_span * plot_w;
        let cy = m_top + (1.0 - (y - y0) / ys_span) * plot_h;
        canvas.circle(cx, cy, 3.0, "#4e79a7");
    }
    canvas.body.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>\n",
        m_left,
        h as f64 - m_bottom,
        w as f64 - m_right,
        h as f64 - m_bottom
    ));
    canvas.body.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>\n",
        m_left, m_top, m_left,
        h as f64 - m_bottom
    ));
    canvas.text(m_left as usize, h - 8, 11, x_label);
    canvas.text(8, m_top as usize - 8, 11, y_label);
    canvas.text((m_left - 40.0) as usize, h - m_bottom as usize + 14, 10, &fmt_g(x0));
    canvas.text((w as f64 - m_right - 20.0) as usize, h - m_bottom as usize + 14, 10, &fmt_g(x1));
    canvas.text(8, (h as f64 - m_bottom) as usize, 10, &fmt_g(y0));
    canvas.text(8, (m_top + 10.0) as usize, 10, &fmt_g(y1));
    canvas.finish(title)
}
