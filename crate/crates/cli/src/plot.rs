//! Self-contained SVG of measured capacity, predicted means and the 2σ band.

use std::fmt::Write;

use sdgl::data::CellDataset;
use sdgl::pipeline::EvalReport;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn polyline(frame: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    let mut s = String::new();
    for (x, y) in pts {
        let _ = write!(s, "{:.2},{:.2} ", frame.x(x), frame.y(y));
    }
    s.trim_end().to_string()
}

/// Capacity against cycle index for one cell. The band belongs to the first
/// report; every report contributes a mean line.
pub fn render_svg(dataset: &CellDataset, reports: &[&EvalReport]) -> String {
    let cycles = dataset.cycles();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in cycles {
        lo = lo.min(c.capacity);
        hi = hi.max(c.capacity);
    }
    if let Some(r) = reports.first() {
        for p in r.predictions.iter().filter(|p| p.lower2s.is_finite() && p.upper2s.is_finite()) {
            lo = lo.min(p.lower2s);
            hi = hi.max(p.upper2s);
        }
    }
    for r in reports.iter().skip(1) {
        for p in r.predictions.iter().filter(|p| p.mean.is_finite()) {
            lo = lo.min(p.mean);
            hi = hi.max(p.mean);
        }
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    let frame = Frame {
        x0: cycles.first().map_or(0.0, |c| c.cycle_index as f64),
        x1: cycles
            .last()
            .map_or(1.0, |c| c.cycle_index as f64)
            .max(1.0 + cycles.first().map_or(0.0, |c| c.cycle_index as f64)),
        y0: lo - pad,
        y1: hi + pad,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&dataset.cell_id));

    // Axes with five ticks each.
    let (left, bottom) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{left},{MARGIN} L{left},{bottom} L{},{bottom}" stroke="black" fill="none"/>"#,
        WIDTH - MARGIN
    );
    for k in 0..=4 {
        let xv = frame.x0 + (frame.x1 - frame.x0) * k as f64 / 4.0;
        let yv = frame.y0 + (frame.y1 - frame.y0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.0}</text>"#,
            frame.x(xv),
            bottom + 16.0,
            xv
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            left - 6.0,
            frame.y(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">cycle</text>"#, WIDTH / 2.0, HEIGHT - 16.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">capacity (Ah)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    if let Some(r) = reports.first() {
        let pts: Vec<(f64, f64, f64)> = r
            .cycles
            .iter()
            .zip(&r.predictions)
            .filter(|(_, p)| p.lower2s.is_finite() && p.upper2s.is_finite())
            .map(|(&c, p)| (c as f64, p.lower2s, p.upper2s))
            .collect();
        if !pts.is_empty() {
            let upper = polyline(&frame, pts.iter().map(|&(c, _, u)| (c, u)));
            let lower = polyline(&frame, pts.iter().rev().map(|&(c, l, _)| (c, l)));
            let _ = writeln!(
                svg,
                r#"<polygon points="{upper} {lower}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                COLORS[0]
            );
        }
    }

    let truth = polyline(&frame, cycles.iter().map(|c| (c.cycle_index as f64, c.capacity)));
    let _ = writeln!(svg, r#"<polyline points="{truth}" fill="none" stroke="black" stroke-width="1.2"/>"#);

    for (k, r) in reports.iter().enumerate() {
        let pts = polyline(
            &frame,
            r.cycles.iter().zip(&r.predictions).filter(|(_, p)| p.mean.is_finite()).map(|(&c, p)| (c as f64, p.mean)),
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{pts}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            COLORS[k % COLORS.len()]
        );
    }

    if let Some(last_train) = dataset.train().last() {
        let x = frame.x(last_train.cycle_index as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{MARGIN}" x2="{x:.2}" y2="{bottom}" stroke="gray" stroke-dasharray="6,4"/>"#
        );
    }

    // Legend.
    let mut entries = vec![("measured".to_string(), "black")];
    entries.extend(reports.iter().enumerate().map(|(k, r)| (r.method.clone(), COLORS[k % COLORS.len()])));
    for (k, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN + 8.0 + 16.0 * k as f64;
        let x = WIDTH - MARGIN - 150.0;
        let _ =
            writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, x + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(label));
    }
    if let Some(r) = reports.first() {
        let y = MARGIN + 8.0 + 16.0 * entries.len() as f64;
        let x = WIDTH - MARGIN - 150.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="20" height="8" fill="{}" fill-opacity="0.2"/>"#,
            y - 4.0,
            COLORS[0]
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{} ±2σ</text>"#, x + 26.0, y + 4.0, escape(&r.method));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
