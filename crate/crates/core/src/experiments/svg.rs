//! Minimal SVG writer in data coordinates.

use std::fmt::Write;

#[derive(Clone, Debug)]
pub struct Plot {
    width: f64,
    height: f64,
    /// `[x_min, x_max, y_min, y_max]`.
    bounds: [f64; 4],
    body: String,
}

const MARGIN: f64 = 40.0;

impl Plot {
    pub fn new(bounds: [f64; 4], width: f64, height: f64) -> Self {
        let mut b = bounds;
        for k in [0, 2] {
            if !(b[k + 1] > b[k]) {
                b[k] -= 0.5;
                b[k + 1] = b[k] + 1.0;
            }
        }
        Self {
            width,
            height,
            bounds: b,
            body: String::new(),
        }
    }

    /// Bounding box of `points`, padded by `pad` of its extent.
    pub fn fit<'a>(points: impl IntoIterator<Item = &'a [f64; 2]>, pad: f64, width: f64, height: f64) -> Self {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for p in points {
            if p[0].is_finite() && p[1].is_finite() {
                b = [b[0].min(p[0]), b[1].max(p[0]), b[2].min(p[1]), b[3].max(p[1])];
            }
        }
        if !b[0].is_finite() {
            b = [0.0, 1.0, 0.0, 1.0];
        }
        let (dx, dy) = ((b[1] - b[0]) * pad, (b[3] - b[2]) * pad);
        Self::new([b[0] - dx, b[1] + dx, b[2] - dy, b[3] + dy], width, height)
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let [x0, x1, y0, y1] = self.bounds;
        let sx = (self.width - 2.0 * MARGIN) / (x1 - x0);
        let sy = (self.height - 2.0 * MARGIN) / (y1 - y0);
        (MARGIN + (p[0] - x0) * sx, self.height - MARGIN - (p[1] - y0) * sy)
    }

    fn points_attr(&self, pts: &[[f64; 2]]) -> String {
        let mut s = String::new();
        for p in pts {
            let (x, y) = self.map(*p);
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
        s.trim_end().to_string()
    }

    pub fn polyline(&mut self, pts: &[[f64; 2]], stroke: &str, width: f64, opacity: f64) {
        let attr = self.points_attr(pts);
        let _ = writeln!(
            self.body,
            r#"<polyline points="{attr}" fill="none" stroke="{stroke}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#
        );
    }

    pub fn polygon(&mut self, pts: &[[f64; 2]], fill: &str, opacity: f64, stroke: &str) {
        let attr = self.points_attr(pts);
        let _ = writeln!(
            self.body,
            r#"<polygon points="{attr}" fill="{fill}" fill-opacity="{opacity}" stroke="{stroke}" stroke-width="0.6"/>"#
        );
    }

    pub fn circle(&mut self, p: [f64; 2], r: f64, fill: &str) {
        let (x, y) = self.map(p);
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"/>"#);
    }

    /// Axis-aligned data rectangle.
    pub fn rect(&mut self, lo: [f64; 2], hi: [f64; 2], stroke: &str) {
        let pts = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]], lo];
        self.polyline(&pts, stroke, 1.5, 1.0);
    }

    pub fn text(&mut self, p: [f64; 2], label: &str) {
        let (x, y) = self.map(p);
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{y:.2}" font-size="12">{label}</text>"#);
    }

    pub fn title(&mut self, label: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{MARGIN}" y="{:.2}" font-size="14">{label}</text>"#,
            MARGIN * 0.6
        );
    }

    pub fn finish(&self) -> String {
        let (w, h) = (self.width, self.height);
        let (ax0, ay0) = self.map([self.bounds[0], self.bounds[2]]);
        let (ax1, ay1) = self.map([self.bounds[1], self.bounds[3]]);
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <rect x=\"{ax0:.2}\" y=\"{ay1:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#999\"/>\n\
             {}</svg>\n",
            ax1 - ax0,
            ay0 - ay1,
            self.body
        )
    }
}
