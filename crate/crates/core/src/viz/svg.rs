//! Minimal SVG writer with byte-stable number formatting.

use std::fmt::Write as _;

/// Formats `v` with at most six significant digits, no exponent and no
/// trailing zeros. Negative zero prints as `0`.
pub fn num(v: f64) -> String {
    if !v.is_finite() {
        return "0".to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    let s = if exp > 5 {
        let unit = 10f64.powi(exp - 5);
        format!("{:.0}", (v / unit).round() * unit)
    } else {
        format!("{v:.decimals$}")
    };
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// An SVG document built in drawing order.
#[derive(Debug, Clone)]
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn open_group(&mut self, class: &str, dx: f64, dy: f64) {
        let _ = writeln!(
            self.body,
            r#"<g class="{}" transform="translate({} {})">"#,
            escape(class),
            num(dx),
            num(dy)
        );
    }

    pub fn close_group(&mut self) {
        self.body.push_str("</g>\n");
    }

    /// `extra` is appended verbatim (already escaped attributes).
    pub fn rect(&mut self, class: &str, x: f64, y: f64, w: f64, h: f64, fill: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect class="{}" x="{}" y="{}" width="{}" height="{}" fill="{}"{extra}/>"#,
            escape(class),
            num(x),
            num(y),
            num(w),
            num(h),
            escape(fill)
        );
    }

    pub fn line(&mut self, class: &str, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line class="{}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="{}"/>"#,
            escape(class),
            num(x1),
            num(y1),
            num(x2),
            num(y2),
            escape(stroke),
            num(width)
        );
    }

    pub fn polyline(&mut self, class: &str, points: impl IntoIterator<Item = (f64, f64)>, stroke: &str, width: f64, extra: &str) {
        let mut pts = String::new();
        for (i, (x, y)) in points.into_iter().enumerate() {
            if i > 0 {
                pts.push(' ');
            }
            let _ = write!(pts, "{},{}", num(x), num(y));
        }
        let _ = writeln!(
            self.body,
            r#"<polyline class="{}" points="{pts}" fill="none" stroke="{}" stroke-width="{}"{extra}/>"#,
            escape(class),
            escape(stroke),
            num(width)
        );
    }

    /// Path from absolute commands given as `(command, coordinates)`.
    pub fn path(&mut self, class: &str, commands: &[(char, &[f64])], stroke: &str, width: f64) {
        let mut d = String::new();
        for (i, (c, coords)) in commands.iter().enumerate() {
            if i > 0 {
                d.push(' ');
            }
            d.push(*c);
            for v in coords.iter() {
                let _ = write!(d, " {}", num(*v));
            }
        }
        let _ = writeln!(
            self.body,
            r#"<path class="{}" d="{d}" fill="none" stroke="{}" stroke-width="{}"/>"#,
            escape(class),
            escape(stroke),
            num(width)
        );
    }

    pub fn circle(&mut self, class: &str, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle class="{}" cx="{}" cy="{}" r="{}" fill="{}"/>"#,
            escape(class),
            num(cx),
            num(cy),
            num(r),
            escape(fill)
        );
    }

    /// `anchor` is `start`, `middle` or `end`.
    pub fn text(&mut self, class: &str, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text class="{}" x="{}" y="{}" font-family="sans-serif" font-size="{}" text-anchor="{anchor}">{}</text>"#,
            escape(class),
            num(x),
            num(y),
            num(size),
            escape(content)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}mm\" height=\"{h}mm\" viewBox=\"0 0 {w} {h}\">\n<rect class=\"background\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = num(self.width),
            h = num(self.height)
        )
    }
}
