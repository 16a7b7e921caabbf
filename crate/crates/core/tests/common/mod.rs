//! Helpers shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

/// One SVG element with its attributes and the accumulated group offset.
#[derive(Debug, Clone)]
pub struct Elem {
    pub tag: String,
    pub attrs: BTreeMap<String, String>,
    pub offset: (f64, f64),
}

impl Elem {
    pub fn class(&self) -> &str {
        self.attrs.get("class").map(String::as_str).unwrap_or("")
    }

    pub fn num(&self, key: &str) -> f64 {
        self.attrs[key].parse().unwrap_or_else(|_| panic!("attribute {key} of {self:?}"))
    }

    /// Absolute polyline vertices.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.attrs["points"]
            .split(' ')
            .map(|p| {
                let (x, y) = p.split_once(',').expect("x,y");
                (x.parse::<f64>().unwrap() + self.offset.0, y.parse::<f64>().unwrap() + self.offset.1)
            })
            .collect()
    }
}

fn attrs(tag_body: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut rest = tag_body;
    while let Some(eq) = rest.find("=\"") {
        let key = rest[..eq].rsplit(' ').next().unwrap().to_string();
        let after = &rest[eq + 2..];
        let end = after.find('"').expect("closing quote");
        out.insert(key, after[..end].to_string());
        rest = &after[end + 1..];
    }
    out
}

/// Elements in document order; the writer puts one element per line.
pub fn elements(svg: &str) -> Vec<Elem> {
    let mut stack: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut out = Vec::new();
    for line in svg.lines().map(str::trim) {
        if line.starts_with("</g") {
            stack.pop();
            continue;
        }
        let Some(body) = line.strip_prefix('<') else { continue };
        if body.starts_with('?') || body.starts_with('/') {
            continue;
        }
        let tag: String = body.chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
        let a = attrs(body.split('>').next().unwrap());
        let base = *stack.last().unwrap();
        if tag == "g" {
            let tr = a.get("transform").map(String::as_str).unwrap_or("translate(0 0)");
            let inner = tr.trim_start_matches("translate(").trim_end_matches(')');
            let (dx, dy) = inner.split_once(' ').unwrap();
            stack.push((base.0 + dx.parse::<f64>().unwrap(), base.1 + dy.parse::<f64>().unwrap()));
        }
        out.push(Elem { tag, attrs: a, offset: base });
    }
    out
}

pub fn with_class<'a>(elems: &'a [Elem], class: &str) -> Vec<&'a Elem> {
    elems.iter().filter(|e| e.class() == class).collect()
}

/// Absolute offsets of groups with the given class.
pub fn group_offsets(elems: &[Elem], class: &str) -> Vec<(f64, f64)> {
    elems
        .iter()
        .filter(|e| e.tag == "g" && e.class() == class)
        .map(|e| {
            let tr = &e.attrs["transform"];
            let inner = tr.trim_start_matches("translate(").trim_end_matches(')');
            let (dx, dy) = inner.split_once(' ').unwrap();
            (e.offset.0 + dx.parse::<f64>().unwrap(), e.offset.1 + dy.parse::<f64>().unwrap())
        })
        .collect()
}

/// Vertical extent of a calibration path `M a 0 H b V top H c V 0 ...`.
pub fn calibration_height(e: &Elem) -> f64 {
    let d = &e.attrs["d"];
    let vs: Vec<f64> = d
        .split(' ')
        .collect::<Vec<_>>()
        .windows(2)
        .filter(|w| w[0] == "V")
        .map(|w| w[1].parse().unwrap())
        .collect();
    let hi = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = vs.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}
