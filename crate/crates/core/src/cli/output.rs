//! File writers. Everything is formatted through `Display` of `f64`,
//! which prints the shortest round-tripping decimal, so outputs are
//! byte-for-byte reproducible.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::metrics::{GroupedSummary, Histogram};

pub fn write_file(dir: &Path, name: &str, body: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (b, count) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(b);
        let _ = writeln!(s, "{lo},{hi},{count}");
    }
    s
}

pub fn summary_csv(g: &GroupedSummary) -> String {
    let mut s = String::from("group,count,mean,variance\n");
    for (k, v) in &g.groups {
        let _ = writeln!(s, "{k},{},{},{}", v.count, v.mean, v.variance);
    }
    let t = &g.total;
    let _ = writeln!(s, "all,{},{},{}", t.count, t.mean, t.variance);
    s
}

/// `quantity,value` table.
#[derive(Debug, Default, Clone)]
pub struct MomentsTable {
    rows: Vec<(String, String)>,
}

impl MomentsTable {
    pub fn push(&mut self, name: impl Into<String>, value: impl std::fmt::Display) {
        self.rows.push((name.into(), value.to_string()));
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("quantity,value\n");
        for (k, v) in &self.rows {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

/// A bare bar chart of the histogram.
pub fn histogram_svg(h: &Histogram, title: &str) -> String {
    let (w, ht, pad) = (640.0, 400.0, 40.0);
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (w - 2.0 * pad) / h.counts.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{ht}" viewBox="0 0 {w} {ht}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{ht}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (b, &c) in h.counts.iter().enumerate() {
        let bh = (ht - 2.0 * pad) * c as f64 / max;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue"/>"#,
            pad + bw * b as f64,
            ht - pad - bh,
            (bw - 1.0).max(0.5),
            bh
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = ht - pad,
        x2 = w - pad
    );
    for (x, label) in [(pad, h.lo), (w / 2.0, (h.lo + h.hi) / 2.0), (w - pad, h.hi)] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{label}</text>"#,
            ht - pad + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
