//! Output artifacts: CSV tables, run manifests and a bare log-log SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::hfunc::HRow;
use crate::sim::{CrossingEstimate, RatioRow};

/// A rectangular table of preformatted cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest round-trip decimal form; `NaN` and `inf` spelled out.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.headers.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Rows as JSON objects keyed by header.
    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.headers
                    .iter()
                    .zip(r)
                    .map(|(h, c)| {
                        let v = match c.parse::<f64>() {
                            Ok(f) if f.is_finite() => serde_json::json!(f),
                            _ => serde_json::Value::String(c.clone()),
                        };
                        (h.clone(), v)
                    })
                    .collect()
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("table serializes") + "\n"
    }

    /// Column by header name, parsed as numbers.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }
}

pub fn estimates_table(est: &[CrossingEstimate]) -> Table {
    let mut t = Table::new(&[
        "x",
        "p_hat",
        "stderr",
        "ci_lo",
        "ci_hi",
        "n_crossings",
        "cap_hit_fraction",
        "estimator",
    ]);
    for e in est {
        t.push(vec![
            num(e.x),
            num(e.p_hat),
            num(e.stderr),
            num(e.ci_95.0),
            num(e.ci_95.1),
            e.n_crossings.to_string(),
            num(e.cap_hit_fraction),
            e.estimator.label().into(),
        ]);
    }
    t
}

pub fn ratio_table(rows: &[RatioRow]) -> Table {
    let mut t = Table::new(&[
        "x",
        "p_hat",
        "p_stderr",
        "p_ci_lo",
        "p_ci_hi",
        "h",
        "h_bound",
        "h_stderr",
        "ratio",
        "ratio_ci_lo",
        "ratio_ci_hi",
        "rel_err",
        "lower_bound",
    ]);
    for r in rows {
        t.push(vec![
            num(r.x),
            num(r.p_hat),
            num(r.p_stderr),
            num(r.p_ci.0),
            num(r.p_ci.1),
            num(r.h),
            num(r.h_bound),
            opt(r.h_stderr),
            num(r.ratio),
            num(r.ratio_ci.0),
            num(r.ratio_ci.1),
            num(r.rel_err),
            r.lower_bound.to_string(),
        ]);
    }
    t
}

pub fn h_rows_table(rows: &[HRow]) -> Table {
    let mut t = Table::new(&["x", "h", "truncation_bound", "h_hat", "v_g", "asymptotic", "ratio"]);
    for r in rows {
        t.push(vec![
            num(r.x),
            num(r.h),
            num(r.truncation_bound),
            opt(r.h_hat),
            opt(r.v_g),
            opt(r.asymptotic),
            opt(r.ratio),
        ]);
    }
    t
}

/// Git-style content hash: SHA-256 over `"blob <len>\0" ++ bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub hash: String,
}

/// Everything needed to rerun a command and check its data files.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    pub input_hash: String,
    pub wall_time_secs: f64,
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>, threads: usize) -> Self {
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        Self {
            command: command.into(),
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads,
            input_hash: content_hash(&canonical),
            config,
            wall_time_secs: 0.0,
            outputs: Vec::new(),
        }
    }
}

/// Writes data files into one directory and records them for the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self {
            root: root.as_ref().to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        fs::write(&p, contents)?;
        self.written.push(OutputFile {
            file: name.into(),
            hash: content_hash(contents.as_bytes()),
        });
        Ok(p)
    }

    pub fn finish(self, mut manifest: Manifest, wall_time_secs: f64) -> Result<PathBuf> {
        manifest.wall_time_secs = wall_time_secs;
        manifest.outputs = self.written;
        let p = self.root.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(p)
    }
}

/// One polyline of a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Log-log line plot. Points with a nonpositive coordinate are dropped.
pub fn loglog_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
                .map(|(x, y)| (x.log10(), y.log10()))
                .collect()
        })
        .collect();
    let all: Vec<&(f64, f64)> = pts.iter().flatten().collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    if all.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(|p| f(p)).fold(f64::INFINITY, f64::min).floor();
        let hi = all.iter().map(|p| f(p)).fold(f64::NEG_INFINITY, f64::max).ceil();
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = span(|p| p.1);
    let sx = |v: f64| m + (v - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);
    let _ = writeln!(
        svg,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    for d in (x0 as i64)..=(x1 as i64) {
        let x = sx(d as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{m}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">1e{d}</text>"##,
            h - m,
            h - m + 16.0
        );
    }
    for d in (y0 as i64)..=(y1 as i64) {
        let y = sy(d as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{m}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">1e{d}</text>"##,
            w - m,
            m - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        w / 2.0,
        h - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let line: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            line.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            m + 8.0,
            m + 16.0 + 14.0 * i as f64,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_convention() {
        // printf 'hello\n' | git hash-object --object-format=sha256 --stdin
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn csv_round_trip() {
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![num(1.0), num(f64::NAN)]);
        t.push(vec![num(2.5e-8), num(f64::INFINITY)]);
        assert_eq!(t.to_csv().unwrap(), "x,y\n1,NaN\n0.000000025,inf\n");
        assert_eq!(t.column("x").unwrap(), vec![1.0, 2.5e-8]);
        assert!(t.to_json().contains("\"y\": \"NaN\""));
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let s = vec![
            Series {
                label: "a".into(),
                points: vec![(1.0, 1.0), (10.0, 0.1), (100.0, 0.0)],
            },
            Series {
                label: "b<c".into(),
                points: vec![(1.0, 2.0), (100.0, 0.5)],
            },
        ];
        let svg = loglog_svg("t", "x", "y", &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
