use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{hex_sha256, DatasetCollection};
use crate::fit::FitResult;
use crate::lmetric::L2Report;
use crate::transform::Template;

/// Collects output files, each written through a temporary file and a
/// rename, and remembers their digests.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> std::io::Result<PathBuf> {
        let target = self.root.join(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        {
            let mut file = std::fs::File::create(&tmp)?;
            file.write_all(contents)?;
            file.sync_all()?;
        }
        std::fs::rename(&tmp, &target)?;
        self.written.push((name.to_owned(), hex_sha256(contents)));
        Ok(target)
    }

    /// File names and SHA-256 digests, in write order.
    pub fn written(&self) -> &[(String, String)] {
        &self.written
    }
}

/// Shortest text that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_owned()
    }
}

pub fn theta_matrix_csv(template: &Template, fit: &FitResult, data: &DatasetCollection) -> String {
    let mut out = String::from("system_id");
    for k in 0..template.param_count() {
        write!(out, ",t{k}").unwrap();
    }
    out.push('\n');
    for (d, row) in data.iter().zip(&fit.theta_matrix) {
        out.push_str(&csv_field(d.system_id()));
        for v in row {
            write!(out, ",{}", num(*v)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn fit_summary_csv(fit: &FitResult, data: &DatasetCollection) -> String {
    let mut out = String::from("system_id,l1,method\n");
    for ((d, l1), method) in data.iter().zip(&fit.per_dataset_l1).zip(&fit.methods) {
        writeln!(out, "{},{},{}", csv_field(d.system_id()), num(*l1), method.name()).unwrap();
    }
    out
}

/// `points` predictions per system, evenly spaced over its x range.
pub fn curves_csv(template: &Template, fit: &FitResult, data: &DatasetCollection, points: usize) -> String {
    let mut out = String::from("system_id,x,y_pred\n");
    for (d, theta) in data.iter().zip(&fit.theta_matrix) {
        let (lo, hi) = (d.xs()[0], d.xs()[d.len() - 1]);
        for i in 0..points {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let y = template.evaluate(x, theta).map_or_else(|_| "NaN".to_owned(), num);
            writeln!(out, "{},{},{y}", csv_field(d.system_id()), num(x)).unwrap();
        }
    }
    out
}

pub fn l2_report_csv(template: &Template, report: &L2Report) -> String {
    let mut out = String::from("slot,role,contribution\n");
    for (k, c) in report.contributions.iter().enumerate() {
        writeln!(out, "t{k},{},{}", template.roles()[k].name(), num(*c)).unwrap();
    }
    out
}

/// One row per (system, slot), with every annotated intrinsic as a column.
pub fn theta_vs_intrinsic_csv(template: &Template, fit: &FitResult, data: &DatasetCollection) -> String {
    let keys = intrinsic_keys(data);
    let mut out = String::from("system_id,slot,role,value");
    for k in &keys {
        write!(out, ",{}", csv_field(k)).unwrap();
    }
    out.push('\n');
    for (d, row) in data.iter().zip(&fit.theta_matrix) {
        for (slot, v) in row.iter().enumerate() {
            write!(out, "{},t{slot},{},{}", csv_field(d.system_id()), template.roles()[slot].name(), num(*v)).unwrap();
            for k in &keys {
                let cell = d.annotation(k).map_or_else(String::new, num);
                write!(out, ",{cell}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn intrinsic_keys(data: &DatasetCollection) -> Vec<String> {
    let mut keys: Vec<String> = data.iter().flat_map(|d| d.annotations().keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    keys
}

/// Plain scatter plot: axis box, tick labels at the extremes, one circle
/// per point.
pub fn scatter_svg(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 60.0;
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let range = |values: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = range(&mut finite.iter().map(|p| p.0));
    let (y0, y1) = range(&mut finite.iter().map(|p| p.1));
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let escape = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(svg, r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * M, H - 2.0 * M).unwrap();
    for (x, y) in &finite {
        writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, px(*x), py(*y)).unwrap();
    }
    writeln!(svg, r#"<text x="{M}" y="{}" text-anchor="middle">{:.4}</text>"#, H - M + 16.0, x0).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{:.4}</text>"#, W - M, H - M + 16.0, x1).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, M - 4.0, H - M, y0).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, M - 4.0, M + 4.0, y1).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(x_label)).unwrap();
    writeln!(svg, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, H / 2.0, H / 2.0, escape(y_label)).unwrap();
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1e-22, -3.0, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", b"x\n").unwrap();
        out.write("a.csv", b"y\n").unwrap();
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec!["a.csv"]);
        assert_eq!(std::fs::read(dir.path().join("a.csv")).unwrap(), b"y\n");
    }

    #[test]
    fn svg_has_one_circle_per_finite_point() {
        let svg = scatter_svg(&[(1.0, 2.0), (2.0, 3.0), (f64::NAN, 1.0)], "G", "t1 <value>");
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("t1 &lt;value&gt;"));
    }
}
