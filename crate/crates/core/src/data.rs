//! Datasets, CSV ingestion and the synthetic system generators.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("line {line}: cannot parse {column} value {value:?}")]
    Value { line: u64, column: &'static str, value: String },
    #[error("system {0:?} has fewer than 2 points")]
    EmptySystem(String),
    #[error("no systems in input")]
    EmptyCollection,
    #[error("duplicate system id {0:?}")]
    DuplicateSystem(String),
    #[error("system {system_id:?} has two points at x = {x}")]
    DuplicateX { system_id: String, x: f64 },
    #[error("system {0:?} contains a non-finite value")]
    NonFinite(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Observations of one system, sorted by strictly increasing `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    system_id: String,
    xs: Vec<f64>,
    ys: Vec<f64>,
    annotations: BTreeMap<String, f64>,
}

impl Dataset {
    pub fn new(system_id: impl Into<String>, mut points: Vec<(f64, f64)>) -> Result<Self, DataError> {
        let system_id = system_id.into();
        if points.len() < 2 {
            return Err(DataError::EmptySystem(system_id));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(DataError::NonFinite(system_id));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(DataError::DuplicateX { system_id, x: w[0].0 });
        }
        let (xs, ys) = points.into_iter().unzip();
        Ok(Self { system_id, xs, ys, annotations: BTreeMap::new() })
    }

    pub fn with_annotation(mut self, key: impl Into<String>, value: f64) -> Self {
        self.annotations.insert(key.into(), value);
        self
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    /// Known intrinsic properties of the system, such as `G`.
    pub fn annotations(&self) -> &BTreeMap<String, f64> {
        &self.annotations
    }

    pub fn annotation(&self, key: &str) -> Option<f64> {
        self.annotations.get(key).copied()
    }

    pub(crate) fn annotations_mut(&mut self) -> &mut BTreeMap<String, f64> {
        &mut self.annotations
    }
}

/// Where a collection came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generator { name: String, params: serde_json::Value, seed: u64 },
    File { path: String, sha256: String },
    InMemory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCollection {
    datasets: Vec<Dataset>,
    provenance: Provenance,
}

impl DatasetCollection {
    pub fn new(datasets: Vec<Dataset>, provenance: Provenance) -> Result<Self, DataError> {
        if datasets.is_empty() {
            return Err(DataError::EmptyCollection);
        }
        let mut ids = HashSet::new();
        for d in &datasets {
            if !ids.insert(d.system_id()) {
                return Err(DataError::DuplicateSystem(d.system_id().to_owned()));
            }
        }
        Ok(Self { datasets, provenance })
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Dataset> {
        self.datasets.iter()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The collection in the `system_id,x,y` CSV schema.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("system_id,x,y\n");
        for d in &self.datasets {
            for (x, y) in d.points() {
                out.push_str(&format!("{},{x:?},{y:?}\n", d.system_id));
            }
        }
        out
    }

    /// SHA-256 of the CSV serialization, hex encoded.
    pub fn digest(&self) -> String {
        hex_sha256(self.to_csv_string().as_bytes())
    }

    /// Sidecar document: system id to its annotations.
    pub fn annotations_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, &BTreeMap<String, f64>> =
            self.datasets.iter().map(|d| (d.system_id(), &d.annotations)).collect();
        serde_json::to_value(map).expect("annotations are plain numbers")
    }

    /// Merges a sidecar produced by [`Self::annotations_json`]; ids not in
    /// the collection are ignored.
    pub fn apply_annotations(&mut self, doc: &serde_json::Value) -> Result<(), DataError> {
        let map: BTreeMap<String, BTreeMap<String, f64>> = serde_json::from_value(doc.clone())?;
        for d in &mut self.datasets {
            if let Some(a) = map.get(d.system_id()) {
                d.annotations_mut().extend(a.iter().map(|(k, v)| (k.clone(), *v)));
            }
        }
        Ok(())
    }

    pub fn has_annotations(&self) -> bool {
        self.datasets.iter().any(|d| !d.annotations.is_empty())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses the `system_id,x,y` schema. Systems are ordered by id.
pub fn parse_csv(bytes: &[u8], provenance: Provenance) -> Result<DatasetCollection, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    if header != ["system_id", "x", "y"] {
        return Err(DataError::Schema { line: 1, message: format!("expected header system_id,x,y, got {}", header.join(",")) });
    }
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(DataError::Schema { line, message: format!("expected 3 fields, got {}", record.len()) });
        }
        let number = |column: &'static str, idx: usize| {
            let raw = record[idx].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Value { line, column, value: raw.to_owned() })
        };
        let (x, y) = (number("x", 1)?, number("y", 2)?);
        groups.entry(record[0].trim().to_owned()).or_default().push((x, y));
    }
    let datasets = groups
        .into_iter()
        .map(|(id, points)| Dataset::new(id, points))
        .collect::<Result<Vec<_>, _>>()?;
    DatasetCollection::new(datasets, provenance)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<DatasetCollection, DataError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let provenance = Provenance::File { path: path.display().to_string(), sha256: hex_sha256(&bytes) };
    parse_csv(&bytes, provenance)
}

fn system_id(index: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len().max(3);
    format!("sys{index:0width$}")
}

fn add_noise<R: Rng>(ys: &mut [f64], noise_sd: f64, rng: &mut R) {
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sd = noise_sd * (hi - lo);
    if sd > 0.0 {
        let normal = Normal::new(0.0, sd).expect("finite positive sd");
        for y in ys {
            *y += normal.sample(rng);
        }
    }
}

fn draw<R: Rng>(range: (f64, f64), rng: &mut R) -> f64 {
    Uniform::new_inclusive(range.0, range.1).expect("valid range").sample(rng)
}

/// Settings for the exponential degradation family
/// `y = scale * exp(alpha * c) + offset` at cycles `c = 1..cycles`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExponentialSpec {
    pub n_systems: usize,
    pub alpha: (f64, f64),
    pub scale: (f64, f64),
    pub offset: (f64, f64),
    pub cycles: usize,
    pub noise_sd: f64,
}

impl Default for ExponentialSpec {
    fn default() -> Self {
        Self { n_systems: 30, alpha: (0.01, 0.05), scale: (0.5, 2.0), offset: (0.0, 10.0), cycles: 150, noise_sd: 0.01 }
    }
}

pub fn gen_exponential(spec: &ExponentialSpec, seed: u64) -> Result<DatasetCollection, DataError> {
    if spec.n_systems == 0 {
        return Err(DataError::EmptyCollection);
    }
    if spec.cycles < 2 {
        return Err(DataError::Domain("cycles must be at least 2".into()));
    }
    for (name, (lo, hi)) in [("alpha", spec.alpha), ("scale", spec.scale), ("offset", spec.offset)] {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(DataError::Domain(format!("invalid {name} range [{lo}, {hi}]")));
        }
    }
    let datasets = (0..spec.n_systems)
        .map(|j| {
            let mut rng = rng::stream(seed, j as u64);
            let alpha = draw(spec.alpha, &mut rng);
            let scale = draw(spec.scale, &mut rng);
            let offset = draw(spec.offset, &mut rng);
            let xs: Vec<f64> = (1..=spec.cycles).map(|c| c as f64).collect();
            let mut ys: Vec<f64> = xs.iter().map(|c| scale * (alpha * c).exp() + offset).collect();
            add_noise(&mut ys, spec.noise_sd, &mut rng);
            Dataset::new(system_id(j, spec.n_systems), xs.into_iter().zip(ys).collect()).map(|d| {
                d.with_annotation("alpha", alpha).with_annotation("scale", scale).with_annotation("offset", offset)
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let params = serde_json::to_value(spec)?;
    DatasetCollection::new(datasets, Provenance::Generator { name: "exponential".into(), params, seed })
}

/// Height of a projectile under linear drag, in units where the
/// drag-limited horizontal reach is `G * cos(angle)`.
pub fn projectile_height(x: f64, g: f64, launch_angle: f64) -> f64 {
    let sec = 1.0 / launch_angle.cos();
    (sec / g + launch_angle.tan()) * x + (1.0 - x * sec / g).ln()
}

/// One system per `G`, sampled at `n_points` equally spaced `x` up to
/// `x_max_fraction` of the singular reach. `launch_angle` is in radians.
pub fn gen_projectile(
    g_values: &[f64],
    launch_angle: f64,
    n_points: usize,
    x_max_fraction: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<DatasetCollection, DataError> {
    if !(x_max_fraction > 0.0 && x_max_fraction < 1.0) {
        return Err(DataError::Domain(format!("x_max_fraction must lie in (0, 1), got {x_max_fraction}")));
    }
    if g_values.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(DataError::Domain("G values must be positive".into()));
    }
    if !(launch_angle.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(DataError::Domain("launch angle must lie in (-90°, 90°)".into()));
    }
    let datasets = g_values
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let mut rng = rng::stream(seed, j as u64);
            let x_max = x_max_fraction * g * launch_angle.cos();
            let xs: Vec<f64> = (1..=n_points).map(|i| i as f64 * x_max / n_points as f64).collect();
            let mut ys: Vec<f64> = xs.iter().map(|&x| projectile_height(x, g, launch_angle)).collect();
            add_noise(&mut ys, noise_sd, &mut rng);
            Dataset::new(system_id(j, g_values.len()), xs.into_iter().zip(ys).collect())
                .map(|d| d.with_annotation("G", g))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let params = serde_json::json!({
        "g_values": g_values,
        "launch_angle": launch_angle,
        "n_points": n_points,
        "x_max_fraction": x_max_fraction,
        "noise_sd": noise_sd,
    });
    DatasetCollection::new(datasets, Provenance::Generator { name: "projectile".into(), params, seed })
}

/// Settings for a projectile G-sweep. When `g_values` is empty,
/// `n_systems` values are drawn uniformly from `g_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectileSpec {
    pub g_values: Vec<f64>,
    pub n_systems: usize,
    pub g_range: (f64, f64),
    pub launch_angle_deg: f64,
    pub n_points: usize,
    pub x_max_fraction: f64,
    pub noise_sd: f64,
}

impl Default for ProjectileSpec {
    fn default() -> Self {
        Self {
            g_values: Vec::new(),
            n_systems: 30,
            g_range: (1.0, 5.0),
            launch_angle_deg: 40.0,
            n_points: 50,
            x_max_fraction: 0.8,
            noise_sd: 0.0,
        }
    }
}

impl ProjectileSpec {
    pub fn g_values(&self, seed: u64) -> Vec<f64> {
        if self.g_values.is_empty() {
            uniform_values(self.n_systems, self.g_range.0, self.g_range.1, seed)
        } else {
            self.g_values.clone()
        }
    }

    pub fn generate(&self, seed: u64) -> Result<DatasetCollection, DataError> {
        let (lo, hi) = self.g_range;
        if self.g_values.is_empty() && !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(DataError::Domain(format!("invalid G range [{lo}, {hi}]")));
        }
        if self.n_points < 2 {
            return Err(DataError::Domain("n_points must be at least 2".into()));
        }
        let g = self.g_values(seed);
        gen_projectile(&g, self.launch_angle_deg.to_radians(), self.n_points, self.x_max_fraction, self.noise_sd, seed)
    }
}

/// `n` values drawn uniformly from `[lo, hi]`.
pub fn uniform_values(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, rng::label_of("uniform_values"));
    (0..n).map(|_| draw((lo, hi), &mut rng)).collect()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let average = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = average;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation, with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_systems_four_points() {
        let text = "system_id,x,y\nb,1,2\na,0,1\nb,0,1\na,1,2\nc,0,0\nc,1,1\na,2,3\na,3,4\nb,2,3\nb,3,4\nc,2,2\nc,3,3\n";
        let c = parse_csv(text.as_bytes(), Provenance::InMemory).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|d| d.len() == 4));
        assert_eq!(c.datasets()[0].system_id(), "a");
    }

    #[test]
    fn header_only_is_an_error() {
        assert!(matches!(parse_csv(b"system_id,x,y\n", Provenance::InMemory), Err(DataError::EmptyCollection)));
        assert!(matches!(parse_csv(b"system_id,x,y\na,1,2\n", Provenance::InMemory), Err(DataError::EmptySystem(_))));
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let bad = parse_csv(b"system_id,x,y\na,1,2\na,oops,3\n", Provenance::InMemory);
        assert!(matches!(bad, Err(DataError::Value { line: 3, column: "x", .. })), "{bad:?}");
        let short = parse_csv(b"system_id,x,y\na,1\n", Provenance::InMemory);
        assert!(matches!(short, Err(DataError::Schema { line: 2, .. })), "{short:?}");
        let header = parse_csv(b"id,x,y\na,1,2\n", Provenance::InMemory);
        assert!(matches!(header, Err(DataError::Schema { line: 1, .. })));
        let dup = parse_csv(b"system_id,x,y\na,1,2\na,1,3\n", Provenance::InMemory);
        assert!(matches!(dup, Err(DataError::DuplicateX { .. })));
    }

    #[test]
    fn flat_exponential_system() {
        let spec = ExponentialSpec {
            n_systems: 1,
            alpha: (0.0, 0.0),
            scale: (1.0, 1.0),
            offset: (5.0, 5.0),
            cycles: 10,
            noise_sd: 0.0,
        };
        let c = gen_exponential(&spec, 1).unwrap();
        assert!(c.datasets()[0].ys().iter().all(|&y| y == 6.0));
    }

    #[test]
    fn generators_are_reproducible() {
        let spec = ExponentialSpec::default();
        assert_eq!(gen_exponential(&spec, 9).unwrap(), gen_exponential(&spec, 9).unwrap());
        assert_ne!(gen_exponential(&spec, 9).unwrap(), gen_exponential(&spec, 10).unwrap());
        let g = uniform_values(4, 1.0, 5.0, 2);
        assert_eq!(gen_projectile(&g, 0.7, 20, 0.8, 0.01, 3).unwrap(), gen_projectile(&g, 0.7, 20, 0.8, 0.01, 3).unwrap());
    }

    #[test]
    fn annotations_are_exact_draws() {
        let spec = ExponentialSpec { noise_sd: 0.0, n_systems: 3, ..ExponentialSpec::default() };
        for d in gen_exponential(&spec, 4).unwrap().iter() {
            let (a, s, o) = (d.annotation("alpha").unwrap(), d.annotation("scale").unwrap(), d.annotation("offset").unwrap());
            assert_eq!(d.ys()[4], s * (a * 5.0).exp() + o);
        }
    }

    #[test]
    fn projectile_values() {
        assert_eq!(projectile_height(0.0, 2.7, 0.5), 0.0);
        let y = projectile_height(0.5, 1.0, 0.0);
        assert!((y - (0.5 + 0.5f64.ln())).abs() < 1e-15);
        assert!((y + 0.19315).abs() < 1e-5);
        assert!(matches!(gen_projectile(&[1.0], 0.5, 10, 1.0, 0.0, 0), Err(DataError::Domain(_))));
        let c = gen_projectile(&[2.0, 4.0], 40f64.to_radians(), 50, 0.8, 0.0, 0).unwrap();
        let d = &c.datasets()[1];
        assert_eq!(d.annotation("G"), Some(4.0));
        let x_max = 0.8 * 4.0 * 40f64.to_radians().cos();
        assert!((d.xs()[49] - x_max).abs() < 1e-12);
        assert!(d.xs().iter().all(|&x| x > 0.0 && x * (1.0 / 40f64.to_radians().cos()) / 4.0 < 1.0));
    }

    #[test]
    fn csv_round_trip_and_shuffle_invariance() {
        let c = gen_projectile(&[1.5, 2.5, 3.5], 0.6, 12, 0.8, 0.01, 5).unwrap();
        let text = c.to_csv_string();
        let back = parse_csv(text.as_bytes(), Provenance::InMemory).unwrap();
        for (a, b) in c.iter().zip(back.iter()) {
            assert_eq!(a.xs(), b.xs());
            assert_eq!(a.ys(), b.ys());
        }
        let mut lines: Vec<&str> = text.lines().skip(1).collect();
        lines.reverse();
        lines.rotate_left(5);
        let shuffled = format!("system_id,x,y\n{}\n", lines.join("\n"));
        let again = parse_csv(shuffled.as_bytes(), Provenance::InMemory).unwrap();
        assert_eq!(again.to_csv_string(), text);
    }

    #[test]
    fn spearman_matches_known_values() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        // 1 - 6 * sum(d^2) / (n (n^2 - 1)) with d = (0, 1, -1, 0, 0)
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 4.0, 5.0]);
        assert!((r - (1.0 - 6.0 * 2.0 / 120.0)).abs() < 1e-12);
    }
}
