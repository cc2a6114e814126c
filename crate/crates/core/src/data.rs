//! Synthetic datasets and the CSV on-disk format.
//!
//! A dataset file has a header `f0,f1,...,f{d-1}` with an optional trailing
//! `label` column, one sample per line. Floats are written in Rust's
//! shortest round-trip form, so a load after a save is bit-identical. A
//! sidecar `<file>.meta` holds `key=value` lines describing the generator.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: DenseMatrix,
    pub labels: Option<Vec<usize>>,
    pub generator_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DatasetKind {
    /// Two interleaved half circles in 2-D.
    Moons,
    /// Concentric circles of radius 1 and 3 in 2-D.
    Rings,
    /// `k` isotropic unit-variance Gaussians in `dim` dimensions, centers
    /// drawn on a sphere and pairwise at least `separation` apart.
    Blobs {
        k: usize,
        dim: usize,
        separation: f64,
    },
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Moons => "moons",
            Self::Rings => "rings",
            Self::Blobs { .. } => "blobs",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Self::Blobs { k, .. } => *k,
            _ => 2,
        }
    }
}

/// Balanced class sizes: class `c` gets `n / k` points plus one of the
/// remainder if `c < n % k`.
fn class_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| n / k + usize::from(c < n % k)).collect()
}

/// Generates `n` labelled samples. For moons and rings `noise` is the
/// standard deviation of additive Gaussian jitter; for blobs it scales the
/// within-cluster standard deviation.
pub fn gen_dataset(kind: DatasetKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let k = kind.num_classes();
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "{n} samples for {k} classes"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise must be nonnegative, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(0.0)).unwrap();
    let sizes = class_sizes(n, k);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    match kind {
        DatasetKind::Moons | DatasetKind::Rings => {
            for (c, &size) in sizes.iter().enumerate() {
                for _ in 0..size {
                    let mut p = match kind {
                        DatasetKind::Moons => {
                            let t = rng.gen_range(0.0..std::f64::consts::PI);
                            if c == 0 {
                                vec![t.cos(), t.sin()]
                            } else {
                                vec![1.0 - t.cos(), 0.5 - t.sin()]
                            }
                        }
                        _ => {
                            let t = rng.gen_range(0.0..std::f64::consts::TAU);
                            let r = if c == 0 { 1.0 } else { 3.0 };
                            vec![r * t.cos(), r * t.sin()]
                        }
                    };
                    for v in &mut p {
                        *v += jitter.sample(&mut rng);
                    }
                    rows.push(p);
                    labels.push(c);
                }
            }
        }
        DatasetKind::Blobs { k, dim, separation } => {
            if dim == 0 {
                return Err(Error::InvalidArgument(
                    "blobs need at least one dimension".into(),
                ));
            }
            let unit = Normal::new(0.0, 1.0).unwrap();
            let centers = blob_centers(k, dim, separation, &unit, &mut rng);
            let spread = if noise > 0.0 { noise } else { 1.0 };
            for (c, &size) in sizes.iter().enumerate() {
                for _ in 0..size {
                    rows.push(
                        centers[c]
                            .iter()
                            .map(|m| m + spread * unit.sample(&mut rng))
                            .collect(),
                    );
                    labels.push(c);
                }
            }
        }
    }

    // interleave classes so a file prefix is not single-class
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let features =
        DenseMatrix::from_rows(&order.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>())?;
    let labels = order.iter().map(|&i| labels[i]).collect();
    Ok(Dataset {
        name: kind.name().to_string(),
        features,
        labels: Some(labels),
        generator_seed: Some(seed),
    })
}

/// Centers on a sphere of radius `separation`, redrawn until every pair is
/// at least `separation` apart; the radius grows by 10% after 1000 failed
/// draws so low dimensions still terminate.
fn blob_centers(
    k: usize,
    dim: usize,
    separation: f64,
    unit: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut radius = separation;
    let mut failures = 0;
    loop {
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| unit.sample(rng)).collect();
                let len = crate::linalg::norm(&v).max(1e-12);
                v.iter().map(|x| radius * x / len).collect()
            })
            .collect();
        let separated = (0..k).all(|a| {
            (a + 1..k).all(|b| {
                let d2: f64 = centers[a]
                    .iter()
                    .zip(&centers[b])
                    .map(|(u, v)| (u - v).powi(2))
                    .sum();
                d2 >= separation * separation
            })
        });
        if separated {
            return centers;
        }
        failures += 1;
        if failures % 1000 == 0 {
            radius *= 1.1;
        }
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        let header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        out.push_str(&header.join(","));
        if self.labels.is_some() {
            out.push_str(",label");
        }
        out.push('\n');
        for (i, row) in self.features.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v:?}").unwrap();
            }
            if let Some(labels) = &self.labels {
                write!(out, ",{}", labels[i]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty dataset file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let has_label = cols.last() == Some(&"label");
        let d = cols.len() - usize::from(has_label);
        for (j, c) in cols[..d].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(Error::InvalidArgument(format!(
                    "unexpected header column {c:?}"
                )));
            }
        }
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dataset has no feature columns".into(),
            ));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::InvalidArgument(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 2,
                    cols.len(),
                    fields.len()
                )));
            }
            for f in &fields[..d] {
                let v: f64 = f.parse().map_err(|_| {
                    Error::InvalidArgument(format!("line {}: bad number {f:?}", lineno + 2))
                })?;
                data.push(v);
            }
            if has_label {
                let l: usize = fields[d].parse().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "line {}: bad label {:?}",
                        lineno + 2,
                        fields[d]
                    ))
                })?;
                labels.push(l);
            }
        }
        let n = data.len() / d;
        Ok(Self {
            name: name.to_string(),
            features: DenseMatrix::from_vec(n, d, data)?,
            labels: has_label.then_some(labels),
            generator_seed: None,
        })
    }

    /// Writes the CSV and its `.meta` sidecar.
    pub fn save(&self, path: &Path, extra_meta: &[(&str, String)]) -> Result<()> {
        fs::write(path, self.to_csv())?;
        let mut meta = format!("name={}\nn={}\ndim={}\n", self.name, self.len(), self.dim());
        if let Some(seed) = self.generator_seed {
            writeln!(meta, "seed={seed}").unwrap();
        }
        for (k, v) in extra_meta {
            writeln!(meta, "{k}={v}").unwrap();
        }
        fs::write(meta_path(path), meta)?;
        Ok(())
    }

    /// Reads a CSV; the sidecar, when present, supplies name and seed.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset");
        let mut ds = Self::from_csv(stem, &text)?;
        if let Ok(meta) = fs::read_to_string(meta_path(path)) {
            for line in meta.lines() {
                match line.split_once('=') {
                    Some(("name", v)) => ds.name = v.to_string(),
                    Some(("seed", v)) => ds.generator_seed = v.parse().ok(),
                    _ => {}
                }
            }
        }
        Ok(ds)
    }
}
