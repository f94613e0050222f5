//! Synthetic Gaussian-mixture datasets, vector augmentations and CSV I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LabelVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Vec<Vec<f64>>,
    /// Ground truth, only ever used for evaluation.
    pub labels: Option<LabelVector>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        x: Vec<Vec<f64>>,
        labels: Option<LabelVector>,
    ) -> Result<Self> {
        let dim = x.first().map_or(0, Vec::len);
        if let Some(bad) = x.iter().position(|r| r.len() != dim) {
            return Err(Error::shape(format!(
                "sample {bad} has dim {}, expected {dim}",
                x[bad].len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != x.len() {
                return Err(Error::LengthMismatch {
                    left: x.len(),
                    right: l.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            x,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Number of distinct ground-truth classes (max label + 1).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |&m| m + 1))
    }
}

/// Isotropic Gaussian mixture with a fixed number of samples per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub stddevs: Vec<f64>,
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 {
            return Err(Error::InvalidSpec(
                "means: at least one component is required".into(),
            ));
        }
        if self.stddevs.len() != k || self.counts.len() != k {
            return Err(Error::InvalidSpec(format!(
                "means, stddevs and counts must have equal length ({k}, {}, {})",
                self.stddevs.len(),
                self.counts.len()
            )));
        }
        let dim = self.means[0].len();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidSpec(
                "means: every mean needs the same positive dimension".into(),
            ));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("means: entries must be finite".into()));
        }
        if let Some(s) = self.stddevs.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "stddevs: {s} is not a nonnegative number"
            )));
        }
        if self.counts.contains(&0) {
            return Err(Error::InvalidSpec(
                "counts: every component needs at least one sample".into(),
            ));
        }
        Ok(())
    }

    /// `k` components evenly spaced on a circle in the first two coordinates,
    /// centred at the origin, with adjacent means `separation · σ` apart.
    pub fn ring(
        k: usize,
        dim: usize,
        per_component: usize,
        sigma: f64,
        separation: f64,
        seed: u64,
    ) -> Self {
        assert!(dim >= 2 && k >= 2);
        let chord = separation * sigma;
        let radius = chord / (2.0 * (std::f64::consts::PI / k as f64).sin());
        let means = (0..k)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                let mut m = vec![0.0; dim];
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
                m
            })
            .collect();
        Self {
            means,
            stddevs: vec![sigma; k],
            counts: vec![per_component; k],
            seed,
        }
    }
}

/// Samples the mixture; labels are component indices, rows grouped by component.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Vec::with_capacity(spec.counts.iter().sum());
    let mut labels = Vec::with_capacity(x.capacity());
    for (c, ((mean, &sd), &count)) in spec
        .means
        .iter()
        .zip(&spec.stddevs)
        .zip(&spec.counts)
        .enumerate()
    {
        for _ in 0..count {
            x.push(
                mean.iter()
                    .map(|&m| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        m + sd * e
                    })
                    .collect(),
            );
            labels.push(c);
        }
    }
    Dataset::new("mixture", x, Some(labels))
}

/// Vector analog of image augmentation: random scale, coordinate dropout, noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub noise_sigma: f64,
    pub scale_range: [f64; 2],
    pub dropout_prob: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            scale_range: [0.8, 1.2],
            dropout_prob: 0.0,
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            noise_sigma: 0.0,
            scale_range: [1.0, 1.0],
            dropout_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "noise_sigma: {} must be >= 0",
                self.noise_sigma
            )));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "scale_range: need 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidSpec(format!(
                "dropout_prob: {} outside [0, 1)",
                self.dropout_prob
            )));
        }
        Ok(())
    }
}

/// `x' = mask ⊙ (s · x) + ε` with `s ~ U(lo, hi)`, `mask_i ~ Bernoulli(1 − p)`,
/// `ε ~ N(0, σ² I)`.
pub fn augment<R: Rng + ?Sized>(x: &[f64], spec: &AugmentSpec, rng: &mut R) -> Vec<f64> {
    let [lo, hi] = spec.scale_range;
    let s = if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    x.iter()
        .map(|&v| {
            let kept = if spec.dropout_prob > 0.0 && rng.random::<f64>() < spec.dropout_prob {
                0.0
            } else {
                s * v
            };
            if spec.noise_sigma > 0.0 {
                kept + noise.sample(rng)
            } else {
                kept
            }
        })
        .collect()
}

/// Writes `f0,…,f{d−1}[,label]` CSV with shortest round-trip float formatting.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    out.push_str(&header.join(","));
    if ds.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in ds.x.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // `{:?}` keeps the trailing `.0` and round-trips exactly.
            write!(out, "{v:?}").unwrap();
        }
        if let Some(labels) = &ds.labels {
            write!(out, ",{}", labels[i]).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    parse_dataset(&text, name)
}

pub fn parse_dataset(text: &str, name: String) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_label = columns.last() == Some(&"label");
    let dim = columns.len() - usize::from(has_label);
    for (i, c) in columns[..dim].iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("column {i} is named {c:?}, expected \"f{i}\""),
            });
        }
    }
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "no feature columns".into(),
        });
    }

    let mut x = Vec::new();
    let mut labels = has_label.then(Vec::new);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::DimMismatch {
                line: line_no,
                expected: columns.len(),
                found: fields.len(),
            });
        }
        let row = fields[..dim]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("invalid number {f:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        x.push(row);
        if let Some(labels) = labels.as_mut() {
            let raw = fields[dim].trim();
            labels.push(raw.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid label {raw:?}"),
            })?);
        }
    }
    Dataset::new(name, x, labels)
}
