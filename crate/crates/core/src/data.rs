//! Synthetic hierarchical datasets and CSV feature files.
//!
//! Generated data has a two-level class structure: superclass centers sit
//! on a randomly rotated regular simplex with edge `super_sep`, and each
//! superclass's subclass centers sit on a second randomly rotated regular
//! simplex of circumradius `sub_sep` around it. Examples are subclass
//! centers plus isotropic Gaussian noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchySpec {
    pub n_super: usize,
    pub per_super: usize,
    pub d: usize,
    pub super_sep: f64,
    pub sub_sep: f64,
    pub noise_sigma: f64,
    pub n_per_class: usize,
    pub seed: u64,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            n_super: 2,
            per_super: 2,
            d: 8,
            super_sep: 6.0,
            sub_sep: 1.5,
            noise_sigma: 1.0,
            n_per_class: 200,
            seed: 0,
        }
    }
}

impl HierarchySpec {
    pub fn classes(&self) -> usize {
        self.n_super * self.per_super
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_super == 0 || self.per_super == 0 || self.n_per_class == 0 || self.d == 0 {
            return Err(Error::Config(
                "n_super, per_super, n_per_class and d must all be at least 1".into(),
            ));
        }
        if !(self.sub_sep > 0.0 && self.super_sep > self.sub_sep) {
            return Err(Error::Config(format!(
                "need super_sep > sub_sep > 0, got super_sep={} sub_sep={}",
                self.super_sep, self.sub_sep
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        let needed = self.n_super.max(self.per_super) - 1;
        if self.d < needed {
            return Err(Error::Config(format!(
                "dimension {} too small to embed a {}-vertex simplex (need at least {needed})",
                self.d,
                self.n_super.max(self.per_super)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    d: usize,
    k: usize,
    /// `n x d`, row-major.
    features: Vec<f64>,
    labels: Vec<usize>,
    /// Ground-truth superclass per class, when known.
    superclass_of: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        d: usize,
        k: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        superclass_of: Option<Vec<usize>>,
    ) -> Result<Self> {
        check_len(labels.len() * d, features.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::IndexOutOfRange { index: bad, len: k });
        }
        if let Some(map) = &superclass_of {
            check_len(k, map.len())?;
        }
        Ok(Self {
            d,
            k,
            features,
            labels,
            superclass_of,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn superclass_of(&self) -> Option<&[usize]> {
        self.superclass_of.as_deref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Classes with no examples.
    pub fn empty_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| i)
            .collect()
    }

    fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.example(i));
        }
        Self {
            d: self.d,
            k: self.k,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            superclass_of: self.superclass_of.clone(),
        }
    }

    /// Rows of `d` features followed by the integer label.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            for v in self.example(i) {
                out.push_str(&format!("{v:?},"));
            }
            out.push_str(&self.labels[i].to_string());
            out.push('\n');
        }
        out
    }
}

/// Orthonormal basis of `dim` dimensions from Gram-Schmidt on Gaussian
/// vectors: a uniformly random rotation.
fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Vertices of a regular `n`-simplex centered at the origin with unit
/// circumradius, expressed in the first `n − 1` of `dim` coordinates.
fn unit_simplex(n: usize, dim: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![0.0; dim]];
    }
    // Centered standard basis vectors e_i − 1/n, in R^n.
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64)
                .collect()
        })
        .collect();
    // Orthonormal basis of their (n − 1)-dimensional span.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for v in centered.iter().take(n - 1) {
        let mut u = v.clone();
        for b in &basis {
            let proj: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        basis.push(u);
    }
    let radius = ((n - 1) as f64 / n as f64).sqrt();
    centered
        .iter()
        .map(|v| {
            let mut coords = vec![0.0; dim];
            for (c, b) in coords.iter_mut().zip(&basis) {
                *c = v.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / radius;
            }
            coords
        })
        .collect()
}

fn rotate(rotation: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let dim = v.len();
    (0..dim)
        .map(|i| (0..dim).map(|j| rotation[j][i] * v[j]).sum())
        .collect()
}

/// Class centers in class-index order (`class = super·per_super + sub`).
pub fn class_centers(spec: &HierarchySpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(centers_with(spec, &mut rng))
}

fn centers_with(spec: &HierarchySpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = spec.d;
    // Circumradius r of a regular n-simplex with edge e: r = e·sqrt((n−1)/(2n)).
    let n = spec.n_super as f64;
    let super_radius = if spec.n_super > 1 {
        spec.super_sep * ((n - 1.0) / (2.0 * n)).sqrt()
    } else {
        0.0
    };
    let rot = random_rotation(d, rng);
    let supers: Vec<Vec<f64>> = unit_simplex(spec.n_super, d)
        .iter()
        .map(|v| rotate(&rot, v).into_iter().map(|x| x * super_radius).collect())
        .collect();
    let sub_shape = unit_simplex(spec.per_super, d);
    let mut centers = Vec::with_capacity(spec.classes());
    for s in &supers {
        let rot = random_rotation(d, rng);
        for v in &sub_shape {
            let mut offset = rotate(&rot, v);
            if spec.per_super == 1 {
                // A single subclass still sits sub_sep away from its parent.
                offset = rot[0].clone();
            }
            centers.push(
                s.iter()
                    .zip(&offset)
                    .map(|(c, o)| c + spec.sub_sep * o)
                    .collect(),
            );
        }
    }
    centers
}

/// Deterministic from `spec.seed`. Examples are laid out class by class.
pub fn generate(spec: &HierarchySpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = centers_with(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let k = spec.classes();
    let mut features = Vec::with_capacity(k * spec.n_per_class * spec.d);
    let mut labels = Vec::with_capacity(k * spec.n_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            if spec.noise_sigma == 0.0 {
                features.extend_from_slice(center);
            } else {
                features.extend(center.iter().map(|c| c + noise.sample(&mut rng)));
            }
            labels.push(class);
        }
    }
    let superclass_of = (0..k).map(|c| c / spec.per_super).collect();
    Dataset::new(spec.d, k, features, labels, Some(superclass_of))
}

/// Parses rows of `d` decimal features followed by an integer label.
/// `d` is fixed by the first data row; `k` is the largest label plus one.
pub fn parse_csv(text: &str, skip_header: bool) -> Result<Dataset> {
    let mut d: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if skip_header && idx == 0 {
            continue;
        }
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line,
                msg: "need at least one feature and a label".into(),
            });
        }
        let width = fields.len() - 1;
        match d {
            None => d = Some(width),
            Some(expected) if expected != width => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", expected + 1, fields.len()),
                })
            }
            Some(_) => {}
        }
        for f in &fields[..width] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric feature {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature {f:?}"),
                });
            }
            features.push(v);
        }
        let label_field = fields[width];
        let label: i64 = label_field.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("label {label_field:?} is not an integer"),
        })?;
        if label < 0 {
            return Err(Error::Parse {
                line,
                msg: format!("negative label {label}"),
            });
        }
        labels.push(label as usize);
    }
    let d = d.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "no data rows".into(),
    })?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(d, k, features, labels, None)
}

pub fn load_csv(path: &Path, skip_header: bool) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?, skip_header)
}

/// Stratified split: each class contributes `round(train_frac·n_c)`
/// examples to the training side, clamped so both sides get at least one.
/// Within each side, examples keep their original order.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.k];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "class {class} has {} example(s); stratified split needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}
