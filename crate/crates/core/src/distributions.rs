//! Reference and target densities, samplers, the two-circles dataset and the
//! obstacle cost for crowd motion.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `log N(x; 0, I)`.
pub fn gauss_logpdf(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    -0.5 * n * (2.0 * PI).ln() - 0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

pub fn gauss_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Mixture of isotropic Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MixtureComponent>", into = "Vec<MixtureComponent>")]
pub struct GaussianMixture {
    components: Vec<MixtureComponent>,
}

impl TryFrom<Vec<MixtureComponent>> for GaussianMixture {
    type Error = Error;

    fn try_from(components: Vec<MixtureComponent>) -> Result<Self> {
        GaussianMixture::new(components)
    }
}

impl From<GaussianMixture> for Vec<MixtureComponent> {
    fn from(m: GaussianMixture) -> Self {
        m.components
    }
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        };
        let n = first.mean.len();
        if n == 0 {
            return Err(Error::InvalidArgument("mixture dimension must be positive".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &components {
            if c.mean.len() != n {
                return Err(Error::InvalidArgument("mixture components differ in dimension".into()));
            }
            if !(c.weight > 0.0) || !(c.std > 0.0) {
                return Err(Error::InvalidArgument(
                    "mixture weights and standard deviations must be positive".into(),
                ));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(GaussianMixture { components })
    }

    /// Equal-weight components with means evenly spaced on a circle in the plane.
    pub fn ring(modes: usize, radius: f64, std: f64) -> Result<Self> {
        let w = 1.0 / modes as f64;
        GaussianMixture::new(
            (0..modes)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / modes as f64;
                    MixtureComponent {
                        weight: w,
                        mean: vec![radius * a.cos(), radius * a.sin()],
                        std,
                    }
                })
                .collect(),
        )
    }

    /// Equal-weight components at the given means.
    pub fn equal(means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let w = 1.0 / means.len().max(1) as f64;
        GaussianMixture::new(
            means
                .into_iter()
                .map(|mean| MixtureComponent { weight: w, mean, std })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            for (a, b) in m.iter_mut().zip(&c.mean) {
                *a += c.weight * b;
            }
        }
        m
    }

    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim() as f64;
        self.components
            .iter()
            .map(|c| {
                let d2: f64 = x.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
                c.weight.ln() - 0.5 * n * (2.0 * PI * c.std * c.std).ln() - 0.5 * d2 / (c.std * c.std)
            })
            .collect()
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let logs = self.component_logs(x);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    /// Gradient of [`Self::logpdf`] with respect to `x`.
    pub fn grad_logpdf(&self, x: &[f64]) -> Vec<f64> {
        let logs = self.component_logs(x);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut g = vec![0.0; x.len()];
        for (c, wi) in self.components.iter().zip(&w) {
            let r = wi / total;
            for i in 0..x.len() {
                g[i] -= r * (x[i] - c.mean[i]) / (c.std * c.std);
            }
        }
        g
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.last().expect("nonempty");
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                pick = c;
                break;
            }
        }
        pick.mean
            .iter()
            .map(|m| {
                let e: f64 = rng.sample(StandardNormal);
                m + pick.std * e
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }
}

/// Gaussian bump `height * exp(-|x - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleCost {
    pub center: Vec<f64>,
    pub height: f64,
    pub width: f64,
}

impl ObstacleCost {
    pub fn new(center: Vec<f64>, height: f64, width: f64) -> Result<Self> {
        if !(height > 0.0 && width > 0.0) {
            return Err(Error::InvalidArgument("obstacle height and width must be positive".into()));
        }
        Ok(ObstacleCost { center, height, width })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        self.height * (-d2 / (2.0 * self.width * self.width)).exp()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let q = self.eval(x);
        let w2 = self.width * self.width;
        x.iter().zip(&self.center).map(|(a, b)| -q * (a - b) / w2).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(LabeledDataset { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_both_labels(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Two noisy concentric circles; class 0 on the inner one gets `ceil(count/2)` points.
pub fn make_circles<R: Rng + ?Sized>(
    count: usize,
    inner: f64,
    outer: f64,
    noise: f64,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if !(inner > 0.0 && inner < outer) {
        return Err(Error::InvalidArgument(format!(
            "circle radii need 0 < inner < outer (got {inner}, {outer})"
        )));
    }
    if noise < 0.0 {
        return Err(Error::InvalidArgument("noise must be nonnegative".into()));
    }
    let n_inner = count.div_ceil(2);
    let mut points = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let (label, r) = if i < n_inner { (0, inner) } else { (1, outer) };
        let a: f64 = rng.random_range(0.0..2.0 * PI);
        let mut p = vec![r * a.cos(), r * a.sin()];
        if noise > 0.0 {
            for v in &mut p {
                let e: f64 = rng.sample(StandardNormal);
                *v += noise * e;
            }
        }
        points.push(p);
        labels.push(label);
    }
    LabeledDataset::new(points, labels)
}

pub fn sample_reference<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| gauss_sample(n, rng)).collect()
}
