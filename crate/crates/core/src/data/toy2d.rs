//! The two-dimensional toy world: a two-component Gaussian mixture of
//! inliers, a finite negative set concentrated on the right half-plane, and
//! a ring of test anomalies surrounding the inliers.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{stream_rng, Stream};

/// Component 1 covariance.
pub const SIGMA1: [[f64; 2]; 2] = [[0.9, 0.0], [0.0, 0.1]];
/// Component 2 transform: samples are `A·n` with `n ~ N(0, I)`.
pub const A2: [[f64; 2]; 2] = [[0.071, 0.071], [-0.639, 0.639]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toy2dConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_negatives: usize,
    pub n_anomalies: usize,
    pub negative_r_min: f64,
    pub negative_r_max: f64,
    /// Fraction of negatives spread over every direction rather than the
    /// right half-plane.
    pub negative_minority: f64,
    /// Radial width of the anomaly ring beyond the 99th inlier percentile.
    pub anomaly_ring_width: f64,
}

impl Default for Toy2dConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 1000,
            n_negatives: 500,
            n_anomalies: 1000,
            negative_r_min: 1.5,
            negative_r_max: 3.0,
            negative_minority: 0.25,
            anomaly_ring_width: 1.0,
        }
    }
}

impl Toy2dConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 || self.n_anomalies == 0 {
            return Err(Error::Config("toy2d splits must be non-empty".into()));
        }
        if !(0.0 < self.negative_r_min && self.negative_r_min < self.negative_r_max) {
            return Err(Error::Config("negative radii must satisfy 0 < min < max".into()));
        }
        if !(0.0..=1.0).contains(&self.negative_minority) {
            return Err(Error::Config("negative_minority must lie in [0, 1]".into()));
        }
        if !(self.anomaly_ring_width > 0.0 && self.anomaly_ring_width.is_finite()) {
            return Err(Error::Config("anomaly_ring_width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Toy2dDataset {
    pub seed: u64,
    pub config: Toy2dConfig,
    pub train: Tensor,
    /// Mixture component of each training inlier (the closed-set class).
    pub train_labels: Vec<u16>,
    pub test: Tensor,
    pub test_labels: Vec<u16>,
    pub negatives: Tensor,
    pub anomalies: Tensor,
    /// Inner radius of the anomaly ring.
    pub inlier_r99: f64,
}

fn normal2<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [StandardNormal.sample(rng), StandardNormal.sample(rng)]
}

/// One inlier and its component index.
pub fn sample_inlier<R: Rng + ?Sized>(rng: &mut R) -> ([f64; 2], u16) {
    let second = rng.random_bool(0.5);
    let n = normal2(rng);
    if second {
        (
            [A2[0][0] * n[0] + A2[0][1] * n[1], A2[1][0] * n[0] + A2[1][1] * n[1]],
            1,
        )
    } else {
        ([SIGMA1[0][0].sqrt() * n[0], SIGMA1[1][1].sqrt() * n[1]], 0)
    }
}

/// Effective covariance `A·Aᵀ` of component 2.
pub fn sigma2() -> [[f64; 2]; 2] {
    let a = A2;
    [
        [
            a[0][0] * a[0][0] + a[0][1] * a[0][1],
            a[0][0] * a[1][0] + a[0][1] * a[1][1],
        ],
        [
            a[1][0] * a[0][0] + a[1][1] * a[0][1],
            a[1][0] * a[1][0] + a[1][1] * a[1][1],
        ],
    ]
}

/// `P(|x| <= r)` for `x ~ N(0, Σ)` in 2D, by angular quadrature of the
/// closed-form radial integral.
fn gaussian_radius_cdf(sigma: [[f64; 2]; 2], r: f64) -> f64 {
    let det = sigma[0][0] * sigma[1][1] - sigma[0][1] * sigma[1][0];
    let inv = [
        [sigma[1][1] / det, -sigma[0][1] / det],
        [-sigma[1][0] / det, sigma[0][0] / det],
    ];
    const STEPS: usize = 4096;
    let mut total = 0.0;
    for i in 0..STEPS {
        let t = TAU * i as f64 / STEPS as f64;
        let (s, c) = t.sin_cos();
        let q = inv[0][0] * c * c + (inv[0][1] + inv[1][0]) * s * c + inv[1][1] * s * s;
        total += -(-0.5 * r * r * q).exp_m1() / q;
    }
    total * (TAU / STEPS as f64) / (TAU * det.sqrt())
}

/// Radial CDF of the inlier mixture.
pub fn inlier_radius_cdf(r: f64) -> f64 {
    0.5 * gaussian_radius_cdf(SIGMA1, r) + 0.5 * gaussian_radius_cdf(sigma2(), r)
}

/// Radius enclosing the given fraction of inlier mass.
pub fn inlier_radius_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inlier_radius_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn polar(r: f64, theta: f64) -> [f64; 2] {
    [r * theta.cos(), r * theta.sin()]
}

fn points(rows: Vec<[f64; 2]>) -> Tensor {
    let n = rows.len();
    Tensor::matrix(n, 2, rows.into_iter().flatten().collect()).expect("point tensor shape")
}

pub fn generate_toy2d(seed: u64) -> Result<Toy2dDataset> {
    generate_toy2d_with(seed, &Toy2dConfig::default())
}

pub fn generate_toy2d_with(seed: u64, config: &Toy2dConfig) -> Result<Toy2dDataset> {
    config.validate()?;
    let mut rng = stream_rng(seed, Stream::Data);
    let mut split = |n: usize| {
        let (xs, ys): (Vec<_>, Vec<_>) = (0..n).map(|_| sample_inlier(&mut rng)).unzip();
        (points(xs), ys)
    };
    let (train, train_labels) = split(config.n_train);
    let (test, test_labels) = split(config.n_test);

    let area_radius = |rng: &mut crate::rng::LabRng, lo: f64, hi: f64| rng.random_range(lo * lo..hi * hi).sqrt();
    let negatives = points(
        (0..config.n_negatives)
            .map(|_| {
                let theta = if rng.random_bool(config.negative_minority) {
                    rng.random_range(-PI..PI)
                } else {
                    rng.random_range(-PI / 2.0..PI / 2.0)
                };
                polar(
                    area_radius(&mut rng, config.negative_r_min, config.negative_r_max),
                    theta,
                )
            })
            .collect(),
    );
    let r99 = inlier_radius_quantile(0.99);
    let anomalies = points(
        (0..config.n_anomalies)
            .map(|_| {
                let theta = rng.random_range(-PI..PI);
                polar(area_radius(&mut rng, r99, r99 + config.anomaly_ring_width), theta)
            })
            .collect(),
    );
    Ok(Toy2dDataset {
        seed,
        config: config.clone(),
        train,
        train_labels,
        test,
        test_labels,
        negatives,
        anomalies,
        inlier_r99: r99,
    })
}
