//! A miniature dense-recognition world: grids of feature vectors whose class
//! regions form a Voronoi partition, with out-of-palette anomaly objects in
//! the evaluation splits and a separate bank of real negative textures.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::NegativePatch;
use crate::maps::{Label, LabelMap};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, rng_from_seed, stream_rng, LabRng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseToyConfig {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Feature width; class signatures live in the first two coordinates.
    pub feature_dim: usize,
    pub class_radius: f64,
    pub noise: f64,
    pub train_scenes: usize,
    pub calibration_scenes: usize,
    pub test_scenes: usize,
    /// Anomaly objects cover this fraction range of the grid.
    pub anomaly_area_min: f64,
    pub anomaly_area_max: f64,
    /// Off-plane offset range of anomaly signatures.
    pub anomaly_offset_min: f64,
    pub anomaly_offset_max: f64,
    pub bank_textures: usize,
    pub bank_patch: usize,
    pub bank_radius_min: f64,
    pub bank_radius_max: f64,
}

impl Default for DenseToyConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            height: 16,
            width: 16,
            feature_dim: 3,
            class_radius: 2.0,
            noise: 0.4,
            train_scenes: 32,
            calibration_scenes: 8,
            test_scenes: 16,
            anomaly_area_min: 0.05,
            anomaly_area_max: 0.2,
            anomaly_offset_min: 1.5,
            anomaly_offset_max: 2.5,
            bank_textures: 64,
            bank_patch: 16,
            bank_radius_min: 3.0,
            bank_radius_max: 4.0,
        }
    }
}

impl DenseToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > u16::MAX as usize {
            return Err(Error::InvalidArgument("dense toy world needs K >= 2".into()));
        }
        if self.height < 2 || self.width < 2 || self.height * self.width < self.classes {
            return Err(Error::Degenerate(format!(
                "grid {}x{} cannot host {} classes",
                self.height, self.width, self.classes
            )));
        }
        if self.feature_dim < 3 {
            return Err(Error::InvalidArgument("feature_dim must be >= 3".into()));
        }
        let fractions = 0.0 < self.anomaly_area_min
            && self.anomaly_area_min <= self.anomaly_area_max
            && self.anomaly_area_max <= 1.0;
        if !fractions {
            return Err(Error::Config(
                "anomaly area fractions must satisfy 0 < min <= max <= 1".into(),
            ));
        }
        if !(0.0 < self.anomaly_offset_min && self.anomaly_offset_min <= self.anomaly_offset_max) {
            return Err(Error::Config("anomaly offsets must satisfy 0 < min <= max".into()));
        }
        if self.bank_textures == 0 || self.bank_patch == 0 {
            return Err(Error::Config("negative bank must be non-empty".into()));
        }
        if !(0.0 < self.bank_radius_min && self.bank_radius_min <= self.bank_radius_max) {
            return Err(Error::Config("bank radii must satisfy 0 < min <= max".into()));
        }
        if !(self.noise >= 0.0 && self.class_radius > 0.0) {
            return Err(Error::Config("noise must be >= 0 and class_radius > 0".into()));
        }
        Ok(())
    }

    pub fn elements(&self) -> usize {
        self.height * self.width
    }
}

/// Mean feature of class `k`: evenly spaced on a circle in the first two
/// coordinates.
pub fn class_signature(config: &DenseToyConfig, k: usize) -> Vec<f64> {
    let t = TAU * k as f64 / config.classes as f64;
    let mut v = vec![0.0; config.feature_dim];
    v[0] = config.class_radius * t.cos();
    v[1] = config.class_radius * t.sin();
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseToyScene {
    pub height: usize,
    pub width: usize,
    /// `H·W × D`, row-major over the grid.
    pub features: Tensor,
    pub classes: Vec<u16>,
    /// Anomaly object pixels, if the scene has one.
    pub anomaly: Option<Vec<bool>>,
    /// Mean feature of the anomaly object.
    pub anomaly_signature: Option<Vec<f64>>,
}

impl DenseToyScene {
    /// Ground truth with anomaly pixels marked `Outlier`.
    pub fn ground_truth(&self) -> LabelMap {
        let labels = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, &c)| match &self.anomaly {
                Some(mask) if mask[i] => Label::Outlier,
                _ => Label::Class(c),
            })
            .collect();
        LabelMap::new(vec![self.height, self.width], labels).expect("scene shape")
    }

    pub fn closed_labels(&self) -> Vec<Label> {
        self.classes.iter().map(|&c| Label::Class(c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseToyWorld {
    pub seed: u64,
    pub config: DenseToyConfig,
    pub train: Vec<DenseToyScene>,
    pub calibration: Vec<DenseToyScene>,
    pub test: Vec<DenseToyScene>,
    /// Real negative textures, each `bank_patch × bank_patch`.
    pub bank: Vec<NegativePatch>,
}

fn noisy<R: Rng + ?Sized>(mean: &[f64], noise: f64, rng: &mut R) -> Vec<f64> {
    mean.iter()
        .map(|m| {
            let e: f64 = StandardNormal.sample(rng);
            m + noise * e
        })
        .collect()
}

fn unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Out-of-palette signature: an in-plane point inside the class circle
/// lifted off the plane, so it never lies in the hull of class means.
fn anomaly_signature<R: Rng + ?Sized>(config: &DenseToyConfig, rng: &mut R) -> Vec<f64> {
    let mut v = vec![0.0; config.feature_dim];
    let r = config.class_radius * rng.random_range(0.0f64..0.5).sqrt();
    let t = rng.random_range(0.0..TAU);
    v[0] = r * t.cos();
    v[1] = r * t.sin();
    let lift = rng.random_range(config.anomaly_offset_min..=config.anomaly_offset_max);
    for (slot, u) in v[2..].iter_mut().zip(unit_vector(config.feature_dim - 2, rng)) {
        *slot = lift * u;
    }
    v
}

/// Square object side length covering a fraction of the grid, clipped to fit.
fn object_side<R: Rng + ?Sized>(config: &DenseToyConfig, rng: &mut R) -> (usize, usize) {
    let frac = rng.random_range(config.anomaly_area_min..=config.anomaly_area_max);
    let side = (frac * config.elements() as f64).sqrt().round().max(1.0) as usize;
    (side.min(config.height), side.min(config.width))
}

fn generate_scene(config: &DenseToyConfig, with_anomaly: bool, rng: &mut LabRng) -> DenseToyScene {
    let (h, w) = (config.height, config.width);
    let centres: Vec<usize> = sample(rng, h * w, config.classes).into_vec();
    let classes: Vec<u16> = (0..h * w)
        .map(|p| {
            let (r, c) = ((p / w) as f64, (p % w) as f64);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &q) in centres.iter().enumerate() {
                let d = (r - (q / w) as f64).powi(2) + (c - (q % w) as f64).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    let signatures: Vec<Vec<f64>> = (0..config.classes).map(|k| class_signature(config, k)).collect();
    let mut data = Vec::with_capacity(h * w * config.feature_dim);
    for &k in &classes {
        data.extend(noisy(&signatures[k as usize], config.noise, rng));
    }
    let mut features = Tensor::matrix(h * w, config.feature_dim, data).expect("scene features");
    let (mut anomaly, mut anomaly_sig) = (None, None);
    if with_anomaly {
        let sig = anomaly_signature(config, rng);
        let (oh, ow) = object_side(config, rng);
        let top = rng.random_range(0..=h - oh);
        let left = rng.random_range(0..=w - ow);
        let mut mask = vec![false; h * w];
        for r in top..top + oh {
            for c in left..left + ow {
                mask[r * w + c] = true;
                let vals = noisy(&sig, config.noise, rng);
                features.row_mut(r * w + c).copy_from_slice(&vals);
            }
        }
        anomaly = Some(mask);
        anomaly_sig = Some(sig);
    }
    DenseToyScene {
        height: h,
        width: w,
        features,
        classes,
        anomaly,
        anomaly_signature: anomaly_sig,
    }
}

fn texture(config: &DenseToyConfig, rng: &mut LabRng) -> NegativePatch {
    let dir = unit_vector(config.feature_dim, rng);
    let radius = rng.random_range(config.bank_radius_min..=config.bank_radius_max);
    let mean: Vec<f64> = dir.iter().map(|u| u * radius).collect();
    let n = config.bank_patch * config.bank_patch;
    let data: Vec<f64> = (0..n).flat_map(|_| noisy(&mean, config.noise, rng)).collect();
    NegativePatch {
        height: config.bank_patch,
        width: config.bank_patch,
        values: Tensor::matrix(n, config.feature_dim, data).expect("texture shape"),
    }
}

/// Scenes of every split are generated in parallel from per-scene seeds.
pub fn generate_dense_toy(seed: u64, config: &DenseToyConfig) -> Result<DenseToyWorld> {
    config.validate()?;
    let base = derive_seed(seed, Stream::Data);
    let split = |offset: u64, count: usize, with_anomaly: bool| -> Vec<DenseToyScene> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(base ^ (offset << 40) ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                generate_scene(config, with_anomaly, &mut rng)
            })
            .collect()
    };
    let train = split(1, config.train_scenes, false);
    let calibration = split(2, config.calibration_scenes, true);
    let test = split(3, config.test_scenes, true);
    let mut bank_rng = stream_rng(seed, Stream::Paste);
    let bank = (0..config.bank_textures)
        .map(|_| texture(config, &mut bank_rng))
        .collect();
    Ok(DenseToyWorld {
        seed,
        config: config.clone(),
        train,
        calibration,
        test,
        bank,
    })
}

/// Approximate squared distance from `point` to the convex hull of
/// `vertices` (Frank–Wolfe; accurate to about 1e-3).
pub fn hull_distance_sq(vertices: &[Vec<f64>], point: &[f64]) -> f64 {
    let k = vertices.len();
    let mut w = vec![1.0 / k as f64; k];
    let combo = |w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; point.len()];
        for (wi, v) in w.iter().zip(vertices) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += wi * x;
            }
        }
        out
    };
    for it in 0..5_000 {
        let c = combo(&w);
        let grad: Vec<f64> = c.iter().zip(point).map(|(a, b)| a - b).collect();
        let (best, _) = vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        let step = 2.0 / (it as f64 + 2.0);
        for (i, wi) in w.iter_mut().enumerate() {
            *wi *= 1.0 - step;
            if i == best {
                *wi += step;
            }
        }
    }
    combo(&w).iter().zip(point).map(|(a, b)| (a - b).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg32() -> DenseToyConfig {
        DenseToyConfig {
            height: 32,
            width: 32,
            train_scenes: 6,
            calibration_scenes: 3,
            test_scenes: 3,
            ..Default::default()
        }
    }

    #[test]
    fn every_class_in_every_scene() {
        let world = generate_dense_toy(11, &cfg32()).unwrap();
        for scene in world.train.iter().chain(&world.calibration).chain(&world.test) {
            for k in 0..4u16 {
                assert!(scene.classes.contains(&k));
            }
            assert_eq!(scene.features.shape(), &[1024, 3]);
        }
    }

    #[test]
    fn seed_determinism() {
        let a = generate_dense_toy(3, &cfg32()).unwrap();
        assert_eq!(a, generate_dense_toy(3, &cfg32()).unwrap());
        assert_ne!(a.train[0], generate_dense_toy(4, &cfg32()).unwrap().train[0]);
    }

    #[test]
    fn anomaly_signatures_leave_the_class_hull() {
        let config = cfg32();
        let world = generate_dense_toy(5, &config).unwrap();
        let means: Vec<Vec<f64>> = (0..config.classes).map(|k| class_signature(&config, k)).collect();
        // sanity of the oracle itself
        assert!(hull_distance_sq(&means, &[0.1, 0.2, 0.0]) < 1e-3);
        assert!((hull_distance_sq(&means, &[0.0, 0.0, 1.0]) - 1.0).abs() < 1e-3);
        for scene in world.calibration.iter().chain(&world.test) {
            let sig = scene.anomaly_signature.as_ref().unwrap();
            assert!(hull_distance_sq(&means, sig) > 1.0);
            let area = scene.anomaly.as_ref().unwrap().iter().filter(|&&m| m).count() as f64 / 1024.0;
            assert!((0.03..=0.22).contains(&area), "{area}");
        }
        assert!(world.train.iter().all(|s| s.anomaly.is_none()));
    }

    #[test]
    fn ground_truth_marks_outliers() {
        let world = generate_dense_toy(2, &DenseToyConfig::default()).unwrap();
        let s = &world.test[0];
        let gt = s.ground_truth();
        let mask = s.anomaly.as_ref().unwrap();
        for (i, l) in gt.labels().iter().enumerate() {
            assert_eq!(*l == Label::Outlier, mask[i]);
        }
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        let c = DenseToyConfig {
            height: 1,
            ..Default::default()
        };
        assert!(generate_dense_toy(0, &c).is_err());
        let c = DenseToyConfig {
            classes: 1,
            ..Default::default()
        };
        assert!(generate_dense_toy(0, &c).is_err());
    }
}
