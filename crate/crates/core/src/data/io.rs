//! Dataset export: a `header.json` describing shapes and seeds, flat
//! little-endian binary tensors, and run-length encoded masks.
//!
//! RLE layout: `u32 height, u32 width`, then `u32` run lengths alternating
//! between 0-runs and 1-runs, starting with a (possibly empty) 0-run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dense::{DenseToyConfig, DenseToyScene, DenseToyWorld};
use super::paste::GridMask;
use super::toy2d::{Toy2dConfig, Toy2dDataset};
use crate::error::{Error, Result};
use crate::flow::NegativePatch;
use crate::maps::{Label, LabelMap, ScoreMap};
use crate::metrics::ScoredImage;
use crate::numerics::Tensor;

pub const HEADER: &str = "header.json";
const FORMAT: &str = "densehybrid-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    /// `f64le`, `i32le` or `rle`.
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Toy2d {
        config: Toy2dConfig,
        inlier_r99: f64,
    },
    Dense {
        config: DenseToyConfig,
    },
    /// Evaluated images: closed predictions, anomaly scores and ground truth.
    ScoredMaps {
        classes: usize,
        images: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub arrays: Vec<ArrayEntry>,
}

pub fn encode_rle(mask: &GridMask) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend((mask.height as u32).to_le_bytes());
    out.extend((mask.width as u32).to_le_bytes());
    let mut current = false;
    let mut run = 0u32;
    for &b in &mask.bits {
        if b == current {
            run += 1;
        } else {
            out.extend(run.to_le_bytes());
            current = b;
            run = 1;
        }
    }
    out.extend(run.to_le_bytes());
    out
}

fn read_u32s(bytes: &[u8]) -> Result<Vec<u32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format("byte length not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn decode_rle(bytes: &[u8]) -> Result<GridMask> {
    let words = read_u32s(bytes)?;
    if words.len() < 3 {
        return Err(Error::Format("truncated RLE mask".into()));
    }
    let (h, w) = (words[0] as usize, words[1] as usize);
    let mut bits = Vec::with_capacity(h * w);
    for (i, &run) in words[2..].iter().enumerate() {
        if bits.len() + run as usize > h * w {
            return Err(Error::Format("RLE runs exceed the grid".into()));
        }
        bits.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
    }
    if bits.len() != h * w {
        return Err(Error::Format("RLE runs do not cover the grid".into()));
    }
    GridMask::new(h, w, bits)
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format("byte length not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

struct Writer<'a> {
    dir: &'a Path,
    arrays: Vec<ArrayEntry>,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, ext: &str, dtype: &str, shape: Vec<usize>, bytes: Vec<u8>) -> Result<()> {
        let file = format!("{name}.{ext}");
        let path = self.dir.join(&file);
        fs::write(&path, bytes)?;
        self.written.push(path);
        self.arrays.push(ArrayEntry {
            name: name.into(),
            file,
            shape,
            dtype: dtype.into(),
        });
        Ok(())
    }

    fn tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.put(name, "f64", "f64le", t.shape().to_vec(), f64_bytes(t.data()))
    }

    fn ints(&mut self, name: &str, v: &[i32]) -> Result<()> {
        self.put(
            name,
            "i32",
            "i32le",
            vec![v.len()],
            v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        )
    }

    fn label_map(&mut self, name: &str, m: &LabelMap) -> Result<()> {
        let codes: Vec<u8> = m.labels().iter().flat_map(|l| l.to_code().to_le_bytes()).collect();
        self.put(name, "i32", "i32le", m.shape().to_vec(), codes)
    }

    fn mask(&mut self, name: &str, m: &GridMask) -> Result<()> {
        self.put(name, "rle", "rle", vec![m.height, m.width], encode_rle(m))
    }

    fn finish(mut self, seed: u64, dataset: DatasetSpec) -> Result<Vec<PathBuf>> {
        let header = DatasetHeader {
            format: FORMAT.into(),
            version: 1,
            seed,
            dataset,
            arrays: self.arrays,
        };
        let path = self.dir.join(HEADER);
        fs::write(&path, serde_json::to_string_pretty(&header)? + "\n")?;
        self.written.insert(0, path);
        Ok(self.written)
    }
}

struct Reader {
    dir: PathBuf,
    header: DatasetHeader,
}

impl Reader {
    fn open(dir: &Path) -> Result<Self> {
        let header: DatasetHeader = serde_json::from_str(&fs::read_to_string(dir.join(HEADER))?)?;
        if header.format != FORMAT || header.version != 1 {
            return Err(Error::Format(format!(
                "unsupported dataset {} v{}",
                header.format, header.version
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            header,
        })
    }

    fn entry(&self, name: &str) -> Result<&ArrayEntry> {
        self.header
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("dataset lacks array {name:?}")))
    }

    fn bytes(&self, name: &str, dtype: &str) -> Result<(Vec<usize>, Vec<u8>)> {
        let e = self.entry(name)?;
        if e.dtype != dtype {
            return Err(Error::Format(format!("array {name:?} has dtype {}", e.dtype)));
        }
        Ok((e.shape.clone(), fs::read(self.dir.join(&e.file))?))
    }

    fn tensor(&self, name: &str) -> Result<Tensor> {
        let (shape, b) = self.bytes(name, "f64le")?;
        Tensor::new(shape, read_f64s(&b)?).map_err(|e| Error::Format(format!("{name}: {e}")))
    }

    fn ints(&self, name: &str) -> Result<Vec<i32>> {
        let (shape, b) = self.bytes(name, "i32le")?;
        let v: Vec<i32> = read_u32s(&b)?.into_iter().map(|u| u as i32).collect();
        if shape != [v.len()] {
            return Err(Error::Format(format!("{name}: length disagrees with header")));
        }
        Ok(v)
    }

    fn label_map(&self, name: &str) -> Result<LabelMap> {
        let (shape, b) = self.bytes(name, "i32le")?;
        let labels = read_u32s(&b)?
            .into_iter()
            .map(|u| Label::from_code(u as i32))
            .collect::<Result<_>>()?;
        LabelMap::new(shape, labels).map_err(|e| Error::Format(format!("{name}: {e}")))
    }

    fn score_map(&self, name: &str) -> Result<ScoreMap> {
        let t = self.tensor(name)?;
        let shape = t.shape().to_vec();
        ScoreMap::new(shape, t.into_data()).map_err(|e| Error::Format(format!("{name}: {e}")))
    }

    fn mask(&self, name: &str) -> Result<GridMask> {
        let (shape, b) = self.bytes(name, "rle")?;
        let m = decode_rle(&b)?;
        if shape != [m.height, m.width] {
            return Err(Error::Format(format!("{name}: mask shape disagrees with header")));
        }
        Ok(m)
    }
}

fn to_labels(v: Vec<i32>) -> Result<Vec<u16>> {
    v.into_iter()
        .map(|c| u16::try_from(c).map_err(|_| Error::Format(format!("bad class code {c}"))))
        .collect()
}

pub fn write_toy2d(data: &Toy2dDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut w = Writer {
        dir,
        arrays: Vec::new(),
        written: Vec::new(),
    };
    w.tensor("train", &data.train)?;
    w.ints(
        "train_labels",
        &data.train_labels.iter().map(|&c| c as i32).collect::<Vec<_>>(),
    )?;
    w.tensor("test", &data.test)?;
    w.ints(
        "test_labels",
        &data.test_labels.iter().map(|&c| c as i32).collect::<Vec<_>>(),
    )?;
    w.tensor("negatives", &data.negatives)?;
    w.tensor("anomalies", &data.anomalies)?;
    w.finish(
        data.seed,
        DatasetSpec::Toy2d {
            config: data.config.clone(),
            inlier_r99: data.inlier_r99,
        },
    )
}

pub fn read_toy2d(dir: &Path) -> Result<Toy2dDataset> {
    let r = Reader::open(dir)?;
    let DatasetSpec::Toy2d { config, inlier_r99 } = r.header.dataset.clone() else {
        return Err(Error::Format("not a toy2d dataset".into()));
    };
    Ok(Toy2dDataset {
        seed: r.header.seed,
        config,
        train: r.tensor("train")?,
        train_labels: to_labels(r.ints("train_labels")?)?,
        test: r.tensor("test")?,
        test_labels: to_labels(r.ints("test_labels")?)?,
        negatives: r.tensor("negatives")?,
        anomalies: r.tensor("anomalies")?,
        inlier_r99,
    })
}

const SPLITS: [&str; 3] = ["train", "calibration", "test"];

pub fn write_dense_world(world: &DenseToyWorld, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut w = Writer {
        dir,
        arrays: Vec::new(),
        written: Vec::new(),
    };
    let c = &world.config;
    for (split, scenes) in SPLITS.iter().zip([&world.train, &world.calibration, &world.test]) {
        let feats: Vec<f64> = scenes.iter().flat_map(|s| s.features.data().iter().copied()).collect();
        w.tensor(
            &format!("{split}_features"),
            &Tensor::new(vec![scenes.len(), c.elements(), c.feature_dim], feats)?,
        )?;
        let classes: Vec<i32> = scenes
            .iter()
            .flat_map(|s| s.classes.iter().map(|&k| k as i32))
            .collect();
        w.ints(&format!("{split}_classes"), &classes)?;
        for (i, s) in scenes.iter().enumerate() {
            if let (Some(bits), Some(sig)) = (&s.anomaly, &s.anomaly_signature) {
                w.mask(
                    &format!("{split}_anomaly_{i:04}"),
                    &GridMask::new(s.height, s.width, bits.clone())?,
                )?;
                w.tensor(
                    &format!("{split}_signature_{i:04}"),
                    &Tensor::new(vec![sig.len()], sig.clone())?,
                )?;
            }
        }
    }
    let bank: Vec<f64> = world
        .bank
        .iter()
        .flat_map(|p| p.values.data().iter().copied())
        .collect();
    w.tensor(
        "bank",
        &Tensor::new(vec![world.bank.len(), c.bank_patch * c.bank_patch, c.feature_dim], bank)?,
    )?;
    w.finish(world.seed, DatasetSpec::Dense { config: c.clone() })
}

pub fn read_dense_world(dir: &Path) -> Result<DenseToyWorld> {
    let r = Reader::open(dir)?;
    let DatasetSpec::Dense { config } = r.header.dataset.clone() else {
        return Err(Error::Format("not a dense toy dataset".into()));
    };
    let (n, d) = (config.elements(), config.feature_dim);
    let mut splits = Vec::new();
    for split in SPLITS {
        let feats = r.tensor(&format!("{split}_features"))?;
        let classes = to_labels(r.ints(&format!("{split}_classes"))?)?;
        let count = feats.shape()[0];
        if feats.shape() != [count, n, d] || classes.len() != count * n {
            return Err(Error::Format(format!("{split}: shapes disagree with the config")));
        }
        let mut scenes = Vec::with_capacity(count);
        for i in 0..count {
            let name = format!("{split}_anomaly_{i:04}");
            let (anomaly, signature) = if r.entry(&name).is_ok() {
                let m = r.mask(&name)?;
                let sig = r.tensor(&format!("{split}_signature_{i:04}"))?.into_data();
                (Some(m.bits), Some(sig))
            } else {
                (None, None)
            };
            scenes.push(DenseToyScene {
                height: config.height,
                width: config.width,
                features: Tensor::matrix(n, d, feats.data()[i * n * d..(i + 1) * n * d].to_vec())?,
                classes: classes[i * n..(i + 1) * n].to_vec(),
                anomaly,
                anomaly_signature: signature,
            });
        }
        splits.push(scenes);
    }
    let bank_t = r.tensor("bank")?;
    let p = config.bank_patch;
    if bank_t.shape() != [bank_t.shape()[0], p * p, d] {
        return Err(Error::Format("bank shape disagrees with the config".into()));
    }
    let bank = (0..bank_t.shape()[0])
        .map(|i| {
            Ok(NegativePatch {
                height: p,
                width: p,
                values: Tensor::matrix(p * p, d, bank_t.data()[i * p * p * d..(i + 1) * p * p * d].to_vec())?,
            })
        })
        .collect::<Result<_>>()?;
    let test = splits.pop().expect("three splits");
    let calibration = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(DenseToyWorld {
        seed: r.header.seed,
        config,
        train,
        calibration,
        test,
        bank,
    })
}

/// Scored images in the dataset container; one `i32le` label map per closed
/// prediction and ground truth, one `f64le` score map per image.
pub fn write_scored_images(classes: usize, images: &[ScoredImage], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut w = Writer {
        dir,
        arrays: Vec::new(),
        written: Vec::new(),
    };
    for (i, im) in images.iter().enumerate() {
        w.label_map(&format!("closed_{i:04}"), &im.closed)?;
        let scores = Tensor::new(im.scores.shape().to_vec(), im.scores.values().to_vec())?;
        w.tensor(&format!("scores_{i:04}"), &scores)?;
        w.label_map(&format!("truth_{i:04}"), &im.truth)?;
    }
    w.finish(
        0,
        DatasetSpec::ScoredMaps {
            classes,
            images: images.len(),
        },
    )
}

/// Inverse of [`write_scored_images`]; returns the class count and the images.
pub fn read_scored_images(dir: &Path) -> Result<(usize, Vec<ScoredImage>)> {
    let r = Reader::open(dir)?;
    let DatasetSpec::ScoredMaps { classes, images } = r.header.dataset.clone() else {
        return Err(Error::Format("not a scored-map container".into()));
    };
    let images = (0..images)
        .map(|i| {
            let im = ScoredImage {
                closed: r.label_map(&format!("closed_{i:04}"))?,
                scores: r.score_map(&format!("scores_{i:04}"))?,
                truth: r.label_map(&format!("truth_{i:04}"))?,
            };
            if im.closed.shape() != im.truth.shape() || im.scores.shape() != im.truth.shape() {
                return Err(Error::Format(format!("image {i}: map shapes disagree")));
            }
            Ok(im)
        })
        .collect::<Result<_>>()?;
    Ok((classes, images))
}
