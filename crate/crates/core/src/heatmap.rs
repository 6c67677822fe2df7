//! Grayscale score heatmaps: binary PGM plus the raw values as CSV.

use std::path::{Path, PathBuf};

use crate::error::{shape_err, Error, Result};
use crate::maps::ScoreMap;
use crate::metrics::report::fmt_f64;

/// A borrowed row-major `height × width` grid of raw scores.
#[derive(Clone, Copy, Debug)]
pub struct Grid<'a> {
    pub height: usize,
    pub width: usize,
    pub values: &'a [f64],
}

impl<'a> Grid<'a> {
    pub fn new(height: usize, width: usize, values: &'a [f64]) -> Result<Self> {
        if height == 0 || width == 0 || height * width != values.len() {
            return Err(shape_err(format!(
                "{height}x{width} heatmap with {} values",
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_map(map: &'a ScoreMap) -> Result<Self> {
        match map.shape() {
            [h, w] => Self::new(*h, *w, map.values()),
            s => Err(shape_err(format!("heatmap needs a 2-D grid, got {s:?}"))),
        }
    }
}

/// Min–max normalisation to `0..=255`; a constant grid is mid-gray.
pub fn to_gray(grid: Grid<'_>) -> Result<Vec<u8>> {
    let v = grid.values;
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("heatmap value {bad}")));
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![128; v.len()]);
    }
    Ok(v.iter()
        .map(|x| (255.0 * (x - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8)
        .collect())
}

pub fn encode_pgm(grid: Grid<'_>) -> Result<Vec<u8>> {
    let (h, w) = (grid.height, grid.width);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(to_gray(grid)?);
    Ok(out)
}

pub fn encode_csv(grid: Grid<'_>) -> Result<String> {
    let mut out = String::new();
    for row in grid.values.chunks(grid.width) {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Writes `path` (PGM) and the same stem with a `.csv` extension; returns both.
pub fn emit_heatmap(grid: Grid<'_>, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let pgm = encode_pgm(grid)?;
    let csv = encode_csv(grid)?;
    let csv_path = path.with_extension("csv");
    std::fs::write(path, pgm)?;
    std::fs::write(&csv_path, csv)?;
    Ok((path.to_path_buf(), csv_path))
}

/// Parses a binary PGM back into `(height, width, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Format("malformed PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let pixels = bytes.get(pos..).ok_or_else(bad)?;
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((h, w, pixels.to_vec()))
}
