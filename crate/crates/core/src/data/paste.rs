//! Mixed-content inputs: `x' = (1 - m)·x⁺ + pad(x⁻, m)`.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::flow::NegativePatch;
use crate::losses::MixedBatch;
use crate::maps::Label;
use crate::numerics::Tensor;

/// Binary element mask over an `H × W` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

/// Inclusive-exclusive bounding box `(top, left, height, width)`.
pub type BoundingBox = (usize, usize, usize, usize);

impl GridMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(shape_err("mask length differs from grid"));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    /// Axis-aligned rectangle; errors if it does not fit.
    pub fn rect(height: usize, width: usize, rect: BoundingBox) -> Result<Self> {
        let (top, left, h, w) = rect;
        if top + h > height || left + w > width {
            return Err(shape_err(format!("rectangle {rect:?} exceeds {height}x{width}")));
        }
        let mut m = Self::empty(height, width);
        for r in top..top + h {
            for c in left..left + w {
                m.bits[r * width + c] = true;
            }
        }
        Ok(m)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (r, c) = (i / self.width, i % self.width);
            bb = Some(match bb {
                None => (r, c, r, c),
                Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
            });
        }
        bb.map(|(r0, c0, r1, c1)| (r0, c0, r1 - r0 + 1, c1 - c0 + 1))
    }
}

/// Pastes `patch` over the mask's bounding box. Masked elements take the
/// patch values and a VOID label; the rest are copied unchanged.
pub fn paste(scene: &Tensor, labels: &[Label], patch: &NegativePatch, mask: &GridMask) -> Result<MixedBatch> {
    let n = mask.height * mask.width;
    if scene.shape().len() != 2 || scene.rows() != n || labels.len() != n {
        return Err(shape_err("scene, labels and mask must cover the same grid"));
    }
    let mut inputs = scene.clone();
    let mut out_labels = labels.to_vec();
    if let Some((top, left, h, w)) = mask.bounding_box() {
        if patch.height != h || patch.width != w {
            return Err(shape_err(format!(
                "patch {}x{} does not match mask box {h}x{w}",
                patch.height, patch.width
            )));
        }
        if patch.values.cols() != scene.cols() {
            return Err(shape_err("patch feature width differs from scene"));
        }
        for r in 0..h {
            for c in 0..w {
                let i = (top + r) * mask.width + left + c;
                if mask.bits[i] {
                    inputs.row_mut(i).copy_from_slice(patch.values.row(r * w + c));
                    out_labels[i] = Label::Void;
                }
            }
        }
    }
    MixedBatch::new(inputs, out_labels, mask.bits.clone())
}

/// A random square placement whose area fraction lies in `[area_min, area_max]`
/// (rounded to whole elements and clipped to the grid).
pub fn random_square<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    area_min: f64,
    area_max: f64,
    rng: &mut R,
) -> Result<BoundingBox> {
    if !(0.0 < area_min && area_min <= area_max && area_max <= 1.0) {
        return Err(Error::InvalidArgument("paste area fractions".into()));
    }
    let frac = rng.random_range(area_min..=area_max);
    let side = ((frac * (height * width) as f64).sqrt().round() as usize).clamp(1, height.min(width));
    let top = rng.random_range(0..=height - side);
    let left = rng.random_range(0..=width - side);
    Ok((top, left, side, side))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> (Tensor, Vec<Label>) {
        let t = Tensor::matrix(h * w, 1, (0..h * w).map(|i| i as f64).collect()).unwrap();
        (t, (0..h * w).map(|i| Label::Class((i % 2) as u16)).collect())
    }

    fn patch(h: usize, w: usize, base: f64) -> NegativePatch {
        NegativePatch {
            height: h,
            width: w,
            values: Tensor::matrix(h * w, 1, (0..h * w).map(|i| base + i as f64).collect()).unwrap(),
        }
    }

    #[test]
    fn empty_mask_is_identity() {
        let (x, l) = grid(4, 4);
        let b = paste(&x, &l, &patch(2, 2, 100.0), &GridMask::empty(4, 4)).unwrap();
        assert_eq!(b.inputs, x);
        assert_eq!(b.labels, l);
    }

    #[test]
    fn full_mask_is_the_patch() {
        let (x, l) = grid(3, 3);
        let p = patch(3, 3, 50.0);
        let b = paste(&x, &l, &p, &GridMask::full(3, 3)).unwrap();
        assert_eq!(b.inputs, p.values);
        assert!(b.labels.iter().all(|l| l.is_void()));
    }

    #[test]
    fn two_by_two_at_one_one() {
        let (x, l) = grid(4, 4);
        let m = GridMask::rect(4, 4, (1, 1, 2, 2)).unwrap();
        let b = paste(&x, &l, &patch(2, 2, 100.0), &m).unwrap();
        #[rustfmt::skip]
        let expected = [
            0.0, 1.0, 2.0, 3.0,
            4.0, 100.0, 101.0, 7.0,
            8.0, 102.0, 103.0, 11.0,
            12.0, 13.0, 14.0, 15.0,
        ];
        assert_eq!(b.inputs.data(), &expected);
        let voids: Vec<usize> = (0..16).filter(|&i| b.labels[i].is_void()).collect();
        assert_eq!(voids, vec![5, 6, 9, 10]);
        assert_eq!(b.mask, m.bits);
    }

    #[test]
    fn non_rectangular_masks_keep_unmasked_box_elements() {
        let (x, l) = grid(3, 3);
        let m = GridMask::new(3, 3, vec![true, false, false, false, true, false, false, false, false]).unwrap();
        let b = paste(&x, &l, &patch(2, 2, 10.0), &m).unwrap();
        assert_eq!(b.inputs.data(), &[10.0, 1.0, 2.0, 3.0, 13.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(b.labels[1], l[1]);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let (x, l) = grid(4, 4);
        let m = GridMask::rect(4, 4, (0, 0, 3, 3)).unwrap();
        assert!(paste(&x, &l, &patch(2, 2, 0.0), &m).is_err());
        assert!(GridMask::rect(4, 4, (3, 3, 2, 2)).is_err());
    }

    #[test]
    fn random_squares_fit() {
        let mut rng = crate::rng::rng_from_seed(1);
        for _ in 0..200 {
            let (t, l, h, w) = random_square(16, 16, 0.05, 0.2, &mut rng).unwrap();
            assert!(t + h <= 16 && l + w <= 16 && h == w);
            let frac = (h * w) as f64 / 256.0;
            assert!((0.03..=0.23).contains(&frac));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn exactly_masked_elements_change(h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
                let mut rng = crate::rng::rng_from_seed(seed);
                let (x, l) = grid(h, w);
                let top = rng.random_range(0..h);
                let left = rng.random_range(0..w);
                let ph = rng.random_range(1..=h - top);
                let pw = rng.random_range(1..=w - left);
                let m = GridMask::rect(h, w, (top, left, ph, pw)).unwrap();
                let b = paste(&x, &l, &patch(ph, pw, -1000.0), &m).unwrap();
                for i in 0..h * w {
                    if m.bits[i] {
                        prop_assert!(b.labels[i].is_void());
                        prop_assert!(b.inputs.row(i)[0] < 0.0);
                    } else {
                        prop_assert_eq!(b.labels[i], l[i]);
                        prop_assert_eq!(b.inputs.row(i), x.row(i));
                    }
                }
                // pasting the same patch again is a no-op on the result
                let again = paste(&b.inputs, &b.labels, &patch(ph, pw, -1000.0), &m).unwrap();
                prop_assert_eq!(again, b);
            }
        }
    }
}
