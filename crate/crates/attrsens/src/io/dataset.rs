//! Synthetic shape dataset: one saturated-color shape per image over a
//! smooth value-noise background, with exact ground-truth masks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::{seed_for, tags};
use crate::imageops::bilinear_resize;
use crate::tensor::{Scalar, Tensor};

pub const CLASS_COUNT: usize = 6;

pub const MIN_SIZE: usize = 12;
pub const MAX_SIZE: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Plus,
    Ring,
    Diamond,
}

impl ShapeKind {
    pub fn from_label(label: usize) -> Self {
        match label % CLASS_COUNT {
            0 => ShapeKind::Disk,
            1 => ShapeKind::Square,
            2 => ShapeKind::Triangle,
            3 => ShapeKind::Plus,
            4 => ShapeKind::Ring,
            _ => ShapeKind::Diamond,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetItem<T> {
    pub index: u64,
    pub image: Tensor<T>,
    pub label: usize,
    pub shape: ShapeKind,
    pub size: usize,
    pub gt_mask: Vec<bool>,
    /// [row_min, col_min, row_max, col_max], inclusive.
    pub bbox: [usize; 4],
}

fn hsv_to_rgb(h: f64) -> [f64; 3] {
    // s = v = 1: fully saturated hue wheel
    let h6 = (h.fract() * 6.0).rem_euclid(6.0);
    let x = 1.0 - ((h6 % 2.0) - 1.0).abs();
    match h6 as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

fn inside(shape: ShapeKind, dy: f64, dx: f64, half: f64) -> bool {
    match shape {
        ShapeKind::Disk => (dy * dy + dx * dx).sqrt() <= half,
        ShapeKind::Square => dy.abs() <= half && dx.abs() <= half,
        ShapeKind::Diamond => dy.abs() + dx.abs() <= half,
        ShapeKind::Plus => {
            let arm = half / 3.0;
            (dx.abs() <= arm && dy.abs() <= half) || (dy.abs() <= arm && dx.abs() <= half)
        }
        ShapeKind::Ring => {
            let r = (dy * dy + dx * dx).sqrt();
            r <= half && r >= half / 2.0
        }
        ShapeKind::Triangle => {
            // upward triangle: apex at dy = -half, base at dy = +half
            if dy < -half || dy > half {
                return false;
            }
            let frac = (dy + half) / (2.0 * half); // 0 at apex .. 1 at base
            dx.abs() <= half * frac
        }
    }
}

/// Generate the `index`-th item deterministically: label = index mod 6,
/// size uniform in [12, 40], position uniform with the shape fully
/// inside the frame, saturated color over a smooth noise background.
pub fn generate_item<T: Scalar>(base_seed: u64, index: u64, side: usize) -> Result<DatasetItem<T>> {
    if side < MAX_SIZE + 2 {
        return Err(Error::InvalidArgument(format!(
            "image side {side} too small for max shape size {MAX_SIZE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(base_seed, index, 0, tags::DATASET));
    let label = (index as usize) % CLASS_COUNT;
    let shape = ShapeKind::from_label(label);
    let size = rng.gen_range(MIN_SIZE..=MAX_SIZE);
    let half = size as f64 / 2.0;
    let lo = half.ceil() as usize;
    let hi = side - 1 - lo;
    let cy = rng.gen_range(lo..=hi) as f64;
    let cx = rng.gen_range(lo..=hi) as f64;
    let color = hsv_to_rgb(rng.gen_range(0.0..1.0));

    // low-frequency value noise, one coarse grid per channel
    let coarse = 8usize;
    let mut bg = [vec![0.0f64; side * side], vec![0.0; side * side], vec![0.0; side * side]];
    for ch in bg.iter_mut() {
        let grid: Vec<f64> = (0..coarse * coarse).map(|_| rng.gen_range(0.0..0.35)).collect();
        *ch = bilinear_resize(&grid, (coarse, coarse), (side, side))?;
    }

    let mut image = Tensor::<T>::zeros(&[side, side, 3]);
    let mut gt_mask = vec![false; side * side];
    let (mut rmin, mut cmin, mut rmax, mut cmax) = (side, side, 0usize, 0usize);
    for y in 0..side {
        for x in 0..side {
            let hit = inside(shape, y as f64 - cy, x as f64 - cx, half);
            for ch in 0..3 {
                let v = if hit { color[ch] } else { bg[ch][y * side + x] };
                image.set3(y, x, ch, T::from_f64(v));
            }
            if hit {
                gt_mask[y * side + x] = true;
                rmin = rmin.min(y);
                cmin = cmin.min(x);
                rmax = rmax.max(y);
                cmax = cmax.max(x);
            }
        }
    }
    if rmin > rmax {
        return Err(Error::InvalidArgument(format!(
            "degenerate shape {shape:?} size {size} rendered no pixels"
        )));
    }
    Ok(DatasetItem { index, image, label, shape, size, gt_mask, bbox: [rmin, cmin, rmax, cmax] })
}

/// Generate `count` items; `count` must cover every class at least once.
pub fn generate_dataset<T: Scalar>(
    base_seed: u64,
    count: usize,
    side: usize,
) -> Result<Vec<DatasetItem<T>>> {
    if count < CLASS_COUNT {
        return Err(Error::InvalidArgument(format!(
            "dataset size {count} smaller than class count {CLASS_COUNT}"
        )));
    }
    (0..count as u64).map(|i| generate_item(base_seed, i, side)).collect()
}

/// Per-channel mean over every pixel of every item, used as the
/// dataset mean color for mean fillers/baselines.
pub fn dataset_mean_color<T: Scalar>(items: &[DatasetItem<T>]) -> [f64; 3] {
    let mut sums = [0.0f64; 3];
    let mut n = 0usize;
    for item in items {
        let side = item.image.dims()[0];
        for y in 0..side {
            for x in 0..side {
                for ch in 0..3 {
                    sums[ch] += item.image.at3(y, x, ch).as_f64();
                }
            }
        }
        n += side * side;
    }
    [sums[0] / n as f64, sums[1] / n as f64, sums[2] / n as f64]
}
