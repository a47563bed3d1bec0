//! Similarity metrics between attribution maps and explanation-accuracy
//! metrics against the model and ground truth.

use crate::error::{Error, Result};
use crate::imageops::{hog, HogParams};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// A metric value plus a flag marking the degenerate (zero-variance)
/// case, which is defined as 0 rather than NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub degenerate: bool,
}

impl MetricValue {
    fn ok(value: f64) -> Self {
        Self { value, degenerate: false }
    }
    fn degenerate() -> Self {
        Self { value: 0.0, degenerate: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTriple {
    pub spearman: f64,
    pub pearson_hog: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyScores {
    pub localization_error: f64,
    pub deletion_auc: f64,
    pub insertion_auc: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> MetricValue {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return MetricValue::degenerate();
    }
    MetricValue::ok(num / (va * vb).sqrt())
}

/// Average fractional ranks with ties averaged.
fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap().then(i.cmp(&j)));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> MetricValue {
    pearson(&ranks(a), &ranks(b))
}

/// Pearson correlation of HOG feature vectors.
pub fn pearson_hog(a: &[f64], b: &[f64], side: usize, params: HogParams) -> MetricValue {
    pearson(&hog(a, side, params), &hog(b, side, params))
}

/// Mean local SSIM with a 7x7 uniform window over fully-interior
/// positions; C1 = (0.01 R)^2, C2 = (0.03 R)^2 with R the joint data range.
pub fn ssim(a: &[f64], b: &[f64], side: usize) -> MetricValue {
    assert_eq!(a.len(), side * side);
    assert_eq!(a.len(), b.len());
    let min = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let max = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range == 0.0 {
        // both maps constant and equal
        return MetricValue::ok(1.0);
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let win = 7usize.min(side);
    let nw = win * win;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=side - win {
        for x0 in 0..=side - win {
            let mut sa = 0.0;
            let mut sb = 0.0;
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    sa += a[y * side + x];
                    sb += b[y * side + x];
                }
            }
            let mu_a = sa / nw as f64;
            let mu_b = sb / nw as f64;
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let da = a[y * side + x] - mu_a;
                    let db = b[y * side + x] - mu_b;
                    var_a += da * da;
                    var_b += db * db;
                    cov += da * db;
                }
            }
            // unbiased estimators over the window
            let denom = (nw - 1) as f64;
            var_a /= denom;
            var_b /= denom;
            cov /= denom;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    MetricValue::ok(total / count as f64)
}

/// All three similarity metrics on one map pair.
pub fn similarity_triple(a: &[f64], b: &[f64], side: usize) -> SimilarityTriple {
    SimilarityTriple {
        spearman: spearman(a, b).value,
        pearson_hog: pearson_hog(a, b, side, HogParams::default()).value,
        ssim: ssim(a, b, side).value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    /// Signed attribution, descending (the default).
    Signed,
    /// Absolute attribution, descending.
    Absolute,
}

/// Pixel order for deletion/insertion: descending attribution, ties
/// broken by row-major index.
fn pixel_order(map: &[f64], order: RankOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..map.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = match order {
            RankOrder::Signed => (map[i], map[j]),
            RankOrder::Absolute => (map[i].abs(), map[j].abs()),
        };
        b.partial_cmp(&a).unwrap().then(i.cmp(&j))
    });
    idx
}

fn trapezoid(ys: &[f64]) -> f64 {
    let steps = ys.len() - 1;
    let mut auc = 0.0;
    for k in 0..steps {
        auc += (ys[k] + ys[k + 1]) / 2.0;
    }
    auc / steps as f64
}

/// Deletion curve AUC: zero out pixels in descending-attribution order,
/// recording the score at steps+1 points including both endpoints.
pub fn deletion<T: Scalar>(
    score: &mut dyn FnMut(&Tensor<T>) -> Result<f64>,
    image: &Tensor<T>,
    map: &[f64],
    steps: usize,
    order: RankOrder,
) -> Result<f64> {
    if steps < 1 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let npix = map.len();
    let idx = pixel_order(map, order);
    let channels = image.dims()[2];
    let side = image.dims()[1];
    let mut current = image.clone();
    let mut ys = Vec::with_capacity(steps + 1);
    ys.push(score(&current)?);
    let mut removed = 0usize;
    for k in 1..=steps {
        let target = k * npix / steps;
        while removed < target {
            let p = idx[removed];
            let (y, x) = (p / side, p % side);
            for ch in 0..channels {
                current.set3(y, x, ch, T::zero());
            }
            removed += 1;
        }
        ys.push(score(&current)?);
    }
    Ok(trapezoid(&ys))
}

/// Insertion curve AUC: mirror of deletion, starting from the all-zero
/// image and restoring original pixel values in descending order.
pub fn insertion<T: Scalar>(
    score: &mut dyn FnMut(&Tensor<T>) -> Result<f64>,
    image: &Tensor<T>,
    map: &[f64],
    steps: usize,
    order: RankOrder,
) -> Result<f64> {
    if steps < 1 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let npix = map.len();
    let idx = pixel_order(map, order);
    let channels = image.dims()[2];
    let side = image.dims()[1];
    let mut current = Tensor::<T>::zeros(image.dims());
    let mut ys = Vec::with_capacity(steps + 1);
    ys.push(score(&current)?);
    let mut inserted = 0usize;
    for k in 1..=steps {
        let target = k * npix / steps;
        while inserted < target {
            let p = idx[inserted];
            let (y, x) = (p / side, p % side);
            for ch in 0..channels {
                current.set3(y, x, ch, image.at3(y, x, ch));
            }
            inserted += 1;
        }
        ys.push(score(&current)?);
    }
    Ok(trapezoid(&ys))
}

fn bounding_box(mask: &[bool], side: usize) -> Option<(usize, usize, usize, usize)> {
    let mut found = None;
    for y in 0..side {
        for x in 0..side {
            if mask[y * side + x] {
                let (y0, x0, y1, x1) = found.unwrap_or((y, x, y, x));
                found = Some((y0.min(y), x0.min(x), y1.max(y), x1.max(x)));
            }
        }
    }
    found
}

fn largest_component(mask: &[bool], side: usize) -> Vec<bool> {
    let n = mask.len();
    let mut visited = vec![false; n];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..n {
        if !mask[start] || visited[start] {
            continue;
        }
        let mut stack = vec![start];
        visited[start] = true;
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (y, x) = (i / side, i % side);
            let mut push = |j: usize| {
                if mask[j] && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                push(i - side);
            }
            if y + 1 < side {
                push(i + side);
            }
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < side {
                push(i + 1);
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    let mut out = vec![false; n];
    for i in best {
        out[i] = true;
    }
    out
}

fn box_iou(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let (ay0, ax0, ay1, ax1) = a;
    let (by0, bx0, by1, bx1) = b;
    let iy0 = ay0.max(by0);
    let ix0 = ax0.max(bx0);
    let iy1 = ay1.min(by1);
    let ix1 = ax1.min(bx1);
    let inter = if iy1 >= iy0 && ix1 >= ix0 { (iy1 - iy0 + 1) * (ix1 - ix0 + 1) } else { 0 };
    let area_a = (ay1 - ay0 + 1) * (ax1 - ax0 + 1);
    let area_b = (by1 - by0 + 1) * (bx1 - bx0 + 1);
    inter as f64 / (area_a + area_b - inter) as f64
}

/// 1 - IoU between the box of the largest component of |map| >= 0.2 max
/// and the ground-truth bounding box.
pub fn localization_error(map: &[f64], side: usize, gt_mask: &[bool]) -> Result<f64> {
    let gt_box = bounding_box(gt_mask, side)
        .ok_or_else(|| Error::InvalidArgument("empty ground-truth mask".into()))?;
    let max_abs = map.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(1.0);
    }
    let thresh = 0.2 * max_abs;
    let binary: Vec<bool> = map.iter().map(|v| v.abs() >= thresh).collect();
    let component = largest_component(&binary, side);
    match bounding_box(&component, side) {
        Some(map_box) => Ok(1.0 - box_iou(map_box, gt_box)),
        None => Ok(1.0),
    }
}

pub fn accuracy_scores<T: Scalar>(
    score: &mut dyn FnMut(&Tensor<T>) -> Result<f64>,
    image: &Tensor<T>,
    map: &[f64],
    gt_mask: &[bool],
    steps: usize,
) -> Result<AccuracyScores> {
    let side = image.dims()[0];
    Ok(AccuracyScores {
        localization_error: localization_error(map, side, gt_mask)?,
        deletion_auc: deletion(score, image, map, steps, RankOrder::Signed)?,
        insertion_auc: insertion(score, image, map, steps, RankOrder::Signed)?,
    })
}
