//! LIME: kernel-weighted ridge regression over random superpixel masks.

use crate::error::{Error, Result};
use crate::imageops::{apply_mask, SuperpixelSegmentation};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct LimeFit {
    pub intercept: f64,
    /// One coefficient per superpixel.
    pub coefficients: Vec<f64>,
}

/// Fit the local surrogate.
///
/// Masks keep each superpixel with probability 0.5; masked-out
/// superpixels are replaced by the filler via the masking equation.
/// Sample weight is exp(-D^2 / kernel_width^2) with D the fraction of
/// masked-out superpixels. Ridge penalty applies to coefficients only,
/// not the intercept.
#[allow(clippy::too_many_arguments)]
pub fn lime_coefficients<T: Scalar, F>(
    mut score: F,
    image: &Tensor<T>,
    filler: &Tensor<T>,
    seg: &SuperpixelSegmentation,
    n_samples: usize,
    seed: u64,
    kernel_width: f64,
    ridge_lambda: f64,
) -> Result<LimeFit>
where
    F: FnMut(&Tensor<T>) -> Result<f64>,
{
    if n_samples < 2 {
        return Err(Error::InvalidArgument("LIME requires at least 2 samples".into()));
    }
    let s = seg.count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept_masks: Vec<Vec<bool>> =
        (0..n_samples).map(|_| (0..s).map(|_| rng.gen_bool(0.5)).collect()).collect();
    fit_from_masks(&mut score, image, filler, seg, &kept_masks, kernel_width, ridge_lambda)
}

/// Same fit, but on an explicit mask list. The exhaustive-enumeration
/// oracle in the tests uses this to cover all 2^S masks exactly once.
pub fn fit_from_masks<T: Scalar, F>(
    score: &mut F,
    image: &Tensor<T>,
    filler: &Tensor<T>,
    seg: &SuperpixelSegmentation,
    kept_masks: &[Vec<bool>],
    kernel_width: f64,
    ridge_lambda: f64,
) -> Result<LimeFit>
where
    F: FnMut(&Tensor<T>) -> Result<f64>,
{
    let s = seg.count;
    let n = kept_masks.len();
    let p = s + 1; // intercept + one coefficient per superpixel
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut ys: Vec<f64> = Vec::with_capacity(n);
    let mut ws: Vec<f64> = Vec::with_capacity(n);
    for kept in kept_masks {
        debug_assert_eq!(kept.len(), s);
        let pixel_mask: Vec<f64> =
            seg.labels.iter().map(|&l| if kept[l as usize] { 0.0 } else { 1.0 }).collect();
        let masked = apply_mask(image, &pixel_mask, filler)?;
        ys.push(score(&masked)?);
        let masked_frac = kept.iter().filter(|&&k| !k).count() as f64 / s as f64;
        let d2 = masked_frac * masked_frac;
        ws.push((-d2 / (kernel_width * kernel_width)).exp());
        let mut row = Vec::with_capacity(p);
        row.push(1.0);
        row.extend(kept.iter().map(|&k| if k { 1.0 } else { 0.0 }));
        xs.push(row);
    }
    // normal equations: (X^T W X + lambda * diag(0,1..1)) beta = X^T W y
    let mut a = vec![vec![0.0f64; p]; p];
    let mut b = vec![0.0f64; p];
    for (row, (&y, &w)) in xs.iter().zip(ys.iter().zip(&ws)) {
        for i in 0..p {
            let wxi = w * row[i];
            b[i] += wxi * y;
            for j in 0..p {
                a[i][j] += wxi * row[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += ridge_lambda;
    }
    let beta = solve_dense(a, b)?;
    Ok(LimeFit { intercept: beta[0], coefficients: beta[1..].to_vec() })
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::InvalidArgument(
                "singular regression system (increase n_lime or ridge_lambda)".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}
