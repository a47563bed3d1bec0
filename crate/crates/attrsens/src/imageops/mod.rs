//! Image-space primitives shared by the attribution methods and metrics.

mod hog;
mod slic;

pub use hog::{hog, HogParams};
pub use slic::{slic, SuperpixelSegmentation};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Fold an out-of-range index back into [0, n) by mirror reflection
/// about the edge pixels (a b c | c b a).
#[inline]
pub(crate) fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with sigma = `radius`, kernel half-width
/// ceil(3 sigma), reflected edges. radius 0 is the identity.
pub fn gaussian_blur<T: Scalar>(image: &Tensor<T>, radius: f64) -> Result<Tensor<T>> {
    if radius < 0.0 {
        return Err(Error::InvalidArgument("blur radius must be >= 0".into()));
    }
    if radius == 0.0 {
        return Ok(image.clone());
    }
    let [h, w, c] = dims3(image)?;
    let kernel = gaussian_kernel(radius);
    let half = (kernel.len() / 2) as isize;
    // horizontal pass
    let mut tmp = Tensor::<T>::zeros(image.dims());
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = reflect(x as isize + ki as isize - half, w);
                    acc += kv * image.at3(y, sx, ch).as_f64();
                }
                tmp.set3(y, x, ch, T::from_f64(acc));
            }
        }
    }
    // vertical pass
    let mut out = Tensor::<T>::zeros(image.dims());
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = reflect(y as isize + ki as isize - half, h);
                    acc += kv * tmp.at3(sy, x, ch).as_f64();
                }
                out.set3(y, x, ch, T::from_f64(acc));
            }
        }
    }
    Ok(out)
}

/// Corner-aligned bilinear resize of a single-channel map.
pub fn bilinear_resize(map: &[f64], src: (usize, usize), dst: (usize, usize)) -> Result<Vec<f64>> {
    let (sh, sw) = src;
    let (dh, dw) = dst;
    if sh == 0 || sw == 0 || dh == 0 || dw == 0 {
        return Err(Error::InvalidArgument("resize dims must be >= 1".into()));
    }
    if map.len() != sh * sw {
        return Err(Error::ShapeMismatch {
            expected: format!("{} elements", sh * sw),
            got: format!("{}", map.len()),
        });
    }
    if (sh, sw) == (dh, dw) {
        return Ok(map.to_vec());
    }
    let scale = |di: usize, d: usize, s: usize| -> f64 {
        if d == 1 {
            0.0
        } else {
            di as f64 * (s - 1) as f64 / (d - 1) as f64
        }
    };
    let mut out = vec![0.0; dh * dw];
    for dy in 0..dh {
        let fy = scale(dy, dh, sh);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for dx in 0..dw {
            let fx = scale(dx, dw, sw);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            let v00 = map[y0 * sw + x0];
            let v01 = map[y0 * sw + x1];
            let v10 = map[y1 * sw + x0];
            let v11 = map[y1 * sw + x1];
            out[dy * dw + dx] = v00 * (1.0 - ty) * (1.0 - tx)
                + v01 * (1.0 - ty) * tx
                + v10 * ty * (1.0 - tx)
                + v11 * ty * tx;
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_resize`]: scatter a gradient on the dst grid
/// back to the src grid with the same interpolation weights.
pub fn bilinear_resize_adjoint(
    grad: &[f64],
    src: (usize, usize),
    dst: (usize, usize),
) -> Vec<f64> {
    let (sh, sw) = src;
    let (dh, dw) = dst;
    if (sh, sw) == (dh, dw) {
        return grad.to_vec();
    }
    let scale = |di: usize, d: usize, s: usize| -> f64 {
        if d == 1 {
            0.0
        } else {
            di as f64 * (s - 1) as f64 / (d - 1) as f64
        }
    };
    let mut out = vec![0.0; sh * sw];
    for dy in 0..dh {
        let fy = scale(dy, dh, sh);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for dx in 0..dw {
            let fx = scale(dx, dw, sw);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            let g = grad[dy * dw + dx];
            out[y0 * sw + x0] += g * (1.0 - ty) * (1.0 - tx);
            out[y0 * sw + x1] += g * (1.0 - ty) * tx;
            out[y1 * sw + x0] += g * ty * (1.0 - tx);
            out[y1 * sw + x1] += g * ty * tx;
        }
    }
    out
}

/// Add i.i.d. N(0, sigma^2) noise per element; no clipping.
pub fn add_gaussian_noise<T: Scalar>(image: &Tensor<T>, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    if sigma == 0.0 {
        return image.clone();
    }
    let normal = Normal::new(0.0f64, sigma).expect("sigma >= 0");
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = *v + T::from_f64(normal.sample(rng));
    }
    out
}

/// Integer translation with reflected padding. Output pixel (r, c) reads
/// input (r - ty, c - tx), so positive tau shifts content down/right.
pub fn jitter<T: Scalar>(image: &Tensor<T>, tau_x: isize, tau_y: isize) -> Result<Tensor<T>> {
    if tau_x == 0 && tau_y == 0 {
        return Ok(image.clone());
    }
    let [h, w, c] = dims3(image)?;
    let mut out = Tensor::<T>::zeros(image.dims());
    for y in 0..h {
        let sy = reflect(y as isize - tau_y, h);
        for x in 0..w {
            let sx = reflect(x as isize - tau_x, w);
            for ch in 0..c {
                out.set3(y, x, ch, image.at3(sy, sx, ch));
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`jitter`]: scatter-add output gradients back to input positions.
pub fn jitter_adjoint<T: Scalar>(grad: &Tensor<T>, tau_x: isize, tau_y: isize) -> Result<Tensor<T>> {
    if tau_x == 0 && tau_y == 0 {
        return Ok(grad.clone());
    }
    let [h, w, c] = dims3(grad)?;
    let mut out = Tensor::<T>::zeros(grad.dims());
    for y in 0..h {
        let sy = reflect(y as isize - tau_y, h);
        for x in 0..w {
            let sx = reflect(x as isize - tau_x, w);
            for ch in 0..c {
                let i = out.idx3(sy, sx, ch);
                out.data_mut()[i] = out.data()[i] + grad.at3(y, x, ch);
            }
        }
    }
    Ok(out)
}

/// The masking equation: out = x (1 - m) + z m, mask broadcast across channels.
pub fn apply_mask<T: Scalar>(image: &Tensor<T>, mask: &[f64], filler: &Tensor<T>) -> Result<Tensor<T>> {
    let [h, w, c] = dims3(image)?;
    if filler.dims() != image.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", image.dims()),
            got: format!("{:?}", filler.dims()),
        });
    }
    if mask.len() != h * w {
        return Err(Error::ShapeMismatch {
            expected: format!("{} mask elements", h * w),
            got: format!("{}", mask.len()),
        });
    }
    let mut out = Tensor::<T>::zeros(image.dims());
    for y in 0..h {
        for x in 0..w {
            let m = mask[y * w + x];
            let m_t = T::from_f64(m);
            let inv = T::from_f64(1.0 - m);
            for ch in 0..c {
                out.set3(y, x, ch, image.at3(y, x, ch) * inv + filler.at3(y, x, ch) * m_t);
            }
        }
    }
    Ok(out)
}

pub(crate) fn dims3<T: Scalar>(t: &Tensor<T>) -> Result<[usize; 3]> {
    match t.dims() {
        [h, w, c] => Ok([*h, *w, *c]),
        other => Err(Error::ShapeMismatch { expected: "3-d tensor".into(), got: format!("{other:?}") }),
    }
}
