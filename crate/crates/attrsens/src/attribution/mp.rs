//! Meaningful Perturbation: gradient descent on a low-resolution soft
//! mask minimizing  lambda1 |m|_1 + lambda2 TV(m) + f(jitter(masked image)).

use super::MethodSpec;
use crate::error::{Error, Result};
use crate::harness::seed_for;
use crate::imageops::{
    apply_mask, bilinear_resize, bilinear_resize_adjoint, gaussian_blur, jitter, jitter_adjoint,
};
use crate::nn::MicroClassifier;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const TAG_MP_JITTER: u64 = 0x4d50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpInit {
    /// Centered disk grown until the target score drops below 1% of the
    /// clean score (all-ones if unattainable).
    Circular,
    /// Uniform random mask in [0,1] from the spec seed.
    Random,
}

struct MpProblem<'a, T: Scalar> {
    model: &'a MicroClassifier<T>,
    image: &'a Tensor<T>,
    blurred: Tensor<T>,
    class: usize,
    lambda1: f64,
    lambda2: f64,
    mask_side: usize,
    image_side: usize,
}

impl<T: Scalar> MpProblem<'_, T> {
    fn perturbed(&self, mask: &[f64]) -> Result<Tensor<T>> {
        let up = bilinear_resize(
            mask,
            (self.mask_side, self.mask_side),
            (self.image_side, self.image_side),
        )?;
        apply_mask(self.image, &up, &self.blurred)
    }

    fn objective(&self, mask: &[f64], tau: (isize, isize)) -> Result<f64> {
        let l1: f64 = mask.iter().map(|v| v.abs()).sum();
        let tv = tv_norm(mask, self.mask_side);
        let jittered = jitter(&self.perturbed(mask)?, tau.0, tau.1)?;
        let score = self.model.forward(&jittered)?[self.class].as_f64();
        Ok(self.lambda1 * l1 + self.lambda2 * tv + score)
    }

    fn gradient(&self, mask: &[f64], tau: (isize, isize)) -> Result<Vec<f64>> {
        let jittered = jitter(&self.perturbed(mask)?, tau.0, tau.1)?;
        let g = self.model.input_gradient_prob(&jittered, self.class)?;
        let g = jitter_adjoint(&g, tau.0, tau.1)?;
        // d perturbed / d upsampled-mask = blurred - image, channel-summed
        let d = self.image_side;
        let mut d_up = vec![0.0; d * d];
        for y in 0..d {
            for x in 0..d {
                let mut acc = 0.0;
                for ch in 0..self.image.dims()[2] {
                    acc += g.at3(y, x, ch).as_f64()
                        * (self.blurred.at3(y, x, ch).as_f64() - self.image.at3(y, x, ch).as_f64());
                }
                d_up[y * d + x] = acc;
            }
        }
        let mut grad =
            bilinear_resize_adjoint(&d_up, (self.mask_side, self.mask_side), (d, d));
        let n = self.mask_side;
        for (g, m) in grad.iter_mut().zip(mask) {
            *g += self.lambda1 * sign(*m);
        }
        // anisotropic TV subgradient, 0 at ties
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                if x + 1 < n {
                    let s = sign(mask[i + 1] - mask[i]);
                    grad[i] -= self.lambda2 * s;
                    grad[i + 1] += self.lambda2 * s;
                }
                if y + 1 < n {
                    let s = sign(mask[i + n] - mask[i]);
                    grad[i] -= self.lambda2 * s;
                    grad[i + n] += self.lambda2 * s;
                }
            }
        }
        Ok(grad)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Anisotropic total variation: L1 of forward differences.
pub fn tv_norm(mask: &[f64], side: usize) -> f64 {
    let mut acc = 0.0;
    for y in 0..side {
        for x in 0..side {
            let i = y * side + x;
            if x + 1 < side {
                acc += (mask[i + 1] - mask[i]).abs();
            }
            if y + 1 < side {
                acc += (mask[i + side] - mask[i]).abs();
            }
        }
    }
    acc
}

fn circular_init<T: Scalar>(problem: &MpProblem<'_, T>) -> Result<Vec<f64>> {
    let n = problem.mask_side;
    let clean = problem.model.forward(problem.image)?[problem.class].as_f64();
    let target = 0.01 * clean;
    let center = (n as f64 - 1.0) / 2.0;
    let max_r = center * std::f64::consts::SQRT_2 + 1.0;
    let steps = 2 * n;
    for k in 0..=steps {
        let r = max_r * k as f64 / steps as f64;
        let mask: Vec<f64> = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64, (i % n) as f64);
                let d2 = (y - center).powi(2) + (x - center).powi(2);
                if d2.sqrt() <= r {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let score = problem.model.forward(&problem.perturbed(&mask)?)?[problem.class].as_f64();
        if score <= target {
            return Ok(mask);
        }
    }
    Ok(vec![1.0; n * n])
}

/// Run the MP optimization; returns the final mask upsampled to image
/// resolution, in [0, 1].
pub fn meaningful_perturbation<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    spec: &MethodSpec,
) -> Result<Vec<f64>> {
    let MethodSpec::MeaningfulPerturbation {
        b_r,
        n_iter,
        lambda1,
        lambda2,
        mask_side,
        jitter_extent,
        learning_rate,
        init,
        seed,
    } = spec
    else {
        unreachable!()
    };
    if *n_iter == 0 || *mask_side == 0 {
        return Err(Error::InvalidArgument("MP requires n_iter, mask_side >= 1".into()));
    }
    let d = image.dims()[0];
    let problem = MpProblem {
        model,
        image,
        blurred: gaussian_blur(image, *b_r)?,
        class,
        lambda1: *lambda1,
        lambda2: *lambda2,
        mask_side: *mask_side,
        image_side: d,
    };
    let mut mask = match init {
        MpInit::Circular => circular_init(&problem)?,
        MpInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..mask_side * mask_side).map(|_| rng.gen_range(0.0..1.0)).collect()
        }
    };
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed_for(*seed, 0, 0, TAG_MP_JITTER));
    for step in 0..*n_iter {
        let tau = if *jitter_extent > 0 {
            (
                jitter_rng.gen_range(0..=*jitter_extent as isize),
                jitter_rng.gen_range(0..=*jitter_extent as isize),
            )
        } else {
            (0, 0)
        };
        let grad = problem.gradient(&mask, tau)?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NanObjective { step });
        }
        for (m, g) in mask.iter_mut().zip(&grad) {
            *m = (*m - learning_rate * g).clamp(0.0, 1.0);
        }
    }
    bilinear_resize(&mask, (*mask_side, *mask_side), (d, d))
}

#[doc(hidden)]
pub fn mp_objective<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    b_r: f64,
    lambda1: f64,
    lambda2: f64,
    mask_side: usize,
    mask: &[f64],
    tau: (isize, isize),
) -> Result<f64> {
    let problem = MpProblem {
        model,
        image,
        blurred: gaussian_blur(image, b_r)?,
        class,
        lambda1,
        lambda2,
        mask_side,
        image_side: image.dims()[0],
    };
    problem.objective(mask, tau)
}

#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
pub fn mp_mask_gradient<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    b_r: f64,
    lambda1: f64,
    lambda2: f64,
    mask_side: usize,
    mask: &[f64],
    tau: (isize, isize),
) -> Result<Vec<f64>> {
    let problem = MpProblem {
        model,
        image,
        blurred: gaussian_blur(image, b_r)?,
        class,
        lambda1,
        lambda2,
        mask_side,
        image_side: image.dims()[0],
    };
    problem.gradient(mask, tau)
}
