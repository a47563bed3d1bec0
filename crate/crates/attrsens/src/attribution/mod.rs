//! The eight attribution methods, each a pure function
//! (model, image, spec) -> AttributionMap.

mod lime;
mod mp;

pub use lime::{fit_from_masks, lime_coefficients, LimeFit};
pub use mp::{mp_mask_gradient, mp_objective, MpInit};

use crate::error::{Error, Result};
use crate::harness::seed_for;
use crate::imageops::{add_gaussian_noise, bilinear_resize, slic};
use crate::nn::MicroClassifier;
use crate::tensor::{Scalar, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub(crate) const TAG_IG_TRIAL: u64 = 0x4947;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTag {
    /// Values in [-1, 1].
    SignedUnit,
    /// Values in [0, 1] (MP masks).
    MaskUnit,
}

/// A d x d attribution map in its method-specific canonical range.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub values: Vec<f64>,
    pub side: usize,
    pub range_tag: RangeTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Zero,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filler {
    Zero,
    Mean,
}

fn default_kernel_width() -> f64 {
    0.25
}
fn default_ridge_lambda() -> f64 {
    1e-3
}
fn default_compactness() -> f64 {
    10.0
}
fn default_baseline_jitter_sigma() -> f64 {
    0.1
}
fn one() -> usize {
    1
}

/// Tagged union of per-method hyperparameter records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MethodSpec {
    Gradient {},
    GradientInput {},
    GuidedBackprop {},
    SmoothGrad {
        n_sg: usize,
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    IntegratedGradients {
        n_ig: usize,
        #[serde(default = "one")]
        n_t: usize,
        baseline: Baseline,
        #[serde(default)]
        seed: u64,
        /// Std of the per-trial noise added to a mean baseline; the paper's
        /// inter-trial randomness source is unstated, this is the
        /// configurable interpretation.
        #[serde(default = "default_baseline_jitter_sigma")]
        baseline_jitter_sigma: f64,
    },
    SlidingPatch {
        p: usize,
        s: usize,
        filler: Filler,
    },
    Lime {
        s: usize,
        n_lime: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_kernel_width")]
        kernel_width: f64,
        #[serde(default = "default_ridge_lambda")]
        ridge_lambda: f64,
        #[serde(default = "default_compactness")]
        compactness: f64,
        #[serde(default)]
        filler: Option<Filler>,
    },
    MeaningfulPerturbation {
        b_r: f64,
        n_iter: usize,
        lambda1: f64,
        lambda2: f64,
        mask_side: usize,
        jitter_extent: usize,
        learning_rate: f64,
        init: MpInit,
        #[serde(default)]
        seed: u64,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Gradient {} => "Gradient",
            MethodSpec::GradientInput {} => "GradientInput",
            MethodSpec::GuidedBackprop {} => "GuidedBackprop",
            MethodSpec::SmoothGrad { .. } => "SmoothGrad",
            MethodSpec::IntegratedGradients { .. } => "IntegratedGradients",
            MethodSpec::SlidingPatch { .. } => "SlidingPatch",
            MethodSpec::Lime { .. } => "Lime",
            MethodSpec::MeaningfulPerturbation { .. } => "MeaningfulPerturbation",
        }
    }
}

/// Ambient values some methods need beyond the image itself.
#[derive(Debug, Clone, Copy)]
pub struct AttrContext {
    /// Filler/baseline color for the `mean` settings (dataset mean).
    pub mean_color: [f64; 3],
}

impl Default for AttrContext {
    fn default() -> Self {
        Self { mean_color: [0.5, 0.5, 0.5] }
    }
}

/// Canonical normalization: gradient-family maps are divided by their
/// max absolute value (zero stays zero); SP is clipped to [-1, 1]; MP
/// masks pass through unchanged.
pub fn normalize(raw: Vec<f64>, side: usize, method: &MethodSpec) -> AttributionMap {
    match method {
        MethodSpec::MeaningfulPerturbation { .. } => {
            AttributionMap { values: raw, side, range_tag: RangeTag::MaskUnit }
        }
        MethodSpec::SlidingPatch { .. } => AttributionMap {
            values: raw.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            side,
            range_tag: RangeTag::SignedUnit,
        },
        _ => {
            let max_abs = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let values = if max_abs == 0.0 {
                raw
            } else {
                raw.into_iter().map(|v| v / max_abs).collect()
            };
            AttributionMap { values, side, range_tag: RangeTag::SignedUnit }
        }
    }
}

fn channel_sum<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    let [h, w, c] = [t.dims()[0], t.dims()[1], t.dims()[2]];
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += t.at3(y, x, ch).as_f64();
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn side_of<T: Scalar>(image: &Tensor<T>) -> usize {
    image.dims()[0]
}

/// Raw (pre-normalization) gradient map, channel-summed.
pub fn gradient_raw<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
) -> Result<Vec<f64>> {
    Ok(channel_sum(&model.input_gradient(image, class)?))
}

/// Raw gradient-times-input map, channel-summed.
pub fn gradient_input_raw<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
) -> Result<Vec<f64>> {
    let mut g = model.input_gradient(image, class)?;
    for (gv, xv) in g.data_mut().iter_mut().zip(image.data()) {
        *gv = *gv * *xv;
    }
    Ok(channel_sum(&g))
}

pub fn guided_raw<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
) -> Result<Vec<f64>> {
    Ok(channel_sum(&model.guided_input_gradient(image, class)?))
}

/// Raw SmoothGrad map: average of `n_sg` gradients at noisy inputs.
pub fn smoothgrad_raw<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    n_sg: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_sg == 0 {
        return Err(Error::InvalidArgument("SmoothGrad requires n_sg >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = side_of(image);
    let mut acc = vec![0.0; side * side];
    for _ in 0..n_sg {
        let noisy = add_gaussian_noise(image, sigma, &mut rng);
        let g = gradient_raw(model, &noisy, class)?;
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n_sg as f64;
    }
    Ok(acc)
}

fn baseline_image<T: Scalar>(
    image: &Tensor<T>,
    baseline: Baseline,
    ctx: &AttrContext,
    jitter_sigma: f64,
    trial_seed: u64,
) -> Tensor<T> {
    match baseline {
        Baseline::Zero => Tensor::zeros(image.dims()),
        Baseline::Mean => {
            let side = side_of(image);
            let mut base = Tensor::<T>::zeros(image.dims());
            for y in 0..side {
                for x in 0..side {
                    for ch in 0..3usize.min(image.dims()[2]) {
                        base.set3(y, x, ch, T::from_f64(ctx.mean_color[ch]));
                    }
                }
            }
            if jitter_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                base = add_gaussian_noise(&base, jitter_sigma, &mut rng);
            }
            base
        }
    }
}

/// Raw Integrated Gradients map: per trial, a midpoint Riemann sum of
/// logit gradients along the baseline-to-image path, times (x - baseline),
/// channel-summed; averaged over trials.
#[allow(clippy::too_many_arguments)]
pub fn integrated_gradients_raw<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    n_ig: usize,
    n_t: usize,
    baseline: Baseline,
    seed: u64,
    baseline_jitter_sigma: f64,
    ctx: &AttrContext,
) -> Result<Vec<f64>> {
    if n_ig == 0 || n_t == 0 {
        return Err(Error::InvalidArgument("IntegratedGradients requires n_ig, n_t >= 1".into()));
    }
    let side = side_of(image);
    let mut acc = vec![0.0; side * side];
    for trial in 0..n_t {
        let base = baseline_image(
            image,
            baseline,
            ctx,
            baseline_jitter_sigma,
            seed_for(seed, trial as u64, 0, TAG_IG_TRIAL),
        );
        let mut avg_grad = Tensor::<T>::zeros(image.dims());
        for k in 0..n_ig {
            let alpha = T::from_f64((k as f64 + 0.5) / n_ig as f64);
            let mut point = base.clone();
            for (pv, (xv, bv)) in
                point.data_mut().iter_mut().zip(image.data().iter().zip(base.data()))
            {
                *pv = *bv + alpha * (*xv - *bv);
            }
            let g = model.input_gradient(&point, class)?;
            for (a, v) in avg_grad.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *v;
            }
        }
        let inv = T::from_f64(1.0 / n_ig as f64);
        for ((a, xv), bv) in avg_grad.data_mut().iter_mut().zip(image.data()).zip(base.data()) {
            *a = *a * inv * (*xv - *bv);
        }
        for (o, v) in acc.iter_mut().zip(channel_sum(&avg_grad)) {
            *o += v;
        }
    }
    for v in &mut acc {
        *v /= n_t as f64;
    }
    Ok(acc)
}

fn filler_image<T: Scalar>(image: &Tensor<T>, filler: Filler, ctx: &AttrContext) -> Tensor<T> {
    match filler {
        Filler::Zero => Tensor::zeros(image.dims()),
        Filler::Mean => {
            let mut out = Tensor::<T>::zeros(image.dims());
            let side = side_of(image);
            for y in 0..side {
                for x in 0..side {
                    for ch in 0..image.dims()[2].min(3) {
                        out.set3(y, x, ch, T::from_f64(ctx.mean_color[ch]));
                    }
                }
            }
            out
        }
    }
}

/// Coarse sliding-patch grid of probability drops f(x) - f(x_masked),
/// before upsampling. Grid side is floor((d - p) / s) + 1.
pub fn sliding_patch_grid<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    p: usize,
    s: usize,
    filler: Filler,
    ctx: &AttrContext,
) -> Result<(Vec<f64>, usize)> {
    let d = side_of(image);
    if p > d {
        return Err(Error::InvalidArgument(format!("patch side {p} exceeds image side {d}")));
    }
    if s == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let grid = (d - p) / s + 1;
    let z = filler_image(image, filler, ctx);
    let f_clean = model.forward(image)?[class].as_f64();
    let mut out = vec![0.0; grid * grid];
    for gy in 0..grid {
        for gx in 0..grid {
            let mut masked = image.clone();
            for y in gy * s..gy * s + p {
                for x in gx * s..gx * s + p {
                    for ch in 0..image.dims()[2] {
                        masked.set3(y, x, ch, z.at3(y, x, ch));
                    }
                }
            }
            let f_masked = model.forward(&masked)?[class].as_f64();
            out[gy * grid + gx] = f_clean - f_masked;
        }
    }
    Ok((out, grid))
}

pub fn sliding_patch_raw<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    p: usize,
    s: usize,
    filler: Filler,
    ctx: &AttrContext,
) -> Result<Vec<f64>> {
    let d = side_of(image);
    let (grid_vals, grid) = sliding_patch_grid(model, image, class, p, s, filler, ctx)?;
    bilinear_resize(&grid_vals, (grid, grid), (d, d))
}

fn lime_raw<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    spec: &MethodSpec,
    ctx: &AttrContext,
) -> Result<Vec<f64>> {
    let MethodSpec::Lime { s, n_lime, seed, kernel_width, ridge_lambda, compactness, filler } =
        spec
    else {
        unreachable!()
    };
    if *n_lime < 2 {
        return Err(Error::InvalidArgument("LIME requires n_lime >= 2".into()));
    }
    let seg = slic(image, *s, *compactness, *seed)?;
    let z = filler_image(image, filler.unwrap_or(Filler::Mean), ctx);
    let fit = lime_coefficients(
        |masked| Ok(model.forward(masked)?[class].as_f64()),
        image,
        &z,
        &seg,
        *n_lime,
        *seed,
        *kernel_width,
        *ridge_lambda,
    )?;
    let mut out = vec![0.0; seg.labels.len()];
    for (o, &l) in out.iter_mut().zip(&seg.labels) {
        *o = fit.coefficients[l as usize];
    }
    Ok(out)
}

/// Compute the attribution map for `method`, canonically normalized.
pub fn attribute<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
    class: usize,
    method: &MethodSpec,
    ctx: &AttrContext,
) -> Result<AttributionMap> {
    let side = side_of(image);
    let raw = match method {
        MethodSpec::Gradient {} => gradient_raw(model, image, class)?,
        MethodSpec::GradientInput {} => gradient_input_raw(model, image, class)?,
        MethodSpec::GuidedBackprop {} => guided_raw(model, image, class)?,
        MethodSpec::SmoothGrad { n_sg, sigma, seed } => {
            smoothgrad_raw(model, image, class, *n_sg, *sigma, *seed)?
        }
        MethodSpec::IntegratedGradients { n_ig, n_t, baseline, seed, baseline_jitter_sigma } => {
            integrated_gradients_raw(
                model,
                image,
                class,
                *n_ig,
                *n_t,
                *baseline,
                *seed,
                *baseline_jitter_sigma,
                ctx,
            )?
        }
        MethodSpec::SlidingPatch { p, s, filler } => {
            sliding_patch_raw(model, image, class, *p, *s, *filler, ctx)?
        }
        MethodSpec::Lime { .. } => lime_raw(model, image, class, method, ctx)?,
        MethodSpec::MeaningfulPerturbation { .. } => {
            mp::meaningful_perturbation(model, image, class, method)?
        }
    };
    Ok(normalize(raw, side, method))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use rand::Rng;

    fn linear_model(weight: Vec<f64>, classes: usize, side: usize) -> MicroClassifier<f64> {
        let in_dim = side * side * 3;
        MicroClassifier::new(
            vec![
                Layer::Flatten,
                Layer::Dense { in_dim, out_dim: classes, weight, bias: vec![0.0; classes] },
            ],
            side,
            3,
        )
        .unwrap()
    }

    fn random_image(side: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![side, side, 3],
            (0..side * side * 3).map(|_| rng.gen_range(0.05..0.95)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_zero_map_stays_zero() {
        let m = normalize(vec![0.0; 16], 4, &MethodSpec::Gradient {});
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_divides_by_max_abs() {
        let m = normalize(vec![1.0, -4.0, 2.0, 0.0], 2, &MethodSpec::Gradient {});
        assert_eq!(m.values, vec![0.25, -1.0, 0.5, 0.0]);
    }

    #[test]
    fn normalize_mp_mask_unchanged() {
        let raw = vec![0.1, 0.9, 0.5, 0.0];
        let spec = MethodSpec::MeaningfulPerturbation {
            b_r: 2.0,
            n_iter: 1,
            lambda1: 0.0,
            lambda2: 0.0,
            mask_side: 2,
            jitter_extent: 0,
            learning_rate: 0.1,
            init: MpInit::Circular,
            seed: 0,
        };
        let m = normalize(raw.clone(), 2, &spec);
        assert_eq!(m.values, raw);
        assert_eq!(m.range_tag, RangeTag::MaskUnit);
    }

    #[test]
    fn gi_zero_image_gives_zero_map() {
        let m = linear_model(vec![0.3; 2 * 48], 2, 4);
        let img = Tensor::zeros(&[4, 4, 3]);
        let raw = gradient_input_raw(&m, &img, 0).unwrap();
        assert!(raw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_closed_forms_for_gradient_and_gi() {
        let side = 3;
        let in_dim = side * side * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let weight: Vec<f64> = (0..2 * in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = linear_model(weight.clone(), 2, side);
        let img = random_image(side, 3);
        let g = gradient_raw(&m, &img, 1).unwrap();
        let gi = gradient_input_raw(&m, &img, 1).unwrap();
        for y in 0..side {
            for x in 0..side {
                let mut wsum = 0.0;
                let mut wxsum = 0.0;
                for ch in 0..3 {
                    let i = (y * side + x) * 3 + ch;
                    wsum += weight[in_dim + i];
                    wxsum += weight[in_dim + i] * img.at3(y, x, ch);
                }
                assert!((g[y * side + x] - wsum).abs() < 1e-12);
                assert!((gi[y * side + x] - wxsum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gi_equals_elementwise_product_of_parts() {
        let m = MicroClassifier::<f64>::reference(8, 3, 4);
        let img = random_image(8, 5);
        let gi = gradient_input_raw(&m, &img, 1).unwrap();
        let mut g = m.input_gradient(&img, 1).unwrap();
        for (gv, xv) in g.data_mut().iter_mut().zip(img.data()) {
            *gv *= *xv;
        }
        let oracle = channel_sum(&g);
        for (a, b) in gi.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothgrad_sigma_zero_equals_gradient() {
        let m = MicroClassifier::<f64>::reference(8, 3, 6);
        let img = random_image(8, 7);
        let sg = smoothgrad_raw(&m, &img, 2, 5, 0.0, 9).unwrap();
        let g = gradient_raw(&m, &img, 2).unwrap();
        for (a, b) in sg.iter().zip(&g) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothgrad_linear_model_equals_gradient() {
        let side = 4;
        let in_dim = side * side * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let weight: Vec<f64> = (0..2 * in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = linear_model(weight, 2, side);
        let img = random_image(side, 9);
        let sg = smoothgrad_raw(&m, &img, 0, 16, 0.3, 1).unwrap();
        let g = gradient_raw(&m, &img, 0).unwrap();
        for (a, b) in sg.iter().zip(&g) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothgrad_matches_hand_rolled_loop_oracle() {
        let m = MicroClassifier::<f64>::reference(8, 3, 10);
        let img = random_image(8, 11);
        let (n_sg, sigma, seed) = (4, 0.2, 13);
        let sg = smoothgrad_raw(&m, &img, 1, n_sg, sigma, seed).unwrap();
        // oracle: same rng stream, explicit loop over input_gradient calls
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = vec![0.0; 64];
        for _ in 0..n_sg {
            let noisy = add_gaussian_noise(&img, sigma, &mut rng);
            let g = channel_sum(&m.input_gradient(&noisy, 1).unwrap());
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v / n_sg as f64;
            }
        }
        for (a, b) in sg.iter().zip(&acc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ig_zero_when_image_equals_baseline() {
        let m = MicroClassifier::<f64>::reference(8, 3, 12);
        let img = Tensor::zeros(&[8, 8, 3]);
        let ctx = AttrContext::default();
        let ig =
            integrated_gradients_raw(&m, &img, 0, 8, 1, Baseline::Zero, 0, 0.0, &ctx).unwrap();
        assert!(ig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ig_on_linear_model_equals_gi() {
        let side = 4;
        let in_dim = side * side * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let weight: Vec<f64> = (0..2 * in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = linear_model(weight, 2, side);
        let img = random_image(side, 15);
        let ctx = AttrContext::default();
        let ig = integrated_gradients_raw(&m, &img, 1, 3, 1, Baseline::Zero, 0, 0.0, &ctx).unwrap();
        let gi = gradient_input_raw(&m, &img, 1).unwrap();
        for (a, b) in ig.iter().zip(&gi) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ig_completeness_on_reference_net() {
        let m = MicroClassifier::<f64>::reference(8, 4, 16);
        let img = random_image(8, 17);
        let ctx = AttrContext::default();
        let ig =
            integrated_gradients_raw(&m, &img, 2, 300, 1, Baseline::Zero, 0, 0.0, &ctx).unwrap();
        let total: f64 = ig.iter().sum();
        let zero = Tensor::zeros(&[8, 8, 3]);
        let diff = m.logits(&img).unwrap()[2] - m.logits(&zero).unwrap()[2];
        assert!((total - diff).abs() <= 0.01 * diff.abs().max(1e-12), "{total} vs {diff}");
    }

    #[test]
    fn sp_grid_arithmetic_matches_formula() {
        // d=224, p=29, s=3 -> d'=66
        assert_eq!((224 - 29) / 3 + 1, 66);
    }

    #[test]
    fn sp_constant_classifier_gives_zero_map() {
        // zero-weight model: probabilities constant regardless of input
        let m = linear_model(vec![0.0; 2 * 48], 2, 4);
        let img = random_image(4, 18);
        let ctx = AttrContext::default();
        let raw = sliding_patch_raw(&m, &img, 0, 2, 1, Filler::Zero, &ctx).unwrap();
        assert!(raw.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn sp_grid_matches_brute_force_occlusion_oracle() {
        let m = MicroClassifier::<f64>::reference(8, 3, 19);
        let img = random_image(8, 20);
        let ctx = AttrContext::default();
        let (grid_vals, grid) = sliding_patch_grid(&m, &img, 1, 3, 1, Filler::Zero, &ctx).unwrap();
        assert_eq!(grid, 6);
        let f_clean = m.forward(&img).unwrap()[1];
        for gy in 0..grid {
            for gx in 0..grid {
                let mut masked = img.clone();
                for y in gy..gy + 3 {
                    for x in gx..gx + 3 {
                        for ch in 0..3 {
                            masked.set3(y, x, ch, 0.0);
                        }
                    }
                }
                let expect = f_clean - m.forward(&masked).unwrap()[1];
                assert!((grid_vals[gy * grid + gx] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sp_rejects_bad_patch_and_stride() {
        let m = MicroClassifier::<f64>::reference(8, 3, 21);
        let img = random_image(8, 22);
        let ctx = AttrContext::default();
        assert!(sliding_patch_raw(&m, &img, 0, 9, 1, Filler::Zero, &ctx).is_err());
        assert!(sliding_patch_raw(&m, &img, 0, 3, 0, Filler::Zero, &ctx).is_err());
    }

    #[test]
    fn lime_constant_classifier_gives_zero_coefficients() {
        // raw coefficients, not the normalized map: normalization
        // rescales numerically-zero maps by their own max
        let img = random_image(16, 23);
        let seg = slic(&img, 8, 10.0, 0).unwrap();
        let z = Tensor::<f64>::full(&[16, 16, 3], 0.5);
        let fit = lime_coefficients(
            |_m: &Tensor<f64>| Ok(0.5),
            &img,
            &z,
            &seg,
            32,
            1,
            0.25,
            1e-3,
        )
        .unwrap();
        assert!((fit.intercept - 0.5).abs() < 1e-9);
        assert!(fit.coefficients.iter().all(|&v| v.abs() < 1e-9), "{:?}", fit.coefficients);
    }

    #[test]
    fn lime_is_deterministic_per_seed() {
        let m = MicroClassifier::<f64>::reference(16, 3, 24);
        let img = random_image(16, 25);
        let ctx = AttrContext::default();
        let spec = MethodSpec::Lime {
            s: 6,
            n_lime: 24,
            seed: 7,
            kernel_width: 0.25,
            ridge_lambda: 1e-3,
            compactness: 10.0,
            filler: None,
        };
        let a = attribute(&m, &img, 1, &spec, &ctx).unwrap();
        let b = attribute(&m, &img, 1, &spec, &ctx).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lime_rejects_too_few_samples() {
        let m = MicroClassifier::<f64>::reference(16, 3, 26);
        let img = random_image(16, 27);
        let spec = MethodSpec::Lime {
            s: 6,
            n_lime: 1,
            seed: 0,
            kernel_width: 0.25,
            ridge_lambda: 1e-3,
            compactness: 10.0,
            filler: None,
        };
        assert!(attribute(&m, &img, 0, &spec, &AttrContext::default()).is_err());
    }

    #[test]
    fn method_spec_round_trips_through_json() {
        let spec = MethodSpec::SmoothGrad { n_sg: 50, sigma: 0.15, seed: 3 };
        let json = serde_json::to_string(&spec).unwrap();
        let back: MethodSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.name(), "SmoothGrad");
        let grad: MethodSpec = serde_json::from_str(r#"{"Gradient":{}}"#).unwrap();
        assert_eq!(grad.name(), "Gradient");
    }
}
