use crate::attribution::MethodSpec;
use crate::error::{Error, Result};

/// One hyperparameter sweep: a method configured at its reference
/// value, the field being varied, and the variant values to compare
/// against the reference.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepSpec {
    pub method: MethodSpec,
    pub swept_field: String,
    pub reference_value: f64,
    pub variant_values: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.variant_values.iter().any(|&v| v == self.reference_value) {
            return Err(Error::InvalidArgument(format!(
                "sweep '{}': reference value {} must not appear among variants",
                self.swept_field, self.reference_value
            )));
        }
        // Fail early on unknown fields so config typos surface before any work runs.
        apply_variant(&self.method, &self.swept_field, self.reference_value)?;
        Ok(())
    }

    /// Reference value first, then the variants, in declaration order.
    pub fn all_values(&self) -> Vec<f64> {
        let mut v = vec![self.reference_value];
        v.extend_from_slice(&self.variant_values);
        v
    }
}

fn as_usize(field: &str, value: f64) -> Result<usize> {
    if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(Error::InvalidArgument(format!(
            "field '{field}' requires a non-negative integer, got {value}"
        )));
    }
    Ok(value as usize)
}

fn as_seed(field: &str, value: f64) -> Result<u64> {
    Ok(as_usize(field, value)? as u64)
}

/// Return a copy of `method` with `field` set to `value`. The field
/// name "none" leaves the method untouched (used to sweep a placebo
/// value against deterministic methods).
pub fn apply_variant(method: &MethodSpec, field: &str, value: f64) -> Result<MethodSpec> {
    let mut m = method.clone();
    if field == "none" {
        return Ok(m);
    }
    let known = match &mut m {
        MethodSpec::SmoothGrad { n_sg, sigma, seed } => match field {
            "n_sg" => {
                *n_sg = as_usize(field, value)?;
                true
            }
            "sigma" => {
                *sigma = value;
                true
            }
            "seed" => {
                *seed = as_seed(field, value)?;
                true
            }
            _ => false,
        },
        MethodSpec::IntegratedGradients { n_ig, n_t, seed, baseline_jitter_sigma, .. } => {
            match field {
                "n_ig" => {
                    *n_ig = as_usize(field, value)?;
                    true
                }
                "n_t" => {
                    *n_t = as_usize(field, value)?;
                    true
                }
                "seed" => {
                    *seed = as_seed(field, value)?;
                    true
                }
                "baseline_jitter_sigma" => {
                    *baseline_jitter_sigma = value;
                    true
                }
                _ => false,
            }
        }
        MethodSpec::SlidingPatch { p, s, .. } => match field {
            "p" => {
                *p = as_usize(field, value)?;
                true
            }
            "s" => {
                *s = as_usize(field, value)?;
                true
            }
            _ => false,
        },
        MethodSpec::Lime { s, n_lime, seed, kernel_width, .. } => match field {
            "s" => {
                *s = as_usize(field, value)?;
                true
            }
            "n_lime" => {
                *n_lime = as_usize(field, value)?;
                true
            }
            "seed" => {
                *seed = as_seed(field, value)?;
                true
            }
            "kernel_width" => {
                *kernel_width = value;
                true
            }
            _ => false,
        },
        MethodSpec::MeaningfulPerturbation {
            b_r,
            n_iter,
            lambda1,
            lambda2,
            jitter_extent,
            learning_rate,
            seed,
            ..
        } => match field {
            "b_r" => {
                *b_r = value;
                true
            }
            "n_iter" => {
                *n_iter = as_usize(field, value)?;
                true
            }
            "lambda1" => {
                *lambda1 = value;
                true
            }
            "lambda2" => {
                *lambda2 = value;
                true
            }
            "jitter_extent" => {
                *jitter_extent = as_usize(field, value)?;
                true
            }
            "learning_rate" => {
                *learning_rate = value;
                true
            }
            "seed" => {
                *seed = as_seed(field, value)?;
                true
            }
            _ => false,
        },
        MethodSpec::Gradient {} | MethodSpec::GradientInput {} | MethodSpec::GuidedBackprop {} => {
            false
        }
    };
    if known {
        Ok(m)
    } else {
        Err(Error::InvalidArgument(format!(
            "method '{}' has no sweepable field '{field}'",
            method.name()
        )))
    }
}
