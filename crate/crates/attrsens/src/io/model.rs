//! Model directory format: `manifest.json` describing the architecture
//! plus one ATNS file per parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::tensorfile::{read_tensor, write_tensor};
use crate::nn::{Layer, MicroClassifier};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    Conv3x3 { in_c: usize, out_c: usize },
    Relu,
    Maxpool2,
    Flatten,
    Dense { in_dim: usize, out_dim: usize },
}

/// Where the weights came from; written for traceability, ignored on load.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    #[serde(default)]
    pub dataset_seed: u64,
    #[serde(default)]
    pub train_seed: u64,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub robust_epsilon: f64,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version: u32,
    pub dtype: u8,
    pub input_side: usize,
    pub input_channels: usize,
    pub class_count: usize,
    pub mean_color: [f64; 3],
    pub layers: Vec<LayerDesc>,
    #[serde(default)]
    pub provenance: ModelProvenance,
}

fn desc_of<T: Scalar>(layer: &Layer<T>) -> LayerDesc {
    match layer {
        Layer::Conv3x3 { in_c, out_c, .. } => LayerDesc::Conv3x3 { in_c: *in_c, out_c: *out_c },
        Layer::Relu => LayerDesc::Relu,
        Layer::MaxPool2 => LayerDesc::Maxpool2,
        Layer::Flatten => LayerDesc::Flatten,
        Layer::Dense { in_dim, out_dim, .. } => {
            LayerDesc::Dense { in_dim: *in_dim, out_dim: *out_dim }
        }
    }
}

pub fn save_model<T: Scalar>(
    dir: &Path,
    model: &MicroClassifier<T>,
    mean_color: [f64; 3],
    provenance: ModelProvenance,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = ModelManifest {
        version: 1,
        dtype: T::DTYPE,
        input_side: model.input_side,
        input_channels: model.input_channels,
        class_count: model.class_count,
        mean_color,
        layers: model.layers.iter().map(desc_of).collect(),
        provenance,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    for (i, layer) in model.layers.iter().enumerate() {
        let (weight, bias, wdims, bdims): (&[T], &[T], Vec<usize>, Vec<usize>) = match layer {
            Layer::Conv3x3 { in_c, out_c, weight, bias } => {
                (weight, bias, vec![*out_c, *in_c, 3, 3], vec![*out_c])
            }
            Layer::Dense { in_dim, out_dim, weight, bias } => {
                (weight, bias, vec![*out_dim, *in_dim], vec![*out_dim])
            }
            _ => continue,
        };
        write_tensor(&dir.join(format!("layer{i:02}.weight.atns")),
            &Tensor::new(wdims, weight.to_vec())?)?;
        write_tensor(&dir.join(format!("layer{i:02}.bias.atns")),
            &Tensor::new(bdims, bias.to_vec())?)?;
    }
    Ok(())
}

/// Load a model directory; the manifest dtype must match `T`.
pub fn load_model<T: Scalar>(dir: &Path) -> Result<(MicroClassifier<T>, ModelManifest)> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    let fail = |msg: String| Error::Format(format!("{}: {msg}", manifest_path.display()));
    if manifest.version != 1 {
        return Err(fail(format!("unsupported manifest version {}", manifest.version)));
    }
    if manifest.dtype != T::DTYPE {
        return Err(fail(format!(
            "model dtype {} does not match requested {}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, desc) in manifest.layers.iter().enumerate() {
        let layer = match desc {
            LayerDesc::Relu => Layer::Relu,
            LayerDesc::Maxpool2 => Layer::MaxPool2,
            LayerDesc::Flatten => Layer::Flatten,
            LayerDesc::Conv3x3 { in_c, out_c } => {
                let w: Tensor<T> = read_tensor(&dir.join(format!("layer{i:02}.weight.atns")))?;
                let b: Tensor<T> = read_tensor(&dir.join(format!("layer{i:02}.bias.atns")))?;
                if w.dims() != [*out_c, *in_c, 3, 3] || b.dims() != [*out_c] {
                    return Err(fail(format!("layer {i} parameter shape mismatch")));
                }
                Layer::Conv3x3 {
                    in_c: *in_c,
                    out_c: *out_c,
                    weight: w.into_data(),
                    bias: b.into_data(),
                }
            }
            LayerDesc::Dense { in_dim, out_dim } => {
                let w: Tensor<T> = read_tensor(&dir.join(format!("layer{i:02}.weight.atns")))?;
                let b: Tensor<T> = read_tensor(&dir.join(format!("layer{i:02}.bias.atns")))?;
                if w.dims() != [*out_dim, *in_dim] || b.dims() != [*out_dim] {
                    return Err(fail(format!("layer {i} parameter shape mismatch")));
                }
                Layer::Dense {
                    in_dim: *in_dim,
                    out_dim: *out_dim,
                    weight: w.into_data(),
                    bias: b.into_data(),
                }
            }
        };
        layers.push(layer);
    }
    let model = MicroClassifier::new(layers, manifest.input_side, manifest.input_channels)?;
    if model.class_count != manifest.class_count {
        return Err(fail("class_count does not match final dense layer".into()));
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let model = MicroClassifier::<f64>::reference(16, 6, 42);
        let dir = tempfile::tempdir().unwrap();
        save_model(model_dir(&dir), &model, [0.4, 0.5, 0.6], ModelProvenance::default()).unwrap();
        let (loaded, manifest) = load_model::<f64>(model_dir(&dir)).unwrap();
        assert_eq!(manifest.mean_color, [0.4, 0.5, 0.6]);
        let img = Tensor::full(&[16, 16, 3], 0.37f64);
        let a = model.forward(&img).unwrap();
        let b = loaded.forward(&img).unwrap();
        assert_eq!(a, b);
    }

    fn model_dir(dir: &tempfile::TempDir) -> &Path {
        dir.path()
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let model = MicroClassifier::<f32>::reference(16, 2, 1);
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model, [0.5; 3], ModelProvenance::default()).unwrap();
        assert!(load_model::<f64>(dir.path()).is_err());
        assert!(load_model::<f32>(dir.path()).is_ok());
    }

    #[test]
    fn tampered_parameter_shape_is_rejected() {
        let model = MicroClassifier::<f64>::reference(16, 2, 1);
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model, [0.5; 3], ModelProvenance::default()).unwrap();
        // overwrite the first conv bias with the wrong extent
        let bad = Tensor::new(vec![3], vec![0.0f64; 3]).unwrap();
        write_tensor(&dir.path().join("layer00.bias.atns"), &bad).unwrap();
        assert!(load_model::<f64>(dir.path()).is_err());
    }
}
