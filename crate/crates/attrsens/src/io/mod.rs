//! On-disk formats: the ATNS tensor container, model directories,
//! synthetic dataset generation, and heatmap rendering.

mod dataset;
mod model;
mod render;
mod tensorfile;

pub use dataset::{
    dataset_mean_color, generate_dataset, generate_item, DatasetItem, ShapeKind, CLASS_COUNT,
};
pub use model::{load_model, save_model, ModelManifest, ModelProvenance};
pub use render::{render_heatmap_png, render_mask_png};
pub use tensorfile::{read_tensor, write_tensor};
