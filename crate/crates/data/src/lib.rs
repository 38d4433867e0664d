//! Image/mask datasets for binary segmentation: PNG ingestion, photometric
//! augmentation, seeded splits, a synthetic "teeth" generator and batch assembly.

pub mod augment;
mod batch;
mod dataset;
mod error;
mod synth;

pub use augment::{augment, gaussian_kernel, AugmentSpec};
pub use batch::{
    image_to_tensor, make_training_batch, mask_to_tensor, resize_image, resize_mask, Batch,
    NORM_MEAN, NORM_STD,
};
pub use dataset::{load_dataset, load_image, split_dataset, write_dataset, SamplePair};
pub use error::{DataError, Result};
pub use synth::synth_generate;
