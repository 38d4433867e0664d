use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("unpaired samples: images without masks {images_without_masks:?}, masks without images {masks_without_images:?}")]
    Orphans {
        images_without_masks: Vec<String>,
        masks_without_images: Vec<String>,
    },
    #[error("sample {id}: image is {image:?} but mask is {mask:?} (width, height)")]
    DimensionMismatch {
        id: String,
        image: (u32, u32),
        mask: (u32, u32),
    },
    #[error("cannot split dataset: {0}")]
    Split(String),
    #[error("invalid data configuration: {0}")]
    Config(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        DataError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
