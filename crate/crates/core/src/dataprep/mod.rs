//! Tabular encoding and imputation, image preprocessing and augmentation.

mod image;
mod impute;
mod tabular;

#[cfg(test)]
mod tests;

pub use self::image::{
    augment_image, augment_with, preprocess_image, resize_bicubic, AugmentConfig, AugmentParams, ImageTensor, IMAGE_SIZE,
};
pub use impute::{iterative_impute, ImputeConfig, IterativeImputer};
pub use tabular::{Field, FieldKind, RawCell, RawTable, TableMatrix, TabularSchema};
