//! Gender, age, expression and ethnicity classification of face images.
//!
//! Four feature extractors (active appearance models, Gabor filter banks,
//! local binary patterns and Daubechies wavelets) feed a PCA stage and a
//! two-layer perceptron per task. [`pipeline`] wires them together.

pub mod aam;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gabor;
pub mod image;
pub mod lbp;
pub mod linalg;
pub mod mlp;
pub mod pca;
pub mod pipeline;
pub mod wavelet;

pub use aam::AppearanceModel;
pub use dataset::{DatasetRecord, Ethnicity, Expression, EyePair, Gender, LandmarkSet, Point};
pub use error::{Error, Result};
pub use features::FeatureVector;
pub use image::ImageMatrix;
pub use mlp::MlpModel;
pub use pca::PcaModel;
pub use pipeline::{AttributeReport, Task};
