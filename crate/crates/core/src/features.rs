use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which stage produced a [`FeatureVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSource {
    Gabor,
    Lbp,
    Wavelet,
    Aam,
    Pca,
}

/// Flat real-valued feature representation shared by all extractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    source: FeatureSource,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, source: FeatureSource) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "feature {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(FeatureVector { values, source })
    }

    /// For values produced by the crate's own arithmetic on finite inputs.
    pub(crate) fn from_finite(values: Vec<f64>, source: FeatureSource) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        FeatureVector { values, source }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }
}
