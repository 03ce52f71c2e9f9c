use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aam::{appearance_params, AamParams, AppearanceModel};
use crate::dataset::{
    histogram_equalize, normalize_face, parse_landmarks, DatasetRecord, EyePair, LandmarkScheme, LandmarkSet,
    DEFAULT_FACE_COLS, DEFAULT_FACE_ROWS,
};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::gabor::{gabor_features, GaborBank, GaborParams, DEFAULT_GRID_STEP};
use crate::image::ImageMatrix;
use crate::lbp::{lbp_block_histograms, LbpParams};
use crate::wavelet::{wavelet_features, WaveletParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtractorKind {
    Aam,
    Gabor,
    Lbp,
    Wd,
}

impl ExtractorKind {
    pub const ALL: [ExtractorKind; 4] = [
        ExtractorKind::Aam,
        ExtractorKind::Gabor,
        ExtractorKind::Lbp,
        ExtractorKind::Wd,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ExtractorKind::Aam => "aam",
            ExtractorKind::Gabor => "gabor",
            ExtractorKind::Lbp => "lbp",
            ExtractorKind::Wd => "wd",
        }
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExtractorKind::ALL
            .iter()
            .copied()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "extractor",
                token: s.to_string(),
                allowed: ExtractorKind::ALL.map(ExtractorKind::token).join(", "),
            })
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Geometric and photometric normalization applied before extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Eye-based alignment into a `face_rows x face_cols` frame.
    pub normalize: bool,
    pub equalize: bool,
    pub face_rows: usize,
    pub face_cols: usize,
}

impl Preprocessing {
    /// Eye alignment to 65x60 followed by histogram equalization.
    pub fn standard() -> Self {
        Preprocessing {
            normalize: true,
            equalize: true,
            face_rows: DEFAULT_FACE_ROWS,
            face_cols: DEFAULT_FACE_COLS,
        }
    }

    /// Raw input; the appearance model has its own texture path.
    pub fn none() -> Self {
        Preprocessing {
            normalize: false,
            equalize: false,
            face_rows: 0,
            face_cols: 0,
        }
    }

    pub fn for_kind(kind: ExtractorKind) -> Self {
        match kind {
            ExtractorKind::Aam => Preprocessing::none(),
            _ => Preprocessing::standard(),
        }
    }
}

/// Extractor settings before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExtractorSpec {
    Aam(AamParams),
    Gabor { params: GaborParams, grid_step: usize },
    Lbp(LbpParams),
    Wd(WaveletParams),
}

impl ExtractorSpec {
    /// Library defaults; `aam_texture` is the square texture frame size.
    pub fn default_for(kind: ExtractorKind, aam_texture: usize) -> Self {
        match kind {
            ExtractorKind::Aam => ExtractorSpec::Aam(AamParams::square(aam_texture)),
            ExtractorKind::Gabor => ExtractorSpec::Gabor {
                params: GaborParams::default(),
                grid_step: DEFAULT_GRID_STEP,
            },
            ExtractorKind::Lbp => ExtractorSpec::Lbp(LbpParams::default()),
            ExtractorKind::Wd => ExtractorSpec::Wd(WaveletParams::default()),
        }
    }

    pub fn kind(&self) -> ExtractorKind {
        match self {
            ExtractorSpec::Aam(_) => ExtractorKind::Aam,
            ExtractorSpec::Gabor { .. } => ExtractorKind::Gabor,
            ExtractorSpec::Lbp(_) => ExtractorKind::Lbp,
            ExtractorSpec::Wd(_) => ExtractorKind::Wd,
        }
    }
}

/// A ready-to-use extractor. Only the appearance model is learned from
/// data; the others are fixed transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Extractor {
    Aam(AppearanceModel),
    Gabor { bank: GaborBank, grid_step: usize },
    Lbp(LbpParams),
    Wd(WaveletParams),
}

impl Extractor {
    pub fn kind(&self) -> ExtractorKind {
        match self {
            Extractor::Aam(_) => ExtractorKind::Aam,
            Extractor::Gabor { .. } => ExtractorKind::Gabor,
            Extractor::Lbp(_) => ExtractorKind::Lbp,
            Extractor::Wd(_) => ExtractorKind::Wd,
        }
    }

    /// Features of one face, preprocessed as configured.
    pub fn extract(&self, pre: &Preprocessing, input: &FaceInput) -> Result<FeatureVector> {
        if let Extractor::Aam(model) = self {
            let landmarks = input.landmarks.as_ref().ok_or_else(|| {
                Error::MissingInput(format!("{}: landmarks are required for aam", input.name))
            })?;
            return appearance_params(&input.image, landmarks, model);
        }
        let face = preprocess_face(pre, input)?;
        match self {
            Extractor::Gabor { bank, grid_step } => gabor_features(&face, bank, *grid_step),
            Extractor::Lbp(params) => lbp_block_histograms(&face, *params),
            Extractor::Wd(params) => wavelet_features(&face, params),
            Extractor::Aam(_) => unreachable!("handled above"),
        }
    }
}

pub fn preprocess_face(pre: &Preprocessing, input: &FaceInput) -> Result<ImageMatrix> {
    let mut face = if pre.normalize {
        let eyes = input.eyes.ok_or_else(|| {
            Error::MissingInput(format!("{}: eye coordinates are required", input.name))
        })?;
        normalize_face(&input.image, eyes, pre.face_rows, pre.face_cols)?
    } else {
        input.image.clone()
    };
    if pre.equalize {
        face = histogram_equalize(&face);
    }
    Ok(face)
}

/// One face with whatever annotations accompany it.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceInput {
    /// Used in diagnostics.
    pub name: String,
    pub image: ImageMatrix,
    pub eyes: Option<EyePair>,
    pub landmarks: Option<LandmarkSet>,
}

/// Reads a points file whatever its point count.
pub fn load_any_landmarks(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let declared = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("n_points:"))
        .and_then(|n| n.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Landmarks {
            path: path.to_path_buf(),
            message: "missing `n_points: <N>` header".into(),
        })?;
    let scheme = if declared == 68 {
        LandmarkScheme::Fgnet68
    } else {
        LandmarkScheme::Custom(declared)
    };
    parse_landmarks(&text, scheme).map_err(|e| match e {
        Error::Parameter(message) => Error::Landmarks {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

impl FaceInput {
    pub fn load(record: &DatasetRecord) -> Result<Self> {
        let landmarks = record
            .landmarks_path
            .as_deref()
            .map(load_any_landmarks)
            .transpose()?;
        Ok(FaceInput {
            name: record.image_path.display().to_string(),
            image: ImageMatrix::load(&record.image_path)?,
            eyes: record.eyes,
            landmarks,
        })
    }
}
