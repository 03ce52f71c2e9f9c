//! Shape, texture and combined appearance models.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::procrustes::{align_shape_vectors, align_to_reference, shape_points, shape_vector, AlignedShapes};
use super::warp::{FramePlacement, TextureFrame};
use crate::dataset::{LandmarkSet, Point};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, FeatureVector};
use crate::image::ImageMatrix;
use crate::pca::{fit_pca_slices, PcaModel, Retention};

pub const DEFAULT_VARIANCE_KEEP: f64 = 0.98;

const TEXTURE_NORM_ITERATIONS: usize = 100;
const TEXTURE_NORM_TOL: f64 = 1e-12;

fn check_fraction(variance_keep: f64) -> Result<()> {
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(Error::Parameter(format!(
            "variance_keep must lie in (0, 1], got {variance_keep}"
        )));
    }
    Ok(())
}

/// Maps a degenerate eigen-problem onto the rank error the model stages
/// report.
fn rank_error(stage: &str, e: Error) -> Error {
    match e {
        Error::ZeroVariance(msg) => Error::Rank(format!("{stage}: {msg}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeModel {
    /// Unit-norm alignment target for new shapes.
    reference: Vec<f64>,
    /// Mean `x̄`, modes `V_s` and variances `λ_s` of the aligned shapes.
    pca: PcaModel,
}

impl ShapeModel {
    pub fn n_points(&self) -> usize {
        self.reference.len() / 2
    }

    pub fn mean_shape(&self) -> &[f64] {
        self.pca.mean()
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn n_modes(&self) -> usize {
        self.pca.n_components()
    }

    /// Aligns raw landmark coordinates to the model frame.
    pub fn align(&self, landmarks: &[Point]) -> Result<Vec<f64>> {
        align_to_reference(&shape_vector(landmarks), &self.reference)
    }

    /// `b_s = V_sᵀ (x − x̄)` for an aligned shape vector.
    pub fn params(&self, aligned: &[f64]) -> Result<Vec<f64>> {
        self.pca.project_slice(aligned)
    }

    pub fn reconstruct(&self, b_s: &[f64]) -> Result<Vec<f64>> {
        self.pca.reconstruct(b_s)
    }
}

pub fn build_shape_model(aligned: &AlignedShapes, variance_keep: f64) -> Result<ShapeModel> {
    check_fraction(variance_keep)?;
    let pca = fit_pca_slices(&aligned.shapes, Retention::Fraction(variance_keep))
        .map_err(|e| rank_error("shape model", e))?;
    Ok(ShapeModel {
        reference: aligned.reference.clone(),
        pca,
    })
}

fn zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 1e-12 {
        v.iter().map(|x| (x - mean) / sd).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Removes the patch mean and rescales so the patch has unit projection on
/// the zero-mean, unit-variance reference texture. Patches that do not
/// correlate positively with the reference fall back to unit variance.
pub fn normalize_patch(raw: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != reference.len() {
        return Err(Error::Dimension {
            expected: reference.len(),
            actual: raw.len(),
        });
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let centred: Vec<f64> = raw.iter().map(|x| x - mean).collect();
    let alpha = centred.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / n;
    let sd = (centred.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    if alpha > 1e-6 * sd && alpha > 1e-12 {
        Ok(centred.into_iter().map(|x| x / alpha).collect())
    } else {
        Ok(zscore(raw))
    }
}

/// Jointly estimates the reference texture and normalizes all patches to
/// it. The reference is the z-scored mean of the normalized patches, which
/// at convergence equals that mean.
pub fn normalize_patches<V: AsRef<[f64]>>(raw: &[V]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if raw.is_empty() {
        return Err(Error::Rank("no texture patches".into()));
    }
    let len = raw[0].as_ref().len();
    if len == 0 {
        return Err(Error::Parameter("empty texture patch".into()));
    }
    if let Some(bad) = raw.iter().find(|p| p.as_ref().len() != len) {
        return Err(Error::Dimension {
            expected: len,
            actual: bad.as_ref().len(),
        });
    }
    let mut patches: Vec<Vec<f64>> = raw.iter().map(|p| zscore(p.as_ref())).collect();
    let mut reference = vec![0.0; len];
    for _ in 0..TEXTURE_NORM_ITERATIONS {
        let mut mean = vec![0.0; len];
        for p in &patches {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
        }
        let next = zscore(&mean);
        if next.iter().all(|&x| x == 0.0) {
            return Err(Error::Rank("texture patches have no common structure".into()));
        }
        let moved = next
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        reference = next;
        patches = raw
            .iter()
            .map(|p| normalize_patch(p.as_ref(), &reference))
            .collect::<Result<_>>()?;
        if moved < TEXTURE_NORM_TOL {
            break;
        }
    }
    Ok((patches, reference))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureModel {
    frame: TextureFrame,
    /// Photometric normalization target.
    reference: Vec<f64>,
    /// Mean `ḡ`, modes `V_g` and variances `λ_g` of normalized patches.
    pca: PcaModel,
}

impl TextureModel {
    pub fn frame(&self) -> &TextureFrame {
        &self.frame
    }

    pub fn texture_rows(&self) -> usize {
        self.frame.rows()
    }

    pub fn texture_cols(&self) -> usize {
        self.frame.cols()
    }

    pub fn patch_mask(&self) -> Vec<bool> {
        self.frame.mask()
    }

    pub fn mean_texture(&self) -> &[f64] {
        self.pca.mean()
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn n_modes(&self) -> usize {
        self.pca.n_components()
    }

    pub fn normalization_reference(&self) -> &[f64] {
        &self.reference
    }

    /// `b_g = V_gᵀ (g − ḡ)` for a raw (un-normalized) patch.
    pub fn params(&self, raw_patch: &[f64]) -> Result<Vec<f64>> {
        let g = normalize_patch(raw_patch, &self.reference)?;
        self.pca.project_slice(&g)
    }

    pub fn reconstruct(&self, b_g: &[f64]) -> Result<Vec<f64>> {
        self.pca.reconstruct(b_g)
    }
}

/// Photometrically normalizes raw patches sampled in `frame` and fits
/// their eigenspace.
pub fn build_texture_model<V: AsRef<[f64]>>(
    frame: TextureFrame,
    raw_patches: &[V],
    variance_keep: f64,
) -> Result<TextureModel> {
    check_fraction(variance_keep)?;
    if raw_patches.len() < 2 {
        return Err(Error::Rank(format!(
            "texture model needs at least 2 patches, got {}",
            raw_patches.len()
        )));
    }
    if let Some(bad) = raw_patches.iter().find(|p| p.as_ref().len() != frame.patch_len()) {
        return Err(Error::Dimension {
            expected: frame.patch_len(),
            actual: bad.as_ref().len(),
        });
    }
    let (patches, reference) = normalize_patches(raw_patches)?;
    let pca = fit_pca_slices(&patches, Retention::Fraction(variance_keep))
        .map_err(|e| rank_error("texture model", e))?;
    Ok(TextureModel {
        frame,
        reference,
        pca,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceModel {
    shape: ShapeModel,
    texture: TextureModel,
    /// Places normalized shape coordinates in the texture frame.
    placement: FramePlacement,
    w_s: f64,
    /// Mean of the stacked `b_sg`, modes `Q` and variances `λ_sg`.
    combined: PcaModel,
}

impl AppearanceModel {
    pub fn shape(&self) -> &ShapeModel {
        &self.shape
    }

    pub fn texture(&self) -> &TextureModel {
        &self.texture
    }

    pub fn w_s(&self) -> f64 {
        self.w_s
    }

    pub fn combined(&self) -> &PcaModel {
        &self.combined
    }

    pub fn n_appearance_params(&self) -> usize {
        self.combined.n_components()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.combined.eigenvalues()
    }

    pub fn placement(&self) -> FramePlacement {
        self.placement
    }

    /// Normalized shape coordinates mapped into the texture frame.
    pub fn to_frame(&self, shape: &[f64]) -> Vec<Point> {
        shape_points(shape)
            .into_iter()
            .map(|p| self.placement.apply(p))
            .collect()
    }

    fn stack(&self, b_s: &[f64], b_g: &[f64]) -> Vec<f64> {
        b_s.iter().map(|b| self.w_s * b).chain(b_g.iter().copied()).collect()
    }

    /// `c = Qᵀ (b_sg − mean b_sg)`.
    pub fn params_from(&self, b_s: &[f64], b_g: &[f64]) -> Result<Vec<f64>> {
        self.combined.project_slice(&self.stack(b_s, b_g))
    }
}

/// Per-image shape and texture parameters.
pub fn image_params(
    img: &ImageMatrix,
    landmarks: &[Point],
    shape: &ShapeModel,
    texture: &TextureModel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if landmarks.len() != shape.n_points() {
        return Err(Error::LandmarkCount {
            expected: shape.n_points(),
            actual: landmarks.len(),
        });
    }
    let b_s = shape.params(&shape.align(landmarks)?)?;
    let patch = texture.frame().warp(img, landmarks)?;
    let b_g = texture.params(&patch)?;
    Ok((b_s, b_g))
}

pub fn build_combined_model(
    shape: ShapeModel,
    texture: TextureModel,
    placement: FramePlacement,
    params: &[(Vec<f64>, Vec<f64>)],
    variance_keep: f64,
) -> Result<AppearanceModel> {
    check_fraction(variance_keep)?;
    if params.is_empty() {
        return Err(Error::Rank("no per-image parameters for the combined model".into()));
    }
    let sum_s: f64 = shape.pca().eigenvalues().iter().sum();
    let sum_g: f64 = texture.pca().eigenvalues().iter().sum();
    if !(sum_s > 0.0 && sum_g > 0.0) {
        return Err(Error::Rank("shape or texture model has no variance".into()));
    }
    let w_s = (sum_g / sum_s).sqrt();
    let (ks, kg) = (shape.n_modes(), texture.n_modes());
    for (b_s, b_g) in params {
        if b_s.len() != ks || b_g.len() != kg {
            return Err(Error::Dimension {
                expected: ks + kg,
                actual: b_s.len() + b_g.len(),
            });
        }
    }
    let stacked: Vec<Vec<f64>> = params
        .iter()
        .map(|(b_s, b_g)| b_s.iter().map(|b| w_s * b).chain(b_g.iter().copied()).collect())
        .collect();
    let combined = fit_pca_slices(&stacked, Retention::Fraction(variance_keep))
        .map_err(|e| rank_error("combined model", e))?;
    Ok(AppearanceModel {
        shape,
        texture,
        placement,
        w_s,
        combined,
    })
}

/// Texture frame size and retention shared by all three model stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AamParams {
    pub texture_rows: usize,
    pub texture_cols: usize,
    pub variance_keep: f64,
}

impl AamParams {
    pub fn square(size: usize) -> Self {
        AamParams {
            texture_rows: size,
            texture_cols: size,
            variance_keep: DEFAULT_VARIANCE_KEEP,
        }
    }
}

/// A built model together with the appearance parameters of its training
/// images.
#[derive(Debug, Clone)]
pub struct AamTraining {
    pub model: AppearanceModel,
    pub training_params: Vec<Vec<f64>>,
}

/// Builds shape, texture and combined models from annotated images.
pub fn build_appearance_model(
    samples: &[(&ImageMatrix, &LandmarkSet)],
    params: AamParams,
) -> Result<AamTraining> {
    check_fraction(params.variance_keep)?;
    let vectors: Vec<Vec<f64>> = samples.iter().map(|(_, l)| shape_vector(l.points())).collect();
    let aligned = align_shape_vectors(&vectors)?;
    let shape = build_shape_model(&aligned, params.variance_keep)?;
    let (frame, placement) = TextureFrame::new(
        &shape_points(shape.reference()),
        params.texture_rows,
        params.texture_cols,
    )?;
    let patches = samples
        .iter()
        .map(|(img, l)| frame.warp(img, l.points()))
        .collect::<Result<Vec<_>>>()?;
    let texture = build_texture_model(frame, &patches, params.variance_keep)?;
    let per_image = samples
        .iter()
        .map(|(img, l)| image_params(img, l.points(), &shape, &texture))
        .collect::<Result<Vec<_>>>()?;
    let model = build_combined_model(shape, texture, placement, &per_image, params.variance_keep)?;
    let training_params = per_image
        .iter()
        .map(|(b_s, b_g)| model.params_from(b_s, b_g))
        .collect::<Result<Vec<_>>>()?;
    Ok(AamTraining {
        model,
        training_params,
    })
}

/// Appearance parameters `c` of an annotated face.
pub fn appearance_params(img: &ImageMatrix, landmarks: &LandmarkSet, model: &AppearanceModel) -> Result<FeatureVector> {
    let (b_s, b_g) = image_params(img, landmarks.points(), &model.shape, &model.texture)?;
    FeatureVector::new(model.params_from(&b_s, &b_g)?, FeatureSource::Aam)
}

/// Intensity mapping used to display normalized textures.
pub const DISPLAY_MID: f64 = 128.0;
pub const DISPLAY_GAIN: f64 = 40.0;

/// One synthesized face along an appearance mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRendering {
    pub multiple: f64,
    /// Normalized shape vector.
    pub shape: Vec<f64>,
    /// Normalized shape-free texture.
    pub texture: Vec<f64>,
    /// Shape points in texture-frame coordinates.
    pub frame_shape: Vec<Point>,
    /// Texture deformed onto `frame_shape` for display.
    pub image: ImageMatrix,
}

/// Shape and texture for `c = k √λ_sg[mode] e_mode`, for every `k` in
/// `multiples`.
pub fn synthesize_modes(model: &AppearanceModel, mode: usize, multiples: &[f64]) -> Result<Vec<ModeRendering>> {
    let k = model.n_appearance_params();
    if mode >= k {
        return Err(Error::Parameter(format!(
            "mode {mode} out of range: model has {k} appearance modes"
        )));
    }
    let ks = model.shape.n_modes();
    let sd = model.eigenvalues()[mode].sqrt();
    let q = model.combined.components().column(mode).into_owned();
    let mean_bsg = DVector::from_column_slice(model.combined.mean());
    multiples
        .iter()
        .map(|&multiple| {
            let b_sg = &mean_bsg + &q * (multiple * sd);
            let b_s: Vec<f64> = b_sg.rows(0, ks).iter().map(|b| b / model.w_s).collect();
            let b_g: Vec<f64> = b_sg.rows(ks, b_sg.len() - ks).iter().copied().collect();
            let shape = model.shape.reconstruct(&b_s)?;
            let texture = model.texture.reconstruct(&b_g)?;
            let display: Vec<f64> = texture
                .iter()
                .map(|g| (DISPLAY_MID + DISPLAY_GAIN * g).clamp(0.0, 255.0))
                .collect();
            let frame = model.texture.frame();
            let flat = frame.patch_image(&display, 0.0)?;
            let frame_shape = model.to_frame(&shape);
            let image = frame.render_onto(&flat, &frame_shape, 0.0)?;
            Ok(ModeRendering {
                multiple,
                shape,
                texture,
                frame_shape,
                image,
            })
        })
        .collect()
}
