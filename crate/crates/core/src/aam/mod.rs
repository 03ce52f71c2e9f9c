//! Active appearance models: statistical shape, texture and combined
//! models over annotated faces, and extraction of appearance parameters.

mod model;
mod procrustes;
mod warp;

pub use model::{
    appearance_params, build_appearance_model, build_combined_model, build_shape_model,
    build_texture_model, image_params, normalize_patch, normalize_patches, synthesize_modes,
    AamParams, AamTraining, AppearanceModel, ModeRendering, ShapeModel, TextureModel,
    DEFAULT_VARIANCE_KEEP, DISPLAY_GAIN, DISPLAY_MID,
};
pub use procrustes::{
    align_shape_vectors, align_shapes, align_to_reference, normalize_pose, shape_points,
    shape_vector, AlignedShapes, CONVERGENCE_TOL, MAX_ITERATIONS,
};
pub use warp::{triangulate, FramePlacement, TextureFrame, FRAME_MARGIN};

use crate::dataset::LandmarkSet;
use crate::error::Result;
use crate::image::ImageMatrix;

/// Shape-free patch of `img` annotated with `landmarks`, sampled in the
/// model's texture frame.
pub fn warp_to_mean(img: &ImageMatrix, landmarks: &LandmarkSet, frame: &TextureFrame) -> Result<Vec<f64>> {
    frame.warp(img, landmarks.points())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LandmarkScheme, Point};
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const N_POINTS: usize = 15;

    /// Face-like outline: 12 contour points, two eyes and a mouth.
    fn base_points(width: f64, smile: f64) -> Vec<Point> {
        let mut pts: Vec<Point> = (0..12)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / 12.0;
                Point::new(width * t.sin(), -1.3 * t.cos())
            })
            .collect();
        pts.push(Point::new(-0.35, -0.3));
        pts.push(Point::new(0.35, -0.3));
        pts.push(Point::new(0.0, 0.6 - smile));
        pts
    }

    struct Sample {
        img: ImageMatrix,
        landmarks: LandmarkSet,
    }

    /// Annotated images whose shape varies in width and mouth position and
    /// whose texture varies in contrast and shading.
    fn corpus(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let width = rng.gen_range(0.8..1.1);
                let smile = rng.gen_range(-0.15..0.15);
                let angle: f64 = rng.gen_range(-0.2..0.2);
                let scale = rng.gen_range(18.0..22.0);
                let (cx, cy) = (rng.gen_range(30.0..34.0), rng.gen_range(30.0..34.0));
                let contrast = rng.gen_range(40.0..80.0);
                let shading = rng.gen_range(-20.0..20.0);
                let (s, c) = angle.sin_cos();
                let pts: Vec<Point> = base_points(width, smile)
                    .into_iter()
                    .map(|p| Point::new(cx + scale * (c * p.x - s * p.y), cy + scale * (s * p.x + c * p.y)))
                    .collect();
                let eyes = [pts[12], pts[13], pts[14]];
                let img = ImageMatrix::from_fn(64, 64, |r, col| {
                    let (x, y) = (col as f64, r as f64);
                    let mut v = 90.0 + shading * (x - cx) / 20.0;
                    for e in &eyes {
                        let d2 = (x - e.x).powi(2) + (y - e.y).powi(2);
                        v += contrast * (-d2 / 12.0).exp();
                    }
                    let d2 = ((x - cx) / (width * scale)).powi(2) + ((y - cy) / (1.3 * scale)).powi(2);
                    v + 30.0 * (-d2).exp()
                });
                Sample {
                    img,
                    landmarks: LandmarkSet::new(pts, LandmarkScheme::Custom(N_POINTS)).unwrap(),
                }
            })
            .collect()
    }

    fn build(samples: &[Sample], keep: f64) -> AamTraining {
        let pairs: Vec<(&ImageMatrix, &LandmarkSet)> = samples.iter().map(|s| (&s.img, &s.landmarks)).collect();
        build_appearance_model(
            &pairs,
            AamParams {
                texture_rows: 40,
                texture_cols: 36,
                variance_keep: keep,
            },
        )
        .unwrap()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    }

    #[test]
    fn shape_model_round_trip_and_orthogonality() {
        let samples = corpus(30, 1);
        let shapes: Vec<LandmarkSet> = samples.iter().map(|s| s.landmarks.clone()).collect();
        let aligned = align_shapes(&shapes).unwrap();
        let model = build_shape_model(&aligned, 0.95).unwrap();
        let v = model.pca().components();
        let gram = v.tr_mul(v);
        assert!((gram - nalgebra::DMatrix::identity(v.ncols(), v.ncols())).abs().max() <= 1e-9);
        assert!(model.pca().eigenvalues().windows(2).all(|w| w[0] >= w[1]));

        let zero = model.params(model.mean_shape()).unwrap();
        assert!(norm(&zero) < 1e-15);

        let mut residual = 0.0;
        for x in &aligned.shapes {
            let b = model.params(x).unwrap();
            let recon = model.reconstruct(&b).unwrap();
            residual += sq_dist(x, &recon);
            let r: Vec<f64> = x.iter().zip(&recon).map(|(a, b)| a - b).collect();
            for k in 0..v.ncols() {
                let dot: f64 = v.column(k).iter().zip(&r).map(|(a, b)| a * b).sum();
                assert!(dot.abs() <= 1e-8);
            }
        }
        let m = aligned.shapes.len() as f64;
        assert!(residual / m <= (1.0 - 0.95) * model.pca().total_variance() + 1e-15);
    }

    #[test]
    fn rank_one_shapes_keep_one_mode() {
        let shapes: Vec<Vec<f64>> = (0..10)
            .map(|i| shape_vector(&base_points(1.0, -0.2 + 0.04 * i as f64)))
            .collect();
        let aligned = align_shape_vectors(&shapes).unwrap();
        let model = build_shape_model(&aligned, 0.98).unwrap();
        assert_eq!(model.n_modes(), 1);
    }

    #[test]
    fn identical_shapes_are_rank_deficient() {
        let s = shape_vector(&base_points(1.0, 0.0));
        let aligned = align_shape_vectors(&[s.clone(), s]).unwrap();
        assert!(matches!(build_shape_model(&aligned, 0.98), Err(Error::Rank(_))));
    }

    #[test]
    fn texture_model_basics() {
        let (frame, _) = TextureFrame::new(&base_points(1.0, 0.0), 20, 20).unwrap();
        let n = frame.patch_len();
        let a: Vec<f64> = (0..n).map(|i| (i % 7) as f64 * 10.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 3) % 11) as f64 * 5.0 + 20.0).collect();
        let model = build_texture_model(frame.clone(), &[a.clone(), b], 0.98).unwrap();
        assert_eq!(model.n_modes(), 1);
        assert_eq!(model.mean_texture().len(), model.patch_mask().iter().filter(|&&m| m).count());
        let zero = model.params(model.mean_texture()).unwrap();
        assert!(norm(&zero) < 1e-9);
        assert!(matches!(
            build_texture_model(frame, &[a.clone(), a[1..].to_vec()], 0.98),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn photometric_normalization_removes_gain_and_offset() {
        let reference = {
            let raw: Vec<f64> = (0..50).map(|i| ((i * 17) % 13) as f64).collect();
            let (_, r) = normalize_patches(&[raw.clone(), raw]).unwrap();
            r
        };
        let raw: Vec<f64> = (0..50).map(|i| ((i * 17) % 13) as f64).collect();
        let moved: Vec<f64> = raw.iter().map(|x| 3.0 * x + 40.0).collect();
        let a = normalize_patch(&raw, &reference).unwrap();
        let b = normalize_patch(&moved, &reference).unwrap();
        assert!(sq_dist(&a, &b).sqrt() < 1e-12);
        assert!(sq_dist(&a, &reference).sqrt() < 1e-12);
    }

    #[test]
    fn training_images_reproduce_their_parameters() {
        let samples = corpus(25, 2);
        let trained = build(&samples, 0.98);
        for (s, stored) in samples.iter().zip(&trained.training_params) {
            let c = appearance_params(&s.img, &s.landmarks, &trained.model).unwrap();
            assert_eq!(c.dims(), trained.model.n_appearance_params());
            assert!(sq_dist(c.values(), stored).sqrt() <= 1e-9);
        }
    }

    #[test]
    fn mean_rendered_face_has_zero_parameters() {
        let samples = corpus(25, 3);
        let model = build(&samples, 0.98).model;
        let frame = model.texture().frame();
        let g = model.texture().mean_texture();
        let gain = 60.0 / g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let patch: Vec<f64> = g.iter().map(|x| 120.0 + gain * x).collect();
        let img = frame.patch_image(&patch, 0.0).unwrap();
        let landmarks = LandmarkSet::new(frame.points().to_vec(), LandmarkScheme::Custom(N_POINTS)).unwrap();
        let c = appearance_params(&img, &landmarks, &model).unwrap();
        let scale: f64 = model.eigenvalues().iter().sum::<f64>().sqrt();
        assert!(norm(c.values()) <= 1e-6 * scale, "{} vs {}", norm(c.values()), scale);
    }

    #[test]
    fn parameter_count_is_independent_of_image_size() {
        let samples = corpus(12, 4);
        let model = build(&samples, 0.98).model;
        let big = ImageMatrix::from_fn(200, 150, |r, c| ((r + c) % 256) as f64);
        let c = appearance_params(&big, &samples[0].landmarks, &model).unwrap();
        assert_eq!(c.dims(), model.n_appearance_params());
        let wrong = LandmarkSet::new(vec![Point::new(1.0, 1.0); 3], LandmarkScheme::Custom(3)).unwrap();
        assert!(appearance_params(&big, &wrong, &model).is_err());
    }

    #[test]
    fn combined_model_properties() {
        let samples = corpus(30, 5);
        let trained = build(&samples, 0.98);
        let model = &trained.model;
        let q = model.combined().components();
        assert!((q.tr_mul(q) - nalgebra::DMatrix::identity(q.ncols(), q.ncols())).abs().max() <= 1e-9);
        assert_eq!(q.nrows(), model.shape().n_modes() + model.texture().n_modes());
        let kept: f64 = model.eigenvalues().iter().sum();
        assert!(kept >= 0.98 * model.combined().total_variance());

        let mean = model.combined().mean();
        let ks = model.shape().n_modes();
        let b_s: Vec<f64> = mean[..ks].iter().map(|b| b / model.w_s()).collect();
        let c = model.params_from(&b_s, &mean[ks..]).unwrap();
        assert!(norm(&c) < 1e-12);

        // Round trip of the stacked training parameters.
        let mut residual = 0.0;
        for (s, c) in samples.iter().zip(&trained.training_params) {
            let (b_s, b_g) = image_params(&s.img, s.landmarks.points(), model.shape(), model.texture()).unwrap();
            let stacked: Vec<f64> = b_s.iter().map(|b| model.w_s() * b).chain(b_g).collect();
            residual += sq_dist(&stacked, &model.combined().reconstruct(c).unwrap());
        }
        let m = samples.len() as f64;
        assert!(residual / m <= (1.0 - 0.98) * model.combined().total_variance() + 1e-9);
    }

    #[test]
    fn linearly_coupled_texture_needs_no_extra_modes() {
        let samples = corpus(20, 6);
        let shapes: Vec<LandmarkSet> = samples.iter().map(|s| s.landmarks.clone()).collect();
        let aligned = align_shapes(&shapes).unwrap();
        let shape = build_shape_model(&aligned, 0.999).unwrap();
        let (frame, placement) = TextureFrame::new(&shape_points(shape.reference()), 20, 20).unwrap();
        let patches: Vec<Vec<f64>> = samples.iter().map(|s| frame.warp(&s.img, s.landmarks.points()).unwrap()).collect();
        let texture = build_texture_model(frame, &patches, 0.999).unwrap();
        let ks = shape.n_modes();
        let kg = texture.n_modes();
        // Texture parameters an exact linear function of shape parameters.
        let params: Vec<(Vec<f64>, Vec<f64>)> = aligned
            .shapes
            .iter()
            .map(|x| {
                let b_s = shape.params(x).unwrap();
                let b_g = (0..kg).map(|j| b_s.iter().enumerate().map(|(i, b)| b * ((i + 2 * j) % 3) as f64).sum()).collect();
                (b_s, b_g)
            })
            .collect();
        let model = build_combined_model(shape, texture, placement, &params, 0.98).unwrap();
        assert!(model.n_appearance_params() <= ks + 1);
        assert!(build_combined_model(model.shape().clone(), model.texture().clone(), placement, &[], 0.98).is_err());
    }

    #[test]
    fn mode_synthesis() {
        let samples = corpus(25, 7);
        let model = build(&samples, 0.98).model;
        let out = synthesize_modes(&model, 0, &[-3.0, 0.0, 3.0]).unwrap();
        assert_eq!(out.len(), 3);
        let mean_s = model.shape().mean_shape();
        let mean_g = model.texture().mean_texture();
        assert!(sq_dist(&out[1].shape, mean_s).sqrt() < 1e-12);
        assert!(sq_dist(&out[1].texture, mean_g).sqrt() < 1e-9);
        for i in 0..mean_s.len() {
            let d_plus = out[2].shape[i] - mean_s[i];
            let d_minus = out[0].shape[i] - mean_s[i];
            assert!((d_plus + d_minus).abs() < 1e-12);
        }
        assert_eq!(out[0].image.rows(), model.texture().texture_rows());
        assert!(synthesize_modes(&model, model.n_appearance_params(), &[1.0]).is_err());
    }

    #[test]
    fn model_serde_round_trip() {
        let samples = corpus(10, 8);
        let model = build(&samples, 0.98).model;
        let mut bytes = Vec::new();
        ciborium::into_writer(&model, &mut bytes).unwrap();
        let back: AppearanceModel = ciborium::from_reader(bytes.as_slice()).unwrap();
        assert_eq!(back, model);
        let a = appearance_params(&samples[3].img, &samples[3].landmarks, &model).unwrap();
        let b = appearance_params(&samples[3].img, &samples[3].landmarks, &back).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(16))]

        #[test]
        fn warp_is_deterministic_and_residuals_orthogonal(seed in 0u64..10_000) {
            let samples = corpus(12, seed);
            let shapes: Vec<LandmarkSet> = samples.iter().map(|s| s.landmarks.clone()).collect();
            let aligned = align_shapes(&shapes).unwrap();
            let model = build_shape_model(&aligned, 0.95).unwrap();
            let v = model.pca().components();
            for x in &aligned.shapes {
                let recon = model.reconstruct(&model.params(x).unwrap()).unwrap();
                let resid: Vec<f64> = x.iter().zip(&recon).map(|(a, b)| a - b).collect();
                for col in v.column_iter() {
                    let dot: f64 = col.iter().zip(&resid).map(|(a, b)| a * b).sum();
                    proptest::prop_assert!(dot.abs() <= 1e-8);
                }
            }

            let (frame, _) = TextureFrame::new(&shape_points(model.reference()), 30, 28).unwrap();
            let s = &samples[0];
            let a = warp_to_mean(&s.img, &s.landmarks, &frame).unwrap();
            let b = warp_to_mean(&s.img.clone(), &s.landmarks.clone(), &frame.clone()).unwrap();
            proptest::prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
