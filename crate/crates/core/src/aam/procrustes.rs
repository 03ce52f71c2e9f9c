//! Generalized Procrustes alignment of landmark shapes.
//!
//! Shape vectors are flat: all x coordinates, then all y coordinates.
//! Aligned shapes live in the tangent plane of a unit-norm, zero-centroid
//! reference: each is centred, scaled to unit norm, rotated onto the
//! reference and finally rescaled so that `y . ref = 1`.

use crate::dataset::{LandmarkSet, Point};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOL: f64 = 1e-10;

pub fn shape_vector(points: &[Point]) -> Vec<f64> {
    let mut v: Vec<f64> = points.iter().map(|p| p.x).collect();
    v.extend(points.iter().map(|p| p.y));
    v
}

pub fn shape_points(v: &[f64]) -> Vec<Point> {
    let n = v.len() / 2;
    (0..n).map(|i| Point::new(v[i], v[n + i])).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Translates to zero centroid and scales to unit norm.
pub fn normalize_pose(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len() / 2;
    let cx = v[..n].iter().sum::<f64>() / n as f64;
    let cy = v[n..].iter().sum::<f64>() / n as f64;
    let mut out: Vec<f64> = v[..n]
        .iter()
        .map(|x| x - cx)
        .chain(v[n..].iter().map(|y| y - cy))
        .collect();
    let norm = dot(&out, &out).sqrt();
    if !(norm > 1e-12) {
        return Err(Error::Degenerate("all landmark points coincide".into()));
    }
    out.iter_mut().for_each(|c| *c /= norm);
    Ok(out)
}

fn rotate(v: &[f64], angle: f64) -> Vec<f64> {
    let n = v.len() / 2;
    let (s, c) = angle.sin_cos();
    let mut out = vec![0.0; v.len()];
    for i in 0..n {
        out[i] = c * v[i] - s * v[n + i];
        out[n + i] = s * v[i] + c * v[n + i];
    }
    out
}

/// Rotation angle that best maps centred `v` onto centred `target`.
fn best_rotation(v: &[f64], target: &[f64]) -> f64 {
    let n = v.len() / 2;
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..n {
        a += v[i] * target[i] + v[n + i] * target[n + i];
        b += v[i] * target[n + i] - v[n + i] * target[i];
    }
    b.atan2(a)
}

/// Orientation depending only on the shape itself: the major axis of the
/// point scatter is made vertical and point 0 is put above the centroid
/// (image coordinates, y down). Near-isotropic scatters fall back to point
/// 0 pointing straight up.
fn canonical_orientation(v: &[f64]) -> Vec<f64> {
    let n = v.len() / 2;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sxx += v[i] * v[i];
        syy += v[n + i] * v[n + i];
        sxy += v[i] * v[n + i];
    }
    let anisotropy = (sxx - syy).hypot(2.0 * sxy);
    let mut out = if anisotropy > 1e-9 * (sxx + syy) {
        let major = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        rotate(v, std::f64::consts::FRAC_PI_2 - major)
    } else {
        let first = (0..n).find(|&i| v[i].hypot(v[n + i]) > 1e-9).unwrap_or(0);
        let angle = v[n + first].atan2(v[first]);
        rotate(v, -std::f64::consts::FRAC_PI_2 - angle)
    };
    let first = (0..n).find(|&i| out[n + i].abs() > 1e-9).unwrap_or(0);
    if out[n + first] > 0.0 {
        out.iter_mut().for_each(|c| *c = -*c);
    }
    out
}

/// Aligns one shape to a unit-norm, centred reference: pose normalization,
/// optimal rotation, tangent-plane projection.
pub fn align_to_reference(v: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if v.len() != reference.len() {
        return Err(Error::LandmarkCount {
            expected: reference.len() / 2,
            actual: v.len() / 2,
        });
    }
    let normalized = normalize_pose(v)?;
    let rotated = rotate(&normalized, best_rotation(&normalized, reference));
    let along = dot(&rotated, reference);
    if !(along > 1e-12) {
        return Err(Error::Degenerate(
            "shape is orthogonal to the reference after rotation".into(),
        ));
    }
    Ok(rotated.into_iter().map(|c| c / along).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedShapes {
    pub shapes: Vec<Vec<f64>>,
    /// Sample mean of `shapes`.
    pub mean: Vec<f64>,
    /// Unit-norm reference the shapes were aligned to.
    pub reference: Vec<f64>,
    pub iterations: usize,
}

fn sample_mean(shapes: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; shapes[0].len()];
    for s in shapes {
        for (m, c) in mean.iter_mut().zip(s) {
            *m += c;
        }
    }
    mean.iter_mut().for_each(|m| *m /= shapes.len() as f64);
    mean
}

pub fn align_shape_vectors(shapes: &[Vec<f64>]) -> Result<AlignedShapes> {
    if shapes.len() < 2 {
        return Err(Error::Rank(format!(
            "Procrustes alignment needs at least 2 shapes, got {}",
            shapes.len()
        )));
    }
    let len = shapes[0].len();
    if len < 4 || len % 2 != 0 {
        return Err(Error::Parameter("shapes need at least 2 points".into()));
    }
    if let Some(bad) = shapes.iter().find(|s| s.len() != len) {
        return Err(Error::LandmarkCount {
            expected: len / 2,
            actual: bad.len() / 2,
        });
    }
    let normalized = shapes
        .iter()
        .map(|s| normalize_pose(s))
        .collect::<Result<Vec<_>>>()?;

    let mut reference = canonical_orientation(&normalized[0]);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let aligned = normalized
            .iter()
            .map(|s| align_to_reference(s, &reference))
            .collect::<Result<Vec<_>>>()?;
        let mean = sample_mean(&aligned);
        // Keep the previous orientation and unit scale.
        let mean = normalize_pose(&mean)?;
        let next = rotate(&mean, best_rotation(&mean, &reference));
        let movement = next
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        reference = next;
        if movement < CONVERGENCE_TOL {
            break;
        }
    }

    let aligned = shapes
        .iter()
        .map(|s| align_to_reference(s, &reference))
        .collect::<Result<Vec<_>>>()?;
    let mean = sample_mean(&aligned);
    Ok(AlignedShapes {
        shapes: aligned,
        mean,
        reference,
        iterations,
    })
}

/// Generalized Procrustes alignment of landmark sets.
pub fn align_shapes(shapes: &[LandmarkSet]) -> Result<AlignedShapes> {
    let vectors: Vec<Vec<f64>> = shapes.iter().map(|s| shape_vector(s.points())).collect();
    align_shape_vectors(&vectors)
}
