//! Eigenspace reduction of feature vectors.
//!
//! With `M` training vectors of dimension `d`, the covariance
//! `C = (1/M) A A^T` (columns of `A` are deviations from the mean) is
//! decomposed directly when `d <= M`. Otherwise the `M x M` Gram matrix
//! `(1/M) A^T A` is decomposed and its eigenvectors `v` are mapped back to
//! `u = A v / |A v|`; both matrices share their nonzero eigenvalues.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSource, FeatureVector};
use crate::linalg::{columns, fix_signs, mean_vector, symmetric_eigen_desc};

/// Eigenvalues below this fraction of the largest are numerically null.
pub const NULL_EIGENVALUE_RATIO: f64 = 1e-12;

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Retention {
    /// Every non-null component (at most `M - 1`).
    All,
    /// At most this many leading components.
    Count(usize),
    /// Smallest leading set whose eigenvalue sum reaches this fraction of
    /// the total.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `d x k`, orthonormal columns in descending eigenvalue order.
    components: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    /// Sum of all covariance eigenvalues, retained or not.
    total_variance: f64,
    samples: usize,
}

impl PcaModel {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Weights `u_k . (v - mean)` for every retained component.
    pub fn project_slice(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.mean.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                actual: v.len(),
            });
        }
        let dev = DVector::from_iterator(v.len(), v.iter().zip(&self.mean).map(|(x, m)| x - m));
        Ok(self.components.tr_mul(&dev).as_slice().to_vec())
    }

    /// `mean + sum_k w_k u_k`.
    pub fn reconstruct(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.n_components() {
            return Err(Error::Dimension {
                expected: self.n_components(),
                actual: weights.len(),
            });
        }
        let w = DVector::from_column_slice(weights);
        let mut out = &self.components * w;
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o += m;
        }
        Ok(out.as_slice().to_vec())
    }
}

/// Fits the eigenspace of raw vectors.
pub fn fit_pca_slices<V: AsRef<[f64]>>(vectors: &[V], retention: Retention) -> Result<PcaModel> {
    let views: Vec<&[f64]> = vectors.iter().map(AsRef::as_ref).collect();
    let m = views.len();
    if m < 2 {
        return Err(Error::Rank(format!("PCA needs at least 2 samples, got {m}")));
    }
    let dim = views[0].len();
    if dim == 0 {
        return Err(Error::Parameter("PCA on zero-length vectors".into()));
    }
    if let Some(bad) = views.iter().find(|v| v.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            actual: bad.len(),
        });
    }
    match retention {
        Retention::Count(0) => return Err(Error::Parameter("cannot retain 0 components".into())),
        Retention::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
            return Err(Error::Parameter(format!("variance fraction {f} outside (0, 1]")))
        }
        _ => {}
    }

    let mean = mean_vector(&views);
    let mut deviations = columns(&views);
    for mut col in deviations.column_iter_mut() {
        col -= &mean;
    }
    let scale = 1.0 / m as f64;

    let gram_trick = dim > m;
    let (eigenvalues, basis) = if gram_trick {
        symmetric_eigen_desc(deviations.tr_mul(&deviations) * scale)
    } else {
        let cov = &deviations * deviations.transpose() * scale;
        symmetric_eigen_desc(cov)
    };

    let total_variance: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let max = eigenvalues.first().copied().unwrap_or(0.0);
    if !(max > 0.0) || total_variance <= 0.0 {
        return Err(Error::ZeroVariance("all training vectors are identical".into()));
    }

    let non_null = eigenvalues
        .iter()
        .take_while(|&&v| v >= NULL_EIGENVALUE_RATIO * max)
        .count()
        .min(m - 1);
    let keep = match retention {
        Retention::All => non_null,
        Retention::Count(n) => n.min(non_null),
        Retention::Fraction(f) => {
            let target = f * total_variance;
            let mut acc = 0.0;
            let mut k = 0;
            while k < non_null {
                acc += eigenvalues[k];
                k += 1;
                if acc >= target {
                    break;
                }
            }
            k
        }
    };

    let mut components = if gram_trick {
        &deviations * basis.columns(0, keep)
    } else {
        basis.columns(0, keep).into_owned()
    };
    if gram_trick {
        for mut col in components.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
    }
    fix_signs(&mut components);

    Ok(PcaModel {
        mean: mean.as_slice().to_vec(),
        components,
        eigenvalues: eigenvalues[..keep].to_vec(),
        total_variance,
        samples: m,
    })
}

/// Fits the eigenspace of feature vectors.
pub fn fit_pca(vectors: &[FeatureVector], retention: Retention) -> Result<PcaModel> {
    let views: Vec<&[f64]> = vectors.iter().map(FeatureVector::values).collect();
    fit_pca_slices(&views, retention)
}

/// Projection weights of `v` in the model's eigenspace.
pub fn project(model: &PcaModel, v: &FeatureVector) -> Result<FeatureVector> {
    Ok(FeatureVector::from_finite(
        model.project_slice(v.values())?,
        FeatureSource::Pca,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, m: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Cyclic Jacobi eigenvalues of a symmetric matrix (independent of
    /// the library solver).
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        vals
    }

    #[test]
    fn gram_trick_matches_direct_covariance() {
        let data = random_data(9, 20, 50);
        let model = fit_pca_slices(&data, Retention::All).unwrap();
        let m = data.len() as f64;
        let mean: Vec<f64> = (0..50).map(|j| data.iter().map(|v| v[j]).sum::<f64>() / m).collect();
        let cov: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                (0..50)
                    .map(|j| data.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / m)
                    .collect()
            })
            .collect();
        let direct = jacobi_eigenvalues(cov);
        assert_eq!(model.n_components(), 19);
        for (k, val) in model.eigenvalues().iter().enumerate() {
            assert!(((val - direct[k]) / direct[k]).abs() <= 1e-8, "{k}: {val} vs {}", direct[k]);
        }
        let gram = model.components().tr_mul(model.components());
        assert!((gram - DMatrix::identity(19, 19)).abs().max() <= 1e-9);
    }

    #[test]
    fn direct_path_when_dims_are_small() {
        let data = random_data(10, 30, 5);
        let model = fit_pca_slices(&data, Retention::All).unwrap();
        assert_eq!(model.n_components(), 5);
        let gram = model.components().tr_mul(model.components());
        assert!((gram - DMatrix::identity(5, 5)).abs().max() <= 1e-9);
    }

    #[test]
    fn identical_vectors_error() {
        let data = vec![vec![1.0, 2.0, 3.0]; 4];
        assert!(matches!(fit_pca_slices(&data, Retention::All), Err(Error::ZeroVariance(_))));
        assert!(fit_pca_slices(&data[..1], Retention::All).is_err());
        assert!(fit_pca_slices(&[vec![1.0], vec![1.0, 2.0]], Retention::All).is_err());
    }

    #[test]
    fn two_sample_closed_form() {
        let v1 = vec![1.0, 2.0, 3.0, 4.0, 0.0];
        let v2 = vec![3.0, 1.0, 3.0, -2.0, 1.0];
        let model = fit_pca_slices(&[v1.clone(), v2.clone()], Retention::All).unwrap();
        assert_eq!(model.n_components(), 1);
        let diff: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a - b).collect();
        let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u = model.components().column(0);
        let cos = u.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>() / norm;
        assert!((cos.abs() - 1.0).abs() < 1e-12);
        let w1 = model.project_slice(&v1).unwrap()[0];
        let w2 = model.project_slice(&v2).unwrap()[0];
        assert!((w1.abs() - norm / 2.0).abs() < 1e-12);
        assert!((w1 + w2).abs() < 1e-12);
    }

    #[test]
    fn projection_properties() {
        let data = random_data(12, 15, 40);
        let model = fit_pca_slices(&data, Retention::Count(6)).unwrap();
        assert_eq!(model.n_components(), 6);
        assert!(model.project_slice(model.mean()).unwrap().iter().all(|w| w.abs() < 1e-12));
        for v in &data {
            let w = model.project_slice(v).unwrap();
            let recon = model.reconstruct(&w).unwrap();
            let dev2: f64 = v.iter().zip(model.mean()).map(|(a, b)| (a - b).powi(2)).sum();
            let w2: f64 = w.iter().map(|x| x * x).sum();
            let resid: Vec<f64> = v.iter().zip(&recon).map(|(a, b)| a - b).collect();
            let r2: f64 = resid.iter().map(|x| x * x).sum();
            assert!(((w2 + r2) - dev2).abs() <= 1e-8 * dev2);
            for col in model.components().column_iter() {
                let dot: f64 = col.iter().zip(&resid).map(|(a, b)| a * b).sum();
                assert!(dot.abs() <= 1e-8);
            }
        }
        assert!(model.project_slice(&[0.0; 3]).is_err());
    }

    #[test]
    fn fraction_retention() {
        let data = random_data(13, 25, 10);
        let model = fit_pca_slices(&data, Retention::Fraction(0.8)).unwrap();
        let kept: f64 = model.eigenvalues().iter().sum();
        assert!(kept >= 0.8 * model.total_variance());
        let drop_last: f64 = model.eigenvalues()[..model.n_components() - 1].iter().sum();
        assert!(drop_last < 0.8 * model.total_variance());
    }

    #[test]
    fn deterministic_with_sign_convention() {
        let data = random_data(14, 12, 30);
        let a = fit_pca_slices(&data, Retention::All).unwrap();
        let b = fit_pca_slices(&data, Retention::All).unwrap();
        assert_eq!(a, b);
        for col in a.components().column_iter() {
            let max = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]

        #[test]
        fn components_are_orthonormal_and_optimal(m in 2usize..20, d in 1usize..40, k in 1usize..12, seed in 0u64..10_000) {
            let data = random_data(seed, m, d);
            let model = fit_pca_slices(&data, Retention::Count(k)).unwrap();
            let v = model.components();
            let gram = v.tr_mul(v);
            let eye = DMatrix::<f64>::identity(v.ncols(), v.ncols());
            proptest::prop_assert!((gram - eye).abs().max() <= 1e-9);
            for x in &data {
                let recon = model.reconstruct(&model.project_slice(x).unwrap()).unwrap();
                let resid: Vec<f64> = x.iter().zip(&recon).map(|(a, b)| a - b).collect();
                for col in v.column_iter() {
                    let dot: f64 = col.iter().zip(&resid).map(|(a, b)| a * b).sum();
                    proptest::prop_assert!(dot.abs() <= 1e-8);
                }
            }
            proptest::prop_assert_eq!(&model, &fit_pca_slices(&data, Retention::Count(k)).unwrap());
        }
    }
}
