//! Gabor wavelet bank and jet features.
//!
//! Kernels follow
//! `psi(z) = (|k|^2 / s^2) exp(-|k|^2 |z|^2 / (2 s^2)) [exp(i k.z) - exp(-s^2 / 2)]`
//! with wave vector `k = (k_max / f^nu) (cos(pi mu / 8), sin(pi mu / 8))`.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSource, FeatureVector};
use crate::image::ImageMatrix;

/// Complex response or kernel grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    fn zeros(rows: usize, cols: usize) -> Self {
        ComplexGrid {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }
}

/// Construction parameters of a bank; this is what gets serialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub sigma: f64,
    pub k_max: f64,
    pub spacing: f64,
    pub n_scales: usize,
    pub n_orients: usize,
    pub kernel_size: usize,
}

impl Default for GaborParams {
    fn default() -> Self {
        GaborParams {
            sigma: 2.0 * PI,
            k_max: PI / 2.0,
            spacing: std::f64::consts::SQRT_2,
            n_scales: 5,
            n_orients: 8,
            kernel_size: 32,
        }
    }
}

/// Default sampling step of the jet grid.
pub const DEFAULT_GRID_STEP: usize = 4;

/// Kernel spectra for one padded FFT size.
struct Spectra {
    padded: (usize, usize),
    kernels: Vec<Vec<Complex64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(from = "GaborParams", into = "GaborParams")]
pub struct GaborBank {
    params: GaborParams,
    /// `(scale, orientation)` in kernel order.
    indices: Vec<(usize, usize)>,
    wave_vectors: Vec<(f64, f64)>,
    kernels: Vec<ComplexGrid>,
    spectra: Mutex<Option<Arc<Spectra>>>,
}

impl std::fmt::Debug for GaborBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaborBank")
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl Clone for GaborBank {
    fn clone(&self) -> Self {
        GaborBank::from(self.params)
    }
}

impl PartialEq for GaborBank {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl From<GaborParams> for GaborBank {
    fn from(params: GaborParams) -> Self {
        build_unchecked(params)
    }
}

impl From<GaborBank> for GaborParams {
    fn from(bank: GaborBank) -> Self {
        bank.params
    }
}

/// Builds the bank; kernels are ordered scale-major, then orientation.
pub fn build_gabor_bank(params: GaborParams) -> Result<GaborBank> {
    let GaborParams {
        sigma,
        k_max,
        spacing,
        n_scales,
        n_orients,
        kernel_size,
    } = params;
    if !(sigma > 0.0 && k_max > 0.0 && spacing > 0.0) || !sigma.is_finite() || !k_max.is_finite() || !spacing.is_finite() {
        return Err(Error::Parameter(format!(
            "sigma, k_max and spacing must be positive (got {sigma}, {k_max}, {spacing})"
        )));
    }
    if n_scales == 0 || n_orients == 0 {
        return Err(Error::Parameter("bank needs at least one scale and orientation".into()));
    }
    if kernel_size < 3 {
        return Err(Error::Parameter(format!("kernel_size {kernel_size} < 3")));
    }
    Ok(build_unchecked(params))
}

fn build_unchecked(params: GaborParams) -> GaborBank {
    let size = params.kernel_size;
    let center = (size / 2) as f64;
    let s2 = params.sigma * params.sigma;
    let dc = (-s2 / 2.0).exp();

    let mut indices = Vec::new();
    let mut wave_vectors = Vec::new();
    let mut kernels = Vec::new();
    for nu in 0..params.n_scales {
        let k = params.k_max / params.spacing.powi(nu as i32);
        for mu in 0..params.n_orients {
            let phi = PI * mu as f64 / 8.0;
            let (kx, ky) = (k * phi.cos(), k * phi.sin());
            let k2 = kx * kx + ky * ky;
            let mut grid = ComplexGrid::zeros(size, size);
            for r in 0..size {
                for c in 0..size {
                    let (x, y) = (c as f64 - center, r as f64 - center);
                    let envelope = k2 / s2 * (-k2 * (x * x + y * y) / (2.0 * s2)).exp();
                    let wave = Complex64::from_polar(1.0, kx * x + ky * y) - dc;
                    grid.data[r * size + c] = wave * envelope;
                }
            }
            indices.push((nu, mu));
            wave_vectors.push((kx, ky));
            kernels.push(grid);
        }
    }
    GaborBank {
        params,
        indices,
        wave_vectors,
        kernels,
        spectra: Mutex::new(None),
    }
}

impl GaborBank {
    pub fn params(&self) -> &GaborParams {
        &self.params
    }

    pub fn kernels(&self) -> &[ComplexGrid] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// `(scale, orientation)` of each kernel.
    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn wave_vectors(&self) -> &[(f64, f64)] {
        &self.wave_vectors
    }

    /// Offset of the kernel origin inside each grid.
    pub fn center(&self) -> usize {
        self.params.kernel_size / 2
    }

    fn spectra_for(&self, padded: (usize, usize), fft: &Fft2) -> Arc<Spectra> {
        let mut slot = self.spectra.lock().expect("gabor spectra cache poisoned");
        if let Some(s) = slot.as_ref().filter(|s| s.padded == padded) {
            return Arc::clone(s);
        }
        let (p, q) = padded;
        let ks = self.params.kernel_size;
        let kernels = self
            .kernels
            .iter()
            .map(|k| {
                let mut buf = vec![Complex64::new(0.0, 0.0); p * q];
                for r in 0..ks {
                    buf[r * q..r * q + ks].copy_from_slice(&k.data[r * ks..(r + 1) * ks]);
                }
                fft.forward(&mut buf);
                buf
            })
            .collect();
        let spectra = Arc::new(Spectra { padded, kernels });
        *slot = Some(Arc::clone(&spectra));
        spectra
    }
}

/// Direct spatial-domain convolution with zero padding, output the size
/// of the input: `out(r, c) = sum k(u, v) img(r + cy - u, c + cx - v)`.
pub fn convolve_direct(img: &ImageMatrix, kernel: &ComplexGrid, center: usize) -> ComplexGrid {
    let (rows, cols) = (img.rows() as isize, img.cols() as isize);
    let center = center as isize;
    let mut out = ComplexGrid::zeros(img.rows(), img.cols());
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for u in 0..kernel.rows as isize {
                let sr = r + center - u;
                if sr < 0 || sr >= rows {
                    continue;
                }
                for v in 0..kernel.cols as isize {
                    let sc = c + center - v;
                    if sc < 0 || sc >= cols {
                        continue;
                    }
                    acc += kernel.get(u as usize, v as usize) * img.get(sr as usize, sc as usize);
                }
            }
            out.data[(r * cols + c) as usize] = acc;
        }
    }
    out
}

/// Separable 2-D FFT over a `p x q` row-major buffer. The forward output is
/// left transposed (`q x p`); the inverse expects that layout back.
struct Fft2 {
    p: usize,
    q: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(p: usize, q: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            p,
            q,
            row_fwd: planner.plan_fft_forward(q),
            col_fwd: planner.plan_fft_forward(p),
            row_inv: planner.plan_fft_inverse(q),
            col_inv: planner.plan_fft_inverse(p),
        }
    }

    fn forward(&self, buf: &mut Vec<Complex64>) {
        self.row_fwd.process(buf);
        *buf = transpose(buf, self.p, self.q);
        self.col_fwd.process(buf);
    }

    fn inverse(&self, buf: &mut Vec<Complex64>) {
        self.col_inv.process(buf);
        *buf = transpose(buf, self.q, self.p);
        self.row_inv.process(buf);
        let scale = 1.0 / (self.p * self.q) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

fn transpose(buf: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); buf.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = buf[r * cols + c];
        }
    }
    out
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for f in [2, 3, 5] {
            while k % f == 0 {
                k /= f;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// Convolves the image with every kernel of the bank. Results equal
/// [`convolve_direct`] up to FFT round-off.
pub fn convolve_bank(img: &ImageMatrix, bank: &GaborBank) -> Vec<ComplexGrid> {
    let ks = bank.params.kernel_size;
    let (rows, cols) = (img.rows(), img.cols());
    let padded = (smooth_size(rows + ks - 1), smooth_size(cols + ks - 1));
    let (p, q) = padded;
    let fft = Fft2::new(p, q);
    let spectra = bank.spectra_for(padded, &fft);

    let mut image_spec = vec![Complex64::new(0.0, 0.0); p * q];
    for r in 0..rows {
        for c in 0..cols {
            image_spec[r * q + c] = Complex64::new(img.get(r, c), 0.0);
        }
    }
    fft.forward(&mut image_spec);

    let center = bank.center();
    spectra
        .kernels
        .iter()
        .map(|kspec| {
            let mut buf: Vec<Complex64> = image_spec.iter().zip(kspec).map(|(a, b)| a * b).collect();
            fft.inverse(&mut buf);
            let mut out = ComplexGrid::zeros(rows, cols);
            for r in 0..rows {
                let src = (r + center) * q + center;
                out.data[r * cols..(r + 1) * cols].copy_from_slice(&buf[src..src + cols]);
            }
            out
        })
        .collect()
}

/// Magnitudes at every `grid_step`-th row and column of each response,
/// concatenated in response order.
pub fn sample_magnitudes(responses: &[ComplexGrid], grid_step: usize) -> Result<FeatureVector> {
    if grid_step == 0 {
        return Err(Error::Parameter("grid_step must be >= 1".into()));
    }
    let mut values = Vec::new();
    for resp in responses {
        for r in (0..resp.rows).step_by(grid_step) {
            for c in (0..resp.cols).step_by(grid_step) {
                values.push(resp.get(r, c).norm());
            }
        }
    }
    Ok(FeatureVector::from_finite(values, FeatureSource::Gabor))
}

pub fn gabor_feature_dims(rows: usize, cols: usize, grid_step: usize, bank: &GaborBank) -> usize {
    bank.len() * rows.div_ceil(grid_step) * cols.div_ceil(grid_step)
}

/// Jet features: grid-sampled response magnitudes of the whole bank.
pub fn gabor_features(img: &ImageMatrix, bank: &GaborBank, grid_step: usize) -> Result<FeatureVector> {
    if grid_step == 0 {
        return Err(Error::Parameter("grid_step must be >= 1".into()));
    }
    sample_magnitudes(&convolve_bank(img, bank), grid_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_bank() -> GaborBank {
        build_gabor_bank(GaborParams::default()).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ImageMatrix {
        ImageMatrix::from_fn(rows, cols, |_, _| rng.gen_range(0.0..255.0))
    }

    #[test]
    fn default_bank_shape() {
        let bank = default_bank();
        assert_eq!(bank.len(), 40);
        assert!(bank.kernels().iter().all(|k| k.rows == 32 && k.cols == 32));
        for (i, &(nu, mu)) in bank.indices().iter().enumerate() {
            assert_eq!(i, nu * 8 + mu);
            let (kx, ky) = bank.wave_vectors()[i];
            let k = PI / 2.0 / 2f64.sqrt().powi(nu as i32);
            assert!((kx.hypot(ky) - k).abs() < 1e-15);
            if k > 0.0 {
                let phi = ky.atan2(kx);
                assert!((phi - PI * mu as f64 / 8.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn center_value() {
        let bank = default_bank();
        let v = bank.kernels()[0].get(16, 16);
        // (|k|^2 / s^2)(1 - e^{-s^2/2}) with |k| = pi/2, s = 2 pi.
        let expected = 0.0625 * (1.0 - (-2.0 * PI * PI).exp());
        assert!((v.re - expected).abs() < 1e-12);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = GaborParams::default();
        p.sigma = 0.0;
        assert!(build_gabor_bank(p).is_err());
        let mut p = GaborParams::default();
        p.kernel_size = 2;
        assert!(build_gabor_bank(p).is_err());
        let mut p = GaborParams::default();
        p.n_orients = 0;
        assert!(build_gabor_bank(p).is_err());
    }

    #[test]
    fn kernel_conjugate_symmetry() {
        let bank = default_bank();
        for k in bank.kernels() {
            // Offsets -15..=15 have their mirror on the 32-grid.
            for r in 1..32 {
                for c in 1..32 {
                    let a = k.get(r, c);
                    let b = k.get(32 - r, 32 - c);
                    assert!((a - b.conj()).norm() < 1e-12);
                }
            }
        }
        let odd = build_gabor_bank(GaborParams {
            kernel_size: 31,
            ..GaborParams::default()
        })
        .unwrap();
        for k in odd.kernels() {
            for r in 0..31 {
                for c in 0..31 {
                    assert!((k.get(r, c) - k.get(30 - r, 30 - c).conj()).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let bank = build_gabor_bank(GaborParams {
            kernel_size: 9,
            ..GaborParams::default()
        })
        .unwrap();
        let img = ImageMatrix::from_fn(21, 23, |r, c| if (r, c) == (10, 11) { 1.0 } else { 0.0 });
        let responses = convolve_bank(&img, &bank);
        let c = bank.center();
        for (resp, kernel) in responses.iter().zip(bank.kernels()) {
            for u in 0..9 {
                for v in 0..9 {
                    let got = resp.get(10 + u - c, 11 + v - c);
                    assert!((got - kernel.get(u, v)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fft_matches_direct() {
        let bank = default_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 17, 13);
        let fast = convolve_bank(&img, &bank);
        for (i, kernel) in bank.kernels().iter().enumerate().step_by(7) {
            let slow = convolve_direct(&img, kernel, bank.center());
            let scale = slow.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (a, b) in fast[i].data.iter().zip(&slow.data) {
                assert!((a - b).norm() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let bank = default_bank();
        let f = gabor_features(&ImageMatrix::filled(65, 60, 0.0), &bank, 4).unwrap();
        assert_eq!(f.dims(), 10200);
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_dims() {
        let bank = default_bank();
        assert_eq!(gabor_feature_dims(65, 60, 4, &bank), 40 * 17 * 15);
        let img = ImageMatrix::filled(9, 7, 3.0);
        assert_eq!(gabor_features(&img, &bank, 1).unwrap().dims(), 40 * 9 * 7);
        assert!(gabor_features(&img, &bank, 0).is_err());
    }

    #[test]
    fn magnitudes_ignore_global_phase() {
        let bank = default_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_image(&mut rng, 12, 12);
        let responses = convolve_bank(&img, &bank);
        let rotated: Vec<ComplexGrid> = responses
            .iter()
            .map(|g| ComplexGrid {
                rows: g.rows,
                cols: g.cols,
                data: g.data.iter().map(|v| v * Complex64::from_polar(1.0, 0.7)).collect(),
            })
            .collect();
        let a = sample_magnitudes(&responses, 3).unwrap();
        let b = sample_magnitudes(&rotated, 3).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn serde_rebuilds_kernels() {
        let bank = default_bank();
        let json = serde_json::to_string(&bank).unwrap();
        let back: GaborBank = serde_json::from_str(&json).unwrap();
        assert_eq!(back.kernels(), bank.kernels());
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(24))]

        #[test]
        fn global_phase_leaves_magnitudes(seed in 0u64..10_000, theta in -3.2f64..3.2, step in 1usize..5) {
            let bank = default_bank();
            let img = random_image(&mut ChaCha8Rng::seed_from_u64(seed), 10, 9);
            let responses = convolve_bank(&img, &bank);
            let turn = Complex64::from_polar(1.0, theta);
            let rotated: Vec<ComplexGrid> = responses
                .iter()
                .map(|g| ComplexGrid {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().map(|v| v * turn).collect(),
                })
                .collect();
            let a = sample_magnitudes(&responses, step).unwrap();
            let b = sample_magnitudes(&rotated, step).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                proptest::prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
            }
        }

        #[test]
        fn dims_ignore_content(rows in 2usize..20, cols in 2usize..20, step in 1usize..6, seed in 0u64..10_000) {
            let bank = default_bank();
            let img = random_image(&mut ChaCha8Rng::seed_from_u64(seed), rows, cols);
            let expected = 40 * rows.div_ceil(step) * cols.div_ceil(step);
            proptest::prop_assert_eq!(gabor_features(&img, &bank, step).unwrap().dims(), expected);
            proptest::prop_assert_eq!(gabor_feature_dims(rows, cols, step, &bank), expected);
        }
    }
}
