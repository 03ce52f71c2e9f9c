//! Separable 2-D discrete wavelet decomposition with periodic extension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSource, FeatureVector};
use crate::image::ImageMatrix;

/// Daubechies lowpass with 8 vanishing moments (16 taps), `sum = sqrt(2)`.
/// Minimum-phase root selection of the spectral factorization.
const DB8_LOWPASS: [f64; 16] = [
    0.054_415_842_243_104_01,
    0.312_871_590_914_299_97,
    0.675_630_736_297_289_8,
    0.585_354_683_654_206_7,
    -0.015_829_105_256_349_306,
    -0.284_015_542_961_546_93,
    0.000_472_484_573_913_282_8,
    0.128_747_426_620_478_46,
    -0.017_369_301_001_807_546,
    -0.044_088_253_930_794_75,
    0.013_981_027_917_398_282,
    0.008_746_094_047_405_777,
    -0.004_870_352_993_451_574,
    -0.000_391_740_373_376_947,
    0.000_675_449_406_450_569_4,
    -0.000_117_476_784_124_769_53,
];

pub const DEFAULT_LEVELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletFilters {
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
    pub family: String,
}

impl WaveletFilters {
    /// Highpass is the alternating-sign reversal `h1[n] = (-1)^n h0[L-1-n]`.
    pub fn from_lowpass(lowpass: Vec<f64>, family: impl Into<String>) -> Self {
        let len = lowpass.len();
        let highpass = (0..len)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign * lowpass[len - 1 - n]
            })
            .collect();
        WaveletFilters {
            lowpass,
            highpass,
            family: family.into(),
        }
    }
}

pub fn daubechies8_filters() -> WaveletFilters {
    WaveletFilters::from_lowpass(DB8_LOWPASS.to_vec(), "db8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletParams {
    pub filters: WaveletFilters,
    pub levels: usize,
}

impl Default for WaveletParams {
    fn default() -> Self {
        WaveletParams {
            filters: daubechies8_filters(),
            levels: DEFAULT_LEVELS,
        }
    }
}

/// Row-major real grid used for subbands.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Band {
    fn from_image(img: &ImageMatrix) -> Self {
        Band {
            rows: img.rows(),
            cols: img.cols(),
            data: img.pixels().to_vec(),
        }
    }

    /// Replicates the last row/column when a dimension is odd.
    fn pad_even(&self) -> Band {
        let rows = self.rows + self.rows % 2;
        let cols = self.cols + self.cols % 2;
        if (rows, cols) == (self.rows, self.cols) {
            return self.clone();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let sr = r.min(self.rows - 1);
            for c in 0..cols {
                data.push(self.data[sr * self.cols + c.min(self.cols - 1)]);
            }
        }
        Band { rows, cols, data }
    }
}

/// One level of decomposition. Names give the filter along rows first,
/// then along columns: `hl` is highpass horizontally, lowpass vertically.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandLevel {
    pub ll: Band,
    pub hl: Band,
    pub lh: Band,
    pub hh: Band,
}

/// Periodic analysis of one even-length signal: `out[n] = sum_k h[k] x[(2n + k) mod N]`.
fn analyze(signal: &[f64], taps: &[f64], out: &mut [f64]) {
    let n = signal.len();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, h) in taps.iter().enumerate() {
            acc += h * signal[(2 * i + k) % n];
        }
        *o = acc;
    }
}

/// Filters along rows, then columns, decimating by two each time. Odd
/// dimensions are first padded by one replicated sample.
pub fn dwt2_level(band: &Band, filters: &WaveletFilters) -> SubbandLevel {
    let padded = band.pad_even();
    let (rows, cols) = (padded.rows, padded.cols);
    let (half_r, half_c) = (rows / 2, cols / 2);

    // Row pass: each row -> (L | H) halves.
    let mut low = vec![0.0; rows * half_c];
    let mut high = vec![0.0; rows * half_c];
    for r in 0..rows {
        let row = &padded.data[r * cols..(r + 1) * cols];
        analyze(row, &filters.lowpass, &mut low[r * half_c..(r + 1) * half_c]);
        analyze(row, &filters.highpass, &mut high[r * half_c..(r + 1) * half_c]);
    }

    let column_pass = |src: &[f64]| -> (Band, Band) {
        let mut lo = vec![0.0; half_r * half_c];
        let mut hi = vec![0.0; half_r * half_c];
        let mut column = vec![0.0; rows];
        let mut out_lo = vec![0.0; half_r];
        let mut out_hi = vec![0.0; half_r];
        for c in 0..half_c {
            for r in 0..rows {
                column[r] = src[r * half_c + c];
            }
            analyze(&column, &filters.lowpass, &mut out_lo);
            analyze(&column, &filters.highpass, &mut out_hi);
            for r in 0..half_r {
                lo[r * half_c + c] = out_lo[r];
                hi[r * half_c + c] = out_hi[r];
            }
        }
        let band = |data| Band {
            rows: half_r,
            cols: half_c,
            data,
        };
        (band(lo), band(hi))
    };

    let (ll, lh) = column_pass(&low);
    let (hl, hh) = column_pass(&high);
    SubbandLevel { ll, hl, lh, hh }
}

/// Full decomposition; `levels[0]` is the finest level. Only the deepest
/// level's `ll` is a final band.
pub fn decompose(img: &ImageMatrix, filters: &WaveletFilters, levels: usize) -> Result<Vec<SubbandLevel>> {
    if levels == 0 {
        return Err(Error::Parameter("wavelet levels must be >= 1".into()));
    }
    let mut out: Vec<SubbandLevel> = Vec::with_capacity(levels);
    let mut current = Band::from_image(img);
    for _ in 0..levels {
        let level = dwt2_level(&current, filters);
        current = level.ll.clone();
        out.push(level);
    }
    Ok(out)
}

/// Concatenates `[deepest LL, HL, LH, HH]` followed by the `HL, LH, HH`
/// triples of each shallower level, every band row-major.
pub fn wavelet_features(img: &ImageMatrix, params: &WaveletParams) -> Result<FeatureVector> {
    let levels = decompose(img, &params.filters, params.levels)?;
    let deepest = levels.last().expect("levels >= 1");
    let mut values = deepest.ll.data.clone();
    for level in levels.iter().rev() {
        values.extend_from_slice(&level.hl.data);
        values.extend_from_slice(&level.lh.data);
        values.extend_from_slice(&level.hh.data);
    }
    Ok(FeatureVector::from_finite(values, FeatureSource::Wavelet))
}
