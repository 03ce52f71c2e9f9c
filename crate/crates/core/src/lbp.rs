//! 3x3 local binary patterns and block histogram features.
//!
//! Neighbour `i` contributes bit `2^i` when it is strictly brighter than the
//! centre. Bits start at the top-left neighbour and run clockwise:
//!
//! ```text
//! 0 1 2
//! 7 c 3
//! 6 5 4
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSource, FeatureVector};
use crate::image::ImageMatrix;

/// `(row, col)` offsets of neighbours 0..8 relative to the centre.
pub const NEIGHBOUR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

pub const DEFAULT_BLOCKS: usize = 9;
const BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbpParams {
    pub blocks_rows: usize,
    pub blocks_cols: usize,
}

impl Default for LbpParams {
    fn default() -> Self {
        LbpParams {
            blocks_rows: DEFAULT_BLOCKS,
            blocks_cols: DEFAULT_BLOCKS,
        }
    }
}

/// Code of one 3x3 patch given row-major.
pub fn lbp_code(patch: &[f64; 9]) -> u8 {
    let center = patch[4];
    NEIGHBOUR_OFFSETS
        .iter()
        .enumerate()
        .fold(0u8, |code, (bit, &(dr, dc))| {
            let g = patch[((1 + dr) * 3 + (1 + dc)) as usize];
            if g - center > 0.0 {
                code | (1 << bit)
            } else {
                code
            }
        })
}

/// Codes of the interior pixels, `(rows - 2) x (cols - 2)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpCodeImage {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<u8>,
}

impl LbpCodeImage {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.cols + col]
    }
}

pub fn lbp_image(img: &ImageMatrix) -> Result<LbpCodeImage> {
    if img.rows() < 3 || img.cols() < 3 {
        return Err(Error::InvalidImage(format!(
            "LBP needs at least 3x3 pixels, got {}x{}",
            img.rows(),
            img.cols()
        )));
    }
    let (rows, cols) = (img.rows() - 2, img.cols() - 2);
    let stride = img.cols();
    let px = img.pixels();
    // Flat offsets of each neighbour from the centre index.
    let offsets = NEIGHBOUR_OFFSETS.map(|(dr, dc)| dr * stride as isize + dc);

    let mut codes = Vec::with_capacity(rows * cols);
    for r in 1..=rows {
        let row_base = r * stride;
        for c in 1..=cols {
            let idx = row_base + c;
            let center = px[idx];
            let mut code = 0u8;
            for (bit, off) in offsets.iter().enumerate() {
                code |= ((px[(idx as isize + off) as usize] > center) as u8) << bit;
            }
            codes.push(code);
        }
    }
    Ok(LbpCodeImage { rows, cols, codes })
}

/// Splits `len` into `parts` spans; the last span absorbs the remainder.
fn spans(len: usize, parts: usize) -> impl Iterator<Item = (usize, usize)> {
    let base = len / parts;
    (0..parts).map(move |i| {
        let start = i * base;
        let end = if i + 1 == parts { len } else { start + base };
        (start, end)
    })
}

/// Per-block 256-bin count histograms, concatenated block-row-major.
pub fn lbp_block_histograms(img: &ImageMatrix, params: LbpParams) -> Result<FeatureVector> {
    let LbpParams {
        blocks_rows,
        blocks_cols,
    } = params;
    if blocks_rows == 0 || blocks_cols == 0 {
        return Err(Error::Parameter("block counts must be >= 1".into()));
    }
    let codes = lbp_image(img)?;
    if blocks_rows > codes.rows || blocks_cols > codes.cols {
        return Err(Error::InvalidImage(format!(
            "{blocks_rows}x{blocks_cols} blocks do not fit a {}x{} code image",
            codes.rows, codes.cols
        )));
    }
    let mut values = vec![0.0; blocks_rows * blocks_cols * BINS];
    for (bi, (r0, r1)) in spans(codes.rows, blocks_rows).enumerate() {
        for (bj, (c0, c1)) in spans(codes.cols, blocks_cols).enumerate() {
            let hist = &mut values[(bi * blocks_cols + bj) * BINS..][..BINS];
            for r in r0..r1 {
                for &code in &codes.codes[r * codes.cols + c0..r * codes.cols + c1] {
                    hist[code as usize] += 1.0;
                }
            }
        }
    }
    Ok(FeatureVector::from_finite(values, FeatureSource::Lbp))
}

pub fn lbp_feature_dims(params: LbpParams) -> usize {
    params.blocks_rows * params.blocks_cols * BINS
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// Naive per-pixel code: gathers the 3x3 window explicitly and applies
    /// the threshold-and-weight sum term by term.
    pub fn naive_lbp(img: &ImageMatrix) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for r in 1..img.rows() - 1 {
            let mut row = Vec::new();
            for c in 1..img.cols() - 1 {
                let center = img.get(r, c);
                let ring = [
                    img.get(r - 1, c - 1),
                    img.get(r - 1, c),
                    img.get(r - 1, c + 1),
                    img.get(r, c + 1),
                    img.get(r + 1, c + 1),
                    img.get(r + 1, c),
                    img.get(r + 1, c - 1),
                    img.get(r, c - 1),
                ];
                let mut code = 0u32;
                for (i, g) in ring.iter().enumerate() {
                    let s = if g - center > 0.0 { 1 } else { 0 };
                    code += s * 2u32.pow(i as u32);
                }
                row.push(code as u8);
            }
            out.push(row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn code_examples() {
        assert_eq!(lbp_code(&[7.0; 9]), 0);
        let mut all = [9.0; 9];
        all[4] = 5.0;
        assert_eq!(lbp_code(&all), 255);
        let mut one = [0.0; 9];
        one[4] = 5.0;
        one[0] = 9.0;
        assert_eq!(lbp_code(&one), 1);
        // Right-hand neighbour is bit 3, bottom-left is bit 6.
        let mut p = [0.0; 9];
        p[4] = 1.0;
        p[5] = 2.0;
        p[6] = 2.0;
        assert_eq!(lbp_code(&p), (1 << 3) | (1 << 6));
    }

    #[test]
    fn constant_image_codes() {
        let codes = lbp_image(&ImageMatrix::filled(10, 10, 77.0)).unwrap();
        assert_eq!((codes.rows, codes.cols), (8, 8));
        assert!(codes.codes.iter().all(|&c| c == 0));
    }

    #[test]
    fn too_small() {
        assert!(lbp_image(&ImageMatrix::filled(2, 5, 0.0)).is_err());
        let img = ImageMatrix::filled(5, 5, 0.0);
        let p = LbpParams {
            blocks_rows: 4,
            blocks_cols: 1,
        };
        assert!(lbp_block_histograms(&img, p).is_err());
    }

    #[test]
    fn step_edge_bits_face_the_bright_side() {
        let img = ImageMatrix::from_fn(8, 8, |_, c| if c < 4 { 0.0 } else { 255.0 });
        let codes = lbp_image(&img).unwrap();
        let oracle = oracle::naive_lbp(&img);
        // Interior column 2 is image column 3: dark pixel next to the edge.
        let right_side = (1 << 2) | (1 << 3) | (1 << 4);
        for r in 0..codes.rows {
            assert_eq!(codes.get(r, 2), right_side);
            assert_eq!(codes.get(r, 2), oracle[r][2]);
            // Bright pixels see nothing brighter.
            assert_eq!(codes.get(r, 3), 0);
        }
    }

    #[test]
    fn matches_oracle_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let img = ImageMatrix::from_fn(16, 16, |_, _| rng.gen_range(0..256) as f64);
            let codes = lbp_image(&img).unwrap();
            let oracle = oracle::naive_lbp(&img);
            for r in 0..14 {
                for c in 0..14 {
                    assert_eq!(codes.get(r, c), oracle[r][c]);
                }
            }
        }
    }

    #[test]
    fn default_dims_and_mass() {
        let img = ImageMatrix::from_fn(65, 60, |r, c| ((r * 7 + c * 13) % 256) as f64);
        let f = lbp_block_histograms(&img, LbpParams::default()).unwrap();
        assert_eq!(f.dims(), 20736);
        assert_eq!(f.values().iter().sum::<f64>(), (63 * 58) as f64);
    }

    #[test]
    fn constant_blocks_fill_bin_zero() {
        let img = ImageMatrix::filled(20, 17, 3.0);
        let p = LbpParams {
            blocks_rows: 4,
            blocks_cols: 3,
        };
        let f = lbp_block_histograms(&img, p).unwrap();
        for block in f.values().chunks(256) {
            assert!(block[0] > 0.0);
            assert!(block[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn remainder_goes_to_last_block() {
        // 7 interior rows into 3 blocks: 2, 2, 3.
        let spans: Vec<_> = spans(7, 3).collect();
        assert_eq!(spans, vec![(0, 2), (2, 4), (4, 7)]);
    }

    proptest! {
        #[test]
        fn shift_invariance(pixels in proptest::collection::vec(0u8..200, 49), shift in 0u8..55) {
            let a = ImageMatrix::new(7, 7, pixels.iter().map(|&v| v as f64).collect()).unwrap();
            let b = ImageMatrix::new(7, 7, pixels.iter().map(|&v| (v + shift) as f64).collect()).unwrap();
            prop_assert_eq!(lbp_image(&a).unwrap(), lbp_image(&b).unwrap());
        }

        #[test]
        fn mass_conservation(rows in 3usize..30, cols in 3usize..30, br in 1usize..5, bc in 1usize..5, seed in 0u64..1000) {
            prop_assume!(br <= rows - 2 && bc <= cols - 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = ImageMatrix::from_fn(rows, cols, |_, _| rng.gen_range(0.0..255.0));
            let f = lbp_block_histograms(&img, LbpParams { blocks_rows: br, blocks_cols: bc }).unwrap();
            prop_assert_eq!(f.dims(), br * bc * 256);
            prop_assert_eq!(f.values().iter().sum::<f64>(), ((rows - 2) * (cols - 2)) as f64);
        }
    }
}
