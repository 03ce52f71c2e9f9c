//! Dataset manifests, landmark files and face preprocessing.
//!
//! A manifest is a CSV with the header
//! `image,left_eye_x,left_eye_y,right_eye_x,right_eye_y,landmarks,gender,age,expression,ethnicity`.
//! Empty cells mean "absent"; paths are relative to the manifest file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageMatrix;

/// Normalized face size used by the Gabor, LBP and wavelet pipelines.
pub const DEFAULT_FACE_ROWS: usize = 65;
pub const DEFAULT_FACE_COLS: usize = 60;

/// Canonical eye placement as fractions of the output frame: `(x, y)`.
pub const CANONICAL_LEFT_EYE: (f64, f64) = (0.3, 0.35);
pub const CANONICAL_RIGHT_EYE: (f64, f64) = (0.7, 0.35);

pub const MANIFEST_HEADER: [&str; 10] = [
    "image",
    "left_eye_x",
    "left_eye_y",
    "right_eye_x",
    "right_eye_y",
    "landmarks",
    "gender",
    "age",
    "expression",
    "ethnicity",
];

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($token => Ok($name::$variant),)+
                    other => Err(Error::UnknownToken {
                        kind: $kind,
                        token: other.to_string(),
                        allowed: [$($token),+].join(", "),
                    }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}

label_enum!(Gender, "gender", {
    Male => "male",
    Female => "female",
});

label_enum!(Expression, "expression", {
    Anger => "anger",
    Disgust => "disgust",
    Fear => "fear",
    Happy => "happy",
    Sad => "sad",
    Surprise => "surprise",
});

label_enum!(Ethnicity, "ethnicity", {
    White => "white",
    Black => "black",
    Indian => "indian",
    Other => "other",
});

/// A 2-D point in pixel coordinates (`x` along columns, `y` along rows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyePair {
    pub left: Point,
    pub right: Point,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub image_path: PathBuf,
    pub eyes: Option<EyePair>,
    pub landmarks_path: Option<PathBuf>,
    pub gender: Option<Gender>,
    pub age_years: Option<u32>,
    pub expression: Option<Expression>,
    pub ethnicity: Option<Ethnicity>,
}

impl DatasetRecord {
    fn has_label(&self) -> bool {
        self.gender.is_some()
            || self.age_years.is_some()
            || self.expression.is_some()
            || self.ethnicity.is_some()
    }
}

/// Reads a manifest CSV, resolving paths relative to its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;

    let headers = reader.headers().map_err(|e| csv_error(path, 0, e))?.clone();
    if headers.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            row: 0,
            field: "header".into(),
            message: format!("expected `{}`", MANIFEST_HEADER.join(",")),
        });
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // Row numbers count data rows from 1, as a spreadsheet would show them.
        let row_no = i + 1;
        let row = row.map_err(|e| csv_error(path, row_no, e))?;
        records.push(parse_row(path, base, row_no, &row)?);
    }
    Ok(records)
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        row,
        field: "-".into(),
        message: e.to_string(),
    }
}

fn parse_row(path: &Path, base: &Path, row: usize, rec: &csv::StringRecord) -> Result<DatasetRecord> {
    let field_err = |field: &str, message: String| Error::Manifest {
        path: path.to_path_buf(),
        row,
        field: field.to_string(),
        message,
    };
    let cell = |i: usize| rec.get(i).filter(|s| !s.is_empty());

    let image = cell(0).ok_or_else(|| field_err("image", "missing image path".into()))?;

    let mut coords = [None; 4];
    for (k, slot) in coords.iter_mut().enumerate() {
        let name = MANIFEST_HEADER[1 + k];
        if let Some(s) = cell(1 + k) {
            let v: f64 = s
                .parse()
                .map_err(|_| field_err(name, format!("`{s}` is not a number")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(field_err(name, format!("`{s}` must be finite and non-negative")));
            }
            *slot = Some(v);
        }
    }
    let eyes = match coords {
        [Some(lx), Some(ly), Some(rx), Some(ry)] => Some(EyePair {
            left: Point::new(lx, ly),
            right: Point::new(rx, ry),
        }),
        [None, None, None, None] => None,
        _ => {
            return Err(field_err(
                "left_eye_x",
                "eye coordinates must be all present or all empty".into(),
            ))
        }
    };

    let label = |i: usize| -> Result<Option<&str>> { Ok(cell(i)) };
    let tagged = |field: &str, e: Error| match e {
        Error::UnknownToken { .. } => field_err(field, e.to_string()),
        other => other,
    };

    let gender = label(6)?
        .map(Gender::from_str)
        .transpose()
        .map_err(|e| tagged("gender", e))?;
    let age_years = label(7)?
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| field_err("age", format!("`{s}` is not a non-negative integer")))
        })
        .transpose()?;
    let expression = label(8)?
        .map(Expression::from_str)
        .transpose()
        .map_err(|e| tagged("expression", e))?;
    let ethnicity = label(9)?
        .map(Ethnicity::from_str)
        .transpose()
        .map_err(|e| tagged("ethnicity", e))?;

    let record = DatasetRecord {
        image_path: base.join(image),
        eyes,
        landmarks_path: cell(5).map(|p| base.join(p)),
        gender,
        age_years,
        expression,
        ethnicity,
    };
    if !record.has_label() {
        return Err(field_err("gender", "row carries no label".into()));
    }
    Ok(record)
}

/// Writes a manifest; paths under the manifest's directory are stored
/// relative to it.
pub fn write_manifest(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, e))?;
    writer
        .write_record(MANIFEST_HEADER)
        .map_err(|e| csv_error(path, 0, e))?;
    for (i, r) in records.iter().enumerate() {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let eye = |f: fn(&EyePair) -> f64| opt(r.eyes.as_ref().map(|e| f(e).to_string()));
        writer
            .write_record([
                rel(&r.image_path),
                eye(|e| e.left.x),
                eye(|e| e.left.y),
                eye(|e| e.right.x),
                eye(|e| e.right.y),
                opt(r.landmarks_path.as_deref().map(rel)),
                opt(r.gender.map(|g| g.to_string())),
                opt(r.age_years.map(|a| a.to_string())),
                opt(r.expression.map(|e| e.to_string())),
                opt(r.ethnicity.map(|e| e.to_string())),
            ])
            .map_err(|e| csv_error(path, i + 1, e))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// Landmark annotation layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LandmarkScheme {
    Fgnet68,
    Cohn68,
    Custom(usize),
}

impl LandmarkScheme {
    pub fn point_count(self) -> usize {
        match self {
            LandmarkScheme::Fgnet68 | LandmarkScheme::Cohn68 => 68,
            LandmarkScheme::Custom(n) => n,
        }
    }
}

/// Ordered annotation points for one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<Point>,
    scheme: LandmarkScheme,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, scheme: LandmarkScheme) -> Result<Self> {
        if points.len() != scheme.point_count() {
            return Err(Error::LandmarkCount {
                expected: scheme.point_count(),
                actual: points.len(),
            });
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.x.is_finite() && p.y.is_finite()) || p.x < 0.0 || p.y < 0.0)
        {
            return Err(Error::Parameter(format!(
                "landmark ({}, {}) must be finite and non-negative",
                p.x, p.y
            )));
        }
        Ok(LandmarkSet { points, scheme })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn scheme(&self) -> LandmarkScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Reads a points file: `n_points: N` followed by N lines of `x y`.
///
/// An optional leading `version:` line and `{` / `}` delimiters are
/// tolerated, as found in files distributed with aging databases.
pub fn load_landmarks(path: impl AsRef<Path>, scheme: LandmarkScheme) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, scheme).map_err(|e| match e {
        Error::Parameter(message) => Error::Landmarks {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn parse_landmarks(text: &str, scheme: LandmarkScheme) -> Result<LandmarkSet> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && *l != "{" && *l != "}")
        .filter(|l| !l.starts_with("version:"));

    let header = lines
        .next()
        .ok_or_else(|| Error::Parameter("empty landmark file".into()))?;
    let declared: usize = header
        .strip_prefix("n_points:")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| Error::Parameter(format!("expected `n_points: <N>`, found `{header}`")))?;

    let mut points = Vec::with_capacity(declared);
    for (i, line) in lines.enumerate() {
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => points.push(Point::new(x, y)),
            _ => {
                return Err(Error::Parameter(format!(
                    "line {}: expected `x y`, found `{line}`",
                    i + 2
                )))
            }
        }
    }
    if points.len() != declared {
        return Err(Error::LandmarkCount {
            expected: declared,
            actual: points.len(),
        });
    }
    LandmarkSet::new(points, scheme)
}

pub fn format_landmarks(set: &LandmarkSet) -> String {
    let mut out = format!("n_points: {}\n", set.len());
    for p in set.points() {
        out.push_str(&format!("{} {}\n", p.x, p.y));
    }
    out
}

pub fn write_landmarks(path: impl AsRef<Path>, set: &LandmarkSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_landmarks(set)).map_err(|e| Error::io(path, e))
}

/// Eye positions in an `rows x cols` frame after [`normalize_face`].
pub fn canonical_eyes(rows: usize, cols: usize) -> EyePair {
    EyePair {
        left: Point::new(
            CANONICAL_LEFT_EYE.0 * cols as f64,
            CANONICAL_LEFT_EYE.1 * rows as f64,
        ),
        right: Point::new(
            CANONICAL_RIGHT_EYE.0 * cols as f64,
            CANONICAL_RIGHT_EYE.1 * rows as f64,
        ),
    }
}

/// Maps the eye centres onto the canonical positions of an
/// `out_rows x out_cols` frame with a similarity transform and resamples
/// bilinearly. Source reads outside the image are 0.
pub fn normalize_face(
    img: &ImageMatrix,
    eyes: EyePair,
    out_rows: usize,
    out_cols: usize,
) -> Result<ImageMatrix> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::Parameter("output frame must be non-empty".into()));
    }
    let inside = |p: Point| {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (img.cols() - 1) as f64 && p.y <= (img.rows() - 1) as f64
    };
    if !inside(eyes.left) || !inside(eyes.right) {
        return Err(Error::Parameter(format!(
            "eye centres {:?} lie outside the {}x{} image",
            eyes,
            img.rows(),
            img.cols()
        )));
    }
    let (sx, sy) = (eyes.right.x - eyes.left.x, eyes.right.y - eyes.left.y);
    if sx * sx + sy * sy < 1e-12 {
        return Err(Error::Degenerate("eye centres coincide".into()));
    }

    // Output-to-source similarity as complex multiplication:
    // src = a * (out - L') + L, with a = (R - L) / (R' - L').
    let canon = canonical_eyes(out_rows, out_cols);
    let (dx, dy) = (canon.right.x - canon.left.x, canon.right.y - canon.left.y);
    let denom = dx * dx + dy * dy;
    let a_re = (sx * dx + sy * dy) / denom;
    let a_im = (sy * dx - sx * dy) / denom;

    Ok(ImageMatrix::from_fn(out_rows, out_cols, |r, c| {
        let ox = c as f64 - canon.left.x;
        let oy = r as f64 - canon.left.y;
        let x = a_re * ox - a_im * oy + eyes.left.x;
        let y = a_im * ox + a_re * oy + eyes.left.y;
        img.sample_bilinear(x, y)
    }))
}

/// Global histogram equalization over 256 bins:
/// `out = floor(255 * cdf(v) / N)` with `v` the rounded input level.
pub fn histogram_equalize(img: &ImageMatrix) -> ImageMatrix {
    let bin = |v: f64| v.round().clamp(0.0, 255.0) as usize;
    let mut hist = [0usize; 256];
    for &v in img.pixels() {
        hist[bin(v)] += 1;
    }
    let n = img.pixels().len() as f64;
    let mut map = [0.0f64; 256];
    let mut cdf = 0usize;
    for (level, count) in hist.iter().enumerate() {
        cdf += count;
        map[level] = (255.0 * cdf as f64 / n).floor();
    }
    ImageMatrix::from_fn(img.rows(), img.cols(), |r, c| map[bin(img.get(r, c))])
}

/// Eye normalization followed by equalization, as applied before the
/// Gabor, LBP and wavelet extractors.
pub fn preprocess(img: &ImageMatrix, eyes: EyePair, rows: usize, cols: usize) -> Result<ImageMatrix> {
    Ok(histogram_equalize(&normalize_face(img, eyes, rows, cols)?))
}
