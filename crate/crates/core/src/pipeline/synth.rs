//! Parametric face-like images with controllable attribute cues.
//!
//! Faces are drawn in a face coordinate frame with the eyes at `(-1, 0)`
//! and `(1, 0)` and `v` pointing down, then mapped into the image by a
//! jittered similarity. Cues:
//! - gender: aspect ratio of the head ellipse;
//! - age: wavelength of additive wrinkle stripes on forehead and cheeks;
//! - expression: curvature of the mouth bar;
//! - ethnicity: skin intensity band, drawn over a background ramp so the
//!   band survives histogram equalization.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::par_map;
use crate::dataset::{
    write_landmarks, write_manifest, DatasetRecord, Ethnicity, Expression, EyePair, Gender, LandmarkScheme,
    LandmarkSet, Point,
};
use crate::error::{Error, Result};
use crate::image::ImageMatrix;

/// Strength of each attribute cue; 0 makes the classes indistinguishable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CueStrengths {
    pub gender: f64,
    pub age: f64,
    pub expression: f64,
    pub ethnicity: f64,
}

impl Default for CueStrengths {
    fn default() -> Self {
        CueStrengths {
            gender: 1.0,
            age: 1.0,
            expression: 1.0,
            ethnicity: 1.0,
        }
    }
}

/// Corpus description, read from TOML. Every field has a default, so an
/// empty file describes the standard 400 / 200 corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub train: usize,
    pub test: usize,
    pub rows: usize,
    pub cols: usize,
    pub genders: Vec<Gender>,
    pub expressions: Vec<Expression>,
    pub ethnicities: Vec<Ethnicity>,
    pub age_min: u32,
    pub age_max: u32,
    pub cues: CueStrengths,
    /// Men age on the forehead and women on the cheeks, with the opposite
    /// trend; the other region carries age-independent stripes. Age cues
    /// then only make sense once gender is known.
    pub gender_dependent_aging: bool,
    /// Scales rotation, scale and translation jitter.
    pub pose_jitter: f64,
    /// Half-width of uniform pixel noise, in grey levels.
    pub pixel_noise: f64,
    /// Half-width of uniform annotation noise, in face units.
    pub landmark_noise: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            train: 400,
            test: 200,
            rows: 112,
            cols: 112,
            genders: Gender::ALL.to_vec(),
            expressions: Expression::ALL.to_vec(),
            ethnicities: Ethnicity::ALL.to_vec(),
            age_min: 0,
            age_max: 60,
            cues: CueStrengths::default(),
            gender_dependent_aging: false,
            pose_jitter: 1.0,
            pixel_noise: 4.0,
            landmark_noise: 0.015,
        }
    }
}

impl CorpusSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: CorpusSpec = toml::from_str(text).map_err(|e| Error::CorpusSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("corpus spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::CorpusSpec(m.to_string()));
        if self.rows < 48 || self.cols < 48 {
            return fail("images must be at least 48x48");
        }
        if self.genders.is_empty() || self.expressions.is_empty() || self.ethnicities.is_empty() {
            return fail("every attribute needs at least one class");
        }
        if self.age_min > self.age_max || self.age_max > 60 {
            return fail("ages must satisfy age_min <= age_max <= 60");
        }
        let cues = [self.cues.gender, self.cues.age, self.cues.expression, self.cues.ethnicity];
        if cues.iter().any(|c| !(0.0..=2.0).contains(c)) {
            return fail("cue strengths must lie in [0, 2]");
        }
        if !(0.0..=2.0).contains(&self.pose_jitter) || !(0.0..=30.0).contains(&self.pixel_noise) {
            return fail("pose_jitter must lie in [0, 2] and pixel_noise in [0, 30]");
        }
        if !(0.0..=0.1).contains(&self.landmark_noise) {
            return fail("landmark_noise must lie in [0, 0.1]");
        }
        Ok(())
    }
}

/// Attributes and pose of one synthetic face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub gender: Gender,
    pub age: u32,
    pub expression: Expression,
    pub ethnicity: Ethnicity,
    head_a: f64,
    head_b: f64,
    skin: f64,
    mouth_v: f64,
    curvature: f64,
    forehead_wavelength: f64,
    cheek_wavelength: f64,
    phase: f64,
    /// Image position of the eye midpoint, eye distance in pixels, roll.
    centre: (f64, f64),
    eye_distance: f64,
    roll: f64,
}

const HEAD_CENTRE_V: f64 = 0.55;
const MOUTH_HALF_WIDTH: f64 = 0.62;
const MOUTH_HALF_HEIGHT: f64 = 0.14;
const MOUTH_BEND: f64 = 2.0;
const EYE_HALF_W: f64 = 0.38;
const WRINKLE_LONGEST: f64 = 1.0;
const WRINKLE_SHORTEST: f64 = 0.35;
const WRINKLE_AMPLITUDE: f64 = 22.0;
const EYE_HALF_H: f64 = 0.11;

fn expression_curvature(e: Expression) -> f64 {
    match e {
        Expression::Sad => -1.0,
        Expression::Anger => -0.6,
        Expression::Disgust => -0.2,
        Expression::Fear => 0.2,
        Expression::Surprise => 0.6,
        Expression::Happy => 1.0,
    }
}

fn ethnicity_level(e: Ethnicity) -> f64 {
    match e {
        Ethnicity::White => 185.0,
        Ethnicity::Other => 155.0,
        Ethnicity::Indian => 125.0,
        Ethnicity::Black => 95.0,
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.gen_range(0..items.len())]
}

impl FaceParams {
    fn draw(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Self {
        let gender = pick(rng, &spec.genders);
        let age = rng.gen_range(spec.age_min..=spec.age_max);
        let expression = pick(rng, &spec.expressions);
        let ethnicity = pick(rng, &spec.ethnicities);
        let cues = spec.cues;

        let g = match gender {
            Gender::Male => 1.0,
            Gender::Female => -1.0,
        } * cues.gender;
        let head_a = 1.65 + 0.2 * g + rng.gen_range(-0.04..0.04);
        let head_b = 2.25 - 0.15 * g + rng.gen_range(-0.04..0.04);
        let skin = 140.0 + cues.ethnicity * (ethnicity_level(ethnicity) - 140.0) + rng.gen_range(-5.0..5.0);
        let mouth_v = 1.55 + rng.gen_range(-0.03..0.03);
        let curvature = cues.expression * expression_curvature(expression);

        let span = (spec.age_max - spec.age_min).max(1) as f64;
        let mut t = (age - spec.age_min) as f64 / span;
        if spec.gender_dependent_aging && gender == Gender::Female {
            t = 1.0 - t;
        }
        let t = 0.5 + cues.age * (t - 0.5);
        let wavelength = |t: f64| WRINKLE_LONGEST * (WRINKLE_SHORTEST / WRINKLE_LONGEST).powf(t);
        let aged = wavelength(t);
        let distractor = wavelength(rng.gen_range(0.0..1.0));
        let (forehead_wavelength, cheek_wavelength) = match (spec.gender_dependent_aging, gender) {
            (false, _) => (aged, aged),
            (true, Gender::Male) => (aged, distractor),
            (true, Gender::Female) => (distractor, aged),
        };
        let phase = rng.gen_range(0.0..TAU);

        let j = spec.pose_jitter;
        let eye_distance = spec.cols as f64 * 0.25 * (1.0 + j * rng.gen_range(-0.08..0.08));
        let centre = (
            spec.cols as f64 / 2.0 + j * rng.gen_range(-4.0..4.0),
            spec.rows as f64 * 0.42 + j * rng.gen_range(-4.0..4.0),
        );
        let roll = j * rng.gen_range(-8.0..8.0) * PI / 180.0;
        FaceParams {
            gender,
            age,
            expression,
            ethnicity,
            head_a,
            head_b,
            skin,
            mouth_v,
            curvature,
            forehead_wavelength,
            cheek_wavelength,
            phase,
            centre,
            eye_distance,
            roll,
        }
    }

    fn scale(&self) -> f64 {
        self.eye_distance / 2.0
    }

    /// Face coordinates to image coordinates.
    fn to_image(&self, u: f64, v: f64) -> Point {
        let s = self.scale();
        let (sin, cos) = self.roll.sin_cos();
        Point::new(
            self.centre.0 + s * (cos * u - sin * v),
            self.centre.1 + s * (sin * u + cos * v),
        )
    }

    fn to_face(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale();
        let (sin, cos) = self.roll.sin_cos();
        let (dx, dy) = ((x - self.centre.0) / s, (y - self.centre.1) / s);
        (cos * dx + sin * dy, -sin * dx + cos * dy)
    }

    fn mouth_y(&self, u: f64) -> f64 {
        self.mouth_v - MOUTH_BEND * self.curvature * (u * u - 0.13)
    }

    pub fn eyes(&self) -> EyePair {
        EyePair {
            left: self.to_image(-1.0, 0.0),
            right: self.to_image(1.0, 0.0),
        }
    }

    /// 68 annotation points in face coordinates: jaw, brows, nose, eyes,
    /// outer and inner mouth.
    fn face_landmarks(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(68);
        for i in 0..17 {
            let phi = PI + 0.3 - (PI + 0.6) * i as f64 / 16.0;
            pts.push((self.head_a * phi.cos(), HEAD_CENTRE_V + self.head_b * phi.sin()));
        }
        for cx in [-1.0, 1.0] {
            for i in 0..5 {
                let off = -0.55 + 0.275 * i as f64;
                pts.push((cx + off, -0.45 - 0.12 * (1.0 - (off / 0.55).powi(2))));
            }
        }
        for v in [0.1, 0.35, 0.6, 0.85] {
            pts.push((0.0, v));
        }
        for (u, v) in [(-0.3, 1.05), (-0.15, 1.1), (0.0, 1.12), (0.15, 1.1), (0.3, 1.05)] {
            pts.push((u, v));
        }
        for cx in [-1.0, 1.0] {
            for (du, dv) in [
                (-EYE_HALF_W, 0.0),
                (-0.15, -EYE_HALF_H),
                (0.15, -EYE_HALF_H),
                (EYE_HALF_W, 0.0),
                (0.15, EYE_HALF_H),
                (-0.15, EYE_HALF_H),
            ] {
                pts.push((cx + du, dv));
            }
        }
        let m = |u: f64, dv: f64| (u, self.mouth_y(u) + dv);
        pts.push(m(-MOUTH_HALF_WIDTH, 0.0));
        for u in [-0.4, -0.2, 0.0, 0.2, 0.4] {
            pts.push(m(u, -MOUTH_HALF_HEIGHT));
        }
        pts.push(m(MOUTH_HALF_WIDTH, 0.0));
        for u in [0.4, 0.2, 0.0, -0.2, -0.4] {
            pts.push(m(u, MOUTH_HALF_HEIGHT));
        }
        pts.push(m(-0.5, 0.0));
        for u in [-0.2, 0.0, 0.2] {
            pts.push(m(u, -0.035));
        }
        pts.push(m(0.5, 0.0));
        for u in [0.2, 0.0, -0.2] {
            pts.push(m(u, 0.035));
        }
        pts
    }

    pub fn landmarks(&self, noise: f64, rng: &mut ChaCha8Rng) -> Result<LandmarkSet> {
        let pts = self
            .face_landmarks()
            .into_iter()
            .map(|(u, v)| {
                let (du, dv) = if noise > 0.0 {
                    (rng.gen_range(-noise..noise), rng.gen_range(-noise..noise))
                } else {
                    (0.0, 0.0)
                };
                let p = self.to_image(u + du, v + dv);
                Point::new(p.x.max(0.0), p.y.max(0.0))
            })
            .collect();
        LandmarkSet::new(pts, LandmarkScheme::Fgnet68)
    }

    /// Renders the face; `noise` draws from `rng`.
    pub fn render(&self, rows: usize, cols: usize, pixel_noise: f64, rng: &mut ChaCha8Rng) -> ImageMatrix {
        // Face units per pixel, for one-pixel edge smoothing.
        let px = 1.0 / self.scale();
        let soft = |d: f64| (0.5 - d / px).clamp(0.0, 1.0);
        ImageMatrix::from_fn(rows, cols, |r, c| {
            let (x, y) = (c as f64, r as f64);
            let background = 30.0 + 190.0 * x / (cols - 1) as f64;
            let (u, v) = self.to_face(x, y);

            let (hu, hv) = (u / self.head_a, (v - HEAD_CENTRE_V) / self.head_b);
            let radius = (hu * hu + hv * hv).sqrt();
            let head = soft((radius - 1.0) * self.head_a.min(self.head_b));

            let mut skin = self.skin;
            let forehead = v > -1.7 && v < -0.55 && u.abs() < 1.2;
            let cheek = v > 0.3 && v < 1.1 && u.abs() > 0.55 && u.abs() < 1.35;
            let wavelength = if forehead {
                Some(self.forehead_wavelength)
            } else if cheek {
                Some(self.cheek_wavelength)
            } else {
                None
            };
            if let Some(w) = wavelength {
                skin += WRINKLE_AMPLITUDE * (TAU * v / w + self.phase).sin();
            }
            let mut face = skin;
            for cx in [-1.0, 1.0] {
                let d = ((u - cx).abs() - EYE_HALF_W).max((v.abs()) - EYE_HALF_H);
                let w = soft(d);
                face = face * (1.0 - w) + (self.skin - 90.0).max(10.0) * w;
            }
            let mouth_d = ((v - self.mouth_y(u)).abs() - MOUTH_HALF_HEIGHT).max(u.abs() - MOUTH_HALF_WIDTH);
            let w = soft(mouth_d);
            face = face * (1.0 - w) + (self.skin - 70.0).max(15.0) * w;

            let value = background * (1.0 - head) + face * head;
            let noise = if pixel_noise > 0.0 {
                rng.gen_range(-pixel_noise..pixel_noise)
            } else {
                0.0
            };
            value + noise
        })
    }
}

/// Records and manifests written by [`generate_synthetic_corpus`].
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// Per-image random stream; independent of rendering order.
fn face_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 32) | index as u64);
    rng
}

/// Renders the corpus into `out_dir`: `images/`, `landmarks/`,
/// `train.csv`, `test.csv` and an echo of the spec in `corpus.toml`.
pub fn generate_synthetic_corpus(spec: &CorpusSpec, seed: u64, out_dir: impl AsRef<Path>) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let out = out_dir.as_ref();
    for sub in ["images", "landmarks"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let spec_path = out.join("corpus.toml");
    std::fs::write(&spec_path, spec.to_toml()).map_err(|e| Error::io(&spec_path, e))?;

    let mut splits = Vec::new();
    for (split, name, count) in [(0u64, "train", spec.train), (1, "test", spec.test)] {
        let jobs: Vec<usize> = (0..count).collect();
        let records = par_map(&jobs, |&i| -> Result<DatasetRecord> {
            let mut rng = face_rng(seed, split, i);
            let face = FaceParams::draw(spec, &mut rng);
            let landmarks = face.landmarks(spec.landmark_noise, &mut rng)?;
            let img = face.render(spec.rows, spec.cols, spec.pixel_noise, &mut rng);
            let image_path = out.join("images").join(format!("{name}_{i:04}.png"));
            let landmarks_path = out.join("landmarks").join(format!("{name}_{i:04}.pts"));
            img.save(&image_path)?;
            write_landmarks(&landmarks_path, &landmarks)?;
            Ok(DatasetRecord {
                image_path,
                eyes: Some(face.eyes()),
                landmarks_path: Some(landmarks_path),
                gender: Some(face.gender),
                age_years: Some(face.age),
                expression: Some(face.expression),
                ethnicity: Some(face.ethnicity),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let manifest = out.join(format!("{name}.csv"));
        write_manifest(&manifest, &records)?;
        splits.push((manifest, records));
    }
    let (test_manifest, test) = splits.pop().expect("two splits");
    let (train_manifest, train) = splits.pop().expect("two splits");
    Ok(SyntheticCorpus {
        train_manifest,
        test_manifest,
        train,
        test,
    })
}
