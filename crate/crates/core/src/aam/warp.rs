//! Piecewise-affine warping between a landmark shape and the texture frame.

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::dataset::Point;
use crate::error::{Error, Result};
use crate::image::ImageMatrix;

/// Fraction of the frame left empty on every side.
pub const FRAME_MARGIN: f64 = 0.05;

/// Barycentric tolerance for a pixel lying on a triangle edge.
const EDGE_TOL: f64 = 1e-10;

/// Delaunay triangulation of a point set, as index triples into it.
pub fn triangulate(points: &[Point]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::Triangulation(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut index_of = vec![usize::MAX; points.len()];
    for (i, p) in points.iter().enumerate() {
        let handle = dt
            .insert(Point2::new(p.x, p.y))
            .map_err(|e| Error::Triangulation(format!("point {i}: {e:?}")))?;
        if index_of[handle.index()] != usize::MAX {
            return Err(Error::Triangulation(format!(
                "point {i} duplicates point {}",
                index_of[handle.index()]
            )));
        }
        index_of[handle.index()] = i;
    }
    let scale = bounding_extent(points).max(f64::MIN_POSITIVE);
    let mut triangles = Vec::new();
    for face in dt.inner_faces() {
        let tri = face.vertices().map(|v| index_of[v.fix().index()]);
        let area = signed_area(points[tri[0]], points[tri[1]], points[tri[2]]);
        if area.abs() <= 1e-9 * scale * scale {
            return Err(Error::Triangulation(format!(
                "zero-area triangle {:?} in mean shape",
                tri
            )));
        }
        triangles.push(tri);
    }
    if triangles.is_empty() {
        return Err(Error::Triangulation("all points are collinear".into()));
    }
    Ok(triangles)
}

fn bounding_extent(points: &[Point]) -> f64 {
    let (x0, x1, y0, y1) = bounds(points);
    (x1 - x0).max(y1 - y0)
}

fn bounds(points: &[Point]) -> (f64, f64, f64, f64) {
    points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(x0, x1, y0, y1), p| (x0.min(p.x), x1.max(p.x), y0.min(p.y), y1.max(p.y)),
    )
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

fn barycentric(p: Point, a: Point, b: Point, c: Point) -> [f64; 3] {
    let det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    let l0 = ((b.y - c.y) * (p.x - c.x) + (c.x - b.x) * (p.y - c.y)) / det;
    let l1 = ((c.y - a.y) * (p.x - c.x) + (a.x - c.x) * (p.y - c.y)) / det;
    [l0, l1, 1.0 - l0 - l1]
}

/// Similarity placing normalized shape coordinates into the frame:
/// `frame = scale * v + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePlacement {
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl FramePlacement {
    /// Fits `points` into a `rows x cols` frame with the standard margin,
    /// keeping the aspect ratio and centring the bounding box.
    pub fn fit(points: &[Point], rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Parameter(format!(
                "texture frame {rows}x{cols} is too small"
            )));
        }
        let (x0, x1, y0, y1) = bounds(points);
        let (w, h) = (x1 - x0, y1 - y0);
        let avail_w = (cols - 1) as f64 * (1.0 - 2.0 * FRAME_MARGIN);
        let avail_h = (rows - 1) as f64 * (1.0 - 2.0 * FRAME_MARGIN);
        let scale = match (w > 0.0, h > 0.0) {
            (true, true) => (avail_w / w).min(avail_h / h),
            (true, false) => avail_w / w,
            (false, true) => avail_h / h,
            (false, false) => return Err(Error::Degenerate("shape has no extent".into())),
        };
        Ok(FramePlacement {
            scale,
            offset_x: (cols - 1) as f64 / 2.0 - scale * (x0 + x1) / 2.0,
            offset_y: (rows - 1) as f64 / 2.0 - scale * (y0 + y1) / 2.0,
        })
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.scale * p.x + self.offset_x,
            self.scale * p.y + self.offset_y,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PixelEntry {
    pixel: usize,
    triangle: usize,
    weights: [f64; 3],
}

/// Serialized form of [`TextureFrame`]; the pixel map is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameSpec {
    rows: usize,
    cols: usize,
    points: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

/// The shape-free texture frame: the mean shape placed in a raster, its
/// triangulation, and for every pixel inside the hull the containing
/// triangle and barycentric weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FrameSpec", into = "FrameSpec")]
pub struct TextureFrame {
    rows: usize,
    cols: usize,
    points: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    entries: Vec<PixelEntry>,
}

impl From<FrameSpec> for TextureFrame {
    fn from(spec: FrameSpec) -> Self {
        let entries = pixel_map(spec.rows, spec.cols, &spec.points, &spec.triangles);
        TextureFrame {
            rows: spec.rows,
            cols: spec.cols,
            points: spec.points,
            triangles: spec.triangles,
            entries,
        }
    }
}

impl From<TextureFrame> for FrameSpec {
    fn from(frame: TextureFrame) -> Self {
        FrameSpec {
            rows: frame.rows,
            cols: frame.cols,
            points: frame.points,
            triangles: frame.triangles,
        }
    }
}

fn pixel_map(rows: usize, cols: usize, points: &[Point], triangles: &[[usize; 3]]) -> Vec<PixelEntry> {
    let mut owner: Vec<Option<(usize, [f64; 3])>> = vec![None; rows * cols];
    for (t, tri) in triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|i| points[i]);
        let (x0, x1, y0, y1) = bounds(&[a, b, c]);
        let c_lo = x0.ceil().max(0.0) as usize;
        let r_lo = y0.ceil().max(0.0) as usize;
        let c_hi = (x1.floor().max(-1.0) + 1.0).min(cols as f64) as usize;
        let r_hi = (y1.floor().max(-1.0) + 1.0).min(rows as f64) as usize;
        for r in r_lo..r_hi {
            for col in c_lo..c_hi {
                let slot = &mut owner[r * cols + col];
                if slot.is_some() {
                    continue;
                }
                let w = barycentric(Point::new(col as f64, r as f64), a, b, c);
                if w.iter().all(|&l| l >= -EDGE_TOL) {
                    *slot = Some((t, w));
                }
            }
        }
    }
    owner
        .into_iter()
        .enumerate()
        .filter_map(|(pixel, o)| {
            o.map(|(triangle, weights)| PixelEntry {
                pixel,
                triangle,
                weights,
            })
        })
        .collect()
}

impl TextureFrame {
    /// Places a normalized shape into a `rows x cols` frame and
    /// triangulates it.
    pub fn new(shape: &[Point], rows: usize, cols: usize) -> Result<(Self, FramePlacement)> {
        let placement = FramePlacement::fit(shape, rows, cols)?;
        let points: Vec<Point> = shape.iter().map(|&p| placement.apply(p)).collect();
        let triangles = triangulate(&points)?;
        let entries = pixel_map(rows, cols, &points, &triangles);
        if entries.is_empty() {
            return Err(Error::Triangulation("mean-shape hull covers no pixel".into()));
        }
        Ok((
            TextureFrame {
                rows,
                cols,
                points,
                triangles,
                entries,
            },
            placement,
        ))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Mean shape in frame coordinates.
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Number of pixels inside the hull, i.e. the patch length.
    pub fn patch_len(&self) -> usize {
        self.entries.len()
    }

    /// Row-major mask of pixels inside the hull.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.rows * self.cols];
        for e in &self.entries {
            mask[e.pixel] = true;
        }
        mask
    }

    /// Samples `img` at the source positions of every frame pixel, where
    /// `landmarks` are the source-image positions of the frame points.
    pub fn warp(&self, img: &ImageMatrix, landmarks: &[Point]) -> Result<Vec<f64>> {
        if landmarks.len() != self.points.len() {
            return Err(Error::LandmarkCount {
                expected: self.points.len(),
                actual: landmarks.len(),
            });
        }
        Ok(self
            .entries
            .iter()
            .map(|e| {
                let tri = self.triangles[e.triangle];
                let (mut x, mut y) = (0.0, 0.0);
                for (k, &v) in tri.iter().enumerate() {
                    x += e.weights[k] * landmarks[v].x;
                    y += e.weights[k] * landmarks[v].y;
                }
                img.sample_bilinear(x, y)
            })
            .collect())
    }

    /// Lays a patch back into a full frame raster; pixels outside the hull
    /// take `background`.
    pub fn patch_image(&self, patch: &[f64], background: f64) -> Result<ImageMatrix> {
        if patch.len() != self.entries.len() {
            return Err(Error::Dimension {
                expected: self.entries.len(),
                actual: patch.len(),
            });
        }
        let mut pixels = vec![background; self.rows * self.cols];
        for (e, &v) in self.entries.iter().zip(patch) {
            pixels[e.pixel] = v;
        }
        ImageMatrix::new(self.rows, self.cols, pixels)
    }

    /// Renders a frame-shaped texture raster deformed onto `shape` (frame
    /// coordinates), in a raster of the frame's size. Pixels outside the
    /// deformed hull take `background`.
    pub fn render_onto(&self, texture: &ImageMatrix, shape: &[Point], background: f64) -> Result<ImageMatrix> {
        if shape.len() != self.points.len() {
            return Err(Error::LandmarkCount {
                expected: self.points.len(),
                actual: shape.len(),
            });
        }
        let map = pixel_map(self.rows, self.cols, shape, &self.triangles);
        let mut pixels = vec![background; self.rows * self.cols];
        for e in map {
            let tri = self.triangles[e.triangle];
            let (mut x, mut y) = (0.0, 0.0);
            for (k, &v) in tri.iter().enumerate() {
                x += e.weights[k] * self.points[v].x;
                y += e.weights[k] * self.points[v].y;
            }
            pixels[e.pixel] = texture.sample_bilinear(x, y).clamp(0.0, 255.0);
        }
        ImageMatrix::new(self.rows, self.cols, pixels)
    }
}
