//! 64×64 grayscale rendering of glyphs.
//!
//! Contours are flattened to polylines and filled with the nonzero winding
//! rule by a scanline pass over a 128×128 sample grid; each output pixel is
//! the mean of its 2×2 samples.
//!
//! Drawing direction is ignored: before filling, each contour is oriented by
//! how deeply it is nested (outermost clockwise, holes counterclockwise, and
//! so on). Normalization makes every contour clockwise, so this is what keeps
//! the counter of an "o" empty either way.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::svg_path::{contours, CoordinateMode, Glyph, Point, Segment};

pub const RASTER_SIZE: usize = 64;
const SUPERSAMPLE: usize = 2;
/// Flattening tolerance in output pixels.
pub const FLATTEN_TOLERANCE_PX: f64 = 0.05;
const MAX_SUBDIVISION_DEPTH: u32 = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RasterError {
    #[error("corpus has no points")]
    EmptyCorpus,
    #[error("glyph contains non-finite coordinates")]
    NonFinite,
    #[error("invalid raster data: {0}")]
    BadData(String),
}

/// Square region of glyph space mapped onto the raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewbox {
    pub min_x: f64,
    pub min_y: f64,
    pub size: f64,
}

impl Viewbox {
    pub fn new(min_x: f64, min_y: f64, size: f64) -> Self {
        Viewbox { min_x, min_y, size }
    }

    /// Glyph point to output-pixel coordinates.
    fn to_pixels(&self, p: Point) -> Point {
        let s = RASTER_SIZE as f64 / self.size;
        Point::new((p.x - self.min_x) * s, (p.y - self.min_y) * s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    /// Row-major `[y, x]`, 1.0 = ink.
    pub pixels: Array2<f32>,
    pub viewbox: Viewbox,
}

impl Raster {
    pub fn zeros(viewbox: Viewbox) -> Self {
        Raster {
            pixels: Array2::zeros((RASTER_SIZE, RASTER_SIZE)),
            viewbox,
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        self.pixels.as_slice().expect("standard layout")
    }

    pub fn from_values(values: Vec<f32>, viewbox: Viewbox) -> Result<Self, RasterError> {
        let pixels = Array2::from_shape_vec((RASTER_SIZE, RASTER_SIZE), values)
            .map_err(|e| RasterError::BadData(e.to_string()))?;
        Ok(Raster { pixels, viewbox })
    }

    /// Raw record: `64 × 64` little-endian `f32`, row-major.
    pub fn write_record<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(RASTER_SIZE * RASTER_SIZE * 4);
        for v in self.pixels.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn from_record(bytes: &[u8], viewbox: Viewbox) -> Result<Self, RasterError> {
        if bytes.len() != RASTER_SIZE * RASTER_SIZE * 4 {
            return Err(RasterError::BadData(format!("record of {} bytes", bytes.len())));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::from_values(values, viewbox)
    }

    /// 8-bit grayscale PNG, ink drawn dark on white.
    pub fn write_png<W: Write>(&self, out: W) -> Result<(), png::EncodingError> {
        let mut enc = png::Encoder::new(out, RASTER_SIZE as u32, RASTER_SIZE as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        let data: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8)
            .collect();
        writer.write_image_data(&data)?;
        writer.finish()
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

fn flatten_into(p0: Point, c1: Point, c2: Point, p1: Point, tol: f64, depth: u32, out: &mut Vec<Point>) {
    let flat = point_segment_distance(c1, p0, p1).max(point_segment_distance(c2, p0, p1));
    if flat <= tol || depth >= MAX_SUBDIVISION_DEPTH {
        out.push(p1);
        return;
    }
    // de Casteljau split at t = 1/2
    let a = p0.lerp(c1, 0.5);
    let b = c1.lerp(c2, 0.5);
    let c = c2.lerp(p1, 0.5);
    let ab = a.lerp(b, 0.5);
    let bc = b.lerp(c, 0.5);
    let mid = ab.lerp(bc, 0.5);
    flatten_into(p0, a, ab, mid, tol, depth + 1, out);
    flatten_into(mid, bc, c, p1, tol, depth + 1, out);
}

/// Polyline approximation of a cubic by recursive halving until both
/// control points lie within `tolerance` of the chord. The first and last
/// points are exactly `p0` and `p1`.
pub fn flatten_cubic(p0: Point, c1: Point, c2: Point, p1: Point, tolerance: f64) -> Vec<Point> {
    assert!(tolerance > 0.0, "flattening tolerance must be positive");
    let mut out = vec![p0];
    flatten_into(p0, c1, c2, p1, tolerance, 0, &mut out);
    out
}

/// Flattened closed polygons of a glyph in output-pixel coordinates.
pub fn glyph_polygons(glyph: &Glyph, viewbox: &Viewbox) -> Vec<Vec<Point>> {
    contours(glyph)
        .into_iter()
        .filter(|c| !c.segments.is_empty())
        .map(|c| {
            let mut poly = vec![viewbox.to_pixels(c.start)];
            let mut pen = c.start;
            for s in &c.segments {
                match *s {
                    Segment::Line(e) => poly.push(viewbox.to_pixels(e)),
                    Segment::Cubic(a, b, e) => {
                        let pts = flatten_cubic(
                            viewbox.to_pixels(pen),
                            viewbox.to_pixels(a),
                            viewbox.to_pixels(b),
                            viewbox.to_pixels(e),
                            FLATTEN_TOLERANCE_PX,
                        );
                        poly.extend_from_slice(&pts[1..]);
                    }
                }
                pen = s.end();
            }
            poly
        })
        .collect()
}

/// Twice the shoelace area; positive means clockwise with y pointing down.
fn shoelace(poly: &[Point]) -> f64 {
    (0..poly.len())
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            a.x * b.y - b.x * a.y
        })
        .sum()
}

/// Nonzero containment of `p` in a single closed polygon.
fn inside(poly: &[Point], p: Point) -> bool {
    let mut w = 0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a.y <= p.y) != (b.y <= p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if x > p.x {
                w += if b.y > a.y { 1 } else { -1 };
            }
        }
    }
    w != 0
}

/// For each polygon, whether it winds against its nesting depth and needs
/// reversing so fill depends on nesting, not on drawing direction. A
/// contour counts as nested in another when all of its vertices lie inside
/// it; overlapping strokes therefore stay a union.
fn misoriented(polys: &[Vec<Point>]) -> Vec<bool> {
    (0..polys.len())
        .map(|i| {
            let depth = (0..polys.len())
                .filter(|&j| j != i)
                .filter(|&j| polys[i].iter().all(|&p| inside(&polys[j], p)))
                .count();
            let area = shoelace(&polys[i]);
            area != 0.0 && (area > 0.0) != (depth % 2 == 0)
        })
        .collect()
}

fn orient_by_nesting(mut polys: Vec<Vec<Point>>) -> Vec<Vec<Point>> {
    let flips = misoriented(&polys);
    for (poly, flip) in polys.iter_mut().zip(flips) {
        if flip {
            poly.reverse();
        }
    }
    polys
}

/// Absolute copy of `glyph` whose contours wind so that a plain nonzero
/// fill (an SVG viewer's default) shows what [`render`] draws.
pub fn orient_for_nonzero(glyph: &Glyph) -> Glyph {
    let polys = glyph_polygons(glyph, &Viewbox::new(0.0, 0.0, RASTER_SIZE as f64));
    let flips = misoriented(&polys);
    let mut commands = Vec::new();
    let kept = contours(glyph).into_iter().filter(|c| !c.segments.is_empty());
    for (c, flip) in kept.zip(flips) {
        if flip { c.reversed() } else { c }.to_commands(&mut commands);
    }
    Glyph::new(glyph.label, commands, CoordinateMode::Absolute)
}

/// Renders a glyph (any coordinate mode). Empty glyphs give an all-zero
/// raster; unclosed contours are filled as if closed.
pub fn render(glyph: &Glyph, viewbox: &Viewbox) -> Result<Raster, RasterError> {
    if !glyph.is_finite() || !(viewbox.size > 0.0 && viewbox.size.is_finite()) {
        return Err(RasterError::NonFinite);
    }
    let polys = orient_by_nesting(glyph_polygons(glyph, viewbox));
    let n = RASTER_SIZE * SUPERSAMPLE;
    let ss = SUPERSAMPLE as f64;
    let mut counts = vec![0u8; RASTER_SIZE * RASTER_SIZE];

    // Edges as (top, bottom, direction) in sample units.
    let mut edges: Vec<(Point, Point, i32)> = Vec::new();
    for poly in &polys {
        for i in 0..poly.len() {
            let a = poly[i] * ss;
            let b = poly[(i + 1) % poly.len()] * ss;
            if a.y == b.y {
                continue;
            }
            if a.y < b.y {
                edges.push((a, b, 1));
            } else {
                edges.push((b, a, -1));
            }
        }
    }

    let mut crossings: Vec<(f64, i32)> = Vec::new();
    for row in 0..n {
        let y = row as f64 + 0.5;
        crossings.clear();
        for &(top, bot, dir) in &edges {
            if y >= top.y && y < bot.y {
                let t = (y - top.y) / (bot.y - top.y);
                crossings.push((top.x + t * (bot.x - top.x), dir));
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut winding = 0;
        let mut k = 0;
        for col in 0..n {
            let x = col as f64 + 0.5;
            while k < crossings.len() && crossings[k].0 < x {
                winding += crossings[k].1;
                k += 1;
            }
            if winding != 0 {
                counts[(row / SUPERSAMPLE) * RASTER_SIZE + col / SUPERSAMPLE] += 1;
            }
        }
    }
    let denom = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    let values = counts.into_iter().map(|c| c as f32 / denom).collect();
    Raster::from_values(values, *viewbox)
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Corpus-wide square viewbox: the box spanned by the 1st–99th percentile
/// of all absolute contour points (per axis), squared around its center
/// and grown by 12.5% of its extent on each side.
pub fn default_viewbox<'a>(glyphs: impl IntoIterator<Item = &'a Glyph>) -> Result<Viewbox, RasterError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for g in glyphs {
        for p in g.absolute_points() {
            if p.is_finite() {
                xs.push(p.x);
                ys.push(p.y);
            }
        }
    }
    if xs.is_empty() {
        return Err(RasterError::EmptyCorpus);
    }
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (x0, x1) = (percentile_sorted(&xs, 0.01), percentile_sorted(&xs, 0.99));
    let (y0, y1) = (percentile_sorted(&ys, 0.01), percentile_sorted(&ys, 0.99));
    let mut extent = (x1 - x0).max(y1 - y0);
    if extent <= 0.0 {
        extent = 1.0;
    }
    let size = extent * 1.25;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    Ok(Viewbox::new(cx - size / 2.0, cy - size / 2.0, size))
}

/// Mean pixel value.
pub fn ink_coverage(raster: &Raster) -> f64 {
    raster.pixels.iter().map(|&v| v as f64).sum::<f64>() / raster.pixels.len() as f64
}

/// L2 distance between two rasters' pixel values.
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}
