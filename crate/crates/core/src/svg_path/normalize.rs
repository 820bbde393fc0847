use super::{Command, CoordinateMode, Glyph, Point};

/// Longest accepted glyph, counting the trailing `Eos`.
pub const MAX_COMMANDS: usize = 50;

/// Distance under which a contour counts as closed.
const CLOSE_EPS: f64 = 1e-6;

/// Tolerance for ties when choosing the top-most start vertex.
const TIE_EPS: f64 = 1e-9;

/// Coordinates are snapped to multiples of 2⁻²⁴. Sums and differences of
/// such values below 2²⁸ are exact, so the relative form converts back to
/// the very same absolute points and normalizing twice changes nothing.
const GRID: f64 = 16_777_216.0;

fn snap(p: Point) -> Point {
    Point::new((p.x * GRID).round() / GRID, (p.y * GRID).round() / GRID)
}

/// Samples per cubic when estimating contour area.
const AREA_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error("contour {contour} is not closed")]
    OpenContour { contour: usize },
    #[error("glyph has {count} commands (limit {MAX_COMMANDS})")]
    TooManyCommands { count: usize },
    #[error("degenerate contour (fewer than 3 distinct vertices or zero area)")]
    DegenerateContour,
    #[error("glyph must start with a moveto")]
    MissingMoveTo,
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("glyph contains non-finite coordinates")]
    NonFinite,
}

/// One segment of a contour, absolute coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line(Point),
    Cubic(Point, Point, Point),
}

impl Segment {
    pub fn end(&self) -> Point {
        match *self {
            Segment::Line(p) | Segment::Cubic(_, _, p) => p,
        }
    }

    fn with_end(self, e: Point) -> Segment {
        match self {
            Segment::Line(_) => Segment::Line(e),
            Segment::Cubic(a, b, _) => Segment::Cubic(a, b, e),
        }
    }

    /// Same curve traversed from `end()` back to `start`.
    fn reversed(self, start: Point) -> Segment {
        match self {
            Segment::Line(_) => Segment::Line(start),
            Segment::Cubic(a, b, _) => Segment::Cubic(b, a, start),
        }
    }
}

/// A moveto-delimited sub-path.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub start: Point,
    pub segments: Vec<Segment>,
}

impl Contour {
    pub fn is_closed(&self) -> bool {
        self.segments
            .last()
            .is_some_and(|s| s.end().dist(self.start) <= CLOSE_EPS)
    }

    /// Polyline through the contour with each cubic sampled uniformly.
    pub fn sample_polyline(&self, cubic_samples: usize) -> Vec<Point> {
        let mut pts = vec![self.start];
        let mut pen = self.start;
        for s in &self.segments {
            match *s {
                Segment::Line(e) => pts.push(e),
                Segment::Cubic(a, b, e) => {
                    for i in 1..=cubic_samples {
                        pts.push(cubic_point(pen, a, b, e, i as f64 / cubic_samples as f64));
                    }
                }
            }
            pen = s.end();
        }
        pts
    }

    pub(crate) fn reversed(&self) -> Contour {
        let mut starts = vec![self.start];
        starts.extend(self.segments.iter().map(|s| s.end()));
        let end = *starts.last().expect("non-empty");
        let segments = self
            .segments
            .iter()
            .enumerate()
            .rev()
            .map(|(i, s)| s.reversed(starts[i]))
            .collect();
        Contour { start: end, segments }
    }

    /// Rotates a closed contour to begin at vertex `k` (the end of segment
    /// `k - 1`, or the start for `k == 0`).
    fn rotated(&self, k: usize) -> Contour {
        if k == 0 {
            return self.clone();
        }
        let start = self.segments[k - 1].end();
        let mut segments = self.segments[k..].to_vec();
        segments.extend_from_slice(&self.segments[..k]);
        Contour { start, segments }
    }

    pub(crate) fn to_commands(&self, out: &mut Vec<Command>) {
        out.push(Command::MoveTo(self.start));
        for s in &self.segments {
            out.push(match *s {
                Segment::Line(e) => Command::LineTo(e),
                Segment::Cubic(a, b, e) => Command::CubicBezier(a, b, e),
            });
        }
    }
}

pub(crate) fn cubic_point(p0: Point, c1: Point, c2: Point, p1: Point, t: f64) -> Point {
    let u = 1.0 - t;
    let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    Point::new(
        a * p0.x + b * c1.x + c * c2.x + d * p1.x,
        a * p0.y + b * c1.y + c * c2.y + d * p1.y,
    )
}

/// Splits a glyph into contours (absolute coordinates). Drawing commands
/// before the first moveto start at the origin; `Eos` ends the glyph.
pub fn contours(glyph: &Glyph) -> Vec<Contour> {
    let abs = glyph.to_absolute();
    let mut out: Vec<Contour> = Vec::new();
    let mut pen = Point::ORIGIN;
    for c in &abs.commands {
        match *c {
            Command::MoveTo(p) => {
                out.push(Contour {
                    start: p,
                    segments: vec![],
                });
            }
            Command::LineTo(p) | Command::CubicBezier(_, _, p) => {
                if out.is_empty() {
                    out.push(Contour {
                        start: pen,
                        segments: vec![],
                    });
                }
                let seg = match *c {
                    Command::CubicBezier(a, b, e) => Segment::Cubic(a, b, e),
                    _ => Segment::Line(p),
                };
                out.last_mut().expect("contour").segments.push(seg);
            }
            Command::Eos => break,
        }
        if let Some(e) = c.end() {
            pen = e;
        }
    }
    out
}

/// Shoelace area of a closed polyline: `½ Σ (xᵢ·yᵢ₊₁ − xᵢ₊₁·yᵢ)`.
///
/// With `y` pointing down, a positive value means the polyline runs
/// clockwise on screen. A repeated closing vertex is ignored.
pub fn signed_area(points: &[Point]) -> Result<f64, PathError> {
    let pts = match (points.first(), points.last()) {
        (Some(a), Some(b)) if points.len() > 1 && a == b => &points[..points.len() - 1],
        _ => points,
    };
    let mut distinct: Vec<Point> = Vec::new();
    for p in pts {
        if !distinct.iter().any(|q| q.dist(*p) <= CLOSE_EPS) {
            distinct.push(*p);
        }
        if distinct.len() >= 3 {
            break;
        }
    }
    if distinct.len() < 3 {
        return Err(PathError::DegenerateContour);
    }
    let n = pts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    let area = 0.5 * twice;
    // Zero area relative to the extent: collinear or self-cancelling.
    let (mut minx, mut miny, mut maxx, mut maxy) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        minx = minx.min(p.x);
        maxx = maxx.max(p.x);
        miny = miny.min(p.y);
        maxy = maxy.max(p.y);
    }
    let extent = (maxx - minx).max(maxy - miny);
    if area.abs() <= 1e-12 * extent * extent {
        return Err(PathError::DegenerateContour);
    }
    Ok(area)
}

/// Index of the vertex with minimal `y`, then minimal `x`, then minimal
/// index.
fn top_most_vertex(c: &Contour) -> usize {
    let mut verts = vec![c.start];
    verts.extend(c.segments[..c.segments.len() - 1].iter().map(|s| s.end()));
    let min_y = verts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let min_x = verts
        .iter()
        .filter(|p| p.y <= min_y + TIE_EPS)
        .map(|p| p.x)
        .fold(f64::INFINITY, f64::min);
    verts
        .iter()
        .position(|p| p.y <= min_y + TIE_EPS && p.x <= min_x + TIE_EPS)
        .expect("non-empty vertex list")
}

/// Reverses the traversal direction of every contour; geometry is unchanged.
pub fn reverse_contours(glyph: &Glyph) -> Glyph {
    let mut commands = Vec::new();
    for c in contours(glyph) {
        c.reversed().to_commands(&mut commands);
    }
    if glyph.commands.last() == Some(&Command::Eos) {
        commands.push(Command::Eos);
    }
    Glyph::new(glyph.label, commands, CoordinateMode::Absolute)
}

/// Canonical form of a glyph.
///
/// Every contour is made to run clockwise (on screen) and to start at its
/// top-most command-boundary vertex (ties broken by smallest `x`, then by
/// position); curves are never split. The result is relative-mode with a
/// trailing `Eos`. Lone movetos are dropped. Coordinates are rounded to a
/// 2⁻²⁴ grid, which is what makes the operation exactly idempotent.
pub fn normalize(glyph: &Glyph) -> Result<Glyph, PathError> {
    if !glyph.is_finite() {
        return Err(PathError::NonFinite);
    }
    let abs = glyph.to_absolute();
    let abs = Glyph::new(abs.label, abs.commands.iter().map(|c| c.map(snap)).collect(), abs.mode);
    let first_drawing = abs.commands.iter().find(|c| !matches!(c, Command::Eos));
    if !matches!(first_drawing, Some(Command::MoveTo(_)) | None) {
        return Err(PathError::MissingMoveTo);
    }
    let mut commands = Vec::new();
    for (i, mut c) in contours(&abs).into_iter().enumerate() {
        if c.segments.is_empty() {
            continue;
        }
        if !c.is_closed() {
            return Err(PathError::OpenContour { contour: i });
        }
        let last = c.segments.len() - 1;
        c.segments[last] = c.segments[last].with_end(c.start);
        let area = signed_area(&c.sample_polyline(AREA_SAMPLES))?;
        if area <= 0.0 {
            c = c.reversed();
        }
        let k = top_most_vertex(&c);
        c.rotated(k).to_commands(&mut commands);
    }
    commands.push(Command::Eos);
    if commands.len() > MAX_COMMANDS {
        return Err(PathError::TooManyCommands { count: commands.len() });
    }
    Ok(Glyph::new(glyph.label, commands, CoordinateMode::Absolute).to_relative())
}

/// Divides every coordinate by `scale`.
pub fn rescale(glyph: &Glyph, scale: f64) -> Result<Glyph, PathError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PathError::NonPositiveScale(scale));
    }
    let commands = glyph
        .commands
        .iter()
        .map(|c| c.map(|p| Point::new(p.x / scale, p.y / scale)))
        .collect();
    Ok(Glyph::new(glyph.label, commands, glyph.mode))
}
