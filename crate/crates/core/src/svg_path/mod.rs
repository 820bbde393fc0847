//! SVG path data restricted to the four glyph drawing commands.
//!
//! Coordinates use the SVG screen convention: `y` grows downward, so a
//! positive shoelace sum means a visually clockwise contour and the
//! "top-most" point of a contour is the one with the smallest `y`.

mod normalize;
mod parse;

use serde::{Deserialize, Serialize};

pub use normalize::{
    contours, normalize, rescale, reverse_contours, signed_area, Contour, PathError, Segment, MAX_COMMANDS,
};
pub use parse::{parse_path, ParseError, ParseErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// The four command kinds, in one-hot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    MoveTo,
    LineTo,
    CubicBezier,
    Eos,
}

impl CommandKind {
    pub const ALL: [CommandKind; 4] = [
        CommandKind::MoveTo,
        CommandKind::LineTo,
        CommandKind::CubicBezier,
        CommandKind::Eos,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CommandKind> {
        Self::ALL.get(i).copied()
    }
}

/// One drawing command. Cubic points are `(control1, control2, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    MoveTo(Point),
    LineTo(Point),
    CubicBezier(Point, Point, Point),
    Eos,
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::MoveTo(_) => CommandKind::MoveTo,
            Command::LineTo(_) => CommandKind::LineTo,
            Command::CubicBezier(..) => CommandKind::CubicBezier,
            Command::Eos => CommandKind::Eos,
        }
    }

    /// Final pen position of the command, if it moves the pen.
    pub fn end(&self) -> Option<Point> {
        match *self {
            Command::MoveTo(p) | Command::LineTo(p) | Command::CubicBezier(_, _, p) => Some(p),
            Command::Eos => None,
        }
    }

    pub fn points(&self) -> Vec<Point> {
        match *self {
            Command::MoveTo(p) | Command::LineTo(p) => vec![p],
            Command::CubicBezier(a, b, c) => vec![a, b, c],
            Command::Eos => vec![],
        }
    }

    /// Applies `f` to every point of the command.
    pub fn map(&self, mut f: impl FnMut(Point) -> Point) -> Command {
        match *self {
            Command::MoveTo(p) => Command::MoveTo(f(p)),
            Command::LineTo(p) => Command::LineTo(f(p)),
            Command::CubicBezier(a, b, c) => Command::CubicBezier(f(a), f(b), f(c)),
            Command::Eos => Command::Eos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordinateMode {
    Absolute,
    Relative,
}

/// A character shape: class label plus its command sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub label: usize,
    pub commands: Vec<Command>,
    pub mode: CoordinateMode,
}

impl Glyph {
    pub fn new(label: usize, commands: Vec<Command>, mode: CoordinateMode) -> Self {
        Glyph { label, commands, mode }
    }

    /// Parses path data into an absolute-mode glyph.
    pub fn from_path(label: usize, d: &str) -> Result<Glyph, ParseError> {
        Ok(Glyph::new(label, parse_path(d)?, CoordinateMode::Absolute))
    }

    /// Number of commands other than `Eos`.
    pub fn drawing_len(&self) -> usize {
        self.commands.iter().filter(|c| !matches!(c, Command::Eos)).count()
    }

    pub fn is_finite(&self) -> bool {
        self.commands.iter().all(|c| c.points().iter().all(|p| p.is_finite()))
    }

    /// Relative coordinates: every point is an offset from the pen position
    /// at the start of its command (the origin for the first command).
    pub fn to_relative(&self) -> Glyph {
        if self.mode == CoordinateMode::Relative {
            return self.clone();
        }
        let mut pen = Point::ORIGIN;
        let commands = self
            .commands
            .iter()
            .map(|c| {
                let start = pen;
                if let Some(e) = c.end() {
                    pen = e;
                }
                c.map(|p| p - start)
            })
            .collect();
        Glyph::new(self.label, commands, CoordinateMode::Relative)
    }

    /// Inverse of [`Glyph::to_relative`].
    pub fn to_absolute(&self) -> Glyph {
        if self.mode == CoordinateMode::Absolute {
            return self.clone();
        }
        let mut pen = Point::ORIGIN;
        let commands = self
            .commands
            .iter()
            .map(|c| {
                let start = pen;
                let abs = c.map(|p| p + start);
                if let Some(e) = abs.end() {
                    pen = e;
                }
                abs
            })
            .collect();
        Glyph::new(self.label, commands, CoordinateMode::Absolute)
    }

    /// Absolute points of every command (controls included).
    pub fn absolute_points(&self) -> Vec<Point> {
        self.to_absolute().commands.iter().flat_map(|c| c.points()).collect()
    }
}

/// Formats a coordinate with the shortest representation that parses back
/// to the same value.
fn format_exact(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Formats a coordinate with at most `sig` significant digits, trailing
/// zeros removed.
pub fn format_compact(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format_exact(if v.is_finite() { v } else { 0.0 });
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn serialize_with(glyph: &Glyph, fmt: impl Fn(f64) -> String) -> String {
    let rel = glyph.mode == CoordinateMode::Relative;
    let letter = |abs: char| if rel { abs.to_ascii_lowercase() } else { abs };
    let mut parts: Vec<String> = Vec::with_capacity(glyph.commands.len());
    let pt = |p: Point| format!("{} {}", fmt(p.x), fmt(p.y));
    for c in &glyph.commands {
        match *c {
            Command::MoveTo(p) => parts.push(format!("{} {}", letter('M'), pt(p))),
            Command::LineTo(p) => parts.push(format!("{} {}", letter('L'), pt(p))),
            Command::CubicBezier(a, b, e) => parts.push(format!("{} {} {} {}", letter('C'), pt(a), pt(b), pt(e))),
            Command::Eos => {}
        }
    }
    parts.join(" ")
}

/// Path data for a glyph; relative glyphs use lowercase commands. The
/// output parses back to exactly the same coordinates.
pub fn serialize_path(glyph: &Glyph) -> String {
    serialize_with(glyph, format_exact)
}

/// Like [`serialize_path`] but rounds every number to `sig` significant
/// digits, for compact exports.
pub fn serialize_path_compact(glyph: &Glyph, sig: usize) -> String {
    serialize_with(glyph, |v| format_compact(v, sig))
}
