use super::{Command, Point};

/// Distance under which a path end is treated as already closed.
const CLOSE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// A command letter outside `MmLlCcHhVvZz`.
    UnsupportedCommand(char),
    /// A number that does not follow the SVG number grammar, or a missing
    /// argument.
    MalformedNumber,
    /// Nothing but whitespace.
    EmptyPath,
    /// Drawing starts before any moveto.
    MissingMoveTo,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at byte {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

impl ParseError {
    fn at(kind: ParseErrorKind, offset: usize) -> Self {
        ParseError { kind, offset }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Lexer<'_> {
    fn skip_separators(&mut self) {
        while self.pos < self.src.len() && matches!(self.src[self.pos], b' ' | b'\t' | b'\n' | b'\r' | b'\x0c' | b',') {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn starts_number(&self) -> bool {
        matches!(self.peek(), Some(b'0'..=b'9' | b'.' | b'-' | b'+'))
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_separators();
        let start = self.pos;
        let bad = || ParseError::at(ParseErrorKind::MalformedNumber, start);
        let mut i = self.pos;
        let s = self.src;
        if i < s.len() && matches!(s[i], b'+' | b'-') {
            i += 1;
        }
        let int_start = i;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        let mut digits = i - int_start;
        if i < s.len() && s[i] == b'.' {
            i += 1;
            let frac_start = i;
            while i < s.len() && s[i].is_ascii_digit() {
                i += 1;
            }
            digits += i - frac_start;
        }
        if digits == 0 {
            return Err(bad());
        }
        if i < s.len() && matches!(s[i], b'e' | b'E') {
            let mut j = i + 1;
            if j < s.len() && matches!(s[j], b'+' | b'-') {
                j += 1;
            }
            let exp_start = j;
            while j < s.len() && s[j].is_ascii_digit() {
                j += 1;
            }
            if j == exp_start {
                return Err(bad());
            }
            i = j;
        }
        let text = std::str::from_utf8(&s[start..i]).map_err(|_| bad())?;
        let v: f64 = text.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        self.pos = i;
        Ok(v)
    }
}

struct Builder {
    out: Vec<Command>,
    pen: Point,
    start: Point,
    open: bool,
}

impl Builder {
    fn move_to(&mut self, p: Point) {
        self.out.push(Command::MoveTo(p));
        self.pen = p;
        self.start = p;
        self.open = true;
    }

    /// Starts an implicit subpath at the last subpath start when drawing
    /// resumes right after a closepath.
    fn ensure_open(&mut self) {
        if !self.open {
            let s = self.start;
            self.move_to(s);
        }
    }

    fn line_to(&mut self, p: Point) {
        self.ensure_open();
        self.out.push(Command::LineTo(p));
        self.pen = p;
    }

    fn cubic(&mut self, a: Point, b: Point, e: Point) {
        self.ensure_open();
        self.out.push(Command::CubicBezier(a, b, e));
        self.pen = e;
    }

    fn close(&mut self) {
        if self.open && self.pen.dist(self.start) > CLOSE_EPS {
            self.out.push(Command::LineTo(self.start));
        }
        self.pen = self.start;
        self.open = false;
    }
}

/// Parses path data into absolute `MoveTo`/`LineTo`/`CubicBezier` commands.
///
/// `H`/`V` become line segments, `Z` becomes an explicit segment back to
/// the subpath start (omitted when the pen is already there), and implicit
/// repetitions such as `L 1 2 3 4` are expanded.
pub fn parse_path(d: &str) -> Result<Vec<Command>, ParseError> {
    let mut lx = Lexer {
        src: d.as_bytes(),
        pos: 0,
    };
    let mut b = Builder {
        out: Vec::new(),
        pen: Point::ORIGIN,
        start: Point::ORIGIN,
        open: false,
    };
    let mut current: Option<u8> = None;
    let mut seen_move = false;

    loop {
        lx.skip_separators();
        let Some(byte) = lx.peek() else { break };
        let offset = lx.pos;
        let cmd = if byte.is_ascii_alphabetic() {
            lx.pos += 1;
            match byte {
                b'M' | b'm' | b'L' | b'l' | b'C' | b'c' | b'H' | b'h' | b'V' | b'v' | b'Z' | b'z' => byte,
                other => {
                    return Err(ParseError::at(
                        ParseErrorKind::UnsupportedCommand(other as char),
                        offset,
                    ))
                }
            }
        } else if lx.starts_number() {
            match current {
                Some(c) if !matches!(c, b'Z' | b'z') => c,
                _ => return Err(ParseError::at(ParseErrorKind::MalformedNumber, offset)),
            }
        } else if byte.is_ascii() {
            return Err(ParseError::at(ParseErrorKind::MalformedNumber, offset));
        } else {
            let ch = d[offset..].chars().next().unwrap_or('\u{fffd}');
            return Err(ParseError::at(ParseErrorKind::UnsupportedCommand(ch), offset));
        };

        if !seen_move && !matches!(cmd, b'M' | b'm') {
            return Err(ParseError::at(ParseErrorKind::MissingMoveTo, offset));
        }
        let rel = cmd.is_ascii_lowercase();
        let base = if rel { b.pen } else { Point::ORIGIN };
        let point = |lx: &mut Lexer| -> Result<Point, ParseError> {
            let x = lx.number()?;
            let y = lx.number()?;
            Ok(Point::new(x, y) + base)
        };
        match cmd {
            b'M' | b'm' => {
                let p = point(&mut lx)?;
                b.move_to(p);
                seen_move = true;
                // Further coordinate pairs are implicit linetos.
                current = Some(if rel { b'l' } else { b'L' });
                continue;
            }
            b'L' | b'l' => {
                let p = point(&mut lx)?;
                b.line_to(p);
            }
            b'C' | b'c' => {
                let c1 = point(&mut lx)?;
                let c2 = point(&mut lx)?;
                let e = point(&mut lx)?;
                b.cubic(c1, c2, e);
            }
            b'H' | b'h' => {
                let x = lx.number()?;
                let p = Point::new(if rel { b.pen.x + x } else { x }, b.pen.y);
                b.line_to(p);
            }
            b'V' | b'v' => {
                let y = lx.number()?;
                let p = Point::new(b.pen.x, if rel { b.pen.y + y } else { y });
                b.line_to(p);
            }
            _ => b.close(),
        }
        current = Some(cmd);
    }

    if b.out.is_empty() {
        return Err(ParseError::at(ParseErrorKind::EmptyPath, 0));
    }
    Ok(b.out)
}
