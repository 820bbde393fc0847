//! Fixed-width numeric encoding of normalized glyphs.
//!
//! Each command becomes a 10-wide tuple: a 4-way one-hot command type
//! followed by 6 argument slots. Slots 0..4 hold the two cubic control
//! points and slots 4..6 always hold the end point, so moveto and lineto
//! share the cubic's end-point slots.
//!
//! Sequence record layout (little-endian): `u32` row count `T`, then
//! `T × 10` `f32` values, row-major. Padding rows are not stored.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::svg_path::{Command, CommandKind, CoordinateMode, Glyph, Point};

pub const TUPLE_WIDTH: usize = 10;
pub const ONEHOT_WIDTH: usize = 4;
pub const ARG_WIDTH: usize = 6;
/// 50 commands plus `Eos`.
pub const DEFAULT_MAX_LEN: usize = 51;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("glyph needs {needed} rows but max_len is {max_len}")]
    SequenceTooLong { needed: usize, max_len: usize },
    #[error("no Eos within the first {0} rows")]
    NoEos(usize),
    #[error("row {0} has an all-zero command one-hot")]
    InvalidOneHot(usize),
    #[error("malformed sequence record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandTuple {
    pub onehot: [f64; ONEHOT_WIDTH],
    pub args: [f64; ARG_WIDTH],
}

impl CommandTuple {
    pub fn to_row(&self) -> [f64; TUPLE_WIDTH] {
        let mut r = [0.0; TUPLE_WIDTH];
        r[..ONEHOT_WIDTH].copy_from_slice(&self.onehot);
        r[ONEHOT_WIDTH..].copy_from_slice(&self.args);
        r
    }
}

/// Argument slots that carry data for a command kind.
pub fn active_slots(kind: CommandKind) -> [bool; ARG_WIDTH] {
    match kind {
        CommandKind::MoveTo | CommandKind::LineTo => [false, false, false, false, true, true],
        CommandKind::CubicBezier => [true; ARG_WIDTH],
        CommandKind::Eos => [false; ARG_WIDTH],
    }
}

pub fn encode_command(cmd: &Command) -> CommandTuple {
    let mut onehot = [0.0; ONEHOT_WIDTH];
    onehot[cmd.kind().index()] = 1.0;
    let mut args = [0.0; ARG_WIDTH];
    match *cmd {
        Command::MoveTo(p) | Command::LineTo(p) => {
            args[4] = p.x;
            args[5] = p.y;
        }
        Command::CubicBezier(a, b, e) => args = [a.x, a.y, b.x, b.y, e.x, e.y],
        Command::Eos => {}
    }
    CommandTuple { onehot, args }
}

/// Inverse of [`encode_command`] for a given kind; inactive slots are
/// ignored.
pub fn decode_command(kind: CommandKind, args: &[f64]) -> Command {
    let end = Point::new(args[4], args[5]);
    match kind {
        CommandKind::MoveTo => Command::MoveTo(end),
        CommandKind::LineTo => Command::LineTo(end),
        CommandKind::CubicBezier => {
            Command::CubicBezier(Point::new(args[0], args[1]), Point::new(args[2], args[3]), end)
        }
        CommandKind::Eos => Command::Eos,
    }
}

/// Padded `T × 10` sequence with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    pub data: Array2<f64>,
    pub length: usize,
    pub mask: Vec<bool>,
}

impl SequenceTensor {
    pub fn max_len(&self) -> usize {
        self.data.nrows()
    }

    /// Command kind of row `t` by argmax (first maximum wins); `None` for
    /// an all-zero one-hot.
    pub fn kind_at(&self, t: usize) -> Option<CommandKind> {
        let row = self.data.row(t);
        let onehot = row.slice(ndarray::s![..ONEHOT_WIDTH]);
        if onehot.iter().all(|&v| v == 0.0) {
            return None;
        }
        let mut best = 0;
        for i in 1..ONEHOT_WIDTH {
            if onehot[i] > onehot[best] {
                best = i;
            }
        }
        CommandKind::from_index(best)
    }

    /// Builds a tensor from its real rows (the last of which should be `Eos`).
    pub fn from_rows(rows: &[[f64; TUPLE_WIDTH]], max_len: usize) -> Result<Self, CodecError> {
        if rows.len() > max_len {
            return Err(CodecError::SequenceTooLong {
                needed: rows.len(),
                max_len,
            });
        }
        let mut data = Array2::zeros((max_len, TUPLE_WIDTH));
        for (t, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                data[[t, j]] = *v;
            }
        }
        let mask = (0..max_len).map(|t| t < rows.len()).collect();
        Ok(SequenceTensor {
            data,
            length: rows.len(),
            mask,
        })
    }

    pub fn write_record<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(4 + self.length * TUPLE_WIDTH * 4);
        buf.extend_from_slice(&(self.length as u32).to_le_bytes());
        for t in 0..self.length {
            for j in 0..TUPLE_WIDTH {
                buf.extend_from_slice(&(self.data[[t, j]] as f32).to_le_bytes());
            }
        }
        out.write_all(&buf)
    }

    /// Reads one record; `Ok(None)` at a clean end of stream.
    pub fn read_record<R: Read>(mut input: R, max_len: usize) -> Result<Option<Self>, CodecError> {
        let mut len = [0u8; 4];
        match input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(CodecError::BadRecord(e.to_string())),
        }
        let length = u32::from_le_bytes(len) as usize;
        if length > max_len {
            return Err(CodecError::SequenceTooLong {
                needed: length,
                max_len,
            });
        }
        let mut raw = vec![0u8; length * TUPLE_WIDTH * 4];
        input
            .read_exact(&mut raw)
            .map_err(|e| CodecError::BadRecord(e.to_string()))?;
        let rows: Vec<[f64; TUPLE_WIDTH]> = raw
            .chunks_exact(TUPLE_WIDTH * 4)
            .map(|chunk| {
                let mut r = [0.0; TUPLE_WIDTH];
                for (j, c) in chunk.chunks_exact(4).enumerate() {
                    r[j] = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
                }
                r
            })
            .collect();
        Self::from_rows(&rows, max_len).map(Some)
    }
}

/// Encodes a normalized glyph: one row per drawing command, an `Eos` row,
/// then zero padding up to `max_len`.
pub fn encode_glyph(glyph: &Glyph, max_len: usize) -> Result<SequenceTensor, CodecError> {
    let rel = glyph.to_relative();
    let mut rows: Vec<[f64; TUPLE_WIDTH]> = rel
        .commands
        .iter()
        .take_while(|c| !matches!(c, Command::Eos))
        .map(|c| encode_command(c).to_row())
        .collect();
    rows.push(encode_command(&Command::Eos).to_row());
    SequenceTensor::from_rows(&rows, max_len)
}

/// Decodes rows up to and including the first `Eos` into a relative glyph.
pub fn decode_glyph(seq: &SequenceTensor, label: usize) -> Result<Glyph, CodecError> {
    let mut commands = Vec::new();
    for t in 0..seq.length.min(seq.max_len()) {
        let kind = seq.kind_at(t).ok_or(CodecError::InvalidOneHot(t))?;
        let row = seq.data.row(t);
        let args: Vec<f64> = row.iter().skip(ONEHOT_WIDTH).copied().collect();
        commands.push(decode_command(kind, &args));
        if kind == CommandKind::Eos {
            return Ok(Glyph::new(label, commands, CoordinateMode::Relative));
        }
    }
    Err(CodecError::NoEos(seq.length))
}
