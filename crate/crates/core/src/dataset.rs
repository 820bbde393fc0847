//! Corpus ingestion, storage, splitting and the synthetic block font.
//!
//! A corpus directory holds:
//!
//! - `manifest.jsonl`: one JSON object per entry with `font_id`, `label`,
//!   `char` and `svg` (the normalized, rescaled glyph as relative path data);
//! - `sequences.bin`: the entries' command sequences as codec records, in
//!   manifest order;
//! - `rasters.bin`: 64×64 little-endian `f32` rasters, in manifest order;
//! - `meta.json`: rescale factor, viewbox, maximum sequence length and the
//!   split seed if the corpus is a split half.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_glyph, encode_glyph, CodecError, SequenceTensor, DEFAULT_MAX_LEN};
use crate::labels::{char_of, label_of_str};
use crate::raster::{default_viewbox, percentile_sorted, render, Raster, RasterError, Viewbox, RASTER_SIZE};
use crate::svg_path::{
    normalize, parse_path, rescale, serialize_path, Command, CoordinateMode, Glyph, ParseError, PathError, Point,
};
use crate::training::{LabeledImage, SequenceExample};

/// Percentile of absolute coordinates mapped to 1 by the corpus rescale.
pub const RESCALE_PERCENTILE: f64 = 0.995;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no valid glyphs")]
    NoValidGlyphs,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt corpus: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("invalid ratio {0}")]
    BadRatio(f64),
}

/// Why an input glyph was left out of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub enum SkipReason {
    BadFileName,
    LabelNotInSet(String),
    NoPathData,
    Parse(ParseError),
    Path(PathError),
    Codec(String),
    Io(String),
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::BadFileName => write!(f, "file name is not <font>_<char>.svg"),
            SkipReason::LabelNotInSet(s) => write!(f, "label {s:?} not in 62-class set"),
            SkipReason::NoPathData => write!(f, "no path data"),
            SkipReason::Parse(e) => write!(f, "{e}"),
            SkipReason::Path(e) => write!(f, "{e}"),
            SkipReason::Codec(e) => write!(f, "{e}"),
            SkipReason::Io(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    /// File name for files rejected while reading; `font/char` for
    /// glyphs rejected during normalization or encoding.
    pub source: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub font_id: String,
    pub label: usize,
    /// Normalized and rescaled, relative coordinates, ending in `Eos`.
    pub glyph: Glyph,
    pub sequence: SequenceTensor,
    pub raster: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    /// Normalized coordinates were divided by this factor.
    pub rescale: f64,
    pub viewbox: Viewbox,
    pub max_len: usize,
    pub split_seed: Option<u64>,
}

impl CorpusMeta {
    /// Brings an outside glyph (font units, any mode) into the coordinates
    /// the models were trained on: normalized, rescaled, f32-rounded.
    pub fn prepare(&self, glyph: &Glyph) -> Result<Glyph, PathError> {
        Ok(quantize(&rescale(&normalize(glyph)?, self.rescale)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub meta: CorpusMeta,
}

/// Rounds every coordinate to the nearest `f32`, so the glyph survives the
/// `f32` sequence records unchanged.
fn quantize(glyph: &Glyph) -> Glyph {
    let q = |v: f64| v as f32 as f64;
    Glyph::new(
        glyph.label,
        glyph
            .commands
            .iter()
            .map(|c| c.map(|p| Point::new(q(p.x), q(p.y))))
            .collect(),
        glyph.mode,
    )
}

/// The corpus rescale factor: a high percentile of the absolute
/// coordinate values of the normalized (relative) glyphs.
pub fn rescale_factor<'a>(glyphs: impl IntoIterator<Item = &'a Glyph>) -> f64 {
    let mut vals: Vec<f64> = glyphs
        .into_iter()
        .flat_map(|g| g.commands.iter().flat_map(|c| c.points()))
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .filter(|v| v.is_finite() && *v > 0.0)
        .collect();
    if vals.is_empty() {
        return 1.0;
    }
    vals.sort_by(f64::total_cmp);
    percentile_sorted(&vals, RESCALE_PERCENTILE)
}

impl Corpus {
    /// Normalizes, rescales, encodes and renders raw glyphs (any
    /// coordinate mode). Glyphs that fail are returned as skipped.
    pub fn build(raw: Vec<(String, Glyph)>) -> Result<(Corpus, Vec<Skipped>), DatasetError> {
        let mut skipped = Vec::new();
        let mut normalized = Vec::new();
        for (font_id, g) in raw {
            match normalize(&g) {
                Ok(n) => normalized.push((font_id, n)),
                Err(e) => skipped.push(Skipped {
                    source: format!("{font_id}/{}", char_of(g.label).unwrap_or('?')),
                    reason: SkipReason::Path(e),
                }),
            }
        }
        if normalized.is_empty() {
            return Err(DatasetError::NoValidGlyphs);
        }
        let factor = rescale_factor(normalized.iter().map(|(_, g)| g));
        let scaled: Vec<(String, Glyph)> = normalized
            .into_iter()
            .map(|(f, g)| (f, quantize(&rescale(&g, factor).expect("positive factor"))))
            .collect();
        let viewbox = default_viewbox(scaled.iter().map(|(_, g)| g))?;
        let mut entries = Vec::with_capacity(scaled.len());
        for (font_id, glyph) in scaled {
            let sequence = match encode_glyph(&glyph, DEFAULT_MAX_LEN) {
                Ok(s) => s,
                Err(e) => {
                    skipped.push(Skipped {
                        source: format!("{font_id}/{}", char_of(glyph.label).unwrap_or('?')),
                        reason: SkipReason::Codec(e.to_string()),
                    });
                    continue;
                }
            };
            let raster = render(&glyph, &viewbox)?.pixels.into_raw_vec_and_offset().0;
            entries.push(CorpusEntry {
                font_id,
                label: glyph.label,
                glyph,
                sequence,
                raster,
            });
        }
        if entries.is_empty() {
            return Err(DatasetError::NoValidGlyphs);
        }
        let meta = CorpusMeta {
            rescale: factor,
            viewbox,
            max_len: DEFAULT_MAX_LEN,
            split_seed: None,
        };
        Ok((Corpus { entries, meta }, skipped))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn font_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.font_id.as_str()).collect()
    }

    pub fn images(&self) -> Vec<LabeledImage> {
        self.entries
            .iter()
            .map(|e| LabeledImage {
                label: e.label,
                pixels: e.raster.clone(),
            })
            .collect()
    }

    pub fn sequences(&self) -> Vec<SequenceExample> {
        self.entries
            .iter()
            .map(|e| SequenceExample {
                label: e.label,
                sequence: e.sequence.clone(),
                pixels: e.raster.clone(),
            })
            .collect()
    }

    /// Keeps the entries accepted by `keep`, sharing the metadata.
    pub fn filter(&self, mut keep: impl FnMut(&CorpusEntry) -> bool) -> Corpus {
        Corpus {
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = BufWriter::new(File::create(dir.join("manifest.jsonl"))?);
        let mut seqs = BufWriter::new(File::create(dir.join("sequences.bin"))?);
        let mut rasters = BufWriter::new(File::create(dir.join("rasters.bin"))?);
        for e in &self.entries {
            let line = ManifestLine {
                font_id: e.font_id.clone(),
                label: e.label,
                char: char_of(e.label).map(String::from).unwrap_or_default(),
                svg: serialize_path(&e.glyph),
            };
            serde_json::to_writer(&mut manifest, &line).map_err(|e| DatasetError::Corrupt(e.to_string()))?;
            manifest.write_all(b"\n")?;
            e.sequence.write_record(&mut seqs)?;
            for v in &e.raster {
                rasters.write_all(&v.to_le_bytes())?;
            }
        }
        manifest.flush()?;
        seqs.flush()?;
        rasters.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| DatasetError::Corrupt(e.to_string()))?;
        std::fs::write(dir.join("meta.json"), meta)?;
        Ok(())
    }

    /// Loads a corpus directory and checks that every sequence decodes to
    /// its manifest glyph.
    pub fn load(dir: &Path) -> Result<Corpus, DatasetError> {
        let meta: CorpusMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)
            .map_err(|e| DatasetError::Corrupt(format!("meta.json: {e}")))?;
        let manifest = BufReader::new(File::open(dir.join("manifest.jsonl"))?);
        let mut seqs = BufReader::new(File::open(dir.join("sequences.bin"))?);
        let mut rasters = BufReader::new(File::open(dir.join("rasters.bin"))?);
        let px = RASTER_SIZE * RASTER_SIZE;
        let mut entries = Vec::new();
        for (i, line) in manifest.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let m: ManifestLine = serde_json::from_str(&line)
                .map_err(|e| DatasetError::Corrupt(format!("manifest line {}: {e}", i + 1)))?;
            let commands = parse_path(&m.svg).map_err(|e| DatasetError::Corrupt(format!("entry {i}: {e}")))?;
            // the parser resolves lowercase data against the pen
            let mut glyph = Glyph::new(m.label, commands, CoordinateMode::Absolute).to_relative();
            glyph.commands.push(Command::Eos);
            let sequence = SequenceTensor::read_record(&mut seqs, meta.max_len)?
                .ok_or_else(|| DatasetError::Corrupt(format!("missing sequence for entry {i}")))?;
            let decoded = decode_glyph(&sequence, m.label)?;
            if !same_outline(&decoded, &glyph) {
                return Err(DatasetError::Corrupt(format!("sequence {i} does not match its glyph")));
            }
            let mut raw = vec![0u8; px * 4];
            rasters.read_exact(&mut raw)?;
            let raster = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            entries.push(CorpusEntry {
                font_id: m.font_id,
                label: m.label,
                glyph: decoded,
                sequence,
                raster,
            });
        }
        Ok(Corpus { entries, meta })
    }
}

/// Same commands with coordinates equal up to accumulated rounding.
fn same_outline(a: &Glyph, b: &Glyph) -> bool {
    a.commands.len() == b.commands.len()
        && a.commands.iter().zip(&b.commands).all(|(x, y)| {
            x.kind() == y.kind()
                && x.points()
                    .iter()
                    .zip(y.points())
                    .all(|(p, q)| p.dist(q) <= 1e-9 * (1.0 + p.x.abs().max(p.y.abs())))
        })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    font_id: String,
    label: usize,
    char: String,
    svg: String,
}

/// Concatenated `d` attributes of every `<path>` element.
pub fn extract_path_data(svg: &str) -> Option<String> {
    let mut parts = Vec::new();
    let mut rest = svg;
    while let Some(i) = rest.find("<path") {
        let tag = &rest[i..];
        let end = tag.find('>').unwrap_or(tag.len());
        let attrs = &tag[5..end];
        let mut search = attrs;
        while let Some(j) = search.find('d') {
            let before = if j == 0 { ' ' } else { search.as_bytes()[j - 1] as char };
            let after = search[j + 1..].trim_start();
            if before.is_whitespace() && after.starts_with('=') {
                let value = after[1..].trim_start();
                if let Some(q) = value.chars().next().filter(|c| *c == '"' || *c == '\'') {
                    if let Some(close) = value[1..].find(q) {
                        parts.push(value[1..1 + close].to_string());
                    }
                }
                break;
            }
            search = &search[j + 1..];
        }
        rest = &tag[end.min(tag.len())..];
        if rest.len() == tag.len() {
            break;
        }
    }
    (!parts.is_empty()).then(|| parts.join(" "))
}

/// Splits `<font>_<char>.svg` into its font id and label.
fn parse_file_name(name: &str) -> Result<(String, usize), SkipReason> {
    let stem = name.strip_suffix(".svg").ok_or(SkipReason::BadFileName)?;
    let (font, ch) = stem.rsplit_once('_').ok_or(SkipReason::BadFileName)?;
    if font.is_empty() {
        return Err(SkipReason::BadFileName);
    }
    let label = label_of_str(ch).ok_or_else(|| SkipReason::LabelNotInSet(ch.to_string()))?;
    Ok((font.to_string(), label))
}

/// Reads every `*.svg` file of `dir` (sorted by name) into a corpus.
pub fn ingest(dir: &Path) -> Result<(Corpus, Vec<Skipped>), DatasetError> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "svg"))
        .collect();
    names.sort();
    let mut raw = Vec::new();
    let mut skipped = Vec::new();
    for path in names {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let skip = |reason| Skipped {
            source: name.clone(),
            reason,
        };
        let (font, label) = match parse_file_name(&name) {
            Ok(x) => x,
            Err(r) => {
                skipped.push(skip(r));
                continue;
            }
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                skipped.push(skip(SkipReason::Io(e.to_string())));
                continue;
            }
        };
        let Some(d) = extract_path_data(&text) else {
            skipped.push(skip(SkipReason::NoPathData));
            continue;
        };
        match parse_path(&d) {
            Ok(cmds) => raw.push((font, Glyph::new(label, cmds, CoordinateMode::Absolute))),
            Err(e) => skipped.push(skip(SkipReason::Parse(e))),
        }
    }
    if raw.is_empty() {
        return Err(DatasetError::NoValidGlyphs);
    }
    let (corpus, more) = Corpus::build(raw)?;
    skipped.extend(more);
    for s in &skipped {
        log::info!("skipped {}: {}", s.source, s.reason);
    }
    Ok((corpus, skipped))
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// True when `font_id` falls in the first `ratio` of the hash range.
pub fn in_train_split(font_id: &str, ratio: f64, seed: u64) -> bool {
    let h = fnv1a(seed.to_le_bytes().into_iter().chain(font_id.bytes()));
    ((h >> 11) as f64 / (1u64 << 53) as f64) < ratio
}

/// Partitions by a seeded hash of the font id, keeping fonts whole.
pub fn split(corpus: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, Corpus), DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    let mut train = corpus.filter(|e| in_train_split(&e.font_id, ratio, seed));
    let mut test = corpus.filter(|e| !in_train_split(&e.font_id, ratio, seed));
    train.meta.split_seed = Some(seed);
    test.meta.split_seed = Some(seed);
    Ok((train, test))
}

/// Parameters of one synthetic font family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Stroke half-width in grid units, within `[0.15, 1.0]`.
    pub stroke_weight: f64,
    /// Rightward lean of the verticals in degrees, within `[-10, 30]`.
    pub slant_deg: f64,
    /// Horizontal scale, within `[0.5, 1.5]`.
    pub width_scale: f64,
    /// Flared instead of flat stroke ends.
    pub serif: bool,
}

impl SyntheticSpec {
    pub const REGULAR: SyntheticSpec = SyntheticSpec {
        stroke_weight: 0.35,
        slant_deg: 0.0,
        width_scale: 1.0,
        serif: false,
    };

    pub fn validate(&self) -> bool {
        (0.15..=1.0).contains(&self.stroke_weight)
            && (-10.0..=30.0).contains(&self.slant_deg)
            && (0.5..=1.5).contains(&self.width_scale)
    }

    /// Stable identifier used as the synthetic font id.
    pub fn name(&self) -> String {
        format!(
            "w{:.2}-s{:.1}-x{:.2}{}",
            self.stroke_weight,
            self.slant_deg,
            self.width_scale,
            if self.serif { "-serif" } else { "" }
        )
    }
}

/// Grid units per synthetic font unit.
const GRID_UNIT: f64 = 10.0;
/// Maximum per-font displacement of stroke endpoints, in grid units.
const JITTER: f64 = 0.08;

type Stroke = ((f64, f64), (f64, f64));

/// Block-letter skeletons on a grid with the cap line at `y = 0`, the
/// x-height at `y = 3`, the baseline at `y = 8` and descenders to `y = 11`.
fn skeleton(ch: char) -> Vec<Stroke> {
    const BOX: [Stroke; 4] = [
        ((0., 0.), (4., 0.)),
        ((0., 0.), (0., 8.)),
        ((4., 0.), (4., 8.)),
        ((0., 8.), (4., 8.)),
    ];
    const XBOX: [Stroke; 4] = [
        ((0., 3.), (4., 3.)),
        ((0., 3.), (0., 8.)),
        ((4., 3.), (4., 8.)),
        ((0., 8.), (4., 8.)),
    ];
    let s = |v: &[Stroke]| v.to_vec();
    let with = |base: &[Stroke], extra: &[Stroke]| base.iter().chain(extra).copied().collect::<Vec<_>>();
    match ch {
        '0' => with(&BOX, &[((0.5, 7.0), (3.5, 1.0))]),
        '1' => s(&[((2., 0.), (2., 8.)), ((0.5, 1.5), (2., 0.)), ((0.5, 8.), (3.5, 8.))]),
        '2' => s(&[
            ((0., 0.), (4., 0.)),
            ((4., 0.), (4., 4.)),
            ((0., 4.), (4., 4.)),
            ((0., 4.), (0., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        '3' => s(&[
            ((0., 0.), (4., 0.)),
            ((4., 0.), (4., 8.)),
            ((1., 4.), (4., 4.)),
            ((0., 8.), (4., 8.)),
        ]),
        '4' => s(&[((0., 0.), (0., 5.)), ((0., 5.), (4., 5.)), ((3., 0.), (3., 8.))]),
        '5' => s(&[
            ((0., 0.), (4., 0.)),
            ((0., 0.), (0., 3.5)),
            ((0., 3.5), (3., 3.5)),
            ((3., 3.5), (4., 5.)),
            ((4., 5.), (4., 7.)),
            ((4., 7.), (3., 8.)),
            ((0., 8.), (3., 8.)),
        ]),
        '6' => s(&[
            ((0., 0.), (4., 0.)),
            ((0., 0.), (0., 8.)),
            ((0., 4.), (4., 4.)),
            ((4., 4.), (4., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        '7' => s(&[((0., 0.), (4., 0.)), ((4., 0.), (1., 8.))]),
        '8' => with(&BOX, &[((0., 4.), (4., 4.))]),
        '9' => s(&[
            ((0., 0.), (4., 0.)),
            ((0., 0.), (0., 4.)),
            ((0., 4.), (4., 4.)),
            ((4., 0.), (4., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'a' => s(&[
            ((0., 3.), (4., 3.)),
            ((4., 3.), (4., 8.)),
            ((0., 5.5), (4., 5.5)),
            ((0., 5.5), (0., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'b' => s(&[
            ((0., 0.), (0., 8.)),
            ((0., 3.), (4., 3.)),
            ((4., 3.), (4., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'c' => s(&[((0., 3.), (4., 3.)), ((0., 3.), (0., 8.)), ((0., 8.), (4., 8.))]),
        'd' => s(&[
            ((4., 0.), (4., 8.)),
            ((0., 3.), (4., 3.)),
            ((0., 3.), (0., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'e' => s(&[
            ((0., 3.), (4., 3.)),
            ((4., 3.), (4., 5.5)),
            ((0., 5.5), (4., 5.5)),
            ((0., 3.), (0., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'f' => s(&[((1., 0.), (4., 0.)), ((1., 0.), (1., 8.)), ((0., 3.), (3., 3.))]),
        'g' => s(&[
            ((0., 3.), (4., 3.)),
            ((0., 3.), (0., 7.)),
            ((0., 7.), (4., 7.)),
            ((4., 3.), (4., 11.)),
            ((0., 11.), (4., 11.)),
        ]),
        'h' => s(&[((0., 0.), (0., 8.)), ((0., 3.), (4., 3.)), ((4., 3.), (4., 8.))]),
        'i' => s(&[((2., 3.), (2., 8.)), ((2., 0.8), (2., 1.8))]),
        'j' => s(&[((3., 3.), (3., 11.)), ((0., 11.), (3., 11.)), ((3., 0.8), (3., 1.8))]),
        'k' => s(&[((0., 0.), (0., 8.)), ((0., 6.), (4., 3.)), ((1.5, 5.), (4., 8.))]),
        'l' => s(&[((2., 0.), (2., 8.))]),
        'm' => s(&[
            ((0., 3.), (0., 8.)),
            ((0., 3.), (4., 3.)),
            ((2., 3.), (2., 8.)),
            ((4., 3.), (4., 8.)),
        ]),
        'n' => s(&[((0., 3.), (0., 8.)), ((0., 3.), (4., 3.)), ((4., 3.), (4., 8.))]),
        'o' => s(&XBOX),
        'p' => s(&[
            ((0., 3.), (0., 11.)),
            ((0., 3.), (4., 3.)),
            ((4., 3.), (4., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'q' => s(&[
            ((4., 3.), (4., 11.)),
            ((0., 3.), (4., 3.)),
            ((0., 3.), (0., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'r' => s(&[((0., 3.), (0., 8.)), ((0., 3.), (4., 3.))]),
        's' => s(&[
            ((0., 3.), (4., 3.)),
            ((0., 3.), (0., 5.5)),
            ((0., 5.5), (4., 5.5)),
            ((4., 5.5), (4., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        't' => s(&[((1.5, 0.), (1.5, 8.)), ((0., 3.), (4., 3.)), ((1.5, 8.), (4., 8.))]),
        'u' => s(&[((0., 3.), (0., 8.)), ((4., 3.), (4., 8.)), ((0., 8.), (4., 8.))]),
        'v' => s(&[((0., 3.), (2., 8.)), ((2., 8.), (4., 3.))]),
        'w' => s(&[
            ((0., 3.), (1., 8.)),
            ((1., 8.), (2., 5.)),
            ((2., 5.), (3., 8.)),
            ((3., 8.), (4., 3.)),
        ]),
        'x' => s(&[((0., 3.), (4., 8.)), ((4., 3.), (0., 8.))]),
        'y' => s(&[((0., 3.), (2., 7.)), ((4., 3.), (1., 11.))]),
        'z' => s(&[((0., 3.), (4., 3.)), ((4., 3.), (0., 8.)), ((0., 8.), (4., 8.))]),
        'A' => s(&[((0., 8.), (2., 0.)), ((2., 0.), (4., 8.)), ((1., 5.), (3., 5.))]),
        'B' => s(&[
            ((0., 0.), (0., 8.)),
            ((0., 0.), (3., 0.)),
            ((3., 0.), (3., 3.5)),
            ((0., 4.), (4., 4.)),
            ((4., 4.), (4., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'C' => s(&[((0., 0.), (4., 0.)), ((0., 0.), (0., 8.)), ((0., 8.), (4., 8.))]),
        'D' => s(&[
            ((0., 0.), (0., 8.)),
            ((0., 0.), (3., 0.)),
            ((3., 0.), (4., 2.)),
            ((4., 2.), (4., 6.)),
            ((4., 6.), (3., 8.)),
            ((0., 8.), (3., 8.)),
        ]),
        'E' => s(&[
            ((0., 0.), (0., 8.)),
            ((0., 0.), (4., 0.)),
            ((0., 4.), (3., 4.)),
            ((0., 8.), (4., 8.)),
        ]),
        'F' => s(&[((0., 0.), (0., 8.)), ((0., 0.), (4., 0.)), ((0., 4.), (3., 4.))]),
        'G' => s(&[
            ((0., 0.), (4., 0.)),
            ((0., 0.), (0., 8.)),
            ((0., 8.), (4., 8.)),
            ((4., 8.), (4., 4.)),
            ((2., 4.), (4., 4.)),
        ]),
        'H' => s(&[((0., 0.), (0., 8.)), ((4., 0.), (4., 8.)), ((0., 4.), (4., 4.))]),
        'I' => s(&[((2., 0.), (2., 8.)), ((1., 0.), (3., 0.)), ((1., 8.), (3., 8.))]),
        'J' => s(&[((4., 0.), (4., 8.)), ((0., 8.), (4., 8.)), ((0., 6.), (0., 8.))]),
        'K' => s(&[((0., 0.), (0., 8.)), ((0., 4.), (4., 0.)), ((0., 4.), (4., 8.))]),
        'L' => s(&[((0., 0.), (0., 8.)), ((0., 8.), (4., 8.))]),
        'M' => s(&[
            ((0., 0.), (0., 8.)),
            ((4., 0.), (4., 8.)),
            ((0., 0.), (2., 4.)),
            ((2., 4.), (4., 0.)),
        ]),
        'N' => s(&[((0., 0.), (0., 8.)), ((4., 0.), (4., 8.)), ((0., 0.), (4., 8.))]),
        'O' => s(&BOX),
        'P' => s(&[
            ((0., 0.), (0., 8.)),
            ((0., 0.), (4., 0.)),
            ((4., 0.), (4., 4.)),
            ((0., 4.), (4., 4.)),
        ]),
        'Q' => with(&BOX, &[((2.5, 6.), (4.5, 9.))]),
        'R' => s(&[
            ((0., 0.), (0., 8.)),
            ((0., 0.), (4., 0.)),
            ((4., 0.), (4., 4.)),
            ((0., 4.), (4., 4.)),
            ((1.5, 4.), (4., 8.)),
        ]),
        'S' => s(&[
            ((0., 0.), (4., 0.)),
            ((0., 0.), (0., 4.)),
            ((0., 4.), (4., 4.)),
            ((4., 4.), (4., 8.)),
            ((0., 8.), (4., 8.)),
        ]),
        'T' => s(&[((0., 0.), (4., 0.)), ((2., 0.), (2., 8.))]),
        'U' => s(&[((0., 0.), (0., 8.)), ((4., 0.), (4., 8.)), ((0., 8.), (4., 8.))]),
        'V' => s(&[((0., 0.), (2., 8.)), ((2., 8.), (4., 0.))]),
        'W' => s(&[
            ((0., 0.), (1., 8.)),
            ((1., 8.), (2., 3.)),
            ((2., 3.), (3., 8.)),
            ((3., 8.), (4., 0.)),
        ]),
        'X' => s(&[((0., 0.), (4., 8.)), ((4., 0.), (0., 8.))]),
        'Y' => s(&[((0., 0.), (2., 4.)), ((4., 0.), (2., 4.)), ((2., 4.), (2., 8.))]),
        'Z' => s(&[((0., 0.), (4., 0.)), ((4., 0.), (0., 8.)), ((0., 8.), (4., 8.))]),
        _ => vec![],
    }
}

/// One stroke as a closed outline: two long sides joined by end caps. Flat
/// caps are degenerate cubics along the end; serif caps bulge outward.
fn stroke_outline(a: Point, b: Point, half: f64, serif: bool, out: &mut Vec<Command>) {
    let d = b - a;
    let len = d.x.hypot(d.y);
    let u = d * (1.0 / len);
    let n = Point::new(-u.y, u.x) * half;
    // extend past the endpoints so joints close
    let a = a - u * half;
    let b = b + u * half;
    let bulge = if serif { u * (half * 1.2) } else { Point::ORIGIN };
    let third = |p: Point, q: Point, t: f64| p.lerp(q, t);
    out.push(Command::MoveTo(a + n));
    out.push(Command::LineTo(b + n));
    out.push(Command::CubicBezier(
        third(b + n, b - n, 1.0 / 3.0) + bulge,
        third(b + n, b - n, 2.0 / 3.0) + bulge,
        b - n,
    ));
    out.push(Command::LineTo(a - n));
    out.push(Command::CubicBezier(
        third(a - n, a + n, 1.0 / 3.0) - bulge,
        third(a - n, a + n, 2.0 / 3.0) - bulge,
        a + n,
    ));
}

/// Absolute outline of one synthetic glyph.
pub fn synthetic_glyph<R: Rng + ?Sized>(spec: &SyntheticSpec, label: usize, rng: &mut R) -> Glyph {
    let ch = char_of(label).expect("label in range");
    let shear = spec.slant_deg.to_radians().tan();
    let map = |(x, y): (f64, f64)| {
        let x = x * spec.width_scale + (8.0 - y) * shear;
        Point::new(x * GRID_UNIT, y * GRID_UNIT)
    };
    let mut commands = Vec::new();
    for (p, q) in skeleton(ch) {
        let mut jit = || rng.random_range(-JITTER..=JITTER);
        let p = (p.0 + jit(), p.1 + jit());
        let q = (q.0 + jit(), q.1 + jit());
        stroke_outline(
            map(p),
            map(q),
            spec.stroke_weight * GRID_UNIT,
            spec.serif,
            &mut commands,
        );
    }
    Glyph::new(label, commands, CoordinateMode::Absolute)
}

/// Raw synthetic fonts: one font per spec, one glyph per label. The font
/// id is `<index>-<spec name>`.
pub fn synthesize_raw(specs: &[SyntheticSpec], labels: &[usize], seed: u64) -> Vec<(String, Glyph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(specs.len() * labels.len());
    for (i, spec) in specs.iter().enumerate() {
        let id = format!("{i:03}-{}", spec.name());
        for &l in labels {
            out.push((id.clone(), synthetic_glyph(spec, l, &mut rng)));
        }
    }
    out
}

/// Synthetic corpus built like an ingested one.
pub fn synthesize(specs: &[SyntheticSpec], labels: &[usize], seed: u64) -> Result<Corpus, DatasetError> {
    let (corpus, skipped) = Corpus::build(synthesize_raw(specs, labels, seed))?;
    if let Some(s) = skipped.first() {
        return Err(DatasetError::Corrupt(format!(
            "synthetic glyph {} failed: {}",
            s.source, s.reason
        )));
    }
    Ok(corpus)
}

/// Renders an absolute glyph with a viewbox fitted to it alone.
pub fn render_standalone(glyph: &Glyph) -> Result<Raster, DatasetError> {
    let vb = default_viewbox([glyph])?;
    Ok(render(glyph, &vb)?)
}
