//! Frames, movies and sessions, plus the LASR-text interchange format and
//! map image output.
//!
//! LASR-text layout:
//!
//! ```text
//! LASR1 <rows> <cols> <nframes> <fps>
//! <rows lines of <cols> whitespace-separated decimals>
//!
//! <next frame ...>
//! ```
//!
//! Frames are separated by exactly one blank line. Values are written with six
//! significant digits; a movie whose values are already representable at that
//! precision round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{LasrError, Result};

/// Significant digits used when serializing values.
pub const SIGNIFICANT_DIGITS: usize = 6;

const MAGIC: &str = "LASR1";
const SESSION_MAGIC: &str = "LASR-SESSION 1";

/// Round `v` to the interchange precision.
pub fn quantize(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    quantize_fast(v).unwrap_or_else(|| {
        format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)
            .parse()
            .expect("formatted float parses")
    })
}

/// Integer digit string times an exact power of ten. The final multiply or
/// divide is correctly rounded, so the result matches parsing the text form.
/// Gives up near rounding ties and outside the exact powers of ten.
fn quantize_fast(v: f64) -> Option<f64> {
    const POW10: [f64; 23] = [
        1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9, 1e10, 1e11, 1e12, 1e13, 1e14, 1e15, 1e16,
        1e17, 1e18, 1e19, 1e20, 1e21, 1e22,
    ];
    let digits = SIGNIFICANT_DIGITS as i32;
    let a = v.abs();
    // decimal exponent of |v|; an off-by-one lands outside the digit range
    // below and takes the slow path
    let exp10 = if a >= 1.0 {
        POW10.partition_point(|&p| p <= a) as i32 - 1
    } else {
        -(POW10.partition_point(|&p| a * p < 1.0) as i32)
    };
    let shift = digits - 1 - exp10;
    let p = *POW10.get(shift.unsigned_abs() as usize)?;
    let scaled = if shift >= 0 { v * p } else { v / p };
    let r = scaled.round();
    let lo = POW10[(digits - 1) as usize];
    let frac = (scaled - scaled.trunc()).abs();
    if (frac - 0.5).abs() < 1e-6 || r.abs() < lo
        || r.abs() >= 10.0 * lo
    {
        return None;
    }
    Some(if shift >= 0 { r / p } else { r * p })
}

fn format_value(v: f64) -> String {
    let q = quantize(v);
    if q == 0.0 {
        "0".to_string()
    } else if q.is_nan() {
        "nan".to_string()
    } else {
        format!("{q}")
    }
}

/// One rows×cols grid of intensities with an optional support mask.
///
/// Pressure frames (constructed with [`Frame::new`] or loaded from disk) are
/// finite and nonnegative. Derived maps such as difference maps are built with
/// [`Frame::signed`] and may hold negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl Frame {
    /// Pressure frame; rejects negative or non-finite values.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(LasrError::invalid(format!(
                "pressure value {v} at index {i} must be finite and nonnegative"
            )));
        }
        Self::signed(rows, cols, values)
    }

    /// Map with arbitrary finite values (differences, smoothed fits).
    pub fn signed(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LasrError::invalid("frame dimensions must be positive"));
        }
        if values.len() != rows * cols {
            return Err(LasrError::invalid(format!(
                "expected {} values for a {rows}x{cols} frame, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LasrError::invalid("frame values must be finite"));
        }
        Ok(Frame {
            rows,
            cols,
            values,
            mask: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Frame::new(rows, cols, vec![0.0; rows * cols]).expect("zero frame is valid")
    }

    /// Attach a support mask of identical dimensions.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(LasrError::invalid(format!(
                "mask has {} cells, frame has {}",
                mask.len(),
                self.values.len()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Support mask if present, otherwise the strictly positive pixels.
    ///
    /// Segmented frames keep `mask == (value > 0)`, so this recovers the mask
    /// of a segmented frame after it has been written to disk.
    pub fn support(&self) -> Vec<bool> {
        match &self.mask {
            Some(m) => m.clone(),
            None => self.values.iter().map(|v| *v > 0.0).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy with every value rounded to the interchange precision.
    pub fn quantized(&self) -> Frame {
        Frame {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| quantize(*v)).collect(),
            mask: self.mask.clone(),
        }
    }

    pub(crate) fn from_parts(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        mask: Option<Vec<bool>>,
    ) -> Frame {
        debug_assert_eq!(values.len(), rows * cols);
        Frame {
            rows,
            cols,
            values,
            mask,
        }
    }
}

/// Ordered, dimension-homogeneous frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Movie {
    frames: Vec<Frame>,
    fps: f64,
}

impl Movie {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(LasrError::invalid("movie needs at least one frame"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(LasrError::invalid(format!("fps must be positive, got {fps}")));
        }
        let dims = frames[0].dims();
        if let Some((k, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(LasrError::invalid(format!(
                "frame {k} is {}x{}, expected {}x{}",
                f.rows, f.cols, dims.0, dims.1
            )));
        }
        Ok(Movie { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &Frame {
        &self.frames[k]
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Pixelwise average over all frames; the mask is the intersection of
    /// frame supports when every frame carries a mask.
    pub fn mean_frame(&self) -> Frame {
        let (rows, cols) = self.dims();
        let n = self.frames.len() as f64;
        let mut acc = vec![0.0; rows * cols];
        for f in &self.frames {
            for (a, v) in acc.iter_mut().zip(&f.values) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        let mask = if self.frames.iter().all(|f| f.mask.is_some()) {
            let mut m = vec![true; rows * cols];
            for f in &self.frames {
                for (a, b) in m.iter_mut().zip(f.mask.as_ref().unwrap()) {
                    *a &= *b;
                }
            }
            Some(m)
        } else {
            None
        };
        Frame::from_parts(rows, cols, acc, mask)
    }

    pub fn quantized(&self) -> Movie {
        Movie {
            frames: self.frames.iter().map(Frame::quantized).collect(),
            fps: self.fps,
        }
    }
}

/// Assessment condition of a session segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentTag {
    NoStim,
    Stim,
}

impl SegmentTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentTag::NoStim => "NoStim",
            SegmentTag::Stim => "Stim",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "NoStim" | "N" => Some(SegmentTag::NoStim),
            "Stim" | "S" => Some(SegmentTag::Stim),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub tag: SegmentTag,
    pub movie: Movie,
}

/// One assessment session: tagged segments recorded in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLayout {
    segments: Vec<Segment>,
    pub session_id: String,
    pub subject_id: String,
}

impl SessionLayout {
    pub fn new(
        segments: Vec<Segment>,
        session_id: impl Into<String>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(LasrError::invalid("session needs at least one segment"));
        }
        Ok(SessionLayout {
            segments,
            session_id: session_id.into(),
            subject_id: subject_id.into(),
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segment by 1-based position.
    pub fn segment(&self, number: usize) -> Result<&Segment> {
        number
            .checked_sub(1)
            .and_then(|i| self.segments.get(i))
            .ok_or_else(|| {
                LasrError::invalid(format!(
                    "session {} has {} segments, segment {number} requested",
                    self.session_id,
                    self.segments.len()
                ))
            })
    }
}

// ---------------------------------------------------------------------------
// LASR-text
// ---------------------------------------------------------------------------

/// Serialize a movie to LASR-text.
pub fn format_movie(movie: &Movie) -> String {
    let (rows, cols) = movie.dims();
    let mut out = String::new();
    writeln!(
        out,
        "{MAGIC} {rows} {cols} {} {}",
        movie.len(),
        format_value(movie.fps)
    )
    .unwrap();
    for (k, frame) in movie.frames.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        for r in 0..rows {
            let line: Vec<String> = frame.values[r * cols..(r + 1) * cols]
                .iter()
                .map(|v| format_value(*v))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Parse LASR-text. `source` names the input in error messages.
pub fn parse_movie(text: &str, source: &str) -> Result<Movie> {
    let err = |line: usize, message: String| LasrError::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != MAGIC {
        return Err(err(
            1,
            format!("header must be `{MAGIC} <rows> <cols> <nframes> <fps>`"),
        ));
    }
    let count = |s: &str, what: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(err(1, format!("{what} must be a positive integer, got `{s}`"))),
        }
    };
    let rows = count(fields[1], "rows")?;
    let cols = count(fields[2], "cols")?;
    let nframes = count(fields[3], "nframes")?;
    let fps: f64 = fields[4]
        .parse()
        .ok()
        .filter(|f: &f64| f.is_finite() && *f > 0.0)
        .ok_or_else(|| err(1, format!("fps must be a positive number, got `{}`", fields[4])))?;

    let mut frames = Vec::with_capacity(nframes);
    for k in 0..nframes {
        if k > 0 {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => {}
                Some((n, _)) => return Err(err(n, "expected blank line between frames".into())),
                None => {
                    return Err(err(
                        text.lines().count() + 1,
                        format!("file ends after {k} of {nframes} frames"),
                    ))
                }
            }
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = lines.next().ok_or_else(|| {
                err(
                    text.lines().count() + 1,
                    format!("file ends inside frame {}", k + 1),
                )
            })?;
            let before = values.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| err(n, format!("`{tok}` is not a number")))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(err(n, format!("value {tok} must be finite and nonnegative")));
                }
                values.push(v);
            }
            let got = values.len() - before;
            if got != cols {
                return Err(err(n, format!("row has {got} values, expected {cols}")));
            }
        }
        frames.push(Frame::from_parts(rows, cols, values, None));
    }
    if let Some((n, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(n, format!("unexpected content after last frame: `{l}`")));
    }
    Movie::new(frames, fps)
}

pub fn load_movie(path: impl AsRef<Path>) -> Result<Movie> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LasrError::io(path, e))?;
    parse_movie(&text, &path.display().to_string())
}

pub fn save_movie(movie: &Movie, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_movie(movie)).map_err(|e| LasrError::io(path, e))
}

// ---------------------------------------------------------------------------
// Map output
// ---------------------------------------------------------------------------

/// Gray-level mapping used by [`save_map_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapScale {
    /// Values must lie in [0, 1]; `v` maps to `round(255 v)`.
    UnitInterval,
    /// Values divided by the frame maximum; negatives clamp to 0.
    MaxNormalized,
}

/// Render a frame as plain PGM (`P2`, maxval 255).
pub fn format_pgm(frame: &Frame, scale: MapScale) -> Result<String> {
    let pixels: Vec<u8> = match scale {
        MapScale::UnitInterval => {
            if let Some(v) = frame.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(LasrError::invalid(format!(
                    "value {v} outside [0, 1] for unit-interval scaling"
                )));
            }
            frame.values.iter().map(|v| (255.0 * v).round() as u8).collect()
        }
        MapScale::MaxNormalized => {
            let max = frame.max_value();
            frame
                .values
                .iter()
                .map(|v| {
                    if max > 0.0 {
                        (255.0 * (v / max).clamp(0.0, 1.0)).round() as u8
                    } else {
                        0
                    }
                })
                .collect()
        }
    };
    let mut out = format!("P2\n{} {}\n255\n", frame.cols, frame.rows);
    for row in pixels.chunks(frame.cols) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_map_image(frame: &Frame, path: impl AsRef<Path>, scale: MapScale) -> Result<()> {
    let path = path.as_ref();
    let pgm = format_pgm(frame, scale)?;
    fs::write(path, pgm).map_err(|e| LasrError::io(path, e))
}

/// Comma-separated grid, one line per row. NaN cells are written as `nan`.
pub fn format_csv(rows: usize, cols: usize, values: &[f64]) -> String {
    let mut out = String::new();
    for row in values.chunks(cols).take(rows) {
        let line: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn save_map_csv(rows: usize, cols: usize, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_csv(rows, cols, values)).map_err(|e| LasrError::io(path, e))
}

// ---------------------------------------------------------------------------
// Session directories
// ---------------------------------------------------------------------------

/// Write a session as `session.txt` plus one LASR-text file per segment.
pub fn save_session(layout: &SessionLayout, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| LasrError::io(dir, e))?;
    let mut index = format!(
        "{SESSION_MAGIC}\nsession_id={}\nsubject_id={}\n",
        layout.session_id, layout.subject_id
    );
    for (i, seg) in layout.segments.iter().enumerate() {
        let name = format!("seg{}.lasr", i + 1);
        save_movie(&seg.movie, dir.join(&name))?;
        writeln!(index, "segment={} {name}", seg.tag.as_str()).unwrap();
    }
    let path = dir.join("session.txt");
    fs::write(&path, index).map_err(|e| LasrError::io(path, e))
}

pub fn load_session(dir: impl AsRef<Path>) -> Result<SessionLayout> {
    let dir = dir.as_ref();
    let path = dir.join("session.txt");
    let text = fs::read_to_string(&path).map_err(|e| LasrError::io(&path, e))?;
    let src = path.display().to_string();
    let err = |line: usize, message: String| LasrError::Parse {
        path: src.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == SESSION_MAGIC => {}
        _ => return Err(err(1, format!("expected `{SESSION_MAGIC}`"))),
    }
    let (mut session_id, mut subject_id) = (String::new(), String::new());
    let mut segments = Vec::new();
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(n, format!("expected key=value, got `{line}`")))?;
        match key.trim() {
            "session_id" => session_id = value.trim().to_string(),
            "subject_id" => subject_id = value.trim().to_string(),
            "segment" => {
                let (tag, file) = value
                    .trim()
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| err(n, "segment needs `<tag> <file>`".into()))?;
                let tag = SegmentTag::parse(tag)
                    .ok_or_else(|| err(n, format!("unknown segment tag `{tag}`")))?;
                let movie = load_movie(dir.join(file.trim()))?;
                segments.push(Segment { tag, movie });
            }
            other => return Err(err(n, format!("unknown key `{other}`"))),
        }
    }
    SessionLayout::new(segments, session_id, subject_id)
}
