//! Flat named parameter vectors, EMA maintenance and the checkpoint container.
//!
//! Checkpoint layout:
//!
//! ```text
//! DKTPARAMS 1
//! segments <count>
//! <name> <offset> <len>        one line per segment, offsets in f64 units
//! end
//! <payload: little-endian f64 values, segments back to back>
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "DKTPARAMS 1";

/// Named segment of real parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub values: Vec<f64>,
}

/// Ordered collection of named parameter segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if s.name.is_empty() || s.name.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad segment name {:?}", s.name)));
            }
            if segments[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::InvalidArgument(format!("duplicate segment {}", s.name)));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments.iter().find(|s| s.name == name).map(|s| s.values.as_slice())
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.values.len()).sum()
    }

    /// All values, segment after segment.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().flat_map(|s| s.values.iter().copied())
    }

    /// Same names, order and lengths.
    pub fn is_compatible(&self, other: &ParamVector) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.name == b.name && a.values.len() == b.values.len())
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::Incompatible(format!("[{}] vs [{}]", self.layout(), other.layout())))
        }
    }

    fn layout(&self) -> String {
        self.segments.iter().map(|s| format!("{}:{}", s.name, s.values.len())).collect::<Vec<_>>().join(", ")
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        self.check_compatible(other)?;
        let segments = self
            .segments
            .iter()
            .zip(&other.segments)
            .map(|(a, b)| Segment {
                name: a.name.clone(),
                values: a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect(),
            })
            .collect();
        Ok(ParamVector { segments })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = format!("{MAGIC}\nsegments {}\n", self.segments.len());
        let mut offset = 0;
        for s in &self.segments {
            header.push_str(&format!("{} {} {}\n", s.name, offset, s.values.len()));
            offset += s.values.len();
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        for v in self.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<ParamVector> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::format(0, format!("read failed: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamVector> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<(u64, String)> {
            let start = *pos;
            let rel = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(start as u64, "unterminated manifest line"))?;
            *pos = start + rel + 1;
            let line = std::str::from_utf8(&bytes[start..start + rel])
                .map_err(|_| Error::format(start as u64, "manifest is not UTF-8"))?;
            Ok((start as u64, line.to_string()))
        };

        let (off, magic) = next_line(&mut pos)?;
        if magic != MAGIC {
            return Err(Error::format(off, format!("bad magic {magic:?}")));
        }
        let (off, count_line) = next_line(&mut pos)?;
        let count: usize = count_line
            .strip_prefix("segments ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::format(off, format!("expected `segments <n>`, got {count_line:?}")))?;

        let mut layout = Vec::new();
        let mut expected_offset = 0usize;
        for _ in 0..count {
            let (off, line) = next_line(&mut pos)?;
            let parts: Vec<&str> = line.split(' ').collect();
            let parsed = match parts.as_slice() {
                [name, o, l] => o.parse::<usize>().ok().zip(l.parse::<usize>().ok()).map(|ol| (*name, ol)),
                _ => None,
            };
            let (name, (o, len)) = parsed.ok_or_else(|| Error::format(off, format!("bad segment line {line:?}")))?;
            if o != expected_offset {
                return Err(Error::format(off, format!("segment {name} offset {o}, expected {expected_offset}")));
            }
            expected_offset =
                expected_offset.checked_add(len).ok_or_else(|| Error::format(off, "segment length overflow"))?;
            layout.push((name.to_string(), len));
        }
        let (off, end) = next_line(&mut pos)?;
        if end != "end" {
            return Err(Error::format(off, format!("expected `end`, got {end:?}")));
        }

        let payload = &bytes[pos..];
        let needed =
            expected_offset.checked_mul(8).ok_or_else(|| Error::format(pos as u64, "payload size overflow"))?;
        if payload.len() != needed {
            return Err(Error::format(
                pos as u64,
                format!("payload has {} bytes, manifest needs {needed}", payload.len()),
            ));
        }
        let mut chunks = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let segments = layout
            .into_iter()
            .map(|(name, len)| Segment { name, values: chunks.by_ref().take(len).collect() })
            .collect();
        ParamVector::new(segments).map_err(|e| Error::format(0, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamVector> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// EMA teacher settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaConfig {
    pub momentum: f64,
    /// Step after which the EMA teacher is reset to the student.
    pub reinit_step: usize,
    /// Reset every `reinit_step` steps instead of once.
    pub periodic_reinit: bool,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self { momentum: 0.999, reinit_step: 5000, periodic_reinit: false }
    }
}

impl EmaConfig {
    /// Whether the teacher should be reset after `completed` optimizer steps.
    pub fn reinit_due(&self, completed: usize) -> bool {
        if self.periodic_reinit && self.reinit_step > 0 {
            completed.is_multiple_of(self.reinit_step)
        } else {
            completed == self.reinit_step
        }
    }
}

/// `m * teacher + (1 - m) * student`, elementwise.
pub fn ema_update(teacher: &ParamVector, student: &ParamVector, m: f64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1], got {m}")));
    }
    teacher.zip_map(student, |t, s| m * t + (1.0 - m) * s)
}

/// Resets the teacher to an exact copy of the student.
pub fn reinit(teacher: &ParamVector, student: &ParamVector) -> Result<ParamVector> {
    teacher.check_compatible(student)?;
    Ok(student.clone())
}
