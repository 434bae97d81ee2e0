//! Byte-level reader shared by the dataset and checkpoint formats: ASCII
//! header lines interleaved with raw little-endian `f64` payloads.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn error<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset,
            message: message.into(),
        })
    }

    pub fn expect(&mut self, magic: &[u8]) -> Result<()> {
        let end = self.pos + magic.len();
        if self.bytes.get(self.pos..end) != Some(magic) {
            return self.error(self.pos, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)));
        }
        self.pos = end;
        Ok(())
    }

    /// Next `\n`-terminated line, without the terminator.
    pub fn line(&mut self) -> Result<&'a str> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let Some(len) = rest.iter().position(|&b| b == b'\n') else {
            return self.error(start, "truncated: missing end of line");
        };
        let text = std::str::from_utf8(&rest[..len]).or_else(|_| self.error(start, "line is not UTF-8"))?;
        self.pos = start + len + 1;
        Ok(text)
    }

    /// Parses a line of whitespace-separated unsigned integers.
    pub fn usize_line(&mut self, expected: Option<usize>) -> Result<Vec<usize>> {
        let start = self.pos;
        let line = self.line()?;
        let values: std::result::Result<Vec<usize>, _> = line.split(' ').map(str::parse).collect();
        let values = values.or_else(|_| self.error(start, format!("expected integers, found {line:?}")))?;
        if let Some(n) = expected {
            if values.len() != n {
                return self.error(start, format!("expected {n} integers, found {}", values.len()));
            }
        }
        Ok(values)
    }

    pub fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let start = self.pos;
        let need = count
            .checked_mul(8)
            .and_then(|n| n.checked_add(start))
            .filter(|&end| end <= self.bytes.len());
        let Some(end) = need else {
            return self.error(
                start,
                format!("truncated payload: need {count} floats, {} bytes remain", self.bytes.len() - start),
            );
        };
        let out = self.bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        self.pos = end;
        Ok(out)
    }
}

pub(crate) fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn join_usizes(values: impl IntoIterator<Item = usize>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}
