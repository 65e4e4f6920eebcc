//! Binary (P5) and ASCII (P2) greymap codec, 8-bit samples only.

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit greyscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Value that represents white; samples are in `0..=maxval`.
    pub maxval: u8,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Ingestion(format!(
                "image of {width}x{height} cannot hold {} samples",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            maxval: 255,
            data,
        })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            maxval: 255,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    /// True where the normalized intensity is at least one half.
    pub fn is_foreground(&self, row: usize, col: usize) -> bool {
        2 * self.get(row, col) as u16 >= self.maxval as u16
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Ingestion(format!("PGM header: bad {what}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'5' || bytes[1] == b'2') {
        return Err(Error::Ingestion("not a PGM file (expected P5 or P2 magic)".into()));
    }
    let binary = bytes[1] == b'5';
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Ingestion(format!("PGM has empty extent {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Ingestion(format!("PGM maxval {maxval} unsupported (1..=255)")));
    }
    let n = width * height;
    let data = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = c.pos + 1;
        if bytes.len() < start + n {
            return Err(Error::Ingestion(format!(
                "PGM raster truncated: {} of {n} samples",
                bytes.len().saturating_sub(start)
            )));
        }
        bytes[start..start + n].to_vec()
    } else {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(c.number("sample")?.min(maxval) as u8);
        }
        v
    };
    if data.iter().any(|&v| v as usize > maxval) {
        return Err(Error::Ingestion("PGM sample exceeds maxval".into()));
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u8,
        data,
    })
}

/// Binary P5 encoding.
pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Ingestion(m) => Error::Ingestion(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}
