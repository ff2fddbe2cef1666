//! Binary netpbm images: P6 PPM for three-channel inputs and P5 PGM for
//! single-channel depth maps. Values map linearly between [0,1] scalars and
//! bytes 0..=255 (maxval is fixed at 255), so a save/load cycle moves any
//! pixel by at most half a quantization level and a load/save cycle is
//! byte-identical.

use std::path::Path;

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// Header scanner that tracks its byte position for error reports.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> HeaderCursor<'a> {
    fn bad(&self, what: String) -> Error {
        Error::Format {
            path: self.path.to_string(),
            offset: Some(self.pos as u64),
            what,
        }
    }

    /// Consumes whitespace and `#` comments; at least one byte must be eaten.
    fn skip_space(&mut self) -> Result<()> {
        let start = self.pos;
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if *b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return Err(self.bad("expected whitespace between header fields".to_string()));
        }
        Ok(())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.bad(format!("expected a decimal {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are ASCII");
        text.parse::<usize>().map_err(|_| {
            self.pos = start;
            self.bad(format!("{what} {text:?} is out of range"))
        })
    }
}

/// Parses a P5/P6 header and returns (width, height, raster offset).
fn parse_header(bytes: &[u8], path: &str, magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    let mut cur = HeaderCursor { bytes, pos: 0, path };
    if bytes.len() < 2 || &bytes[0..2] != magic {
        return Err(cur.bad(format!(
            "expected {} magic",
            std::str::from_utf8(magic).expect("magic is ASCII")
        )));
    }
    cur.pos = 2;
    cur.skip_space()?;
    let width = cur.number("width")?;
    cur.skip_space()?;
    let height = cur.number("height")?;
    cur.skip_space()?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        cur.pos = maxval_at;
        return Err(cur.bad(format!("only maxval 255 is supported, got {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((width, height, cur.pos + 1)),
        _ => Err(cur.bad("expected a single whitespace byte before the raster".to_string())),
    }
}

fn check_raster(bytes: &[u8], path: &str, start: usize, expected: usize) -> Result<()> {
    let have = bytes.len() - start;
    if have < expected {
        return Err(Error::Format {
            path: path.to_string(),
            offset: Some(bytes.len() as u64),
            what: format!("raster ends {} bytes short", expected - have),
        });
    }
    if have > expected {
        return Err(Error::Format {
            path: path.to_string(),
            offset: Some((start + expected) as u64),
            what: format!("{} trailing bytes after the raster", have - expected),
        });
    }
    Ok(())
}

fn quantize<S: Scalar>(v: S) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `[1,3,h,w]` values in [0,1] as a binary P6 PPM.
pub fn save_ppm<S: Scalar>(path: impl AsRef<Path>, image: &Tensor<S>) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Shape {
            op: "save_ppm",
            detail: format!("expected one 3-channel image, got {s}"),
        });
    }
    let path = path.as_ref();
    let mut bytes = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    let data = image.data();
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                bytes.push(quantize(data[s.idx(0, c, y, x)]));
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

/// Reads a binary P6 PPM into a `[1,3,h,w]` tensor with values in [0,1].
pub fn load_ppm<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let (w, h, start) = parse_header(&bytes, &name, b"P6")?;
    check_raster(&bytes, &name, start, w * h * 3)?;
    let shape = Shape::new(1, 3, h, w);
    let mut data = vec![S::zero(); shape.numel()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let byte = bytes[start + (y * w + x) * 3 + c];
                data[shape.idx(0, c, y, x)] = S::from_f64(byte as f64 / 255.0);
            }
        }
    }
    Tensor::from_vec(shape, data)
}

/// Writes `[1,1,h,w]` values in [0,1] as a binary P5 PGM.
pub fn save_pgm<S: Scalar>(path: impl AsRef<Path>, map: &Tensor<S>) -> Result<()> {
    let s = map.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::Shape {
            op: "save_pgm",
            detail: format!("expected one single-channel map, got {s}"),
        });
    }
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", s.w, s.h).into_bytes();
    for v in map.data() {
        bytes.push(quantize(*v));
    }
    std::fs::write(path, bytes).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

/// Reads a binary P5 PGM into a `[1,1,h,w]` tensor with values in [0,1].
pub fn load_pgm<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let (w, h, start) = parse_header(&bytes, &name, b"P5")?;
    check_raster(&bytes, &name, start, w * h)?;
    let data = bytes[start..]
        .iter()
        .map(|b| S::from_f64(*b as f64 / 255.0))
        .collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}
