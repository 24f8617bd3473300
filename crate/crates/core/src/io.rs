//! Bit-exact file I/O: binary PGM (P5) images and the PLDT tensor container.
//!
//! PLDT layout, all multi-byte values little-endian:
//!
//! ```text
//! magic   4 bytes  "PLDT"
//! version u16      currently 1
//! rank    u16
//! extents u32 * rank
//! payload f32 * product(extents), row-major
//! ```
//!
//! Tensors are double precision in memory; the payload is 32-bit floats, so a
//! write/read round trip reproduces values to f32 precision.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const PLDT_MAGIC: [u8; 4] = *b"PLDT";
pub const PLDT_VERSION: u16 = 1;

pub fn write_tensor<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&PLDT_MAGIC)?;
    w.write_all(&PLDT_VERSION.to_le_bytes())?;
    let rank = u16::try_from(t.rank())
        .map_err(|_| Error::parameter(format!("rank {} exceeds u16", t.rank())))?;
    w.write_all(&rank.to_le_bytes())?;
    for &e in t.shape() {
        let e = u32::try_from(e)
            .map_err(|_| Error::parameter(format!("extent {e} exceeds u32")))?;
        w.write_all(&e.to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v.to_f64_c() as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != PLDT_MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {:?}, expected \"PLDT\"",
            path.display(),
            magic
        )));
    }
    let version = read_u16(&mut r)?;
    if version != PLDT_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let rank = read_u16(&mut r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(&mut r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        read_exact(&mut r, &mut buf, "payload")?;
        data.push(S::from_f64_c(f32::from_le_bytes(buf) as f64));
    }
    Tensor::from_vec(&shape, data)
}

/// Reads a binary PGM (P5, maxval 255) into a `(1, h, w)` tensor with pixel
/// byte `k` mapped to `k / 255`.
pub fn read_pgm<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;

    let mut cursor = 0usize;
    let magic = next_token(&bytes, &mut cursor)
        .ok_or_else(|| Error::format(format!("{}: missing PGM header", path.display())))?;
    if magic != b"P5" {
        return Err(Error::format(format!(
            "{}: not a binary PGM (P5) file",
            path.display()
        )));
    }
    let width = parse_header_int(&bytes, &mut cursor, path, "width")?;
    let height = parse_header_int(&bytes, &mut cursor, path, "height")?;
    let maxval = parse_header_int(&bytes, &mut cursor, path, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!(
            "{}: maxval {maxval} unsupported, expected 255",
            path.display()
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    cursor += 1;
    let n = width * height;
    if bytes.len() < cursor + n {
        return Err(Error::format(format!(
            "{}: truncated raster ({} bytes missing)",
            path.display(),
            cursor + n - bytes.len()
        )));
    }
    let data = bytes[cursor..cursor + n]
        .iter()
        .map(|&b| S::from_f64_c(f64::from(b) / 255.0))
        .collect();
    Tensor::from_vec(&[1, height, width], data)
}

/// Writes a `(1, h, w)` or `(h, w)` tensor as binary PGM. Values are clamped
/// to `[0, 1]` here and nowhere else, then scaled by 255 and rounded.
pub fn write_pgm<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    let (h, w) = match t.shape() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        other => {
            return Err(Error::parameter(format!(
                "write_pgm expects (1,h,w) or (h,w), got {other:?}"
            )))
        }
    };
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| {
            let v = v.to_f64_c().clamp(0.0, 1.0);
            (v * 255.0).round() as u8
        })
        .collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(format!("truncated {what}")))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, "header")?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "header")?;
    Ok(u32::from_le_bytes(b))
}

/// Returns the next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    if *cursor >= bytes.len() {
        return None;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    Some(&bytes[start..*cursor])
}

fn parse_header_int(bytes: &[u8], cursor: &mut usize, path: &Path, what: &str) -> Result<usize> {
    let tok = next_token(bytes, cursor)
        .ok_or_else(|| Error::format(format!("{}: missing {what}", path.display())))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(format!("{}: malformed {what}", path.display())))
}
