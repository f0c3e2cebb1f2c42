//! Binary image container `IMG1` and little-endian helpers shared by the
//! other on-disk formats.
//!
//! Layout: 8-byte magic `MPIDIMG1`, `u32` height, `u32` width, then
//! `height * width` `f64` values in row-major order, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub const IMG_MAGIC: &[u8; 8] = b"MPIDIMG1";

pub fn write_image<W: Write>(w: &mut W, img: &Image) -> Result<()> {
    w.write_all(IMG_MAGIC)?;
    write_u32(w, img.height() as u32)?;
    write_u32(w, img.width() as u32)?;
    write_f64s(w, img.data())
}

pub fn read_image<R: Read>(r: &mut R) -> Result<Image> {
    expect_magic(r, IMG_MAGIC, "IMG1")?;
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    if h == 0 || w == 0 {
        return Err(Error::format("IMG1", format!("zero extent {h}x{w}")));
    }
    let n = h
        .checked_mul(w)
        .ok_or_else(|| Error::format("IMG1", "extent overflow"))?;
    let data = read_f64s(r, n)?;
    Image::new(h, w, data)
}

pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + img.len() * 8);
    write_image(&mut buf, img)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let img = read_image(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::format("IMG1", "trailing bytes"));
    }
    Ok(img)
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8], name: &'static str) -> Result<()> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m).map_err(|_| Error::format(name, "truncated magic"))?;
    if &m != magic {
        return Err(Error::format(name, "bad magic"));
    }
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("binary", "unexpected end of data"))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("binary", "unexpected end of data"))?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("binary", "unexpected end of data"))?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::format("binary", "length overflow"))?];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("binary", "unexpected end of data"))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let img = Image::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let mut buf = Vec::new();
        write_image(&mut buf, &img).unwrap();
        assert_eq!(&buf[..8], b"MPIDIMG1");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(&buf[16 + 5 * 8..], &6.5f64.to_le_bytes());
        let back = read_image(&mut buf.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let img = Image::filled(2, 2, 1.0).unwrap();
        let mut buf = Vec::new();
        write_image(&mut buf, &img).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_image(&mut bad.as_slice()).is_err());
        let short = &buf[..buf.len() - 3];
        assert!(read_image(&mut &short[..]).is_err());
    }
}
