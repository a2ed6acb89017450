use std::fs;
use std::path::Path;

use crate::bag::Mask;
use crate::error::{Error, Result};
use crate::explain::SaliencyMap;

/// A decoded binary (P5) greymap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

fn encode(width: usize, height: usize, maxval: u16, data: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval < 256 {
        out.extend(data.iter().map(|&v| v as u8));
    } else {
        out.extend(data.iter().flat_map(|v| v.to_be_bytes()));
    }
    out
}

/// 8-bit mask image: defect pixels are 255, background 0.
pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let data: Vec<u16> = mask.pixels.iter().map(|&p| p as u16 * 255).collect();
    super::write_file(path, &encode(mask.width, mask.height, 255, &data))
}

/// 16-bit saliency image, min-max scaled to the full range. A constant map
/// is written as all zeros.
pub fn write_saliency_pgm(path: &Path, map: &SaliencyMap) -> Result<()> {
    let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data: Vec<u16> = map
        .values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    super::write_file(path, &encode(map.width, map.height, 65535, &data))
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    decode(&fs::read(path)?)
}

fn decode(bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(pos as u64, "truncated PGM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(Error::parse(0, format!("expected P5 magic, found {:?}", fields[0].1)));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| Error::parse(fields[i].0 as u64, format!("bad PGM field {:?}", fields[i].1)))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(fields[3].0 as u64, format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bpp))
        .ok_or_else(|| Error::parse(fields[1].0 as u64, "image dimensions overflow"))?;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("PGM raster truncated: need {need} bytes, have {}", raster.len()),
        ));
    }
    let data = if bpp == 1 {
        raster[..need].iter().map(|&b| b as u16).collect()
    } else {
        raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}

/// Any nonzero pixel is a defect pixel.
pub fn mask_from_pgm(pgm: &Pgm) -> Result<Mask> {
    Mask::new(pgm.width, pgm.height, pgm.data.iter().map(|&v| u8::from(v > 0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let p = decode(&bytes).unwrap();
        assert_eq!((p.width, p.height, p.data.clone()), (2, 1, vec![0, 255]));
        assert_eq!(mask_from_pgm(&p).unwrap().pixels, vec![0, 1]);
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let p = decode(&encode(1, 2, 65535, &[258, 65535])).unwrap();
        assert_eq!(p.data, vec![258, 65535]);
    }

    #[test]
    fn truncation_and_bad_magic() {
        assert!(matches!(decode(b"P5\n4 4\n255\n\x00\x01"), Err(Error::Parse { .. })));
        assert!(matches!(decode(b"P2\n1 1\n255\n0"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(decode(b"P5\n1"), Err(Error::Parse { .. })));
        assert!(decode(b"P5\n99999999999 99999999999\n65535\n").is_err());
    }
}
