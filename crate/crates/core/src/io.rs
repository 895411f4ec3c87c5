//! Image and raster file formats: binary PGM (P5) for 8/16-bit grayscale
//! and raw little-endian float32 rasters for full-precision outputs.

use crate::error::{EpError, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Grayscale image with f64 samples in `[0, maxval]` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub data: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
}

fn bad(msg: impl Into<String>) -> EpError {
    EpError::Image(msg.into())
}

/// Read a binary PGM (magic `P5`, maxval up to 65535, two-byte samples
/// big-endian per the format).
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated pgm header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(bad("not a binary pgm (expected magic P5)"));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token(&bytes)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = token(&bytes)?.parse().map_err(|_| bad("bad maxval"))?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad(format!("unsupported pgm geometry {width}x{height} maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let n = width * height;
    let data: Vec<f64> = if maxval < 256 {
        if bytes.len() < pos + n {
            return Err(bad("pgm pixel data truncated"));
        }
        bytes[pos..pos + n].iter().map(|&b| b as f64).collect()
    } else {
        if bytes.len() < pos + 2 * n {
            return Err(bad("pgm pixel data truncated"));
        }
        bytes[pos..pos + 2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    Ok(Image {
        data,
        height,
        width,
        maxval: maxval as u16,
    })
}

/// Write a binary PGM, rounding samples and clamping them to `[0, maxval]`.
pub fn write_pgm(
    path: impl AsRef<Path>,
    data: &[f64],
    height: usize,
    width: usize,
    maxval: u16,
) -> Result<()> {
    if data.len() != height * width {
        return Err(EpError::DimensionMismatch(format!(
            "pgm write: {} samples for {height}x{width}",
            data.len()
        )));
    }
    if maxval == 0 {
        return Err(bad("pgm maxval must be positive"));
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(w, "P5\n{width} {height}\n{maxval}\n")?;
    if maxval < 256 {
        let buf: Vec<u8> = data
            .iter()
            .map(|&v| v.round().clamp(0.0, maxval as f64) as u8)
            .collect();
        w.write_all(&buf)?;
    } else {
        let mut buf = Vec::with_capacity(2 * data.len());
        for &v in data {
            let q = v.round().clamp(0.0, maxval as f64) as u16;
            buf.extend_from_slice(&q.to_be_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Magic bytes opening a float raster file.
const F32_MAGIC: &[u8; 4] = b"F32R";

/// Write samples as a dimension-headered little-endian float32 raster:
/// magic `F32R`, u32 height, u32 width, then `height * width` row-major
/// f32 samples, all little-endian.
pub fn write_f32_raster(
    path: impl AsRef<Path>,
    data: &[f64],
    height: usize,
    width: usize,
) -> Result<()> {
    if data.len() != height * width {
        return Err(EpError::DimensionMismatch(format!(
            "raster write: {} samples for {height}x{width}",
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    let mut buf = Vec::with_capacity(12 + 4 * data.len());
    buf.extend_from_slice(F32_MAGIC);
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Read a [`write_f32_raster`] file back as `(samples, height, width)`.
pub fn read_f32_raster(path: impl AsRef<Path>) -> Result<(Vec<f64>, usize, usize)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path.as_ref())?).read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != F32_MAGIC {
        return Err(bad("not a float raster (missing F32R header)"));
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| bad("raster dimensions overflow"))?;
    if bytes.len() != 12 + 4 * n {
        return Err(bad(format!(
            "raster payload is {} bytes, header says {height}x{width}",
            bytes.len() - 12
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((data, height, width))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("eptv-io-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn pgm_roundtrip_8bit() {
        let path = tmp("rt8.pgm");
        let data: Vec<f64> = (0..12).map(|i| (i * 20) as f64).collect();
        write_pgm(&path, &data, 3, 4, 255).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!((img.height, img.width, img.maxval), (3, 4, 255));
        assert_eq!(img.data, data);
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn pgm_roundtrip_16bit() {
        let path = tmp("rt16.pgm");
        let data: Vec<f64> = (0..6).map(|i| (i * 10000) as f64).collect();
        write_pgm(&path, &data, 2, 3, 65535).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.maxval, 65535);
        assert_eq!(img.data, data);
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn pgm_write_rounds_and_clamps() {
        let path = tmp("clamp.pgm");
        write_pgm(&path, &[-4.0, 12.49, 12.51, 300.0], 2, 2, 255).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.data, vec![0.0, 12.0, 13.0, 255.0]);
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn pgm_reader_skips_comments() {
        let path = tmp("comment.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        std::fs::write(&path, &bytes).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.data, vec![1.0, 2.0, 3.0, 4.0]);
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn pgm_rejects_garbage() {
        let path = tmp("bad.pgm");
        std::fs::write(&path, b"P6\n2 2\n255\nxxxx").unwrap();
        assert!(read_pgm(&path).is_err());
        std::fs::write(&path, b"P5\n2 2\n255\nx").unwrap();
        assert!(read_pgm(&path).is_err());
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn f32_raster_roundtrip() {
        let path = tmp("raster.f32");
        let data = vec![0.0, -1.5, 3.25, 1e-8, 1e8, 7.5];
        write_f32_raster(&path, &data, 2, 3).unwrap();
        let (back, h, w) = read_f32_raster(&path).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back.len(), data.len());
        for (a, b) in data.iter().zip(&back) {
            assert!(((a - b) / (1.0 + a.abs())).abs() < 1e-7);
        }
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn f32_raster_rejects_bad_headers() {
        let path = tmp("raster-bad.f32");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(read_f32_raster(&path).is_err());
        // Header claims 2x2 but carries one sample.
        let mut bytes = b"F32R\x02\x00\x00\x00\x02\x00\x00\x00".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_f32_raster(&path).is_err());
        assert!(write_f32_raster(&path, &[1.0, 2.0], 2, 2).is_err());
        std::fs::remove_file(path).unwrap();
    }
}
