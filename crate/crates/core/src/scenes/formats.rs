//! Byte-exact image formats: PPM (P6, maxval 255), PGM (P5), PFM (Pf
//! grayscale, little-endian, scale -1.0, bottom-up rows). See
//! docs/FORMATS.md.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::SceneIoError;

fn err(path: &Path, detail: impl Into<String>) -> SceneIoError {
    SceneIoError::Format {
        file: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Write an RGB image with values in [0,1], row-major top-down.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<(), SceneIoError> {
    assert_eq!(rgb.len(), width * height);
    let f = fs::File::create(path).map_err(|e| err(path, format!("create: {e}")))?;
    let mut w = BufWriter::new(f);
    write!(w, "P6\n{width} {height}\n255\n").map_err(|e| err(path, e.to_string()))?;
    let mut buf = Vec::with_capacity(width * height * 3);
    for px in rgb {
        for c in px {
            buf.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&buf).map_err(|e| err(path, e.to_string()))?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>), SceneIoError> {
    let bytes = fs::read(path).map_err(|e| err(path, format!("read: {e}")))?;
    let (w, h, maxval, data) = parse_netpbm_header(path, &bytes, b"P6")?;
    if maxval != 255 {
        return Err(err(path, format!("unsupported maxval {maxval}, want 255")));
    }
    if data.len() < w * h * 3 {
        return Err(err(path, format!("truncated pixel data: {} of {} bytes", data.len(), w * h * 3)));
    }
    let img = data[..w * h * 3]
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    Ok((w, h, img))
}

/// Write a binary mask (0 / 255), row-major top-down.
pub fn write_pgm(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<(), SceneIoError> {
    assert_eq!(mask.len(), width * height);
    let f = fs::File::create(path).map_err(|e| err(path, format!("create: {e}")))?;
    let mut w = BufWriter::new(f);
    write!(w, "P5\n{width} {height}\n255\n").map_err(|e| err(path, e.to_string()))?;
    let buf: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    w.write_all(&buf).map_err(|e| err(path, e.to_string()))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<bool>), SceneIoError> {
    let bytes = fs::read(path).map_err(|e| err(path, format!("read: {e}")))?;
    let (w, h, maxval, data) = parse_netpbm_header(path, &bytes, b"P5")?;
    if maxval != 255 {
        return Err(err(path, format!("unsupported maxval {maxval}, want 255")));
    }
    if data.len() < w * h {
        return Err(err(path, format!("truncated pixel data: {} of {} bytes", data.len(), w * h)));
    }
    let mut mask = Vec::with_capacity(w * h);
    for &b in &data[..w * h] {
        match b {
            0 => mask.push(false),
            255 => mask.push(true),
            other => return Err(err(path, format!("mask value {other} is neither 0 nor 255"))),
        }
    }
    Ok((w, h, mask))
}

/// Write a grayscale PFM; input is row-major top-down, file rows are stored
/// bottom-up per the PFM convention; scale -1.0 marks little-endian.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<(), SceneIoError> {
    assert_eq!(values.len(), width * height);
    let f = fs::File::create(path).map_err(|e| err(path, format!("create: {e}")))?;
    let mut w = BufWriter::new(f);
    write!(w, "Pf\n{width} {height}\n-1.0\n").map_err(|e| err(path, e.to_string()))?;
    for row in (0..height).rev() {
        for col in 0..width {
            let v = values[row * width + col] as f32;
            w.write_all(&v.to_le_bytes()).map_err(|e| err(path, e.to_string()))?;
        }
    }
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>), SceneIoError> {
    let bytes = fs::read(path).map_err(|e| err(path, format!("read: {e}")))?;
    let mut header = HeaderScanner::new(&bytes);
    let magic = header.token(path, "magic")?;
    if magic != b"Pf" {
        return Err(err(path, "bad magic, want Pf (grayscale pfm)"));
    }
    let w: usize = header.parse(path, "width")?;
    let h: usize = header.parse(path, "height")?;
    let scale: f64 = header.parse(path, "scale")?;
    if scale >= 0.0 {
        return Err(err(path, format!("scale {scale} marks big-endian, only little-endian (-1.0) supported")));
    }
    let data = &bytes[header.pos..];
    if data.len() < w * h * 4 {
        return Err(err(path, format!("truncated float data: {} of {} bytes", data.len(), w * h * 4)));
    }
    let mut out = vec![0.0f64; w * h];
    for frow in 0..h {
        let row = h - 1 - frow; // stored bottom-up
        for col in 0..w {
            let o = (frow * w + col) * 4;
            let v = f32::from_le_bytes([data[o], data[o + 1], data[o + 2], data[o + 3]]);
            out[row * w + col] = v as f64;
        }
    }
    Ok((w, h, out))
}

fn parse_netpbm_header<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: &[u8],
) -> Result<(usize, usize, usize, &'a [u8]), SceneIoError> {
    let mut s = HeaderScanner::new(bytes);
    let m = s.token(path, "magic")?;
    if m != magic {
        return Err(err(
            path,
            format!("bad magic {:?}, want {:?}", String::from_utf8_lossy(m), String::from_utf8_lossy(magic)),
        ));
    }
    let w = s.parse(path, "width")?;
    let h = s.parse(path, "height")?;
    let maxval = s.parse(path, "maxval")?;
    Ok((w, h, maxval, &bytes[s.pos..]))
}

/// Whitespace-token scanner for netpbm-style headers; the data section
/// starts exactly one byte after the last header token.
struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScanner<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderScanner { bytes, pos: 0 }
    }

    fn token(&mut self, path: &Path, field: &str) -> Result<&'a [u8], SceneIoError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(err(path, format!("missing header field {field}")));
        }
        let tok = &self.bytes[start..self.pos];
        // consume the single whitespace that terminates the token
        if self.pos < self.bytes.len() {
            self.pos += 1;
        }
        Ok(tok)
    }

    fn parse<T: std::str::FromStr>(&mut self, path: &Path, field: &str) -> Result<T, SceneIoError> {
        let tok = self.token(path, field)?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(path, format!("unparsable header field {field}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("surfrec_fmt_tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn ppm_roundtrip() {
        let path = tmp("a.ppm");
        let img = vec![[0.0, 0.5, 1.0], [1.0, 0.25, 0.75], [0.1, 0.2, 0.3], [0.9, 0.8, 0.7]];
        write_ppm(&path, 2, 2, &img).unwrap();
        let (w, h, back) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        for (a, b) in img.iter().zip(back.iter()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn pgm_roundtrip_and_bad_value() {
        let path = tmp("m.pgm");
        let mask = vec![true, false, false, true];
        write_pgm(&path, 2, 2, &mask).unwrap();
        let (_, _, back) = read_pgm(&path).unwrap();
        assert_eq!(mask, back);

        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] = 7;
        std::fs::write(&path, bytes).unwrap();
        let e = read_pgm(&path).unwrap_err();
        assert!(e.to_string().contains("neither 0 nor 255"), "{e}");
    }

    #[test]
    fn pfm_roundtrip_bit_exact_and_truncation() {
        let path = tmp("d.pfm");
        let vals = vec![1.5, -1.0, 2.25, 1e10, 0.0, 3.75];
        write_pfm(&path, 3, 2, &vals).unwrap();
        let (w, h, back) = read_pfm(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        for (a, b) in vals.iter().zip(back.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let e = read_pfm(&path).unwrap_err();
        assert!(e.to_string().contains("truncated"), "{e}");
        assert!(e.to_string().contains("d.pfm"), "error must name the file: {e}");
    }
}
