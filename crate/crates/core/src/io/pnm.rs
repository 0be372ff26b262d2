//! Minimal PGM/PPM codec (P2/P3 ascii, P5/P6 binary, 8-bit).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PnmImage {
    pub w: usize,
    pub h: usize,
    /// 1 (gray) or 3 (rgb)
    pub channels: usize,
    /// row-major, interleaved channels
    pub data: Vec<u8>,
}

fn codec_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Codec {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Tokens in a PNM header: whitespace separated, `#` starts a comment.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Option<usize> {
        std::str::from_utf8(self.token()?).ok()?.parse().ok()
    }
}

pub fn read_pnm(path: &Path) -> Result<PnmImage> {
    let bytes = fs::read(path)?;
    let mut hdr = HeaderReader::new(&bytes);
    let magic = hdr.token().ok_or_else(|| codec_err(path, "empty file"))?;
    let (channels, ascii) = match magic {
        b"P2" => (1, true),
        b"P3" => (3, true),
        b"P5" => (1, false),
        b"P6" => (3, false),
        other => {
            return Err(codec_err(
                path,
                format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let w = hdr.number().ok_or_else(|| codec_err(path, "missing width"))?;
    let h = hdr.number().ok_or_else(|| codec_err(path, "missing height"))?;
    let maxval = hdr.number().ok_or_else(|| codec_err(path, "missing maxval"))?;
    if w == 0 || h == 0 {
        return Err(codec_err(path, "zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(codec_err(path, format!("unsupported maxval {maxval}")));
    }
    let n = w * h * channels;
    let mut data = Vec::with_capacity(n);
    if ascii {
        for _ in 0..n {
            let v = hdr
                .number()
                .ok_or_else(|| codec_err(path, "truncated ascii samples"))?;
            if v > maxval {
                return Err(codec_err(path, format!("sample {v} exceeds maxval {maxval}")));
            }
            data.push(v as u8);
        }
    } else {
        // binary samples start one whitespace byte after the maxval
        let start = hdr.pos + 1;
        if bytes.len() < start + n {
            return Err(codec_err(
                path,
                format!("truncated raster: want {} bytes, have {}", n, bytes.len().saturating_sub(start)),
            ));
        }
        data.extend_from_slice(&bytes[start..start + n]);
        if maxval < 255 {
            for v in &data {
                if *v as usize > maxval {
                    return Err(codec_err(path, format!("sample {v} exceeds maxval {maxval}")));
                }
            }
        }
    }
    // rescale so downstream code can always assume 8-bit full range
    if maxval != 255 {
        for v in &mut data {
            *v = ((*v as usize * 255 + maxval / 2) / maxval) as u8;
        }
    }
    Ok(PnmImage { w, h, channels, data })
}

/// Write a gray map with values in [0,1] as binary PGM, rounding half up.
pub fn write_pgm(path: &Path, w: usize, h: usize, values: &[f64]) -> Result<()> {
    if values.len() != w * h {
        return Err(Error::shape("write_pgm", format!("{w}x{h} with {} values", values.len())));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8));
    fs::write(path, out)?;
    Ok(())
}

/// Write an RGB image (interleaved u8) as binary PPM.
pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * w * h {
        return Err(Error::shape("write_ppm", format!("{w}x{h} with {} bytes", rgb.len())));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pnm_codec_tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn pgm_round_trip_error_is_below_half_a_level() {
        let p = tmp("round.pgm");
        let vals: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        write_pgm(&p, 8, 8, &vals).unwrap();
        let img = read_pnm(&p).unwrap();
        assert_eq!((img.w, img.h, img.channels), (8, 8, 1));
        for (orig, &byte) in vals.iter().zip(&img.data) {
            let back = byte as f64 / 255.0;
            assert!((orig - back).abs() <= 0.5 / 255.0 + 1e-12, "{orig} vs {back}");
        }
    }

    #[test]
    fn rounding_is_half_up() {
        let p = tmp("half.pgm");
        // 0.5/255 rounds up to 1, just below rounds down to 0
        write_pgm(&p, 2, 1, &[0.5 / 255.0, 0.4999 / 255.0]).unwrap();
        let img = read_pnm(&p).unwrap();
        assert_eq!(img.data, vec![1, 0]);
    }

    #[test]
    fn ascii_and_binary_agree() {
        let pa = tmp("a.pgm");
        fs::write(&pa, "P2\n# comment\n3 2\n255\n0 128 255\n10 20 30\n").unwrap();
        let a = read_pnm(&pa).unwrap();
        assert_eq!(a.data, vec![0, 128, 255, 10, 20, 30]);

        let pb = tmp("b.pgm");
        fs::write(&pb, b"P5\n3 2\n255\n\x00\x80\xff\x0a\x14\x1e".as_slice()).unwrap();
        let b = read_pnm(&pb).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn ppm_color_round_trip() {
        let p = tmp("c.ppm");
        let rgb: Vec<u8> = (0..2 * 2 * 3).map(|i| (i * 17) as u8).collect();
        write_ppm(&p, 2, 2, &rgb).unwrap();
        let img = read_pnm(&p).unwrap();
        assert_eq!(img.channels, 3);
        assert_eq!(img.data, rgb);
    }

    #[test]
    fn non_255_maxval_is_rescaled() {
        let p = tmp("m.pgm");
        fs::write(&p, "P2\n2 1\n7\n0 7\n").unwrap();
        let img = read_pnm(&p).unwrap();
        assert_eq!(img.data, vec![0, 255]);
    }

    #[test]
    fn bad_inputs_are_reported_with_path() {
        let p = tmp("bad.pgm");
        fs::write(&p, "P5\n4 4\n255\nxx").unwrap();
        let err = read_pnm(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.pgm") && msg.contains("truncated"), "{msg}");
    }
}
