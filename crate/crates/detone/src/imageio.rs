//! Binary PGM (P5) and PPM (P6) reading and writing, maxval 255. Headers
//! are LF-separated ASCII tokens with `#` comments. With the `png`
//! feature enabled, 8-bit PNG files can be read as well.

use std::fs;
use std::io::Write;
use std::path::Path;

use detone_core::halftone::{ColorImage, GrayImage, HalftoneImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: not a binary PGM/PPM file (magic {magic:?})")]
    BadMagic { path: String, magic: String },
    #[error("{path}: malformed header at byte {offset}: {what}")]
    BadHeader {
        path: String,
        offset: usize,
        what: &'static str,
    },
    #[error("{path}: maxval {maxval} unsupported, only 255")]
    BadMaxval { path: String, maxval: u32 },
    #[error("{path}: pixel data truncated, expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[cfg(feature = "png")]
    #[error("{path}: {source}")]
    Png {
        path: String,
        source: image::ImageError,
    },
}

/// A decoded 8-bit image file.
#[derive(Clone, Debug)]
pub enum Image {
    Gray(GrayImage),
    Rgb(ColorImage),
}

impl Image {
    /// Continuous-tone grayscale view: P5 maps bytes to [0, 1] directly,
    /// color images go through the BT.601 conversion.
    pub fn into_gray(self) -> GrayImage {
        match self {
            Image::Gray(g) => g,
            Image::Rgb(rgb) => detone_core::halftone::to_grayscale(&rgb),
        }
    }

    pub fn dimensions(&self) -> (usize, usize) {
        match self {
            Image::Gray(g) => (g.height(), g.width()),
            Image::Rgb(c) => (c.height(), c.width()),
        }
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> HeaderParser<'a> {
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<u32, ImageIoError> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ImageIoError::BadHeader {
                path: self.path.to_string(),
                offset: start,
                what: "expected a decimal number",
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are ascii");
        text.parse().map_err(|_| ImageIoError::BadHeader {
            path: self.path.to_string(),
            offset: start,
            what: "number out of range",
        })
    }
}

/// Decode a P5/P6 file (or PNG when the feature is on).
pub fn read_image(path: &Path) -> Result<Image, ImageIoError> {
    let display = path.display().to_string();
    #[cfg(feature = "png")]
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        return read_png(path, &display);
    }
    let bytes = fs::read(path).map_err(|source| ImageIoError::Read {
        path: display.clone(),
        source,
    })?;
    if bytes.len() < 2 || bytes[0] != b'P' || (bytes[1] != b'5' && bytes[1] != b'6') {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(ImageIoError::BadMagic {
            path: display,
            magic,
        });
    }
    let color = bytes[1] == b'6';
    let mut parser = HeaderParser {
        bytes: &bytes,
        pos: 2,
        path: &display,
    };
    let w = parser.number()? as usize;
    let h = parser.number()? as usize;
    let maxval = parser.number()?;
    let header_end = parser.pos;
    if maxval != 255 {
        return Err(ImageIoError::BadMaxval {
            path: display,
            maxval,
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data_start = header_end + 1;
    if header_end >= bytes.len() || !bytes[header_end].is_ascii_whitespace() {
        return Err(ImageIoError::BadHeader {
            path: display,
            offset: header_end,
            what: "expected single whitespace before pixel data",
        });
    }
    let channels = if color { 3 } else { 1 };
    let expected = h * w * channels;
    let found = bytes.len().saturating_sub(data_start);
    if found < expected {
        return Err(ImageIoError::Truncated {
            path: display,
            expected,
            found,
        });
    }
    let raster = &bytes[data_start..data_start + expected];
    if color {
        Ok(Image::Rgb(ColorImage::from_raw(h, w, raster.to_vec())))
    } else {
        let data = raster.iter().map(|&b| b as f32 / 255.0).collect();
        Ok(Image::Gray(GrayImage::from_raw(h, w, data)))
    }
}

#[cfg(feature = "png")]
fn read_png(path: &Path, display: &str) -> Result<Image, ImageIoError> {
    let img = image::open(path).map_err(|source| ImageIoError::Png {
        path: display.to_string(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Image::Rgb(ColorImage::from_raw(h, w, rgb.into_raw())))
}

/// Round-half-up quantization of a unit-range value to a byte.
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Write a grayscale image as binary PGM (P5, maxval 255). Values are
/// clamped to [0, 1] and quantized with round-half-up.
pub fn write_image(path: &Path, image: &GrayImage) -> Result<(), ImageIoError> {
    let display = path.display().to_string();
    let mut out = Vec::with_capacity(32 + image.data().len());
    write!(out, "P5\n{} {}\n255\n", image.width(), image.height()).expect("vec write");
    out.extend(image.data().iter().map(|&v| quantize(v)));
    fs::write(path, out).map_err(|source| ImageIoError::Write {
        path: display,
        source,
    })
}

/// Write a halftone as PGM; the file then contains only bytes 0 and 255.
pub fn write_halftone(path: &Path, image: &HalftoneImage) -> Result<(), ImageIoError> {
    write_image(path, &image.as_gray())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn pgm_bytes_map_to_unit_range() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        fs::write(&path, b"P5\n2 2\n255\n\x00\x80\xff\x40").unwrap();
        let img = read_image(&path).unwrap();
        match img {
            Image::Gray(g) => {
                assert_eq!(g.height(), 2);
                let want = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
                for (a, b) in g.data().iter().zip(want) {
                    assert!((a - b).abs() < 1e-7);
                }
            }
            Image::Rgb(_) => panic!("P5 must decode as gray"),
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        fs::write(
            &path,
            b"P6\n# a comment\n2 # inline\n1\n# another\n255\n\x01\x02\x03\x04\x05\x06",
        )
        .unwrap();
        match read_image(&path).unwrap() {
            Image::Rgb(c) => {
                assert_eq!((c.height(), c.width()), (1, 2));
                assert_eq!(c.rgb(0, 1), (4, 5, 6));
            }
            Image::Gray(_) => panic!("P6 must decode as color"),
        }
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.pgm");
        let img = GrayImage::from_fn(3, 5, |y, x| ((y * 5 + x) as f32 * 17.0 % 256.0) / 255.0);
        write_image(&path, &img).unwrap();
        match read_image(&path).unwrap() {
            Image::Gray(back) => {
                for (a, b) in back.data().iter().zip(img.data()) {
                    assert!((a - b).abs() < 0.5 / 255.0 + 1e-7);
                }
                // A second trip is bit-identical: quantization is stable.
                let path2 = dir.path().join("rt2.pgm");
                write_image(&path2, &back).unwrap();
                assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
            }
            _ => panic!(),
        }
    }

    #[test]
    fn quantization_is_round_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.1), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn malformed_inputs_are_descriptive_errors() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        fs::write(&p, b"P4\n1 1\n255\n\x00").unwrap();
        assert!(matches!(read_image(&p), Err(ImageIoError::BadMagic { .. })));
        fs::write(&p, b"P5\n2 2\n65535\n\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            read_image(&p),
            Err(ImageIoError::BadMaxval { maxval: 65535, .. })
        ));
        fs::write(&p, b"P5\n2 2\n255\n\x00\x00").unwrap();
        assert!(matches!(
            read_image(&p),
            Err(ImageIoError::Truncated { expected: 4, found: 2, .. })
        ));
        fs::write(&p, b"P5\nx 2\n255\n").unwrap();
        assert!(matches!(read_image(&p), Err(ImageIoError::BadHeader { .. })));
    }

    #[test]
    fn halftone_files_contain_only_extreme_bytes() {
        use detone_core::halftone::{error_diffuse_fs, GrayImage};
        let dir = tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        let gray = GrayImage::from_fn(16, 16, |y, x| ((y + x) as f32 / 31.0).clamp(0.0, 1.0));
        let ht = error_diffuse_fs(&gray).unwrap();
        write_halftone(&path, &ht).unwrap();
        let bytes = fs::read(&path).unwrap();
        let body = &bytes[bytes.len() - 256..];
        assert!(body.iter().all(|&b| b == 0 || b == 255));
    }
}
