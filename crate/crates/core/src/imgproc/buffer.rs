use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("filled: channels must be 1 or 3")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mean of the per-pixel luma (0.299R + 0.587G + 0.114B, or the value
    /// itself for grayscale).
    pub fn luma_mean(&self) -> f64 {
        let n = self.height * self.width;
        if n == 0 {
            return 0.0;
        }
        let total: f64 = (0..n).map(|p| self.luma_at(p)).sum();
        total / n as f64
    }

    #[inline]
    pub(crate) fn luma_at(&self, pixel: usize) -> f64 {
        if self.channels == 1 {
            self.data[pixel]
        } else {
            let o = pixel * 3;
            0.299 * self.data[o] + 0.587 * self.data[o + 1] + 0.114 * self.data[o + 2]
        }
    }

    /// Encode as binary PGM (1 channel) or PPM (3 channels), maxval 255.
    pub fn to_pnm_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| quantize(v)));
        out
    }

    /// Decode a binary PGM (P5) or PPM (P6) with maxval 255.
    pub fn from_pnm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(Error::format(
                    0,
                    format!("unsupported magic `{other}` (expected P5 or P6)"),
                ))
            }
        };
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        cursor.skip_ws_and_comments();
        let maxval_offset = cursor.pos;
        let maxval = cursor.number("maxval")?;
        if maxval != 255 {
            return Err(Error::format(
                maxval_offset as u64,
                format!("maxval must be 255, got {maxval}"),
            ));
        }
        // exactly one whitespace byte separates the header from the payload
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => {
                return Err(Error::format(
                    cursor.pos as u64,
                    "expected whitespace after maxval",
                ))
            }
        }
        let start = cursor.pos;
        let need = width * height * channels;
        let payload = &bytes[start..];
        if payload.len() < need {
            return Err(Error::format(
                (start + payload.len()) as u64,
                format!("truncated payload: need {need} bytes, found {}", payload.len()),
            ));
        }
        let data = payload[..need].iter().map(|&b| b as f64 / 255.0).collect();
        Self::new(height, width, channels, data)
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_ws_and_comments();
        let at = self.pos;
        let tok = self.token()?;
        tok.parse::<usize>()
            .map_err(|_| Error::format(at as u64, format!("invalid {what} `{tok}`")))
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ImageBuffer::from_pnm_bytes(&bytes)
}

pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.to_pnm_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_endpoints() {
        let img = ImageBuffer::from_pnm_bytes(b"P5\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn p6_midgray() {
        let img = ImageBuffer::from_pnm_bytes(b"P6 1 1 255\n\x80\x80\x80").unwrap();
        assert_eq!(img.channels(), 3);
        for &v in img.data() {
            assert!((v - 128.0 / 255.0).abs() < 1e-15);
            assert!((v - 0.50196).abs() < 1e-5);
        }
    }

    #[test]
    fn header_with_comment() {
        let img = ImageBuffer::from_pnm_bytes(b"P5\n# made by hand\n1 1\n255\n\x10").unwrap();
        assert_eq!(img.data(), &[16.0 / 255.0]);
    }

    #[test]
    fn p4_rejected() {
        let err = ImageBuffer::from_pnm_bytes(b"P4\n1 1\n\x00").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn bad_maxval_names_offset() {
        let err = ImageBuffer::from_pnm_bytes(b"P5\n1 1\n65535\n\x00\x00").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 7),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let err = ImageBuffer::from_pnm_bytes(b"P5\n2 2\n255\n\x00\x00\x00").unwrap_err();
        match err {
            Error::Format { offset, message } => {
                assert_eq!(offset, 14);
                assert!(message.contains("truncated"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn byte_roundtrip_is_exact() {
        let bytes: Vec<u8> = (0..=255u8).collect();
        let mut pgm = b"P5\n16 16\n255\n".to_vec();
        pgm.extend(&bytes);
        let img = ImageBuffer::from_pnm_bytes(&pgm).unwrap();
        assert_eq!(img.to_pnm_bytes(), pgm);
        let again = ImageBuffer::from_pnm_bytes(&img.to_pnm_bytes()).unwrap();
        assert_eq!(again, img);
    }

    #[test]
    fn file_roundtrip_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.0837) % 1.0).collect();
        let img = ImageBuffer::new(2, 2, 3, data).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_image("/nonexistent/file.pgm").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/file.pgm"));
    }
}
