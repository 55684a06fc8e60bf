use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelRange {
    /// 0–255 pixel values.
    Raw,
    /// Centered and normalized.
    Preprocessed,
}

/// A `3×H×W` float image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub pixels: Tensor<f32>,
    pub range: PixelRange,
}

impl ImageSample {
    pub fn raw(pixels: Tensor<f32>) -> Result<Self> {
        match pixels.shape() {
            [3, _, _] => {}
            s => bail!(Data, "image must be 3×H×W, got {:?}", s),
        }
        if pixels.data().iter().any(|v| !(0.0..=255.0).contains(v)) {
            bail!(Data, "raw pixel outside [0, 255]");
        }
        Ok(ImageSample {
            pixels,
            range: PixelRange::Raw,
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim(1)
    }

    pub fn width(&self) -> usize {
        self.pixels.dim(2)
    }

    /// Rounds to 8-bit and interleaves to RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let p = self.pixels.data();
        let mut out = Vec::with_capacity(3 * h * w);
        for i in 0..h * w {
            for c in 0..3 {
                out.push(p[c * h * w + i].round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != 3 * width * height {
            bail!(
                Data,
                "{}×{} RGB image needs {} bytes, got {}",
                width,
                height,
                3 * width * height,
                rgb.len()
            );
        }
        let hw = width * height;
        let pixels = Tensor::from_fn([3, height, width], |i| rgb[(i % hw) * 3 + i / hw] as f32);
        ImageSample::raw(pixels)
    }
}

/// Parses a binary PPM (P6). Values are rescaled to 0–255 when the file's
/// maximum is below 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageSample> {
    let (w, h, maxval, offset) = ppm_header(bytes)?;
    let need = 3 * w * h;
    let Some(body) = bytes.get(offset..offset + need) else {
        bail!(Data, "PPM body truncated: need {} bytes after header", need);
    };
    if maxval == 255 {
        return ImageSample::from_rgb8(w, h, body);
    }
    let scale = 255.0 / maxval as f32;
    let hw = w * h;
    let pixels = Tensor::from_fn([3, h, w], |i| (body[(i % hw) * 3 + i / hw] as f32 * scale).min(255.0));
    ImageSample::raw(pixels)
}

/// Width, height, maxval and the byte offset of the pixel data.
pub fn ppm_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    if !bytes.starts_with(b"P6") {
        bail!(Data, "not a binary PPM (missing P6 magic)");
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *f = match text.parse() {
            Ok(v) => v,
            Err(_) => bail!(Data, "malformed PPM header near byte {}", start),
        };
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        bail!(Data, "PPM header not terminated by whitespace");
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        bail!(Data, "unsupported PPM dimensions {}×{} / maxval {}", w, h, maxval);
    }
    Ok((w, h, maxval, pos + 1))
}

pub fn encode_ppm(img: &ImageSample) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_rgb8());
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageSample> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {}", path.display(), m)),
        other => other,
    })
}

pub fn write_ppm(path: impl AsRef<Path>, img: &ImageSample) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_ppm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_with_comment() {
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|v| (v * 13) as u8).collect();
        let img = ImageSample::from_rgb8(3, 2, &rgb).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);

        let mut commented = b"P6 # made by hand\n3 2\n255\n".to_vec();
        commented.extend(&rgb);
        assert_eq!(decode_ppm(&commented).unwrap(), img);
        assert_eq!(img.pixels.get(&[1, 0, 0]), 13.0);
    }

    #[test]
    fn rejects_truncated_and_foreign() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n2 2\n65535\n").is_err());
    }
}
