//! Binary PGM (P5, maxval 255) rasters.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BinaryMask;

/// Foreground threshold when reading masks.
pub const MASK_THRESHOLD: u8 = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Format(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            pixels: mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |x, y| {
            self.pixels[y * self.width + x] >= MASK_THRESHOLD
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut token = || -> Result<String> {
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
                return Err(Error::Format("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(Error::Format("not a binary PGM (P5)".into()));
        }
        let mut number = |what: &str| -> Result<usize> {
            token()?
                .parse()
                .map_err(|_| Error::Format(format!("bad PGM {what}")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let start = pos + 1;
        let end = start + width * height;
        if bytes.len() < end {
            return Err(Error::Format("truncated PGM raster".into()));
        }
        Self::new(width, height, bytes[start..end].to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([7, 200]);
        let img = GrayImage::decode(&bytes).unwrap();
        assert_eq!(img.pixels, vec![7, 200]);
        assert!(!img.to_mask().get(0, 0));
        assert!(img.to_mask().get(1, 0));
    }

    #[test]
    fn rejects_other_formats() {
        assert!(GrayImage::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::decode(b"P5\n4 4\n255\n\x00").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_lossless(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let img = GrayImage::new(w, h, pixels).unwrap();
            prop_assert_eq!(GrayImage::decode(&img.encode()).unwrap(), img);
        }

        #[test]
        fn mask_roundtrip(bits in prop::collection::vec(any::<bool>(), 48)) {
            let mask = BinaryMask::new(6, 8, bits).unwrap();
            let back = GrayImage::decode(&GrayImage::from_mask(&mask).encode()).unwrap().to_mask();
            prop_assert_eq!(back, mask);
        }
    }
}
