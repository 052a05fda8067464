//! Grayscale frames and frame-file IO.

use std::fmt;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} values but {width}x{height} needs {expected}")]
    PixelCount {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported frame format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("cannot decode {path}: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("cannot write {path}: {detail}")]
    Encode { path: PathBuf, detail: String },
}

/// A single 8-bit grayscale image, row-major.
#[derive(Clone)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    source: Option<PathBuf>,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::ZeroDimension { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(FrameError::PixelCount {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            source: None,
        })
    }

    /// A frame where every pixel equals `value`.
    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, FrameError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source = Some(path.into());
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Writes the frame as binary PGM (P5, maxval 255).
    pub fn save_pgm(&self, path: &Path) -> Result<(), FrameError> {
        let encode_err = |detail: String| FrameError::Encode {
            path: path.to_path_buf(),
            detail,
        };
        let file = std::fs::File::create(path).map_err(|e| encode_err(e.to_string()))?;
        let mut writer = std::io::BufWriter::new(file);
        PnmEncoder::new(&mut writer)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&self.pixels, self.width, self.height, ExtendedColorType::L8)
            .map_err(|e| encode_err(e.to_string()))?;
        writer.flush().map_err(|e| encode_err(e.to_string()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), FrameError> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("frame invariant guarantees buffer size");
        img.save_with_format(path, ImageFormat::Png)
            .map_err(|e| FrameError::Encode {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
    }
}

// Equality is over image content only; the source path is provenance.
impl PartialEq for Frame {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.pixels == other.pixels
    }
}

impl Eq for Frame {}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("source", &self.source)
            .finish_non_exhaustive()
    }
}

/// Rec.601 luma, rounded to nearest.
pub fn rec601_luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

/// Decodes a PNG or PGM file into an 8-bit grayscale frame.
///
/// Color inputs are reduced with [`rec601_luma`]; alpha is ignored.
pub fn load_frame(path: &Path) -> Result<Frame, FrameError> {
    let bytes = std::fs::read(path).map_err(|source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|source| FrameError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => {
            return Err(FrameError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{other:?}"),
            })
        }
        None => {
            return Err(FrameError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: "unrecognized file signature".into(),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| FrameError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (width, height) = (decoded.width(), decoded.height());
    let pixels = match decoded {
        DynamicImage::ImageLuma8(img) => img.into_raw(),
        DynamicImage::ImageLumaA8(img) => img.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(img) => img
            .pixels()
            .map(|p| rec601_luma(p[0], p[1], p[2]))
            .collect(),
        DynamicImage::ImageRgba8(img) => img
            .pixels()
            .map(|p| rec601_luma(p[0], p[1], p[2]))
            .collect(),
        other => {
            return Err(FrameError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("only 8-bit samples are supported, got {:?}", other.color()),
            })
        }
    };
    Ok(Frame::new(width, height, pixels)?.with_source(path))
}
