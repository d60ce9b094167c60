//! 8-bit RGB image buffer and PNG I/O.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer has {got} bytes, expected {expected} for {width}x{height} RGB")]
    BadLength { width: u32, height: u32, expected: usize, got: usize },
    #[error("{path}: {source}")]
    Codec { path: String, source: image::ImageError },
}

/// Row-major RGB8 image.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer").field("width", &self.width).field("height", &self.height).finish()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; width as usize * height as usize * 3] }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImageError::BadLength { width, height, expected, got: data.len() });
        }
        Ok(Self { width, height, data })
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

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Copies the `w` x `h` region at `(x0, y0)`; the region must lie inside.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> ImageBuffer {
        let mut out = ImageBuffer::new(w, h);
        for y in 0..h {
            let src = self.offset(x0, y0 + y);
            let dst = out.offset(0, y);
            out.data[dst..dst + w as usize * 3].copy_from_slice(&self.data[src..src + w as usize * 3]);
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path)
            .map_err(|source| ImageError::Codec { path: path.display().to_string(), source })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self { width: w, height: h, data: img.into_raw() })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| ImageError::Codec { path: path.display().to_string(), source })
    }
}
