//! Dense row-major raster storage shared by canvases, crops, masks and depth.

use crate::error::{Error, Result};

/// Interleaved `height × width × channels` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// Color or latent canvas.
pub type Image = Grid<f32>;
/// Single-channel weight/binary mask (values in `[0, 1]`).
pub type Mask = Grid<f32>;
/// Single-channel double-precision depth map.
pub type DepthMap = Grid<f64>;

impl<T: Copy + Default> Grid<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::default())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Dimension {
                context: "raster buffer",
                expected: (width, height, channels),
                actual: (data.len(), 1, 1),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: T) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// All channels of the pixel with flat index `index = y * width + x`.
    #[inline]
    pub fn pixel(&self, index: usize) -> &[T] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [T] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn ensure_dims(&self, context: &'static str, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::Dimension {
                context,
                expected: (width, height, self.channels),
                actual: self.dims(),
            });
        }
        Ok(())
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid<f32> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rec. 709 luma for three-channel images; the first channel otherwise.
    pub fn luma(&self, index: usize) -> f32 {
        let px = self.pixel(index);
        if px.len() >= 3 {
            0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2]
        } else {
            px[0]
        }
    }
}

impl Grid<f64> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Axis-aligned placement of the user image on the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    /// Rect of the given size centered on `(cx, cy)`, clamped at zero.
    pub fn centered(cx: usize, cy: usize, width: usize, height: usize) -> Self {
        Self::new(
            cx.saturating_sub(width / 2),
            cy.saturating_sub(height / 2),
            width,
            height,
        )
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x + self.width <= width && self.y + self.height <= height
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn center_x(&self) -> f64 {
        self.x as f64 + self.width as f64 / 2.0
    }
}
