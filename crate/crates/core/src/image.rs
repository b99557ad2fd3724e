//! RGB frames and single-channel planes, plus their on-disk formats.
//!
//! PNG output quantizes each channel to `round(255·clamp(v, 0, 1))`. The raw
//! float dump is lossless:
//!
//! ```text
//! magic   b"OSFI"
//! u32     format version (1)
//! u32     width
//! u32     height
//! u32     channels
//! u32     bytes per scalar (4 or 8)
//! ...     width·height·channels little-endian floats, row-major, interleaved
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

const RAW_MAGIC: &[u8; 4] = b"OSFI";
const RAW_VERSION: u32 = 1;

/// H×W×3 frame, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![T::zero(); width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, color: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Image { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, c: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn same_shape(&self, other: &Image<T>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn channel(&self, c: usize) -> Plane<T> {
        Plane { width: self.width, height: self.height, data: self.data.iter().skip(c).step_by(3).copied().collect() }
    }

    pub fn from_channels(channels: &[Plane<T>; 3]) -> Self {
        let (w, h) = (channels[0].width, channels[0].height);
        let mut data = Vec::with_capacity(w * h * 3);
        for i in 0..w * h {
            data.push(channels[0].data[i]);
            data.push(channels[1].data[i]);
            data.push(channels[2].data[i]);
        }
        Image { width: w, height: h, data }
    }

    /// Rec. 601 luma.
    pub fn luma(&self) -> Plane<T> {
        let (r, g, b) = (lit::<T>(0.299), lit::<T>(0.587), lit::<T>(0.114));
        Plane { width: self.width, height: self.height, data: self.data.chunks_exact(3).map(|p| r * p[0] + g * p[1] + b * p[2]).collect() }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| quantize(v.as_f64())).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        Image { width, height, data: bytes.iter().map(|&b| lit::<T>(b as f64 / 255.0)).collect() }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8()).expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| image_error(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
        Ok(Self::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw()))
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        fs::write(path, encode_raw(self.width, self.height, 3, &self.data))?;
        Ok(())
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let (width, height, channels, data) = decode_raw(path, &bytes)?;
        if channels != 3 {
            return Err(corrupt(path, format!("expected 3 channels, found {channels}")));
        }
        Ok(Image { width, height, data })
    }
}

fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

fn corrupt(path: &Path, message: String) -> Error {
    Error::Corrupt { path: path.to_path_buf(), message }
}

fn encode_raw<T: Real>(width: usize, height: usize, channels: usize, data: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + data.len() * T::BYTES);
    out.extend_from_slice(RAW_MAGIC);
    for v in [RAW_VERSION, width as u32, height as u32, channels as u32, T::BYTES as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in data {
        v.write_le(&mut out);
    }
    out
}

fn decode_raw<T: Real>(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<T>)> {
    if bytes.len() < 24 || &bytes[..4] != RAW_MAGIC {
        return Err(corrupt(path, "missing raw image header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != RAW_VERSION {
        return Err(corrupt(path, format!("unsupported raw version {}", word(0))));
    }
    let (w, h, c, b) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    if b != 4 && b != 8 {
        return Err(corrupt(path, format!("unsupported scalar width {b}")));
    }
    let n = w * h * c;
    if bytes.len() != 24 + n * b {
        return Err(corrupt(path, "payload length does not match header".into()));
    }
    let payload = &bytes[24..];
    let data = (0..n)
        .map(|i| {
            let chunk = &payload[i * b..(i + 1) * b];
            if b == 4 {
                T::lit(f32::read_le(chunk) as f64)
            } else {
                T::lit(f64::read_le(chunk))
            }
        })
        .collect();
    Ok((w, h, c, data))
}

/// Single-channel H×W plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Plane<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Plane { width, height, data: vec![T::zero(); width * height] }
    }

    pub fn filled(width: usize, height: usize, v: T) -> Self {
        Plane { width, height, data: vec![v; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    /// Clamped-border bilinear sample at continuous pixel coordinates, where
    /// pixel `(x, y)` sits at integer position `(x, y)`.
    pub fn bilinear(&self, x: T, y: T) -> T {
        let maxx = lit::<T>((self.width - 1) as f64);
        let maxy = lit::<T>((self.height - 1) as f64);
        let x = x.max(T::zero()).min(maxx);
        let y = y.max(T::zero()).min(maxy);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_usize().unwrap();
        let yi = y0.to_usize().unwrap();
        let xj = (xi + 1).min(self.width - 1);
        let yj = (yi + 1).min(self.height - 1);
        let one = T::one();
        (one - fy) * ((one - fx) * self.at(xi, yi) + fx * self.at(xj, yi)) + fy * ((one - fx) * self.at(xi, yj) + fx * self.at(xj, yj))
    }
}
