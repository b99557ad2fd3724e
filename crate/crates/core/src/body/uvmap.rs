use crate::body::SurfaceSamples;
use crate::error::{invalid, Error, Result};
use crate::linalg::{zero3, Vec3};
use crate::scalar::{lit, Real};

/// UV image whose valid pixels store one surface point each.
#[derive(Clone, Debug, PartialEq)]
pub struct UVPositionMap<T> {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, zero at invalid pixels.
    pub positions: Vec<Vec3<T>>,
    pub valid: Vec<bool>,
    /// Linear pixel index of each sample, in sample order.
    pub sample_pixels: Vec<usize>,
}

impl<T: Real> UVPositionMap<T> {
    pub fn valid_count(&self) -> usize {
        self.sample_pixels.len()
    }

    /// Positions of the valid pixels in sample order.
    pub fn sample_positions(&self) -> Vec<Vec3<T>> {
        self.sample_pixels.iter().map(|&p| self.positions[p]).collect()
    }
}

/// Pixel `(row, col)` containing `uv = (u, v)`; `u` indexes columns and `v`
/// rows. Coordinates on the far edge fall into the last pixel.
#[inline]
pub fn uv_pixel<T: Real>(uv: [T; 2], (rows, cols): (usize, usize)) -> (usize, usize) {
    let q = |x: T, n: usize| -> usize {
        let v = (x * lit(n as f64)).floor();
        if v < T::zero() {
            0
        } else {
            v.to_usize().unwrap_or(n - 1).min(n - 1)
        }
    };
    (q(uv[1], rows), q(uv[0], cols))
}

/// Scatters `positions` (one per sample) into a `resolution` UV image at the
/// samples' UV pixels.
pub fn uv_position_map<T: Real>(samples: &SurfaceSamples<T>, positions: &[Vec3<T>], resolution: (usize, usize)) -> Result<UVPositionMap<T>> {
    if positions.len() != samples.len() {
        return Err(invalid(format!("{} positions for {} samples", positions.len(), samples.len())));
    }
    let (rows, cols) = resolution;
    if rows == 0 || cols == 0 {
        return Err(invalid("UV resolution must be positive"));
    }
    let mut owner: Vec<Option<usize>> = vec![None; rows * cols];
    let mut map =
        UVPositionMap { rows, cols, positions: vec![zero3(); rows * cols], valid: vec![false; rows * cols], sample_pixels: Vec::with_capacity(samples.len()) };
    for (i, (uv, p)) in samples.uv.iter().zip(positions).enumerate() {
        let (r, c) = uv_pixel(*uv, resolution);
        let idx = r * cols + c;
        if let Some(first) = owner[idx] {
            return Err(Error::UvCollision { first, second: i, row: r, col: c });
        }
        owner[idx] = Some(i);
        map.positions[idx] = *p;
        map.valid[idx] = true;
        map.sample_pixels.push(idx);
    }
    Ok(map)
}
