//! Tile-based Gaussian splatting with an analytic reverse pass.
//!
//! Gaussians are projected with the local affine (EWA) approximation,
//! binned into 16×16 pixel tiles, sorted front to back within each tile and
//! alpha-composited. There is no early termination: every splat whose alpha
//! reaches 1/255 at a pixel contributes, so the tiled result equals an
//! all-splats-per-pixel compositor.

mod project;

pub use project::{compute_cov3d, project_gaussian, project_gaussian_backward, ProjectionGradients, Splat2D};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::image::{Image, Plane};
use crate::linalg::{Quat, Vec3};
use crate::orbit::CameraPose;
use crate::scalar::{lit, Real};

pub const TILE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Isotropic variance (px²) added to every projected covariance.
pub const LOW_PASS: f64 = 0.3;
/// Splats closer than this to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Forward-pass record needed by [`backward`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    gaussians: GaussianSet<T>,
    pose: CameraPose<T>,
    background: Vec3<T>,
    splats: Vec<Option<Splat2D<T>>>,
    /// Gaussian indices, grouped by tile and sorted by depth within a tile.
    order: Vec<u32>,
    tile_ranges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput<T> {
    pub image: Image<T>,
    /// Accumulated opacity `1 − Π(1 − αᵢ)`.
    pub alpha: Plane<T>,
    tape: Option<Tape<T>>,
}

impl<T: Real> RenderOutput<T> {
    /// Drops the forward record; [`backward`] then fails with a state error.
    pub fn without_tape(mut self) -> Self {
        self.tape = None;
        self
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }
}

/// Per-Gaussian gradients of a scalar loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGradients<T> {
    pub centers: Vec<Vec3<T>>,
    pub colors: Vec<Vec3<T>>,
    pub opacities: Vec<T>,
    pub scales: Vec<Vec3<T>>,
    pub rotations: Vec<Quat<T>>,
}

impl<T: Real> GaussianGradients<T> {
    pub fn zeros(n: usize) -> Self {
        let z = T::zero();
        GaussianGradients { centers: vec![[z; 3]; n], colors: vec![[z; 3]; n], opacities: vec![z; n], scales: vec![[z; 3]; n], rotations: vec![[z; 4]; n] }
    }
}

struct TileGrid {
    cols: usize,
    rows: usize,
}

impl TileGrid {
    fn new(width: usize, height: usize) -> Self {
        TileGrid { cols: width.div_ceil(TILE), rows: height.div_ceil(TILE) }
    }

    fn count(&self) -> usize {
        self.cols * self.rows
    }
}

/// Inclusive pixel range along one axis that a splat of radius `r` centered at
/// `m` can touch, padded by one pixel against rounding.
fn pixel_span<T: Real>(m: T, r: T, n: usize) -> Option<(usize, usize)> {
    let half = lit::<T>(0.5);
    let lo = (m - r - half).ceil().to_f64()? - 1.0;
    let hi = (m + r - half).floor().to_f64()? + 1.0;
    if hi < 0.0 || lo > (n - 1) as f64 {
        return None;
    }
    Some((lo.max(0.0) as usize, (hi as usize).min(n - 1)))
}

fn bin_splats<T: Real>(splats: &[Option<Splat2D<T>>], width: usize, height: usize) -> (Vec<u32>, Vec<(usize, usize)>) {
    let grid = TileGrid::new(width, height);
    let mut keys: Vec<(u32, T, u32)> = Vec::new();
    for (i, s) in splats.iter().enumerate() {
        let Some(s) = s else { continue };
        let (Some((x0, x1)), Some((y0, y1))) = (pixel_span(s.mean[0], s.radius, width), pixel_span(s.mean[1], s.radius, height)) else {
            continue;
        };
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                keys.push(((ty * grid.cols + tx) as u32, s.depth, i as u32));
            }
        }
    }
    keys.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).expect("finite depth")).then(a.2.cmp(&b.2)));
    let mut ranges = vec![(0, 0); grid.count()];
    let mut start = 0;
    while start < keys.len() {
        let tile = keys[start].0;
        let mut end = start;
        while end < keys.len() && keys[end].0 == tile {
            end += 1;
        }
        ranges[tile as usize] = (start, end);
        start = end;
    }
    (keys.into_iter().map(|k| k.2).collect(), ranges)
}

/// Opacity of splat `s` at the pixel whose center is `(px, py)`, and the
/// Gaussian falloff `exp(power)`. `None` when below the skip threshold.
#[inline]
fn splat_alpha<T: Real>(s: &Splat2D<T>, px: T, py: T) -> Option<(T, T, bool)> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let [a, b, c] = s.conic;
    let power = -lit::<T>(0.5) * (a * dx * dx + c * dy * dy) - b * dx * dy;
    let g = power.exp();
    let raw = s.opacity * g;
    if raw < lit(ALPHA_MIN) {
        return None;
    }
    let max = lit::<T>(ALPHA_MAX);
    Some(if raw > max { (max, g, true) } else { (raw, g, false) })
}

fn tile_pixels(grid: &TileGrid, tile: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let x0 = (tile % grid.cols) * TILE;
    let y0 = (tile / grid.cols) * TILE;
    (y0..(y0 + TILE).min(height)).flat_map(move |y| (x0..(x0 + TILE).min(width)).map(move |x| (x, y)))
}

type TilePixel<T> = (usize, usize, Vec3<T>, T);

/// Renders `gaussians` from `pose` over a constant `background` and keeps
/// the record needed for [`backward`].
pub fn rasterize<T: Real>(gaussians: &GaussianSet<T>, pose: &CameraPose<T>, background: Vec3<T>) -> RenderOutput<T> {
    let (width, height) = (pose.width, pose.height);
    let splats: Vec<Option<Splat2D<T>>> = (0..gaussians.len())
        .into_par_iter()
        .map(|i| {
            let cov = compute_cov3d(gaussians.scales[i], gaussians.rotations[i]);
            project_gaussian(pose, gaussians.centers[i], &cov, gaussians.colors[i], gaussians.opacities[i])
        })
        .collect();
    let (order, tile_ranges) = bin_splats(&splats, width, height);
    let grid = TileGrid::new(width, height);
    let half = lit::<T>(0.5);
    // Per tile: (x, y, color, final transmittance) for each pixel.
    let tiles: Vec<Vec<TilePixel<T>>> = (0..grid.count())
        .into_par_iter()
        .map(|tile| {
            let (s0, s1) = tile_ranges[tile];
            tile_pixels(&grid, tile, width, height)
                .map(|(x, y)| {
                    let (px, py) = (lit::<T>(x as f64) + half, lit::<T>(y as f64) + half);
                    let mut color = [T::zero(); 3];
                    let mut trans = T::one();
                    for &gi in &order[s0..s1] {
                        let s = splats[gi as usize].as_ref().expect("binned splat");
                        if let Some((alpha, _, _)) = splat_alpha(s, px, py) {
                            let w = alpha * trans;
                            for k in 0..3 {
                                color[k] += s.color[k] * w;
                            }
                            trans *= T::one() - alpha;
                        }
                    }
                    for k in 0..3 {
                        color[k] += background[k] * trans;
                    }
                    (x, y, color, T::one() - trans)
                })
                .collect()
        })
        .collect();
    let mut image = Image::new(width, height);
    let mut alpha = Plane::new(width, height);
    for (x, y, c, a) in tiles.into_iter().flatten() {
        image.set_pixel(x, y, c);
        *alpha.at_mut(x, y) = a;
    }
    RenderOutput { image, alpha, tape: Some(Tape { gaussians: gaussians.clone(), pose: pose.clone(), background, splats, order, tile_ranges }) }
}

/// Image only.
pub fn render_image<T: Real>(gaussians: &GaussianSet<T>, pose: &CameraPose<T>, background: Vec3<T>) -> Image<T> {
    rasterize(gaussians, pose, background).image
}

/// Screen-space gradient of one splat: mean (2), conic (3), color (3),
/// opacity (1).
type SplatGrad<T> = [T; 9];

/// Gradients of a loss with respect to every Gaussian parameter, given the
/// loss gradient with respect to the rendered image. The depth order of the
/// forward pass is held fixed.
pub fn backward<T: Real>(output: &RenderOutput<T>, d_image: &Image<T>) -> Result<GaussianGradients<T>> {
    let tape = output.tape.as_ref().ok_or_else(|| Error::State("backward needs a forward pass recorded with rasterize".into()))?;
    if !d_image.same_shape(&output.image) {
        return Err(crate::error::invalid("loss gradient does not match the rendered image size"));
    }
    let (width, height) = (output.image.width, output.image.height);
    let grid = TileGrid::new(width, height);
    let half = lit::<T>(0.5);
    let one = T::one();
    let partials: Vec<Vec<SplatGrad<T>>> = (0..grid.count())
        .into_par_iter()
        .map(|tile| {
            let (s0, s1) = tape.tile_ranges[tile];
            let list = &tape.order[s0..s1];
            let mut grads = vec![[T::zero(); 9]; list.len()];
            let mut hits: Vec<(usize, T, T, T, bool)> = Vec::new();
            for (x, y) in tile_pixels(&grid, tile, width, height) {
                let g_pix = d_image.pixel(x, y);
                if g_pix.iter().all(|g| *g == T::zero()) {
                    continue;
                }
                let (px, py) = (lit::<T>(x as f64) + half, lit::<T>(y as f64) + half);
                hits.clear();
                let mut trans = one;
                for (k, &gi) in list.iter().enumerate() {
                    let s = tape.splats[gi as usize].as_ref().expect("binned splat");
                    if let Some((alpha, g, clamped)) = splat_alpha(s, px, py) {
                        hits.push((k, alpha, g, trans, clamped));
                        trans *= one - alpha;
                    }
                }
                // Back to front; `behind` is the color composited behind the
                // current splat, starting from the background.
                let mut behind = tape.background;
                for &(k, alpha, g, t_i, clamped) in hits.iter().rev() {
                    let s = tape.splats[list[k] as usize].as_ref().expect("binned splat");
                    let grad = &mut grads[k];
                    let mut d_alpha = T::zero();
                    for ch in 0..3 {
                        grad[5 + ch] += g_pix[ch] * alpha * t_i;
                        d_alpha += g_pix[ch] * t_i * (s.color[ch] - behind[ch]);
                        behind[ch] = s.color[ch] * alpha + (one - alpha) * behind[ch];
                    }
                    if clamped {
                        continue;
                    }
                    grad[8] += d_alpha * g;
                    let d_power = d_alpha * s.opacity * g;
                    let dx = px - s.mean[0];
                    let dy = py - s.mean[1];
                    let [a, b, c] = s.conic;
                    grad[0] += d_power * (a * dx + b * dy);
                    grad[1] += d_power * (b * dx + c * dy);
                    grad[2] += -half * d_power * dx * dx;
                    grad[3] += -d_power * dx * dy;
                    grad[4] += -half * d_power * dy * dy;
                }
            }
            grads
        })
        .collect();

    let n = tape.gaussians.len();
    let mut screen = vec![[T::zero(); 9]; n];
    for (tile, part) in partials.iter().enumerate() {
        let (s0, _) = tape.tile_ranges[tile];
        for (k, g) in part.iter().enumerate() {
            let acc = &mut screen[tape.order[s0 + k] as usize];
            for (a, b) in acc.iter_mut().zip(g) {
                *a += *b;
            }
        }
    }

    let per: Vec<ProjectionGradients<T>> = (0..n)
        .into_par_iter()
        .map(|i| match &tape.splats[i] {
            Some(s) => {
                let g = &screen[i];
                project_gaussian_backward(
                    &tape.pose,
                    tape.gaussians.centers[i],
                    tape.gaussians.scales[i],
                    tape.gaussians.rotations[i],
                    s,
                    [g[0], g[1]],
                    [g[2], g[3], g[4]],
                )
            }
            None => ProjectionGradients::default(),
        })
        .collect();
    let mut out = GaussianGradients::zeros(n);
    for (i, p) in per.into_iter().enumerate() {
        out.centers[i] = p.center;
        out.scales[i] = p.scale;
        out.rotations[i] = p.rotation;
        out.colors[i] = [screen[i][5], screen[i][6], screen[i][7]];
        out.opacities[i] = screen[i][8];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::quat_identity;

    fn camera(size: usize) -> CameraPose<f64> {
        CameraPose::look_at_origin(0.0, 0.0, 2.7, 33.8, size, size).unwrap()
    }

    #[test]
    fn empty_set_renders_background() {
        let out = rasterize(&GaussianSet::<f64>::default(), &camera(20), [0.2, 0.4, 0.6]);
        for y in 0..20 {
            for x in 0..20 {
                assert_eq!(out.image.pixel(x, y), [0.2, 0.4, 0.6]);
                assert_eq!(out.alpha.at(x, y), 0.0);
            }
        }
    }

    #[test]
    fn opaque_centered_gaussian_hits_the_clamp() {
        let mut g = GaussianSet::default();
        g.push([0.0; 3], [0.2, 0.5, 0.9], 1.0, [0.5; 3], quat_identity());
        let out = rasterize(&g, &camera(32), [1.0; 3]);
        let c = out.image.pixel(16, 16);
        for k in 0..3 {
            assert!((c[k] - (0.99 * g.colors[0][k] + 0.01)).abs() < 1e-12);
        }
    }

    #[test]
    fn black_background_is_bounded_by_brightest_color() {
        let mut g = GaussianSet::default();
        g.push([0.0, 0.0, 0.1], [0.3, 0.1, 0.2], 0.9, [0.1; 3], quat_identity());
        g.push([0.05, 0.0, -0.1], [0.25, 0.4, 0.1], 0.8, [0.15; 3], quat_identity());
        let out = rasterize(&g, &camera(24), [0.0; 3]);
        for v in out.image.data.iter() {
            assert!(*v <= 0.4 + 1e-12);
        }
    }

    #[test]
    fn backward_requires_a_tape() {
        let out = rasterize(&GaussianSet::<f64>::default(), &camera(8), [1.0; 3]).without_tape();
        let err = backward(&out, &Image::new(8, 8)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let mut g = GaussianSet::default();
        g.push([0.0; 3], [0.2, 0.5, 0.9], 0.7, [0.1, 0.2, 0.05], [0.9, 0.1, 0.3, 0.2]);
        let out = rasterize(&g, &camera(16), [1.0; 3]);
        let grads = backward(&out, &Image::new(16, 16)).unwrap();
        assert_eq!(grads, GaussianGradients::zeros(1));
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut g = GaussianSet::default();
        for i in 0..40 {
            let s = i as f64 * 0.1;
            g.push([s.sin() * 0.3, s.cos() * 0.3, 0.1 * s.sin()], [0.5, s.cos().abs(), 0.2], 0.8, [0.05; 3], quat_identity());
        }
        let a = rasterize(&g, &camera(48), [1.0; 3]);
        let b = rasterize(&g, &camera(48), [1.0; 3]);
        assert!(a.image.data.iter().zip(&b.image.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
