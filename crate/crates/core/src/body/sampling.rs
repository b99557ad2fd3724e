use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body::{uv_pixel, SparseWeights, TemplateBody};
use crate::error::{invalid, Error, Result};
use crate::linalg::{add, cross, dot, norm, scale, sub, Vec3};
use crate::scalar::{lit, Real};

/// Attempts to re-draw a colliding sample on its own triangle before moving
/// it to a freshly drawn triangle.
const JITTER_ATTEMPTS: usize = 16;
const MAX_ATTEMPTS_PER_SAMPLE: usize = 100_000;

/// Points on the canonical template surface, one per UV pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSamples<T> {
    pub positions: Vec<Vec3<T>>,
    pub uv: Vec<[T; 2]>,
    pub skin_weights: SparseWeights<T>,
    pub face_ids: Vec<usize>,
    pub barycentric: Vec<[T; 3]>,
    /// `(rows, cols)` of the UV map the samples were made collision-free for.
    pub uv_resolution: (usize, usize),
}

impl<T: Real> SurfaceSamples<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Sample positions on the shape-blended surface `T(β)`.
    pub fn shaped_positions(&self, template: &TemplateBody<T>, beta: &[T]) -> Result<Vec<Vec3<T>>> {
        let verts = template.shaped_vertices(beta)?;
        Ok(self.face_ids.iter().zip(&self.barycentric).map(|(&f, b)| barycentric_point(&verts, template.faces[f], *b)).collect())
    }
}

fn barycentric_point<T: Real>(verts: &[Vec3<T>], f: [usize; 3], b: [T; 3]) -> Vec3<T> {
    add(add(scale(verts[f[0]], b[0]), scale(verts[f[1]], b[1])), scale(verts[f[2]], b[2]))
}

fn random_barycentric(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let s = rng.gen::<f64>().sqrt();
    let r2 = rng.gen::<f64>();
    [1.0 - s, s * (1.0 - r2), s * r2]
}

/// Draws `count` area-weighted, stratified surface samples such that every
/// sample occupies its own pixel of a `uv_resolution` UV map.
///
/// Strata partition the cumulative-area axis into `count` equal slices; a
/// sample whose UV pixel is already taken is re-jittered on its triangle and
/// then, if still colliding, moved to a freshly drawn triangle.
pub fn sample_surface<T: Real>(template: &TemplateBody<T>, count: usize, uv_resolution: (usize, usize), seed: u64) -> Result<SurfaceSamples<T>> {
    let (rows, cols) = uv_resolution;
    if count == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    if count > rows * cols {
        return Err(invalid(format!("{count} samples cannot fit one-per-pixel in a {rows}×{cols} UV map")));
    }
    let mut cdf = Vec::with_capacity(template.faces.len());
    let mut total = 0.0f64;
    for f in &template.faces {
        let v: Vec<[f64; 3]> = f.iter().map(|&i| template.vertices[i].map(|c| c.as_f64())).collect();
        total += 0.5 * norm(cross(sub(v[1], v[0]), sub(v[2], v[0])));
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(invalid("template surface has zero area"));
    }
    let pick = |x: f64| cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = vec![false; rows * cols];
    let mut samples = SurfaceSamples {
        positions: Vec::with_capacity(count),
        uv: Vec::with_capacity(count),
        skin_weights: SparseWeights::default(),
        face_ids: Vec::with_capacity(count),
        barycentric: Vec::with_capacity(count),
        uv_resolution,
    };
    for k in 0..count {
        let mut face = pick((k as f64 + rng.gen::<f64>()) / count as f64 * total);
        let mut attempts = 0;
        let (bary, uv, pixel) = loop {
            let b = random_barycentric(&mut rng).map(lit::<T>);
            let f = template.faces[face];
            let uv = [0, 1].map(|c| b[0] * template.uv_coords[f[0]][c] + b[1] * template.uv_coords[f[1]][c] + b[2] * template.uv_coords[f[2]][c]);
            let (r, c) = uv_pixel(uv, uv_resolution);
            if !taken[r * cols + c] {
                break (b, uv, r * cols + c);
            }
            attempts += 1;
            if attempts % JITTER_ATTEMPTS == 0 {
                face = pick(rng.gen::<f64>() * total);
            }
            if attempts >= MAX_ATTEMPTS_PER_SAMPLE {
                return Err(Error::Numerical(format!("could not place sample {k} on a free UV pixel; the UV layout is saturated")));
            }
        };
        taken[pixel] = true;
        let f = template.faces[face];
        samples.positions.push(barycentric_point(&template.vertices, f, bary));
        samples.uv.push(uv);
        samples.skin_weights.push_row(template.skin_weights.blend_rows(f, bary));
        samples.face_ids.push(face);
        samples.barycentric.push(bary);
    }
    Ok(samples)
}

/// Canonical Gaussian centers `D = T(β) + dT`.
pub fn apply_offsets<T: Real>(surface: &[Vec3<T>], offsets: &[Vec3<T>]) -> Result<Vec<Vec3<T>>> {
    if surface.len() != offsets.len() {
        return Err(invalid(format!("{} surface points but {} offsets", surface.len(), offsets.len())));
    }
    Ok(surface.iter().zip(offsets).map(|(a, b)| add(*a, *b)).collect())
}

/// Mean distance from each point to its nearest other point, using a uniform
/// hash grid.
pub fn mean_nearest_neighbor_distance<T: Real>(points: &[Vec3<T>]) -> Result<T> {
    if points.len() < 2 {
        return Err(invalid("nearest-neighbour distance needs at least two points"));
    }
    let pts: Vec<[f64; 3]> = points.iter().map(|p| p.map(|c| c.as_f64())).collect();
    let mut lo = pts[0];
    let mut hi = pts[0];
    for p in &pts {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = sub(hi, lo);
    let volume = extent.iter().map(|e| e.max(1e-9)).product::<f64>();
    let cell = (volume / pts.len() as f64).cbrt().max(1e-9);
    let key = |p: &[f64; 3]| -> [i64; 3] { [0, 1, 2].map(|k| ((p[k] - lo[k]) / cell).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut sum = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let c = key(p);
        let mut best = f64::INFINITY;
        let mut ring: i64 = 0;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(list) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in list {
                                if j != i {
                                    let d = sub(pts[j], *p);
                                    best = best.min(dot(d, d));
                                }
                            }
                        }
                    }
                }
            }
            if best.sqrt() <= ring as f64 * cell {
                break;
            }
            ring += 1;
        }
        sum += best.sqrt();
    }
    Ok(lit(sum / pts.len() as f64))
}
