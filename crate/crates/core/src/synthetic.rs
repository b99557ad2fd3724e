//! Procedural test subject: a textured figure in an A-pose, rendered either
//! from a hand-specified Gaussian set or by rasterizing the posed mesh.
//!
//! The texture is a smooth function of canonical (rest-pose) position, so both
//! renderers agree on what every surface point looks like.

use crate::body::{joint_locations, lbs, mean_nearest_neighbor_distance, sample_surface, BodyState, SurfaceSamples, TemplateBody};
use crate::error::Result;
use crate::gaussian::{repose, GaussianSet};
use crate::image::Image;
use crate::linalg::{quat_identity, Vec3};
use crate::orbit::CameraPose;
use crate::render::render_image;
use crate::scalar::{lit, Real};

/// Shoulder rotation lowering the arms from the template's T-pose.
pub const A_POSE_SHOULDER_DEG: f64 = 45.0;

const LEFT_SHOULDER: usize = 16;
const RIGHT_SHOULDER: usize = 17;

/// Rest state with both arms lowered by [`A_POSE_SHOULDER_DEG`].
pub fn a_pose<T: Real>(template: &TemplateBody<T>) -> BodyState<T> {
    let mut s = BodyState::rest(template);
    let a = A_POSE_SHOULDER_DEG.to_radians();
    if template.joint_count() > RIGHT_SHOULDER {
        s.theta[LEFT_SHOULDER] = [0.0, 0.0, -a].map(lit);
        s.theta[RIGHT_SHOULDER] = [0.0, 0.0, a].map(lit);
    }
    s
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] + t * (b[k] - a[k]))
}

/// Albedo at a canonical surface point of the unit-normalized template.
pub fn texture(p: Vec3<f64>) -> [f64; 3] {
    let [x, y, z] = p;
    let skin = [0.90, 0.72, 0.60];
    let shirt = [0.72 + 0.08 * (4.0 * x).sin(), 0.24 + 0.12 * (std::f64::consts::TAU * y / 0.3).sin(), 0.20 + 0.10 * (3.0 * z + 2.0 * y).cos()];
    let pants = [0.18 + 0.06 * (3.0 * x + 2.0 * z).sin(), 0.26, 0.55 + 0.10 * (5.0 * y).cos()];
    // Legs below the waist, shirt up to the neck, skin above; arms switch
    // from sleeve to skin halfway out.
    let waist = smoothstep(-0.04, 0.04, y);
    let neck = smoothstep(0.56, 0.62, y);
    let reach = smoothstep(0.40, 0.48, x.abs());
    let mut c = mix(pants, shirt, waist);
    c = mix(c, skin, neck.max(reach * smoothstep(0.35, 0.45, y)));
    // A soft badge on the chest and a darker patch on the back tell front
    // from back.
    let badge = (-((x - 0.05).powi(2) + (y - 0.35).powi(2)) / (2.0 * 0.06f64.powi(2))).exp() * smoothstep(0.0, 0.05, z);
    c = mix(c, [0.95, 0.85, 0.20], badge);
    let back = (-(x.powi(2) + (y - 0.2).powi(2)) / (2.0 * 0.12f64.powi(2))).exp() * smoothstep(0.0, 0.05, -z);
    c = mix(c, [0.15, 0.35, 0.20], 0.8 * back);
    c.map(|v| v.clamp(0.03, 0.97))
}

/// A hand-specified canonical Gaussian set: `count` surface samples, colored
/// by [`texture`], opaque, unrotated, with isotropic `scale` (default: the
/// mean nearest-neighbor spacing of the samples).
pub fn gaussian_figure<T: Real>(
    template: &TemplateBody<T>,
    count: usize,
    uv_resolution: usize,
    seed: u64,
    scale: Option<T>,
) -> Result<(SurfaceSamples<T>, GaussianSet<T>)> {
    let samples = sample_surface(template, count, (uv_resolution, uv_resolution), seed)?;
    let beta = vec![T::zero(); template.shape_dim()];
    let centers = samples.shaped_positions(template, &beta)?;
    let scale = match scale {
        Some(s) => s,
        None => mean_nearest_neighbor_distance(&centers)?,
    };
    let mut g = GaussianSet::default();
    for c in centers {
        let color = texture(c.map(|v| v.as_f64())).map(lit::<T>);
        g.push(c, color, T::one(), [scale; 3], quat_identity());
    }
    Ok((samples, g))
}

/// Renders the Gaussian figure posed by `state`.
pub fn render_gaussian_figure<T: Real>(
    template: &TemplateBody<T>,
    samples: &SurfaceSamples<T>,
    canonical: &GaussianSet<T>,
    state: &BodyState<T>,
    camera: &CameraPose<T>,
    background: Vec3<T>,
) -> Result<Image<T>> {
    let posed = repose(canonical, samples, state, template)?;
    Ok(render_image(&posed, camera, background))
}

/// Z-buffered rasterization of the posed template mesh with the procedural
/// texture, `supersample²` samples per pixel box-filtered down.
///
/// Attributes are interpolated perspective-correctly; sample `(i, j)` of
/// pixel `(x, y)` sits at `(x + (i + 0.5)/s, y + (j + 0.5)/s)`.
pub fn render_mesh<T: Real>(
    template: &TemplateBody<T>,
    state: &BodyState<T>,
    camera: &CameraPose<T>,
    background: Vec3<T>,
    supersample: usize,
) -> Result<Image<T>> {
    let s = supersample.max(1);
    let canonical = template.shaped_vertices(&state.beta)?;
    let joints = joint_locations(template, &state.beta)?;
    let posed = lbs::skin_lbs(&canonical, &template.skin_weights, &joints, &template.parents, &state.refined_theta(), state.refined_translation())?;
    let cam: CameraPose<f64> = CameraPose {
        azimuth: camera.azimuth.as_f64(),
        elevation: camera.elevation.as_f64(),
        radius: camera.radius.as_f64(),
        fov: camera.fov.as_f64(),
        width: camera.width,
        height: camera.height,
        extrinsic: camera.extrinsic.map(|r| r.map(|v| v.as_f64())),
        intrinsic: camera.intrinsic.map(|r| r.map(|v| v.as_f64())),
    };
    // Screen position in subsample units, depth.
    let projected: Vec<Option<([f64; 2], f64)>> =
        posed.iter().map(|p| cam.project(p.map(|v| v.as_f64())).map(|(px, z)| ([px[0] * s as f64, px[1] * s as f64], z))).collect();
    let (w, h) = (cam.width * s, cam.height * s);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut attr = vec![[0.0f64; 3]; w * h];
    for f in &template.faces {
        let (Some(a), Some(b), Some(c)) = (projected[f[0]], projected[f[1]], projected[f[2]]) else {
            continue;
        };
        let (pa, pb, pc) = (a.0, b.0, c.0);
        let area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = pa[0].min(pb[0]).min(pc[0]).floor().max(0.0) as usize;
        let y0 = pa[1].min(pb[1]).min(pc[1]).floor().max(0.0) as usize;
        let x1 = (pa[0].max(pb[0]).max(pc[0]).ceil().max(0.0) as usize).min(w);
        let y1 = (pa[1].max(pb[1]).max(pc[1]).ceil().max(0.0) as usize).min(h);
        let q = [canonical[f[0]], canonical[f[1]], canonical[f[2]]].map(|v| v.map(|c| c.as_f64()));
        let inv_z = [1.0 / a.1, 1.0 / b.1, 1.0 / c.1];
        for py in y0..y1 {
            for px in x0..x1 {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let l0 = ((pb[0] - p[0]) * (pc[1] - p[1]) - (pb[1] - p[1]) * (pc[0] - p[0])) / area;
                let l1 = ((pc[0] - p[0]) * (pa[1] - p[1]) - (pc[1] - p[1]) * (pa[0] - p[0])) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let wz = [l0 * inv_z[0], l1 * inv_z[1], l2 * inv_z[2]];
                let sum = wz[0] + wz[1] + wz[2];
                let z = 1.0 / sum;
                let i = py * w + px;
                if z < depth[i] {
                    depth[i] = z;
                    attr[i] = [0, 1, 2].map(|k| (wz[0] * q[0][k] + wz[1] * q[1][k] + wz[2] * q[2][k]) / sum);
                }
            }
        }
    }
    let bg = background.map(|v| v.as_f64());
    let norm = 1.0 / (s * s) as f64;
    let mut out = Image::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut acc = [0.0; 3];
            for j in 0..s {
                for i in 0..s {
                    let k = (y * s + j) * w + x * s + i;
                    let c = if depth[k].is_finite() { texture(attr[k]) } else { bg };
                    for ch in 0..3 {
                        acc[ch] += c[ch];
                    }
                }
            }
            out.set_pixel(x, y, acc.map(|v| lit::<T>(v * norm)));
        }
    }
    Ok(out)
}
