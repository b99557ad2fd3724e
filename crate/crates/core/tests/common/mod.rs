//! Independent reference implementations used as test oracles. They share no
//! code with the library beyond the plain data types, and favor obviousness
//! over speed.

#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use orbit_splat::gaussian::GaussianSet;
use orbit_splat::image::Image;
use orbit_splat::loss::FeatureExtractor;
use orbit_splat::orbit::CameraPose;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Compositing constants of the splatting model.
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const LOW_PASS: f64 = 0.3;
pub const NEAR: f64 = 0.01;

struct RefSplat {
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    depth: f64,
    color: [f64; 3],
    opacity: f64,
}

fn camera_parts(pose: &CameraPose<f64>) -> (Matrix3<f64>, Vector3<f64>, f64, f64, f64) {
    let e = &pose.extrinsic;
    let r = Matrix3::new(e[0][0], e[0][1], e[0][2], e[1][0], e[1][1], e[1][2], e[2][0], e[2][1], e[2][2]);
    let t = Vector3::new(e[0][3], e[1][3], e[2][3]);
    let k = &pose.intrinsic;
    (r, t, k[0][0], k[0][2], k[1][2])
}

/// Every Gaussian against every pixel, sorted by depth per pixel.
pub fn brute_force_render(g: &GaussianSet<f64>, pose: &CameraPose<f64>, background: [f64; 3]) -> Image<f64> {
    let (r, t, f, cx, cy) = camera_parts(pose);
    let mut splats: Vec<(usize, RefSplat)> = Vec::new();
    for i in 0..g.len() {
        let c = g.centers[i];
        let pc = r * Vector3::new(c[0], c[1], c[2]) + t;
        if pc.z <= NEAR || g.opacities[i] < ALPHA_MIN {
            continue;
        }
        let q = g.rotations[i];
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&Vector3::new(g.scales[i][0], g.scales[i][1], g.scales[i][2]));
        let cov3 = rot * s * s * rot.transpose();
        let j = nalgebra::Matrix2x3::new(f / pc.z, 0.0, -f * pc.x / (pc.z * pc.z), 0.0, f / pc.z, -f * pc.y / (pc.z * pc.z));
        let m = j * r;
        let cov2 = m * cov3 * m.transpose() + Matrix2::identity() * LOW_PASS;
        let Some(inv) = cov2.try_inverse() else { continue };
        if cov2.determinant() <= 0.0 {
            continue;
        }
        splats.push((
            i,
            RefSplat { mean: Vector2::new(f * pc.x / pc.z + cx, f * pc.y / pc.z + cy), inv_cov: inv, depth: pc.z, color: g.colors[i], opacity: g.opacities[i] },
        ));
    }
    splats.sort_by(|a, b| a.1.depth.partial_cmp(&b.1.depth).unwrap().then(a.0.cmp(&b.0)));
    Image::from_fn(pose.width, pose.height, |x, y| {
        let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
        let mut out = [0.0; 3];
        let mut trans = 1.0;
        for (_, s) in &splats {
            let d = p - s.mean;
            let raw = s.opacity * (-0.5 * (d.transpose() * s.inv_cov * d)[0]).exp();
            if raw < ALPHA_MIN {
                continue;
            }
            let a = raw.min(ALPHA_MAX);
            for k in 0..3 {
                out[k] += s.color[k] * a * trans;
            }
            trans *= 1.0 - a;
        }
        [0, 1, 2].map(|k| out[k] + background[k] * trans)
    })
}

/// Random Gaussians around the origin, inside the view of `pose`.
pub fn random_scene(rng: &mut ChaCha8Rng, count: usize) -> GaussianSet<f64> {
    let mut g = GaussianSet::default();
    for _ in 0..count {
        let q = UnitQuaternion::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5), rng.gen_range(-3.0..3.0));
        let q = q.quaternion();
        g.push(
            [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)],
            [rng.gen(), rng.gen(), rng.gen()],
            rng.gen_range(0.1..0.95),
            [rng.gen_range(0.02..0.15), rng.gen_range(0.02..0.15), rng.gen_range(0.02..0.15)],
            [q.w, q.i, q.j, q.k],
        );
    }
    g
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image<f64> {
    Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

pub fn naive_l1(x: &Image<f64>, y: &Image<f64>) -> f64 {
    let mut s = 0.0;
    for py in 0..x.height {
        for px in 0..x.width {
            for c in 0..3 {
                s += (x.pixel(px, py)[c] - y.pixel(px, py)[c]).abs();
            }
        }
    }
    s / (3 * x.width * x.height) as f64
}

pub fn naive_mse(x: &Image<f64>, y: &Image<f64>) -> f64 {
    let mut s = 0.0;
    for py in 0..x.height {
        for px in 0..x.width {
            for c in 0..3 {
                s += (x.pixel(px, py)[c] - y.pixel(px, py)[c]).powi(2);
            }
        }
    }
    s / (3 * x.width * x.height) as f64
}

pub fn naive_psnr(x: &Image<f64>, y: &Image<f64>) -> f64 {
    10.0 * (1.0 / naive_mse(x, y)).log10()
}

/// Mean SSIM over every fully contained 11×11 window and channel, with the
/// 2-D Gaussian window built directly.
pub fn naive_ssim(x: &Image<f64>, y: &Image<f64>) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut w = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
            *v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        for oy in 0..=y.height - 11 {
            for ox in 0..=x.width - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = w[i][j] / total;
                        let a = x.pixel(ox + j, oy + i)[c];
                        let b = y.pixel(ox + j, oy + i)[c];
                        mx += k * a;
                        my += k * b;
                        xx += k * a * a;
                        yy += k * b * b;
                        xy += k * a * b;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Perceptual distance from the extractor's raw activations, normalizing
/// each feature vector along channels.
pub fn naive_lpips(x: &Image<f64>, y: &Image<f64>, ext: &dyn FeatureExtractor<f64>) -> f64 {
    let (fx, fy) = (ext.extract(x).unwrap(), ext.extract(y).unwrap());
    let mut total = 0.0;
    for l in 0..ext.layer_count() {
        let (a, b) = (&fx[l], &fy[l]);
        let w = ext.channel_weights(l);
        let mut s = 0.0;
        for h in 0..a.height {
            for v in 0..a.width {
                let na: f64 = (0..a.channels).map(|c| a.at(c, h, v).powi(2)).sum::<f64>().sqrt() + 1e-10;
                let nb: f64 = (0..b.channels).map(|c| b.at(c, h, v).powi(2)).sum::<f64>().sqrt() + 1e-10;
                for c in 0..a.channels {
                    s += (w[c] * (a.at(c, h, v) / na - b.at(c, h, v) / nb)).powi(2);
                }
            }
        }
        total += s / (a.height * a.width) as f64;
    }
    total
}

pub fn naive_mean_squared_norm(v: &[[f64; 3]]) -> f64 {
    v.iter().map(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sum::<f64>() / v.len() as f64
}

pub fn naive_mean_square(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

/// Forward kinematics from scratch: the world transform of each joint's
/// rest frame, `G_j = G_parent · [R(θ_j) | j_j − j_parent]`, and the skinning
/// transform `G_j · translate(−j_j)` applied to a point.
pub fn reference_skinning_transforms(joints: &[[f64; 3]], parents: &[Option<usize>], theta: &[[f64; 3]]) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let mut world: Vec<Option<(Matrix3<f64>, Vector3<f64>)>> = vec![None; joints.len()];
    // Parents may come after children in storage order.
    while world.iter().any(Option::is_none) {
        for j in 0..joints.len() {
            if world[j].is_some() {
                continue;
            }
            let r = nalgebra::Rotation3::from_scaled_axis(Vector3::new(theta[j][0], theta[j][1], theta[j][2])).into_inner();
            let jj = Vector3::new(joints[j][0], joints[j][1], joints[j][2]);
            world[j] = match parents[j] {
                None => Some((r, jj)),
                Some(p) => world[p].map(|(pr, pt)| {
                    let jp = Vector3::new(joints[p][0], joints[p][1], joints[p][2]);
                    (pr * r, pr * (jj - jp) + pt)
                }),
            };
        }
    }
    world
        .into_iter()
        .zip(joints)
        .map(|(w, j)| {
            let (r, t) = w.unwrap();
            (r, t - r * Vector3::new(j[0], j[1], j[2]))
        })
        .collect()
}
