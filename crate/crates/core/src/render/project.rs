use crate::linalg::{mat_mul, mat_t_vec, quat_to_mat, transpose, Mat3, Quat, Vec3};
use crate::orbit::CameraPose;
use crate::render::{ALPHA_MIN, LOW_PASS, NEAR_PLANE};
use crate::scalar::{lit, Real};

/// A Gaussian projected to the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D<T> {
    /// Continuous pixel coordinates; pixel `(x, y)` has its center at
    /// `(x + 0.5, y + 0.5)`.
    pub mean: [T; 2],
    /// `[a, b, c]` of the symmetric matrix `[[a, b], [b, c]]`.
    pub cov2d: [T; 3],
    /// Inverse of `cov2d`, same packing.
    pub conic: [T; 3],
    pub depth: T,
    pub color: Vec3<T>,
    pub opacity: T,
    /// Radius beyond which the splat's alpha is below the skip threshold.
    pub radius: T,
}

fn unit<T: Real>(q: Quat<T>) -> (Quat<T>, T) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(scale)`; `rotation` is normalized first.
pub fn compute_cov3d<T: Real>(scale: Vec3<T>, rotation: Quat<T>) -> Mat3<T> {
    let r = quat_to_mat(unit(rotation).0);
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = (0..3).map(|k| r[i][k] * r[j][k] * scale[k] * scale[k]).sum();
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// 2×3 Jacobian of the perspective projection at camera point `t`.
fn projection_jacobian<T: Real>(f: T, t: Vec3<T>) -> [[T; 3]; 2] {
    let iz = T::one() / t[2];
    let iz2 = iz * iz;
    [[f * iz, T::zero(), -f * t[0] * iz2], [T::zero(), f * iz, -f * t[1] * iz2]]
}

fn mul_2x3_3x3<T: Real>(a: &[[T; 3]; 2], b: &Mat3<T>) -> [[T; 3]; 2] {
    let mut out = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// `m Σ mᵀ` as `[a, b, c]`.
fn sandwich<T: Real>(m: &[[T; 3]; 2], cov: &Mat3<T>) -> [T; 3] {
    let mc = mul_2x3_3x3(m, cov);
    let d = |i: usize, j: usize| (0..3).map(|k| mc[i][k] * m[j][k]).sum::<T>();
    [d(0, 0), d(0, 1), d(1, 1)]
}

/// Projects a Gaussian. `None` if its center is not in front of the near
/// plane or its opacity can never reach the skip threshold.
pub fn project_gaussian<T: Real>(pose: &CameraPose<T>, center: Vec3<T>, cov3d: &Mat3<T>, color: Vec3<T>, opacity: T) -> Option<Splat2D<T>> {
    let t = pose.world_to_camera(center);
    if !(t[2] > lit(NEAR_PLANE)) || !(opacity >= lit(ALPHA_MIN)) {
        return None;
    }
    let f = pose.focal();
    let [cx, cy] = pose.principal_point();
    let mean = [f * t[0] / t[2] + cx, f * t[1] / t[2] + cy];
    let jw = mul_2x3_3x3(&projection_jacobian(f, t), &pose.rotation());
    let [a, b, c] = sandwich(&jw, cov3d);
    let (a, c) = (a + lit(LOW_PASS), c + lit(LOW_PASS));
    let det = a * c - b * b;
    if !(det > T::zero()) || !mean[0].is_finite() || !mean[1].is_finite() {
        return None;
    }
    let half = lit::<T>(0.5);
    let mid = half * (a + c);
    let lambda_max = mid + (half * half * (a - c) * (a - c) + b * b).sqrt();
    let reach = (lit::<T>(255.0) * opacity).ln().max(T::zero());
    Some(Splat2D {
        mean,
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t[2],
        color,
        opacity,
        radius: (lit::<T>(2.0) * lambda_max * reach).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProjectionGradients<T> {
    pub center: Vec3<T>,
    pub scale: Vec3<T>,
    pub rotation: Quat<T>,
}

/// Chains screen-space gradients (mean and conic) back to the world center,
/// scales and rotation quaternion.
pub fn project_gaussian_backward<T: Real>(
    pose: &CameraPose<T>,
    center: Vec3<T>,
    scale: Vec3<T>,
    rotation: Quat<T>,
    splat: &Splat2D<T>,
    d_mean: [T; 2],
    d_conic: [T; 3],
) -> ProjectionGradients<T> {
    let two = lit::<T>(2.0);
    let half = lit::<T>(0.5);
    let w = pose.rotation();
    let t = pose.world_to_camera(center);
    let f = pose.focal();

    // Conic = S⁻¹, so dS = −Q dQ Q with the off-diagonal split symmetrically.
    let [qa, qb, qc] = splat.conic;
    let gq = [[d_conic[0], half * d_conic[1]], [half * d_conic[1], d_conic[2]]];
    let q = [[qa, qb], [qb, qc]];
    let mut gs = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut v = T::zero();
            for k in 0..2 {
                for l in 0..2 {
                    v += q[i][k] * gq[k][l] * q[l][j];
                }
            }
            gs[i][j] = -v;
        }
    }

    let jac = projection_jacobian(f, t);
    let tm = mul_2x3_3x3(&jac, &w);
    let (rq, qn) = unit(rotation);
    let r = quat_to_mat(rq);
    let cov = compute_cov3d(scale, rotation);

    // cov2d = T Σ Tᵀ: dΣ = Tᵀ G T, dT = 2 G T Σ.
    let mut d_sigma = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut v = T::zero();
            for k in 0..2 {
                for l in 0..2 {
                    v += tm[k][i] * gs[k][l] * tm[l][j];
                }
            }
            d_sigma[i][j] = v;
        }
    }
    let t_sigma = mul_2x3_3x3(&tm, &cov);
    let mut d_t = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            d_t[i][j] = two * (0..2).map(|k| gs[i][k] * t_sigma[k][j]).sum::<T>();
        }
    }
    let d_j = mul_2x3_3x3(&d_t, &transpose(&w));

    let iz = T::one() / t[2];
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_cam =
        [d_mean[0] * f * iz - d_j[0][2] * f * iz2, d_mean[1] * f * iz - d_j[1][2] * f * iz2, -d_mean[0] * f * t[0] * iz2 - d_mean[1] * f * t[1] * iz2];
    d_cam[2] += -f * iz2 * (d_j[0][0] + d_j[1][1]) + two * f * iz3 * (t[0] * d_j[0][2] + t[1] * d_j[1][2]);
    let center_grad = mat_t_vec(&w, d_cam);

    // Σ = M Mᵀ with M = R diag(s): dM = 2 dΣ M.
    let m = [0, 1, 2].map(|i| [0, 1, 2].map(|k| r[i][k] * scale[k]));
    let d_m = mat_mul(&d_sigma, &m).map(|row| row.map(|v| two * v));
    let scale_grad = [0, 1, 2].map(|k| (0..3).map(|i| d_m[i][k] * r[i][k]).sum::<T>());
    let d_r = [0, 1, 2].map(|i| [0, 1, 2].map(|k| d_m[i][k] * scale[k]));

    let [qw, qx, qy, qz] = rq;
    let g = d_r;
    let d_unit = [
        two * (-qz * g[0][1] + qy * g[0][2] + qz * g[1][0] - qx * g[1][2] - qy * g[2][0] + qx * g[2][1]),
        two * (qy * g[0][1] + qz * g[0][2] + qy * g[1][0] - two * qx * g[1][1] - qw * g[1][2] + qz * g[2][0] + qw * g[2][1] - two * qx * g[2][2]),
        two * (-two * qy * g[0][0] + qx * g[0][1] + qw * g[0][2] + qx * g[1][0] + qz * g[1][2] - qw * g[2][0] + qz * g[2][1] - two * qy * g[2][2]),
        two * (-two * qz * g[0][0] - qw * g[0][1] + qx * g[0][2] + qw * g[1][0] - two * qz * g[1][1] + qy * g[1][2] + qx * g[2][0] + qy * g[2][1]),
    ];
    let radial: T = (0..4).map(|k| rq[k] * d_unit[k]).sum();
    let rotation_grad = [0, 1, 2, 3].map(|k| (d_unit[k] - rq[k] * radial) / qn);

    ProjectionGradients { center: center_grad, scale: scale_grad, rotation: rotation_grad }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::quat_identity;

    fn symmetric_eigenvalues(m: &Mat3<f64>) -> [f64; 3] {
        // Jacobi sweeps on a copy.
        let mut a = *m;
        for _ in 0..50 {
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut j = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
                j[p][p] = c;
                j[q][q] = c;
                j[p][q] = s;
                j[q][p] = -s;
                a = mat_mul(&transpose(&j), &mat_mul(&a, &j));
            }
        }
        let mut e = [a[0][0], a[1][1], a[2][2]];
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        e
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(compute_cov3d([1.0, 1.0, 1.0], quat_identity::<f64>()), crate::linalg::identity());
        let c = compute_cov3d([2.0, 1.0, 1.0], quat_identity::<f64>());
        assert_eq!(c, [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let c = compute_cov3d([0.3, 1.2, 0.7], [0.3, -0.5, 0.1, 0.8]);
        let e = symmetric_eigenvalues(&c);
        let mut want = [0.09, 1.44, 0.49];
        want.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for k in 0..3 {
            assert!((e[k] - want[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn on_axis_isotropic_projection_is_isotropic() {
        let pose = CameraPose::look_at_origin(0.0, 0.0, 2.7, 33.8, 64, 64).unwrap();
        let cov = compute_cov3d::<f64>([0.1; 3], quat_identity());
        let s = project_gaussian::<f64>(&pose, [0.0; 3], &cov, [0.5; 3], 1.0).unwrap();
        assert!(s.cov2d[1].abs() < 1e-9);
        assert!((s.cov2d[0] - s.cov2d[2]).abs() < 1e-9);
        assert_eq!(s.mean, [32.0, 32.0]);
    }

    #[test]
    fn doubling_depth_halves_projected_sigma() {
        let near = CameraPose::look_at_origin(0.0, 0.0, 2.0, 40.0, 64, 64).unwrap();
        let far = CameraPose::look_at_origin(0.0, 0.0, 4.0, 40.0, 64, 64).unwrap();
        let cov = compute_cov3d::<f64>([0.1; 3], quat_identity());
        let a = project_gaussian(&near, [0.0; 3], &cov, [0.5; 3], 1.0).unwrap();
        let b = project_gaussian(&far, [0.0; 3], &cov, [0.5; 3], 1.0).unwrap();
        let sa = (a.cov2d[0] - LOW_PASS).sqrt();
        let sb = (b.cov2d[0] - LOW_PASS).sqrt();
        assert!((sa / sb - 2.0).abs() < 1e-6);
    }

    #[test]
    fn behind_camera_is_culled_and_floor_holds() {
        let pose = CameraPose::<f64>::look_at_origin(30.0, 10.0, 2.7, 33.8, 32, 32).unwrap();
        let cov = compute_cov3d([1e-4, 1e-3, 1e-5], [0.2, 0.1, 0.9, 0.3]);
        let s = project_gaussian(&pose, [0.1, 0.2, 0.0], &cov, [0.5; 3], 1.0).unwrap();
        let [a, b, c] = s.cov2d;
        let lmin = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
        assert!(lmin >= LOW_PASS - 1e-12);
        let behind = pose.eye().map(|v| v * 1.5);
        assert!(project_gaussian(&pose, behind, &cov, [0.5; 3], 1.0).is_none());
    }

    #[test]
    fn backward_matches_finite_differences_of_a_linear_functional() {
        let pose = CameraPose::look_at_origin(20.0, 15.0, 2.7, 33.8, 64, 64).unwrap();
        let center = [0.1, -0.2, 0.15];
        let scale = [0.05, 0.12, 0.08];
        let rot = [0.8, 0.3, -0.2, 0.4];
        let dm = [0.7, -1.3];
        let dc = [2.0, -0.5, 1.1];
        let value = |c: Vec3<f64>, s: Vec3<f64>, q: Quat<f64>| -> f64 {
            let sp = project_gaussian(&pose, c, &compute_cov3d(s, q), [0.5; 3], 1.0).unwrap();
            dm[0] * sp.mean[0] + dm[1] * sp.mean[1] + dc[0] * sp.conic[0] + dc[1] * sp.conic[1] + dc[2] * sp.conic[2]
        };
        let sp = project_gaussian(&pose, center, &compute_cov3d(scale, rot), [0.5; 3], 1.0).unwrap();
        let g = project_gaussian_backward(&pose, center, scale, rot, &sp, dm, dc);
        let h = 1e-6;
        let check = |fd: f64, an: f64| assert!((fd - an).abs() < 1e-5 * (1.0 + fd.abs()), "fd {fd} analytic {an}");
        for k in 0..3 {
            let (mut p, mut m) = (center, center);
            p[k] += h;
            m[k] -= h;
            check((value(p, scale, rot) - value(m, scale, rot)) / (2.0 * h), g.center[k]);
            let (mut p, mut m) = (scale, scale);
            p[k] += h;
            m[k] -= h;
            check((value(center, p, rot) - value(center, m, rot)) / (2.0 * h), g.scale[k]);
        }
        for k in 0..4 {
            let (mut p, mut m) = (rot, rot);
            p[k] += h;
            m[k] -= h;
            check((value(center, scale, p) - value(center, scale, m)) / (2.0 * h), g.rotation[k]);
        }
    }
}
