//! Fixed-size vector, matrix, quaternion and rigid-transform helpers.
//!
//! Matrices are row-major `[[T; 3]; 3]`; quaternions are `[w, x, y, z]`.

use crate::scalar::{lit, Real};

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];
pub type Quat<T> = [T; 4];

#[inline]
pub fn zero3<T: Real>() -> Vec3<T> {
    [T::zero(); 3]
}

#[inline]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

pub fn normalize<T: Real>(a: Vec3<T>) -> Vec3<T> {
    scale(a, T::one() / norm(a))
}

pub fn identity<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn mat_zero<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

#[inline]
pub fn mat_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// `mᵀ · v`
#[inline]
pub fn mat_t_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2], m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2], m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2]]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = mat_zero();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = mat_zero();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn mat_add<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

pub fn mat_scale<T: Real>(a: &Mat3<T>, s: T) -> Mat3<T> {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}

/// Outer product `a · bᵀ`.
pub fn outer<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Mat3<T> {
    let mut out = mat_zero();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i] * b[j];
        }
    }
    out
}

/// Frobenius inner product.
pub fn mat_dot<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

pub fn skew<T: Real>(v: Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    [[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]]
}

/// Coefficients `(a, b)` of `R = I + a·K + b·K²` for an axis-angle vector of
/// angle `phi`, together with `(a'/phi, b'/phi)` for the derivative.
fn rodrigues_coefficients<T: Real>(phi2: T) -> (T, T, T, T) {
    if phi2 < lit(1e-8) {
        // Taylor expansions around zero.
        let a = T::one() - phi2 / lit(6.0);
        let b = lit::<T>(0.5) - phi2 / lit(24.0);
        let da = lit::<T>(-1.0 / 3.0) + phi2 / lit(30.0);
        let db = lit::<T>(-1.0 / 12.0) + phi2 / lit(180.0);
        (a, b, da, db)
    } else {
        let phi = phi2.sqrt();
        let (s, c) = phi.sin_cos();
        let a = s / phi;
        let b = (T::one() - c) / phi2;
        let da = (phi * c - s) / (phi2 * phi);
        let db = (phi * s - lit::<T>(2.0) * (T::one() - c)) / (phi2 * phi2);
        (a, b, da, db)
    }
}

/// Exponential map from an axis-angle vector to a rotation matrix.
pub fn rodrigues<T: Real>(w: Vec3<T>) -> Mat3<T> {
    let (a, b, _, _) = rodrigues_coefficients(dot(w, w));
    let k = skew(w);
    let k2 = mat_mul(&k, &k);
    mat_add(&mat_add(&identity(), &mat_scale(&k, a)), &mat_scale(&k2, b))
}

/// Rotation matrix and its three partial derivatives `∂R/∂w_i`.
pub fn rodrigues_with_jacobian<T: Real>(w: Vec3<T>) -> (Mat3<T>, [Mat3<T>; 3]) {
    let (a, b, da, db) = rodrigues_coefficients(dot(w, w));
    let k = skew(w);
    let k2 = mat_mul(&k, &k);
    let r = mat_add(&mat_add(&identity(), &mat_scale(&k, a)), &mat_scale(&k2, b));
    let mut jac = [mat_zero(); 3];
    for (i, d) in jac.iter_mut().enumerate() {
        let mut e = zero3();
        e[i] = T::one();
        let ei = skew(e);
        // d(K²)/dw_i = E_i K + K E_i
        let dk2 = mat_add(&mat_mul(&ei, &k), &mat_mul(&k, &ei));
        let mut m = mat_scale(&k, da * w[i]);
        m = mat_add(&m, &mat_scale(&ei, a));
        m = mat_add(&m, &mat_scale(&k2, db * w[i]));
        m = mat_add(&m, &mat_scale(&dk2, b));
        *d = m;
    }
    (r, jac)
}

pub fn quat_identity<T: Real>() -> Quat<T> {
    [T::one(), T::zero(), T::zero(), T::zero()]
}

pub fn quat_normalize<T: Real>(q: Quat<T>) -> Quat<T> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul<T: Real>(a: Quat<T>, b: Quat<T>) -> Quat<T> {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_mat<T: Real>(q: Quat<T>) -> Mat3<T> {
    let [w, x, y, z] = q;
    let two = lit::<T>(2.0);
    let one = T::one();
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

/// Nearest unit quaternion to an (approximately) orthonormal matrix.
///
/// Blended skinning rotations are not exactly orthonormal; the result is
/// re-normalized either way.
pub fn mat_to_quat<T: Real>(m: &Mat3<T>) -> Quat<T> {
    let one = T::one();
    let quarter = lit::<T>(0.25);
    let trace = m[0][0] + m[1][1] + m[2][2];
    let q = if trace > T::zero() {
        let s = (trace + one).sqrt() * lit(2.0);
        [quarter * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * lit(2.0);
        [(m[2][1] - m[1][2]) / s, quarter * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] > m[2][2] {
        let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * lit(2.0);
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, quarter * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * lit(2.0);
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, quarter * s]
    };
    let q = quat_normalize(q);
    // Canonical sign: non-negative real part.
    if q[0] < T::zero() {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// Rigid transform `p ↦ rot·p + trans`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid<T> {
    pub rot: Mat3<T>,
    pub trans: Vec3<T>,
}

impl<T: Real> Rigid<T> {
    pub fn identity() -> Self {
        Rigid { rot: identity(), trans: zero3() }
    }

    /// Rotation by `rot` about the pivot point `pivot`.
    pub fn about(rot: Mat3<T>, pivot: Vec3<T>) -> Self {
        Rigid { rot, trans: sub(pivot, mat_vec(&rot, pivot)) }
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        add(mat_vec(&self.rot, p), self.trans)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rigid<T>) -> Rigid<T> {
        Rigid { rot: mat_mul(&self.rot, &other.rot), trans: add(mat_vec(&self.rot, other.trans), self.trans) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
        let mut m = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((a[i][j] - b[i][j]).abs());
            }
        }
        m
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rodrigues([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let p = mat_vec(&r, [1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn rodrigues_is_orthonormal() {
        let r = rodrigues([0.3, -1.2, 0.7]);
        let rrt = mat_mul(&r, &transpose(&r));
        assert!(max_abs_diff(&rrt, &identity()) < 1e-12);
    }

    #[test]
    fn rodrigues_jacobian_matches_finite_differences() {
        for w in [[0.3, -1.2, 0.7], [1e-6, 2e-6, -1e-6], [0.0, 0.0, 0.0], [2.5, 0.1, -0.4]] {
            let (_, jac) = rodrigues_with_jacobian(w);
            for i in 0..3 {
                let h = 1e-6;
                let mut wp = w;
                let mut wm = w;
                wp[i] += h;
                wm[i] -= h;
                let fd = mat_scale(&mat_add(&rodrigues(wp), &mat_scale(&rodrigues(wm), -1.0)), 0.5 / h);
                assert!(max_abs_diff(&fd, &jac[i]) < 1e-8, "w={w:?} i={i}");
            }
        }
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        let r = rodrigues([0.4, 0.9, -2.0]);
        let q = mat_to_quat(&r);
        assert!(max_abs_diff(&quat_to_mat(q), &r) < 1e-12);
        let r = rodrigues([3.0f64, 0.0, 0.0]);
        assert!(max_abs_diff(&quat_to_mat(mat_to_quat(&r)), &r) < 1e-12);
    }

    #[test]
    fn quaternion_product_matches_matrix_product() {
        let a = mat_to_quat(&rodrigues([0.1, 0.2, 0.3]));
        let b = mat_to_quat(&rodrigues([-0.5, 0.4, 1.0]));
        let m = mat_mul(&quat_to_mat(a), &quat_to_mat(b));
        assert!(max_abs_diff(&quat_to_mat(quat_mul(a, b)), &m) < 1e-12);
    }

    #[test]
    fn rigid_compose_applies_right_first() {
        let a = Rigid::about(rodrigues([0.0, 0.0, 1.0]), [1.0, 0.0, 0.0]);
        let b = Rigid { rot: rodrigues([0.5f64, 0.0, 0.0]), trans: [0.0, 2.0, 0.0] };
        let p = [0.3, -0.2, 0.9];
        let lhs = a.compose(&b).apply(p);
        let rhs = a.apply(b.apply(p));
        for k in 0..3 {
            assert!((lhs[k] - rhs[k]).abs() < 1e-12);
        }
    }
}
