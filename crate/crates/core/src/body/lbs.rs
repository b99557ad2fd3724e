//! Linear blend skinning over a kinematic tree, with its reverse-mode
//! derivative.
//!
//! Joint `j` rotates its subtree by `R(θ_j)` about its rest position, composed
//! with its parent's transform. A skinned point is the weight-blended image of
//! the point under the joint transforms, plus a global translation.

use crate::body::{kinematic_order, SparseWeights};
use crate::error::{invalid, Result};
use crate::linalg::{
    add, mat_add, mat_dot, mat_mul, mat_scale, mat_t_vec, mat_vec, mat_zero, outer, rodrigues, rodrigues_with_jacobian, scale, sub, transpose, zero3, Mat3,
    Rigid, Vec3,
};
use crate::scalar::Real;

fn check_dims<T: Real>(n_points: usize, weights: &SparseWeights<T>, joints: &[Vec3<T>], parents: &[Option<usize>], theta: &[Vec3<T>]) -> Result<()> {
    if weights.len() != n_points {
        return Err(invalid(format!("{} weight rows for {} points", weights.len(), n_points)));
    }
    if parents.len() != joints.len() || theta.len() != joints.len() {
        return Err(invalid(format!("joint dimension mismatch: {} joints, {} parents, {} rotations", joints.len(), parents.len(), theta.len())));
    }
    Ok(())
}

/// World transforms of every joint for the given pose.
pub fn joint_transforms<T: Real>(joints: &[Vec3<T>], parents: &[Option<usize>], theta: &[Vec3<T>]) -> Result<Vec<Rigid<T>>> {
    if parents.len() != joints.len() || theta.len() != joints.len() {
        return Err(invalid("joint dimension mismatch"));
    }
    let order = kinematic_order(parents).map_err(|e| invalid(e.to_string()))?;
    Ok(transforms_in_order(joints, parents, &order, theta))
}

fn transforms_in_order<T: Real>(joints: &[Vec3<T>], parents: &[Option<usize>], order: &[usize], theta: &[Vec3<T>]) -> Vec<Rigid<T>> {
    let mut out = vec![Rigid::identity(); joints.len()];
    for &j in order {
        let local = Rigid::about(rodrigues(theta[j]), joints[j]);
        out[j] = match parents[j] {
            Some(p) => out[p].compose(&local),
            None => local,
        };
    }
    out
}

/// Blends per-joint transforms by the skin weights and adds `translation`.
///
/// Evaluated as `p + t + Σ w_j (G_j p − p)`, equal to `Σ w_j G_j p + t` for
/// unit-sum weights, so that identity transforms reproduce `p` bit for bit.
pub fn skin_with_transforms<T: Real>(points: &[Vec3<T>], weights: &SparseWeights<T>, transforms: &[Rigid<T>], translation: Vec3<T>) -> Vec<Vec3<T>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut acc = zero3();
            for (j, w) in weights.row(i) {
                acc = add(acc, scale(sub(transforms[j].apply(*p), *p), w));
            }
            add(add(*p, acc), translation)
        })
        .collect()
}

/// Poses canonical `points` with rotations `theta` (axis-angle per joint) and
/// a global `translation`.
pub fn skin_lbs<T: Real>(
    points: &[Vec3<T>],
    weights: &SparseWeights<T>,
    joints: &[Vec3<T>],
    parents: &[Option<usize>],
    theta: &[Vec3<T>],
    translation: Vec3<T>,
) -> Result<Vec<Vec3<T>>> {
    check_dims(points.len(), weights, joints, parents, theta)?;
    let transforms = joint_transforms(joints, parents, theta)?;
    Ok(skin_with_transforms(points, weights, &transforms, translation))
}

/// Weight-blended rotation block per point (not orthonormal in general).
pub fn blended_rotations<T: Real>(weights: &SparseWeights<T>, transforms: &[Rigid<T>]) -> Vec<Mat3<T>> {
    (0..weights.len())
        .map(|i| {
            let mut m = mat_zero();
            for (j, w) in weights.row(i) {
                m = mat_add(&m, &mat_scale(&transforms[j].rot, w));
            }
            m
        })
        .collect()
}

/// Gradients of a scalar loss with respect to the skinning inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LbsGradients<T> {
    pub points: Vec<Vec3<T>>,
    pub theta: Vec<Vec3<T>>,
    pub translation: Vec3<T>,
}

/// Reverse-mode derivative of [`skin_lbs`] given `∂L/∂(posed point)`.
pub fn skin_lbs_backward<T: Real>(
    points: &[Vec3<T>],
    weights: &SparseWeights<T>,
    joints: &[Vec3<T>],
    parents: &[Option<usize>],
    theta: &[Vec3<T>],
    grad_posed: &[Vec3<T>],
) -> Result<LbsGradients<T>> {
    check_dims(points.len(), weights, joints, parents, theta)?;
    if grad_posed.len() != points.len() {
        return Err(invalid("gradient count does not match point count"));
    }
    let order = kinematic_order(parents).map_err(|e| invalid(e.to_string()))?;
    let nj = joints.len();
    let transforms = transforms_in_order(joints, parents, &order, theta);

    let mut d_rot = vec![mat_zero::<T>(); nj];
    let mut d_trans = vec![zero3::<T>(); nj];
    let mut d_points = Vec::with_capacity(points.len());
    let mut d_translation = zero3();
    for (i, (p, g)) in points.iter().zip(grad_posed).enumerate() {
        d_translation = add(d_translation, *g);
        let mut blended = mat_zero();
        for (j, w) in weights.row(i) {
            let wg = scale(*g, w);
            d_rot[j] = mat_add(&d_rot[j], &outer(wg, *p));
            d_trans[j] = add(d_trans[j], wg);
            blended = mat_add(&blended, &mat_scale(&transforms[j].rot, w));
        }
        d_points.push(mat_t_vec(&blended, *g));
    }

    // Walk the tree leaves-first, pushing transform gradients to parents and
    // collecting the local rotation gradient of each joint.
    let mut d_theta = vec![zero3(); nj];
    for &j in order.iter().rev() {
        let (r_local, jac) = rodrigues_with_jacobian(theta[j]);
        let pivot = joints[j];
        let local_trans = sub(pivot, mat_vec(&r_local, pivot));
        let d_local_rot = match parents[j] {
            Some(p) => {
                let rp = transforms[p].rot;
                let push_rot = mat_add(&mat_mul(&d_rot[j], &transpose(&r_local)), &outer(d_trans[j], local_trans));
                d_rot[p] = mat_add(&d_rot[p], &push_rot);
                d_trans[p] = add(d_trans[p], d_trans[j]);
                let rpt = transpose(&rp);
                // local trans = pivot − R·pivot also depends on R.
                mat_add(&mat_mul(&rpt, &d_rot[j]), &mat_scale(&outer(mat_vec(&rpt, d_trans[j]), pivot), -T::one()))
            }
            None => mat_add(&d_rot[j], &mat_scale(&outer(d_trans[j], pivot), -T::one())),
        };
        for k in 0..3 {
            d_theta[j][k] = mat_dot(&d_local_rot, &jac[k]);
        }
    }
    Ok(LbsGradients { points: d_points, theta: d_theta, translation: d_translation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> (Vec<Vec3<f64>>, Vec<Option<usize>>) {
        (vec![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5, 1.5, 0.0], [-0.5, 1.0, 0.2]], vec![None, Some(0), Some(1), Some(1)])
    }

    #[test]
    fn quarter_turn_about_origin_pivot() {
        let mut w = SparseWeights::default();
        w.push_row([(0, 1.0)]);
        let out = skin_lbs(&[[1.0, 0.0, 0.0]], &w, &[[0.0; 3]], &[None], &[[0.0, 0.0, std::f64::consts::FRAC_PI_2]], [0.0; 3]).unwrap();
        assert!(norm(sub(out[0], [0.0, 1.0, 0.0])) < 1e-9);
    }

    #[test]
    fn identity_pose_is_exact() {
        let (joints, parents) = chain();
        let mut w = SparseWeights::default();
        w.push_row([(1, 0.3), (2, 0.7)]);
        w.push_row([(3, 1.0)]);
        let pts = vec![[0.1, 1.2, -0.3], [0.7, 0.2, 0.9]];
        let out = skin_lbs(&pts, &w, &joints, &parents, &[[0.0; 3]; 4], [0.0; 3]).unwrap();
        assert_eq!(out, pts);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (joints, parents) = chain();
        let w = SparseWeights::default();
        assert!(skin_lbs(&[[0.0; 3]], &w, &joints, &parents, &[[0.0; 3]; 4], [0.0; 3]).is_err());
        let mut w = SparseWeights::default();
        w.push_row([(0, 1.0)]);
        assert!(skin_lbs(&[[0.0; 3]], &w, &joints, &parents, &[[0.0; 3]; 3], [0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (joints, parents) = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut w = SparseWeights::default();
        let mut pts = Vec::new();
        for _ in 0..6 {
            let a: f64 = rng.gen_range(0.1..0.9);
            w.push_row([(rng.gen_range(0..2), a), (rng.gen_range(2..4), 1.0 - a)]);
            pts.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
        let theta: Vec<Vec3<f64>> = (0..4).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let trans = [0.1, -0.2, 0.3];
        let upstream: Vec<Vec3<f64>> = (0..6).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let loss = |pts: &[Vec3<f64>], theta: &[Vec3<f64>], t: Vec3<f64>| -> f64 {
            let out = skin_lbs(pts, &w, &joints, &parents, theta, t).unwrap();
            out.iter().zip(&upstream).map(|(a, b)| crate::linalg::dot(*a, *b)).sum()
        };
        let g = skin_lbs_backward(&pts, &w, &joints, &parents, &theta, &upstream).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            for k in 0..3 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j][k] += h;
                tm[j][k] -= h;
                let fd = (loss(&pts, &tp, trans) - loss(&pts, &tm, trans)) / (2.0 * h);
                assert!((fd - g.theta[j][k]).abs() < 1e-6 * (1.0 + fd.abs()), "theta[{j}][{k}] fd={fd} an={}", g.theta[j][k]);
            }
        }
        for i in 0..6 {
            for k in 0..3 {
                let mut pp = pts.clone();
                let mut pm = pts.clone();
                pp[i][k] += h;
                pm[i][k] -= h;
                let fd = (loss(&pp, &theta, trans) - loss(&pm, &theta, trans)) / (2.0 * h);
                assert!((fd - g.points[i][k]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
        for k in 0..3 {
            let expect: f64 = upstream.iter().map(|u| u[k]).sum();
            assert!((expect - g.translation[k]).abs() < 1e-12);
        }
    }
}
