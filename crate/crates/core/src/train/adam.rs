//! Adam with bias correction. Each parameter buffer counts its own updates,
//! so buffers that sit out a step (motion corrections of frames outside the
//! batch) are not decayed and keep a correct bias correction.

use crate::gaussian::MomentBuffers;
use crate::scalar::{lit, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], moments: &mut MomentBuffers<T>, lr: f64) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), moments.first.len());
    moments.updates += 1;
    let t = moments.updates.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let (b1, b2) = (lit::<T>(BETA1), lit::<T>(BETA2));
    let (a1, a2) = (lit::<T>(1.0 - BETA1), lit::<T>(1.0 - BETA2));
    let step = lit::<T>(lr / c1);
    let inv_c2 = lit::<T>(1.0 / c2);
    let eps = lit::<T>(EPSILON);
    for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(moments.first.iter_mut().zip(moments.second.iter_mut())) {
        *m = b1 * *m + a1 * g;
        *v = b2 * *v + a2 * g * g;
        *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let mut p = [1.0f64, -2.0, 0.5];
        let mut m = MomentBuffers::zeros(3);
        adam_step(&mut p, &[0.3, -7.0, 0.0], &mut m, 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
        assert_eq!(m.updates, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = [0.25f64; 4];
        let mut m = MomentBuffers::zeros(4);
        for _ in 0..2 {
            adam_step(&mut p, &[0.0; 4], &mut m, 3e-3);
        }
        assert_eq!(p, [0.25; 4]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = [3.0f64];
        let mut m = MomentBuffers::zeros(1);
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0)];
            adam_step(&mut x, &g, &mut m, 0.05);
        }
        assert!((x[0] - 1.0).abs() < 1e-2);
    }
}
