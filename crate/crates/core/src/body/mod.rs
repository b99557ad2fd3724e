//! Articulated template body: mesh, skeleton, skinning weights, UV layout and
//! linear shape blending.

mod capsule;
mod format;
pub mod lbs;
mod poses;
mod sampling;
mod uvmap;

pub use capsule::capsule_person;
pub use format::{load_template, parse_template, write_template};
pub use lbs::{joint_transforms, skin_lbs, skin_with_transforms, LbsGradients};
pub use poses::{read_pose_file, write_pose_file, FramePose};
pub use sampling::{apply_offsets, mean_nearest_neighbor_distance, sample_surface, SurfaceSamples};
pub use uvmap::{uv_pixel, uv_position_map, UVPositionMap};

use crate::error::{invalid, Error, Result};
use crate::linalg::{add, norm, scale, sub, zero3, Vec3};
use crate::scalar::{lit, Real};

/// Row-compressed sparse skinning weights: row `i` lists `(joint, weight)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseWeights<T> {
    offsets: Vec<usize>,
    joints: Vec<u16>,
    weights: Vec<T>,
}

impl<T: Real> Default for SparseWeights<T> {
    fn default() -> Self {
        SparseWeights { offsets: vec![0], joints: Vec::new(), weights: Vec::new() }
    }
}

impl<T: Real> SparseWeights<T> {
    pub fn push_row(&mut self, row: impl IntoIterator<Item = (usize, T)>) {
        for (j, w) in row {
            self.joints.push(j as u16);
            self.weights.push(w);
        }
        self.offsets.push(self.joints.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.joints[a..b].iter().zip(&self.weights[a..b]).map(|(&j, &w)| (j as usize, w))
    }

    pub fn row_sum(&self, i: usize) -> T {
        self.row(i).map(|(_, w)| w).sum()
    }

    fn normalize_rows(&mut self) {
        for i in 0..self.len() {
            let s = self.row_sum(i);
            for w in &mut self.weights[self.offsets[i]..self.offsets[i + 1]] {
                *w /= s;
            }
        }
    }

    /// Weighted combination of three rows, merged by joint and sorted.
    pub(crate) fn blend_rows(&self, rows: [usize; 3], bary: [T; 3]) -> Vec<(usize, T)> {
        let mut acc: Vec<(usize, T)> = Vec::with_capacity(12);
        for (r, b) in rows.iter().zip(bary) {
            for (j, w) in self.row(*r) {
                match acc.iter_mut().find(|(k, _)| *k == j) {
                    Some(e) => e.1 += b * w,
                    None => acc.push((j, b * w)),
                }
            }
        }
        acc.retain(|(_, w)| *w != T::zero());
        acc.sort_by_key(|(j, _)| *j);
        acc
    }
}

/// One linear shape component: per-vertex and per-joint displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeComponent<T> {
    pub vertex_offsets: Vec<Vec3<T>>,
    pub joint_offsets: Vec<Vec3<T>>,
}

/// Canonical-pose template mesh with skeleton and skinning.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBody<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[usize; 3]>,
    pub joints: Vec<Vec3<T>>,
    /// Parent joint, `None` for the root (joint 0).
    pub parents: Vec<Option<usize>>,
    pub skin_weights: SparseWeights<T>,
    pub uv_coords: Vec<[T; 2]>,
    pub shape_basis: Vec<ShapeComponent<T>>,
    /// Joints ordered so that every parent precedes its children.
    order: Vec<usize>,
}

impl<T: Real> TemplateBody<T> {
    /// Validates the parts and builds the template. Weight rows within 1e-4 of
    /// unit sum are accepted and renormalized exactly.
    pub fn new(
        vertices: Vec<Vec3<T>>,
        faces: Vec<[usize; 3]>,
        joints: Vec<Vec3<T>>,
        parents: Vec<Option<usize>>,
        mut skin_weights: SparseWeights<T>,
        uv_coords: Vec<[T; 2]>,
        shape_basis: Vec<ShapeComponent<T>>,
    ) -> Result<Self> {
        let nv = vertices.len();
        let nj = joints.len();
        let bad = |m: String| Error::InvalidAsset(m);
        if nv == 0 || faces.is_empty() || nj == 0 {
            return Err(bad("template needs vertices, faces and joints".into()));
        }
        if parents.len() != nj {
            return Err(bad(format!("{} parents for {} joints", parents.len(), nj)));
        }
        if skin_weights.len() != nv || uv_coords.len() != nv {
            return Err(bad("weight and uv blocks must have one row per vertex".into()));
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(bad(format!("face {i} references a missing vertex")));
            }
        }
        for i in 0..nv {
            let s = skin_weights.row_sum(i);
            if skin_weights.row(i).any(|(j, w)| j >= nj || w < T::zero()) {
                return Err(bad(format!("vertex {i}: skin weights must be non-negative on existing joints")));
            }
            if !((s - T::one()).abs() <= lit(1e-4)) {
                return Err(bad(format!("vertex {i}: skin weights sum to {s}, expected 1")));
            }
        }
        skin_weights.normalize_rows();
        for (i, uv) in uv_coords.iter().enumerate() {
            if uv.iter().any(|c| !(*c >= T::zero() && *c <= T::one())) {
                return Err(bad(format!("vertex {i}: uv coordinate outside [0,1]²")));
            }
        }
        for (k, s) in shape_basis.iter().enumerate() {
            if s.vertex_offsets.len() != nv || s.joint_offsets.len() != nj {
                return Err(bad(format!("shape component {k} has wrong dimensions")));
            }
        }
        let order = kinematic_order(&parents)?;
        Ok(TemplateBody { vertices, faces, joints, parents, skin_weights, uv_coords, shape_basis, order })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_basis.len()
    }

    /// Parent-before-child joint order.
    pub fn kinematic_order(&self) -> &[usize] {
        &self.order
    }

    /// Recenters on the bounding-sphere center and scales to unit radius.
    ///
    /// The sphere is centered on the axis-aligned bounding box, with radius the
    /// farthest vertex distance from that center.
    pub fn normalize(&mut self) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let center = scale(add(lo, hi), lit(0.5));
        let radius = self.vertices.iter().map(|v| norm(sub(*v, center))).fold(T::zero(), T::max);
        let inv = T::one() / radius;
        for v in self.vertices.iter_mut().chain(self.joints.iter_mut()) {
            *v = scale(sub(*v, center), inv);
        }
        for s in &mut self.shape_basis {
            for d in s.vertex_offsets.iter_mut().chain(s.joint_offsets.iter_mut()) {
                *d = scale(*d, inv);
            }
        }
    }

    pub fn check_beta(&self, beta: &[T]) -> Result<()> {
        if beta.len() != self.shape_dim() {
            return Err(invalid(format!("shape vector has {} entries, template expects {}", beta.len(), self.shape_dim())));
        }
        Ok(())
    }

    /// Template vertices after shape blending, `T(β)`.
    pub fn shaped_vertices(&self, beta: &[T]) -> Result<Vec<Vec3<T>>> {
        self.check_beta(beta)?;
        let mut out = self.vertices.clone();
        for (b, comp) in beta.iter().zip(&self.shape_basis) {
            for (v, d) in out.iter_mut().zip(&comp.vertex_offsets) {
                *v = add(*v, scale(*d, *b));
            }
        }
        Ok(out)
    }
}

/// Rest-pose joint positions after shape blending, `J(β)`.
pub fn joint_locations<T: Real>(template: &TemplateBody<T>, beta: &[T]) -> Result<Vec<Vec3<T>>> {
    template.check_beta(beta)?;
    let mut out = template.joints.clone();
    for (b, comp) in beta.iter().zip(&template.shape_basis) {
        for (j, d) in out.iter_mut().zip(&comp.joint_offsets) {
            *j = add(*j, scale(*d, *b));
        }
    }
    Ok(out)
}

pub(crate) fn kinematic_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let bad = |m: String| Error::InvalidAsset(m);
    if parents[0].is_some() {
        return Err(bad("joint 0 must be the root (parent -1)".into()));
    }
    let mut children = vec![Vec::new(); n];
    for (j, p) in parents.iter().enumerate().skip(1) {
        match p {
            None => return Err(bad(format!("skeleton is not a tree: joint {j} is a second root"))),
            Some(p) if *p >= n => return Err(bad(format!("joint {j} has out-of-range parent {p}"))),
            Some(p) if *p == j => return Err(bad(format!("skeleton is not a tree: joint {j} is its own parent"))),
            Some(p) => children[*p].push(j),
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0usize];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev());
    }
    if order.len() != n {
        let missing: Vec<usize> = (0..n).filter(|j| !order.contains(j)).collect();
        return Err(bad(format!("skeleton is not a tree: joints {missing:?} form a parent cycle unreachable from the root")));
    }
    Ok(order)
}

/// Per-frame articulation: pose, shape, translation and the learnable
/// corrections applied on top of them.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyState<T> {
    /// Axis-angle rotation per joint.
    pub theta: Vec<Vec3<T>>,
    pub beta: Vec<T>,
    pub translation: Vec3<T>,
    pub delta_theta: Vec<Vec3<T>>,
    pub delta_translation: Vec3<T>,
}

impl<T: Real> BodyState<T> {
    pub fn new(template: &TemplateBody<T>, theta: Vec<Vec3<T>>, beta: Vec<T>, translation: Vec3<T>) -> Result<Self> {
        if theta.len() != template.joint_count() {
            return Err(invalid(format!("pose has {} joints, template has {}", theta.len(), template.joint_count())));
        }
        template.check_beta(&beta)?;
        let n = theta.len();
        Ok(BodyState { theta, beta, translation, delta_theta: vec![zero3(); n], delta_translation: zero3() })
    }

    /// Identity pose, zero shape, zero translation.
    pub fn rest(template: &TemplateBody<T>) -> Self {
        let n = template.joint_count();
        BodyState {
            theta: vec![zero3(); n],
            beta: vec![T::zero(); template.shape_dim()],
            translation: zero3(),
            delta_theta: vec![zero3(); n],
            delta_translation: zero3(),
        }
    }

    /// `θ + Δθ`
    pub fn refined_theta(&self) -> Vec<Vec3<T>> {
        self.theta.iter().zip(&self.delta_theta).map(|(a, b)| add(*a, *b)).collect()
    }

    /// `t + Δt`
    pub fn refined_translation(&self) -> Vec3<T> {
        add(self.translation, self.delta_translation)
    }
}

/// Joint-count of the bundled figure, mirroring the SMPL skeleton.
pub const CAPSULE_JOINTS: usize = 24;
