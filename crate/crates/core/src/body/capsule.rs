//! Procedural low-poly articulated figure with the 24-joint SMPL skeleton.
//!
//! Every body part is a capped tube around a bone. Parts are stacked as
//! horizontal bands of the UV square, each band's height proportional to the
//! part's surface area; inside a band, `u` runs around the tube and `v` follows
//! the cumulative surface area along it, so UV density is close to uniform.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::body::{ShapeComponent, SparseWeights, TemplateBody};
use crate::linalg::{add, cross, norm, normalize, scale, sub, Vec3};
use crate::scalar::{lit, Real};

/// SMPL kinematic tree.
const PARENTS: [i32; 24] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];

/// Rest joints in meters, T-pose, y up, facing +z. Left side is +x.
const JOINTS: [[f64; 3]; 24] = [
    [0.0, 0.95, 0.0],    // pelvis
    [0.09, 0.88, 0.0],   // left hip
    [-0.09, 0.88, 0.0],  // right hip
    [0.0, 1.05, 0.0],    // spine1
    [0.10, 0.50, 0.0],   // left knee
    [-0.10, 0.50, 0.0],  // right knee
    [0.0, 1.18, 0.0],    // spine2
    [0.10, 0.10, 0.0],   // left ankle
    [-0.10, 0.10, 0.0],  // right ankle
    [0.0, 1.32, 0.0],    // spine3
    [0.10, 0.04, 0.14],  // left foot
    [-0.10, 0.04, 0.14], // right foot
    [0.0, 1.50, 0.0],    // neck
    [0.06, 1.43, 0.0],   // left collar
    [-0.06, 1.43, 0.0],  // right collar
    [0.0, 1.62, 0.0],    // head
    [0.18, 1.44, 0.0],   // left shoulder
    [-0.18, 1.44, 0.0],  // right shoulder
    [0.45, 1.44, 0.0],   // left elbow
    [-0.45, 1.44, 0.0],  // right elbow
    [0.70, 1.44, 0.0],   // left wrist
    [-0.70, 1.44, 0.0],  // right wrist
    [0.82, 1.44, 0.0],   // left hand
    [-0.82, 1.44, 0.0],  // right hand
];

const SEGMENTS: usize = 12;
const CAP_ROWS: usize = 3;
const ROW_SPACING: f64 = 0.04;

enum Skinning {
    /// Bound to `joint`, blending into `parent` near the start and `child`
    /// near the end of the bone.
    Bone { joint: usize, parent: Option<usize>, child: Option<usize> },
    /// Hat-function blend over joints at the given heights along the axis.
    Chain(&'static [(usize, f64)]),
}

struct Part {
    start: [f64; 3],
    end: [f64; 3],
    /// Radius along the first and second cross-section axes.
    radii: [f64; 2],
    skinning: Skinning,
}

const TORSO_CHAIN: &[(usize, f64)] = &[(0, 0.0), (3, 0.2), (6, 0.42), (9, 0.64), (12, 1.0)];

fn parts() -> Vec<Part> {
    let bone = |joint: usize, parent: usize, child: Option<usize>, start: [f64; 3], end: [f64; 3], r: f64| Part {
        start,
        end,
        radii: [r, r],
        skinning: Skinning::Bone { joint, parent: Some(parent), child },
    };
    let j = |i: usize| JOINTS[i];
    let mut parts = vec![
        Part { start: [0.0, 0.86, 0.0], end: [0.0, 1.46, 0.0], radii: [0.16, 0.105], skinning: Skinning::Chain(TORSO_CHAIN) },
        bone(12, 9, Some(15), [0.0, 1.45, 0.0], [0.0, 1.58, 0.0], 0.05),
        bone(15, 12, None, [0.0, 1.65, 0.0], [0.0, 1.74, 0.0], 0.095),
    ];
    for (hip, knee, ankle, foot, collar, shoulder, elbow, wrist, hand) in [(1, 4, 7, 10, 13, 16, 18, 20, 22), (2, 5, 8, 11, 14, 17, 19, 21, 23)] {
        let side = j(hip)[0].signum();
        parts.push(bone(hip, 0, Some(knee), j(hip), j(knee), 0.075));
        parts.push(bone(knee, hip, Some(ankle), j(knee), j(ankle), 0.055));
        parts.push(bone(ankle, knee, Some(foot), [j(ankle)[0], 0.07, -0.02], [j(ankle)[0], 0.05, 0.16], 0.045));
        parts.push(bone(collar, 9, Some(shoulder), [0.04 * side, 1.43, 0.0], j(shoulder), 0.06));
        parts.push(bone(shoulder, collar, Some(elbow), j(shoulder), j(elbow), 0.05));
        parts.push(bone(elbow, shoulder, Some(wrist), j(elbow), j(wrist), 0.042));
        parts.push(bone(wrist, elbow, Some(hand), j(wrist), [0.84 * side, 1.44, 0.0], 0.035));
    }
    parts
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Skin weights at normalized axial position `s` (0 at start, 1 at end; caps
/// extend beyond).
fn weights_at(skinning: &Skinning, s: f64) -> Vec<(usize, f64)> {
    match skinning {
        Skinning::Bone { joint, parent, child } => {
            let w_child = child.map_or(0.0, |_| smoothstep((s - 0.7) / 0.6));
            let w_parent = parent.map_or(0.0, |_| smoothstep((0.3 - s) / 0.6));
            let mut row = vec![(*joint, 1.0 - w_child - w_parent)];
            if let (Some(c), true) = (child, w_child > 0.0) {
                row.push((*c, w_child));
            }
            if let (Some(p), true) = (parent, w_parent > 0.0) {
                row.push((*p, w_parent));
            }
            row.retain(|(_, w)| *w > 0.0);
            row
        }
        Skinning::Chain(knots) => {
            let s = s.clamp(knots[0].1, knots[knots.len() - 1].1);
            for pair in knots.windows(2) {
                let ((ja, a), (jb, b)) = (pair[0], pair[1]);
                if s <= b {
                    let t = (s - a) / (b - a);
                    let mut row = vec![(ja, 1.0 - t), (jb, t)];
                    row.retain(|(_, w)| *w > 0.0);
                    return row;
                }
            }
            unreachable!("s is clamped into the knot range")
        }
    }
}

struct Ring {
    center: [f64; 3],
    radii: [f64; 2],
    s: f64,
}

struct TubeMesh {
    vertices: Vec<[f64; 3]>,
    /// (ring index, segment index) per vertex.
    grid: Vec<(usize, usize)>,
    faces: Vec<[usize; 3]>,
    weights: Vec<Vec<(usize, f64)>>,
    centers: Vec<[f64; 3]>,
    /// Cumulative area up to each ring.
    cum_area: Vec<f64>,
}

fn tube(part: &Part) -> TubeMesh {
    let axis = sub(part.end, part.start);
    let length = norm(axis);
    let d = normalize(axis);
    // Cross-section axes: x and z for the vertical torso, otherwise any
    // frame orthogonal to the bone.
    let e1 = if d[1].abs() > 0.9 { [1.0, 0.0, 0.0] } else { normalize(cross(d, [0.0, 1.0, 0.0])) };
    let e2 = cross(d, e1);
    let cap = part.radii[0].min(part.radii[1]);

    let mut rings = Vec::new();
    for i in 0..=CAP_ROWS {
        let a = -FRAC_PI_2 + i as f64 * FRAC_PI_2 / CAP_ROWS as f64;
        let axial = cap * a.sin();
        rings.push(Ring { center: add(part.start, scale(d, axial)), radii: [part.radii[0] * a.cos(), part.radii[1] * a.cos()], s: axial / length });
    }
    let body_rows = ((length / ROW_SPACING).ceil() as usize).max(1);
    for k in 1..body_rows {
        let axial = length * k as f64 / body_rows as f64;
        rings.push(Ring { center: add(part.start, scale(d, axial)), radii: part.radii, s: axial / length });
    }
    for i in 0..=CAP_ROWS {
        let a = i as f64 * FRAC_PI_2 / CAP_ROWS as f64;
        let axial = length + cap * a.sin();
        rings.push(Ring { center: add(part.start, scale(d, axial)), radii: [part.radii[0] * a.cos(), part.radii[1] * a.cos()], s: axial / length });
    }

    let mut mesh = TubeMesh { vertices: Vec::new(), grid: Vec::new(), faces: Vec::new(), weights: Vec::new(), centers: Vec::new(), cum_area: vec![0.0] };
    for (r, ring) in rings.iter().enumerate() {
        let w = weights_at(&part.skinning, ring.s);
        for seg in 0..=SEGMENTS {
            let phi = 2.0 * PI * (seg % SEGMENTS) as f64 / SEGMENTS as f64;
            let off = add(scale(e1, ring.radii[0] * phi.cos()), scale(e2, ring.radii[1] * phi.sin()));
            mesh.vertices.push(add(ring.center, off));
            mesh.grid.push((r, seg));
            mesh.weights.push(w.clone());
            mesh.centers.push(ring.center);
        }
    }
    let stride = SEGMENTS + 1;
    for r in 0..rings.len() - 1 {
        let mut strip = 0.0;
        for seg in 0..SEGMENTS {
            let a = r * stride + seg;
            let b = a + 1;
            let c = a + stride;
            let e = c + 1;
            for f in [[a, b, e], [a, e, c]] {
                strip += triangle_area(&mesh.vertices, f);
                mesh.faces.push(f);
            }
        }
        let last = *mesh.cum_area.last().unwrap();
        mesh.cum_area.push(last + strip);
    }
    mesh
}

fn triangle_area(v: &[[f64; 3]], f: [usize; 3]) -> f64 {
    0.5 * norm(cross(sub(v[f[1]], v[f[0]]), sub(v[f[2]], v[f[0]])))
}

/// Builds the bundled 24-joint test figure, normalized into the unit sphere.
///
/// Two shape components are included: a vertical stretch and a girth change.
pub fn capsule_person<T: Real>() -> TemplateBody<T> {
    let meshes: Vec<TubeMesh> = parts().iter().map(tube).collect();
    let total: f64 = meshes.iter().map(|m| *m.cum_area.last().unwrap()).sum();

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut weights = SparseWeights::default();
    let mut uv = Vec::new();
    let mut stretch = Vec::new();
    let mut girth = Vec::new();
    let mut band_start = 0.0;
    for mesh in &meshes {
        let area = *mesh.cum_area.last().unwrap();
        let band = area / total;
        let base = vertices.len();
        for (i, v) in mesh.vertices.iter().enumerate() {
            let (r, seg) = mesh.grid[i];
            let u = seg as f64 / SEGMENTS as f64;
            let vv = (band_start + band * mesh.cum_area[r] / area).clamp(0.0, 1.0);
            vertices.push(v.map(lit::<T>));
            uv.push([lit::<T>(u), lit::<T>(vv)]);
            weights.push_row(mesh.weights[i].iter().map(|&(j, w)| (j, lit::<T>(w))));
            stretch.push([0.0, 0.1 * v[1], 0.0].map(lit::<T>));
            girth.push(scale(sub(*v, mesh.centers[i]), 0.2).map(lit::<T>));
        }
        faces.extend(mesh.faces.iter().map(|f| f.map(|k| k + base)));
        band_start += band;
    }
    let joints: Vec<Vec3<T>> = JOINTS.iter().map(|j| j.map(lit::<T>)).collect();
    let shapes = vec![
        ShapeComponent { vertex_offsets: stretch, joint_offsets: JOINTS.iter().map(|j| [0.0, 0.1 * j[1], 0.0].map(lit::<T>)).collect() },
        ShapeComponent { vertex_offsets: girth, joint_offsets: vec![[T::zero(); 3]; 24] },
    ];
    let parents = PARENTS.iter().map(|&p| (p >= 0).then_some(p as usize)).collect();
    let mut body = TemplateBody::new(vertices, faces, joints, parents, weights, uv, shapes).expect("procedural figure is valid by construction");
    body.normalize();
    body
}
