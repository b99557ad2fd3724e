//! Static orbital camera trajectories and pinhole projection.
//!
//! World space is y-up. Cameras follow the computer-vision convention:
//! x right, y down, z forward. An orbit camera at azimuth 0° sits on the +z
//! axis looking at the origin; azimuth increases counter-clockwise seen from
//! above (towards +x).

use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cross, mat_t_vec, mat_vec, normalize, sub, Mat3, Vec3};
use crate::scalar::{lit, Real};

/// One orbit view: pinhole intrinsics plus a world→camera rigid transform.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose<T> {
    /// Degrees.
    pub azimuth: T,
    /// Degrees.
    pub elevation: T,
    pub radius: T,
    /// Vertical field of view in degrees.
    pub fov: T,
    pub width: usize,
    pub height: usize,
    /// World→camera, row-major 4×4.
    pub extrinsic: [[T; 4]; 4],
    pub intrinsic: [[T; 3]; 3],
}

impl<T: Real> CameraPose<T> {
    /// Camera on a sphere of `radius` around the origin, looking at it.
    pub fn look_at_origin(azimuth: T, elevation: T, radius: T, fov: T, width: usize, height: usize) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(invalid(format!("orbit radius must be positive, got {radius}")));
        }
        if !(fov > T::zero() && fov < lit(180.0)) {
            return Err(invalid(format!("field of view must lie in (0, 180) degrees, got {fov}")));
        }
        if !(elevation.abs() < lit(90.0)) {
            return Err(invalid(format!("elevation must lie in (-90, 90) degrees, got {elevation}")));
        }
        if width == 0 || height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        let (sa, ca) = azimuth.to_radians().sin_cos();
        let (se, ce) = elevation.to_radians().sin_cos();
        let eye = [radius * ce * sa, radius * se, radius * ce * ca];
        let forward = normalize([-eye[0], -eye[1], -eye[2]]);
        let up = [T::zero(), T::one(), T::zero()];
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        let rot = [right, down, forward];
        let t = mat_vec(&rot, eye);
        let (z, o) = (T::zero(), T::one());
        let extrinsic =
            [[rot[0][0], rot[0][1], rot[0][2], -t[0]], [rot[1][0], rot[1][1], rot[1][2], -t[1]], [rot[2][0], rot[2][1], rot[2][2], -t[2]], [z, z, z, o]];
        let f = lit::<T>(height as f64 / 2.0) / (fov.to_radians() / lit(2.0)).tan();
        let intrinsic = [[f, z, lit(width as f64 / 2.0)], [z, f, lit(height as f64 / 2.0)], [z, z, o]];
        Ok(CameraPose { azimuth, elevation, radius, fov, width, height, extrinsic, intrinsic })
    }

    pub fn focal(&self) -> T {
        self.intrinsic[0][0]
    }

    pub fn principal_point(&self) -> [T; 2] {
        [self.intrinsic[0][2], self.intrinsic[1][2]]
    }

    pub fn rotation(&self) -> Mat3<T> {
        let e = &self.extrinsic;
        [[e[0][0], e[0][1], e[0][2]], [e[1][0], e[1][1], e[1][2]], [e[2][0], e[2][1], e[2][2]]]
    }

    pub fn translation(&self) -> Vec3<T> {
        [self.extrinsic[0][3], self.extrinsic[1][3], self.extrinsic[2][3]]
    }

    /// Camera center in world coordinates.
    pub fn eye(&self) -> Vec3<T> {
        let t = self.translation();
        mat_t_vec(&self.rotation(), [-t[0], -t[1], -t[2]])
    }

    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        let t = self.translation();
        let c = mat_vec(&self.rotation(), p);
        [c[0] + t[0], c[1] + t[1], c[2] + t[2]]
    }

    /// Projects a world point to continuous pixel coordinates and camera depth.
    /// `None` means the point is at or behind the camera plane.
    pub fn project(&self, p: Vec3<T>) -> Option<([T; 2], T)> {
        let c = self.world_to_camera(p);
        self.project_camera(c)
    }

    pub fn project_camera(&self, c: Vec3<T>) -> Option<([T; 2], T)> {
        if !(c[2] > T::zero()) {
            return None;
        }
        let f = self.focal();
        let [cx, cy] = self.principal_point();
        Some(([f * c[0] / c[2] + cx, f * c[1] / c[2] + cy], c[2]))
    }

    /// Inverse of [`project`](Self::project) at a known depth.
    pub fn unproject(&self, pixel: [T; 2], depth: T) -> Vec3<T> {
        let f = self.focal();
        let [cx, cy] = self.principal_point();
        let c = [(pixel[0] - cx) * depth / f, (pixel[1] - cy) * depth / f, depth];
        mat_t_vec(&self.rotation(), sub(c, self.translation()))
    }
}

/// `n_frames` poses at evenly spaced azimuths `k·360/n_frames`, fixed
/// elevation, all looking at the origin.
pub fn make_static_orbit<T: Real>(n_frames: usize, elevation: T, radius: T, fov: T, width: usize, height: usize) -> Result<Vec<CameraPose<T>>> {
    if n_frames < 2 {
        return Err(invalid(format!("an orbit needs at least 2 frames, got {n_frames}")));
    }
    (0..n_frames)
        .map(|k| {
            let azimuth = lit::<T>(k as f64 * 360.0 / n_frames as f64);
            CameraPose::look_at_origin(azimuth, elevation, radius, fov, width, height)
        })
        .collect()
}

/// Writes one row per pose: `index azimuth elevation radius fov width height`
/// followed by the 16 extrinsic entries in row-major order.
pub fn write_poses<T: Real>(out: &mut impl Write, poses: &[CameraPose<T>]) -> Result<()> {
    for (i, p) in poses.iter().enumerate() {
        write!(out, "{} {:?} {:?} {:?} {:?} {} {}", i, p.azimuth.as_f64(), p.elevation.as_f64(), p.radius.as_f64(), p.fov.as_f64(), p.width, p.height)?;
        for row in &p.extrinsic {
            for v in row {
                write!(out, " {:?}", v.as_f64())?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a pose file written by [`write_poses`]. Intrinsics are rebuilt from
/// fov and size; the stored extrinsic is taken as given.
pub fn read_poses<T: Real>(input: impl BufRead, name: &str) -> Result<Vec<CameraPose<T>>> {
    let mut poses = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { path: name.to_string(), line: lineno + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 23 {
            return Err(err(format!("expected 23 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> { fields[i].parse::<f64>().map_err(|e| err(format!("field {}: {e}", i + 1))) };
        let int = |i: usize| -> Result<usize> { fields[i].parse::<usize>().map_err(|e| err(format!("field {}: {e}", i + 1))) };
        let mut pose = CameraPose::look_at_origin(lit(num(1)?), lit(num(2)?), lit(num(3)?), lit(num(4)?), int(5)?, int(6)?)?;
        for r in 0..4 {
            for c in 0..4 {
                pose.extrinsic[r][c] = lit(num(7 + 4 * r + c)?);
            }
        }
        poses.push(pose);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{mat_mul, norm, transpose};

    fn orbit21() -> Vec<CameraPose<f64>> {
        make_static_orbit(21, 0.0, 2.7, 33.8, 576, 576).unwrap()
    }

    #[test]
    fn twenty_one_frame_azimuths() {
        let poses = orbit21();
        for (k, p) in poses.iter().enumerate() {
            assert!((p.azimuth - k as f64 * 360.0 / 21.0).abs() < 1e-12);
            assert_eq!(p.elevation, 0.0);
        }
        assert!((poses[1].azimuth - 17.142857142857142).abs() < 1e-12);
        let gaps: f64 = poses.windows(2).map(|w| w[1].azimuth - w[0].azimuth).sum::<f64>() + (360.0 - poses[20].azimuth);
        assert!((gaps - 360.0).abs() < 1e-9);
    }

    #[test]
    fn four_frame_orbit() {
        let poses = make_static_orbit::<f64>(4, 0.0, 1.0, 40.0, 32, 32).unwrap();
        let az: Vec<f64> = poses.iter().map(|p| p.azimuth).collect();
        assert_eq!(az, vec![0.0, 90.0, 180.0, 270.0]);
    }

    #[test]
    fn origin_projects_to_image_center() {
        for p in orbit21().iter().chain(make_static_orbit(21, 20.0, 3.0, 50.0, 256, 128).unwrap().iter()) {
            let (px, depth) = p.project([0.0, 0.0, 0.0]).unwrap();
            assert!((px[0] - p.width as f64 / 2.0).abs() < 1e-9);
            assert!((px[1] - p.height as f64 / 2.0).abs() < 1e-9);
            assert!((depth - p.radius).abs() < 1e-9);
        }
    }

    #[test]
    fn extrinsic_rotation_is_orthonormal() {
        for p in orbit21() {
            let r = p.rotation();
            let rrt = mat_mul(&r, &transpose(&r));
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((rrt[i][j] - e).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn focal_from_fov() {
        let p = CameraPose::<f64>::look_at_origin(0.0, 0.0, 2.0, 90.0, 100, 100).unwrap();
        assert!((p.focal() - 50.0).abs() < 1e-12);
        // A point depth·tan(45°) above the axis lands on the top frustum edge.
        let depth = 2.0;
        let (px, _) = p.project_camera([0.0, -depth, depth]).unwrap();
        assert!(px[1].abs() < 1e-9);
        let (px, _) = p.project_camera([0.0, depth, depth]).unwrap();
        assert!((px[1] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_culled() {
        let p = CameraPose::<f64>::look_at_origin(0.0, 0.0, 2.0, 60.0, 10, 10).unwrap();
        // The eye itself and anything behind it.
        assert!(p.project([0.0, 0.0, 2.0]).is_none());
        assert!(p.project([0.0, 0.0, 5.0]).is_none());
    }

    #[test]
    fn invalid_orbits_are_rejected() {
        assert!(make_static_orbit::<f64>(1, 0.0, 1.0, 30.0, 8, 8).is_err());
        assert!(make_static_orbit::<f64>(4, 0.0, 0.0, 30.0, 8, 8).is_err());
        assert!(make_static_orbit::<f64>(4, 0.0, -1.0, 30.0, 8, 8).is_err());
        assert!(make_static_orbit::<f64>(4, 0.0, 1.0, 180.0, 8, 8).is_err());
    }

    #[test]
    fn project_unproject_round_trip() {
        let poses = make_static_orbit::<f64>(7, 15.0, 2.7, 33.8, 256, 256).unwrap();
        let pts = [[0.1, 0.2, -0.3], [0.5, -0.4, 0.2], [-0.7, 0.9, 0.6]];
        for pose in &poses {
            for &p in &pts {
                let (px, d) = pose.project(p).unwrap();
                let back = pose.unproject(px, d);
                assert!(norm(sub(back, p)) < 1e-6);
            }
        }
    }

    #[test]
    fn doubling_focal_and_size_doubles_offsets() {
        let a = CameraPose::<f64>::look_at_origin(30.0, 10.0, 2.7, 33.8, 100, 100).unwrap();
        let mut b = CameraPose::<f64>::look_at_origin(30.0, 10.0, 2.7, 33.8, 200, 200).unwrap();
        assert!((b.focal() - 2.0 * a.focal()).abs() < 1e-9);
        b.extrinsic = a.extrinsic;
        let p = [0.3, -0.2, 0.1];
        let (pa, _) = a.project(p).unwrap();
        let (pb, _) = b.project(p).unwrap();
        for k in 0..2 {
            let oa = pa[k] - 50.0;
            let ob = pb[k] - 100.0;
            assert!((ob - 2.0 * oa).abs() < 1e-6);
        }
    }

    #[test]
    fn extrinsics_preserve_distances() {
        let p = CameraPose::<f64>::look_at_origin(123.0, -30.0, 2.7, 33.8, 64, 64).unwrap();
        let a = [0.3, 0.1, -0.8];
        let b = [-1.2, 0.5, 0.4];
        let d0 = norm(sub(a, b));
        let d1 = norm(sub(p.world_to_camera(a), p.world_to_camera(b)));
        assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn pose_file_round_trip() {
        let poses = make_static_orbit::<f64>(5, 10.0, 2.7, 33.8, 64, 48).unwrap();
        let mut buf = Vec::new();
        write_poses(&mut buf, &poses).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap().split_whitespace().count(), 23);
        let back = read_poses::<f64>(&buf[..], "poses.txt").unwrap();
        assert_eq!(back, poses);
    }
}
