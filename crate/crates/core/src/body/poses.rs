//! Per-frame pose files: one row per frame, `index θ[J×3] t[3]`, whitespace
//! separated, `#` comments allowed.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::{lit, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct FramePose<T> {
    pub index: usize,
    pub theta: Vec<Vec3<T>>,
    pub translation: Vec3<T>,
}

pub fn read_pose_file<T: Real>(input: impl BufRead, name: &str, joints: usize) -> Result<Vec<FramePose<T>>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Error::Parse { path: name.to_string(), line: lineno + 1, message: m };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let expected = 1 + 3 * joints + 3;
        if fields.len() != expected {
            return Err(err(format!("expected {expected} fields for {joints} joints, found {}", fields.len())));
        }
        let index = fields[0].parse::<usize>().map_err(|e| err(format!("frame index: {e}")))?;
        let vals: Vec<T> = fields[1..].iter().map(|s| s.parse::<f64>().map(lit::<T>).map_err(|e| err(e.to_string()))).collect::<Result<_>>()?;
        let theta = vals[..3 * joints].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let t = &vals[3 * joints..];
        out.push(FramePose { index, theta, translation: [t[0], t[1], t[2]] });
    }
    Ok(out)
}

pub fn write_pose_file<T: Real>(out: &mut impl Write, poses: &[FramePose<T>]) -> Result<()> {
    for p in poses {
        write!(out, "{}", p.index)?;
        for v in p.theta.iter().chain(std::iter::once(&p.translation)) {
            for c in v {
                write!(out, " {:?}", c.as_f64())?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let poses = vec![
            FramePose { index: 1, theta: vec![[0.1, 0.2, 0.3], [0.0, -1.0, 0.5]], translation: [0.0, 0.1, 0.0] },
            FramePose { index: 2, theta: vec![[0.0; 3], [0.25, 0.0, 0.0]], translation: [1.0, 0.0, -2.0] },
        ];
        let mut buf = Vec::new();
        write_pose_file(&mut buf, &poses).unwrap();
        assert_eq!(read_pose_file::<f64>(&buf[..], "p", 2).unwrap(), poses);
    }

    #[test]
    fn wrong_field_count_names_line() {
        let err = read_pose_file::<f64>("# header\n1 0 0 0\n".as_bytes(), "poses.txt", 2).unwrap_err();
        assert!(err.to_string().starts_with("poses.txt:2"), "{err}");
    }
}
