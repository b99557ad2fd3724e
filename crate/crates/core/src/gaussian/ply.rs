//! Binary little-endian PLY for Gaussian sets.
//!
//! One vertex element with scalar properties, in this order:
//! `x y z red green blue opacity scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3`.
//! Colors and opacity are in `[0, 1]`; the quaternion is `[w, x, y, z]`. The
//! property type is `float` or `double` depending on the scalar.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::scalar::Real;

pub const PLY_PROPERTIES: [&str; 14] = ["x", "y", "z", "red", "green", "blue", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"];

fn type_name(bytes: usize) -> &'static str {
    if bytes == 4 {
        "float"
    } else {
        "double"
    }
}

pub fn encode_ply<T: Real>(g: &GaussianSet<T>) -> Vec<u8> {
    let mut out = format!("ply\nformat binary_little_endian 1.0\ncomment orbit-splat gaussians\nelement vertex {}\n", g.len()).into_bytes();
    for p in PLY_PROPERTIES {
        out.extend_from_slice(format!("property {} {p}\n", type_name(T::BYTES)).as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for i in 0..g.len() {
        let row = g.centers[i].iter().chain(&g.colors[i]).chain(std::iter::once(&g.opacities[i])).chain(&g.scales[i]).chain(&g.rotations[i]);
        for v in row {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn write_ply<T: Real>(path: &Path, g: &GaussianSet<T>) -> Result<()> {
    std::fs::write(path, encode_ply(g))?;
    Ok(())
}

/// Reads a file produced by [`encode_ply`]. Properties may be `float` or
/// `double` independently of `T`, but must be the ones listed above, in order.
pub fn decode_ply<T: Real>(bytes: &[u8], path: &Path) -> Result<GaussianSet<T>> {
    let corrupt = |m: String| Error::Corrupt { path: path.to_path_buf(), message: m };
    let marker = b"end_header\n";
    let end = bytes.windows(marker.len()).position(|w| w == marker).ok_or_else(|| corrupt("no end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(corrupt("missing ply magic".into()));
    }
    let mut count = None;
    let mut sizes = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(corrupt(format!("unsupported format {other}"))),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| corrupt(format!("bad vertex count {n}")))?),
            ["element", name, ..] => return Err(corrupt(format!("unexpected element {name}"))),
            ["property", ty, name] => {
                let k = sizes.len();
                if PLY_PROPERTIES.get(k) != Some(name) {
                    return Err(corrupt(format!("property {} is `{name}`, expected `{}`", k + 1, PLY_PROPERTIES.get(k).unwrap_or(&"nothing"))));
                }
                sizes.push(match *ty {
                    "float" => 4,
                    "double" => 8,
                    _ => return Err(corrupt(format!("property {name} has unsupported type {ty}"))),
                });
            }
            _ => return Err(corrupt(format!("unexpected header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| corrupt("no vertex element".into()))?;
    if sizes.len() != PLY_PROPERTIES.len() {
        return Err(corrupt(format!("{} properties, expected {}", sizes.len(), PLY_PROPERTIES.len())));
    }
    let stride: usize = sizes.iter().sum();
    let body = &bytes[end + marker.len()..];
    if body.len() != count * stride {
        return Err(corrupt(format!("{} data bytes for {count} vertices of {stride} bytes", body.len())));
    }
    let mut g = GaussianSet::default();
    for rec in body.chunks_exact(stride) {
        let mut at = 0;
        let v: Vec<T> = sizes
            .iter()
            .map(|&s| {
                let x = if s == 4 { T::lit(f32::read_le(&rec[at..]) as f64) } else { T::lit(f64::read_le(&rec[at..])) };
                at += s;
                x
            })
            .collect();
        g.push([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6], [v[7], v[8], v[9]], [v[10], v[11], v[12], v[13]]);
    }
    Ok(g)
}

pub fn read_ply<T: Real>(path: &Path) -> Result<GaussianSet<T>> {
    decode_ply(&std::fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GaussianSet<f32> {
        let mut g = GaussianSet::default();
        g.push([0.1, -0.2, 0.3], [0.5, 0.25, 1.0], 0.75, [0.01, 0.02, 0.03], [1.0, 0.0, 0.0, 0.0]);
        g.push([1e-7, 3.5, -9.0], [0.0, 1.0, 0.125], 1.0, [0.5, 0.5, 0.5], [0.5, 0.5, 0.5, 0.5]);
        g
    }

    #[test]
    fn round_trip_is_exact() {
        let g = sample();
        let back: GaussianSet<f32> = decode_ply(&encode_ply(&g), Path::new("t.ply")).unwrap();
        assert_eq!(back, g);
        let g64: GaussianSet<f64> = decode_ply(&encode_ply(&g), Path::new("t.ply")).unwrap();
        assert_eq!(g64.centers[1][2], -9.0);
    }

    #[test]
    fn header_lists_every_property() {
        let bytes = encode_ply(&sample());
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("ply\nformat binary_little_endian 1.0\n"));
        assert!(text.contains("element vertex 2\n"));
        assert!(text.contains("property float rot_3\n"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut bytes = encode_ply(&sample());
        bytes.pop();
        assert!(matches!(decode_ply::<f32>(&bytes, Path::new("t.ply")), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn wrong_property_order_is_rejected() {
        let bytes = encode_ply(&sample());
        let text = String::from_utf8_lossy(&bytes).replacen("property float red\nproperty float green", "property float green\nproperty float red", 1);
        assert!(decode_ply::<f32>(text.as_bytes(), Path::new("t.ply")).is_err());
    }
}
