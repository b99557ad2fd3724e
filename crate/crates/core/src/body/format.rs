//! The `.body` asset format.
//!
//! Plain text, whitespace separated, `#` starts a comment line. Blocks appear
//! in this order, each introduced by a keyword and a row count:
//!
//! ```text
//! body 1                 format tag and version
//! vertices V             V rows: x y z
//! faces F                F rows: i j k (0-based vertex indices)
//! joints J               J rows: x y z (rest-pose joint positions)
//! parents J              J rows: parent index, -1 for the root (joint 0)
//! weights V              V rows: n j1 w1 ... jn wn   (1 ≤ n ≤ 4)
//! uv V                   V rows: u v in [0,1]
//! shapes K               optional; K components follow, each as
//!                        V rows of vertex offsets then J rows of joint offsets
//! ```
//!
//! Loading validates the asset and rescales it into the unit sphere centered
//! at the origin.

use std::fmt::Write as _;
use std::path::Path;

use crate::body::{ShapeComponent, SparseWeights, TemplateBody};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::{lit, Real};

const MAX_INFLUENCES: usize = 4;

struct Lines<'a> {
    name: &'a str,
    rows: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(name: &'a str, text: &'a str) -> Self {
        let rows = text
            .lines()
            .enumerate()
            .filter_map(|(i, l)| {
                let l = l.trim();
                (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split_whitespace().collect()))
            })
            .collect();
        Lines { name, rows, pos: 0 }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse { path: self.name.to_string(), line, message: message.into() }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let row = self.rows.get(self.pos).cloned().ok_or_else(|| self.err(self.rows.last().map_or(0, |r| r.0), format!("unexpected end of file in {what}")))?;
        self.pos += 1;
        Ok(row)
    }

    fn peek_keyword(&self) -> Option<&'a str> {
        self.rows.get(self.pos).map(|r| r.1[0])
    }

    fn header(&mut self, keyword: &str) -> Result<usize> {
        let (line, f) = self.next(keyword)?;
        if f.len() != 2 || f[0] != keyword {
            return Err(self.err(line, format!("expected `{keyword} <count>`")));
        }
        f[1].parse().map_err(|e| self.err(line, format!("bad {keyword} count: {e}")))
    }

    fn numbers<T: Real>(&mut self, what: &str, n: usize) -> Result<Vec<T>> {
        let (line, f) = self.next(what)?;
        if f.len() != n {
            return Err(self.err(line, format!("{what}: expected {n} values, found {}", f.len())));
        }
        f.iter().map(|s| s.parse::<f64>().map(lit).map_err(|e| self.err(line, format!("{what}: {e}")))).collect()
    }

    fn vec3s<T: Real>(&mut self, what: &str, n: usize) -> Result<Vec<Vec3<T>>> {
        (0..n).map(|_| self.numbers::<T>(what, 3).map(|v| [v[0], v[1], v[2]])).collect()
    }
}

/// Parses `.body` text; `name` is used in error messages.
pub fn parse_template<T: Real>(text: &str, name: &str) -> Result<TemplateBody<T>> {
    let mut lines = Lines::new(name, text);
    let (line, f) = lines.next("header")?;
    if f != ["body", "1"] {
        return Err(lines.err(line, "expected `body 1` header"));
    }
    let nv = lines.header("vertices")?;
    let vertices = lines.vec3s("vertex", nv)?;

    let nf = lines.header("faces")?;
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, f) = lines.next("face")?;
        let idx: Result<Vec<usize>> = f.iter().map(|s| s.parse::<usize>().map_err(|e| lines.err(line, format!("face: {e}")))).collect();
        let idx = idx?;
        if idx.len() != 3 {
            return Err(lines.err(line, "face rows need exactly 3 indices"));
        }
        faces.push([idx[0], idx[1], idx[2]]);
    }

    let nj = lines.header("joints")?;
    let joints = lines.vec3s("joint", nj)?;

    let np = lines.header("parents")?;
    let mut parents = Vec::with_capacity(np);
    for _ in 0..np {
        let (line, f) = lines.next("parent")?;
        let p: i64 = f
            .first()
            .filter(|_| f.len() == 1)
            .ok_or_else(|| lines.err(line, "parent rows hold a single index"))?
            .parse()
            .map_err(|e| lines.err(line, format!("parent: {e}")))?;
        parents.push(if p < 0 { None } else { Some(p as usize) });
    }

    let nw = lines.header("weights")?;
    let mut weights = SparseWeights::default();
    for vi in 0..nw {
        let (line, f) = lines.next("weights")?;
        let n: usize = f[0].parse().map_err(|e| lines.err(line, format!("influence count: {e}")))?;
        if n == 0 || n > MAX_INFLUENCES || f.len() != 1 + 2 * n {
            return Err(lines.err(line, format!("vertex {vi}: malformed weight row (1..=4 influences)")));
        }
        let mut row = Vec::with_capacity(n);
        for k in 0..n {
            let j: usize = f[1 + 2 * k].parse().map_err(|e| lines.err(line, format!("joint index: {e}")))?;
            let w: f64 = f[2 + 2 * k].parse().map_err(|e| lines.err(line, format!("weight: {e}")))?;
            row.push((j, lit::<T>(w)));
        }
        weights.push_row(row);
    }

    let nuv = lines.header("uv")?;
    let mut uv = Vec::with_capacity(nuv);
    for _ in 0..nuv {
        let v = lines.numbers::<T>("uv", 2)?;
        uv.push([v[0], v[1]]);
    }

    let mut shapes = Vec::new();
    if lines.peek_keyword() == Some("shapes") {
        let k = lines.header("shapes")?;
        for _ in 0..k {
            let vertex_offsets = lines.vec3s("shape vertex offset", nv)?;
            let joint_offsets = lines.vec3s("shape joint offset", nj)?;
            shapes.push(ShapeComponent { vertex_offsets, joint_offsets });
        }
    }
    if lines.pos != lines.rows.len() {
        let line = lines.rows[lines.pos].0;
        return Err(lines.err(line, "trailing content after the last block"));
    }

    let mut body = TemplateBody::new(vertices, faces, joints, parents, weights, uv, shapes)?;
    body.normalize();
    Ok(body)
}

pub fn load_template<T: Real>(path: &Path) -> Result<TemplateBody<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_template(&text, &path.display().to_string())
}

/// Serializes a template with full `f64` round-trip precision.
pub fn write_template<T: Real>(body: &TemplateBody<T>) -> String {
    let mut s = String::new();
    let v3 = |s: &mut String, v: &Vec3<T>| {
        let _ = writeln!(s, "{:?} {:?} {:?}", v[0].as_f64(), v[1].as_f64(), v[2].as_f64());
    };
    let _ = writeln!(s, "body 1");
    let _ = writeln!(s, "vertices {}", body.vertices.len());
    body.vertices.iter().for_each(|v| v3(&mut s, v));
    let _ = writeln!(s, "faces {}", body.faces.len());
    for f in &body.faces {
        let _ = writeln!(s, "{} {} {}", f[0], f[1], f[2]);
    }
    let _ = writeln!(s, "joints {}", body.joints.len());
    body.joints.iter().for_each(|v| v3(&mut s, v));
    let _ = writeln!(s, "parents {}", body.parents.len());
    for p in &body.parents {
        let _ = writeln!(s, "{}", p.map_or(-1, |p| p as i64));
    }
    let _ = writeln!(s, "weights {}", body.skin_weights.len());
    for i in 0..body.skin_weights.len() {
        let row: Vec<(usize, T)> = body.skin_weights.row(i).collect();
        let _ = write!(s, "{}", row.len());
        for (j, w) in row {
            let _ = write!(s, " {} {:?}", j, w.as_f64());
        }
        s.push('\n');
    }
    let _ = writeln!(s, "uv {}", body.uv_coords.len());
    for uv in &body.uv_coords {
        let _ = writeln!(s, "{:?} {:?}", uv[0].as_f64(), uv[1].as_f64());
    }
    if !body.shape_basis.is_empty() {
        let _ = writeln!(s, "shapes {}", body.shape_basis.len());
        for c in &body.shape_basis {
            c.vertex_offsets.iter().chain(&c.joint_offsets).for_each(|v| v3(&mut s, v));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "\
body 1
vertices 3
0 0 0
2 0 0
0 2 0
faces 1
0 1 2
joints 2
0 0 0
1 0 0
parents 2
-1
0
weights 3
1 0 1.0
2 0 0.5 1 0.5
1 1 1.0
uv 3
0 0
1 0
0 1
";

    #[test]
    fn parses_and_normalizes() {
        let body: TemplateBody<f64> = parse_template(TRIANGLE, "tri.body").unwrap();
        assert_eq!(body.vertices.len(), 3);
        let r = body.vertices.iter().map(|v| crate::linalg::norm(*v)).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(body.parents, vec![None, Some(0)]);
    }

    #[test]
    fn bad_weight_sum_names_vertex() {
        let text = TRIANGLE.replace("2 0 0.5 1 0.5", "2 0 0.4 1 0.4");
        let err = parse_template::<f64>(&text, "tri.body").unwrap_err().to_string();
        assert!(err.contains("vertex 1") && err.contains("0.8"), "{err}");
    }

    #[test]
    fn parent_cycle_reported() {
        let text = TRIANGLE.replace("joints 2\n0 0 0\n1 0 0\nparents 2\n-1\n0", "joints 3\n0 0 0\n1 0 0\n2 0 0\nparents 3\n-1\n2\n1");
        let err = parse_template::<f64>(&text, "tri.body").unwrap_err().to_string();
        assert!(err.contains("not a tree"), "{err}");
    }

    #[test]
    fn truncated_file_reports_line() {
        let text: String = TRIANGLE.lines().take(9).collect::<Vec<_>>().join("\n");
        let err = parse_template::<f64>(&text, "tri.body").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn write_parse_round_trip() {
        let body: TemplateBody<f64> = parse_template(TRIANGLE, "tri.body").unwrap();
        let again: TemplateBody<f64> = parse_template(&write_template(&body), "again.body").unwrap();
        for (a, b) in body.vertices.iter().zip(&again.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
        assert_eq!(body.faces, again.faces);
        assert_eq!(body.skin_weights, again.skin_weights);
    }
}
