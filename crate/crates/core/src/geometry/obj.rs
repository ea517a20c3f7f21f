use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{TriangleMesh, Vec3};
use crate::error::{Error, Result};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Resolves one `f` token (`i`, `i/t`, `i//n`, `i/t/n`) to a 0-based index.
/// Negative indices count back from the most recent vertex.
fn face_index(token: &str, vertex_count: usize, line: usize) -> Result<u32> {
    let head = token.split('/').next().unwrap_or("");
    let i: i64 = head
        .parse()
        .map_err(|_| parse_err(line, format!("bad face index {token:?}")))?;
    let resolved = match i {
        0 => return Err(parse_err(line, "face index 0 (indices are 1-based)")),
        i if i > 0 => i - 1,
        i => vertex_count as i64 + i,
    };
    if resolved < 0 || resolved as usize >= vertex_count {
        return Err(parse_err(
            line,
            format!("face index {i} out of range for {vertex_count} vertices"),
        ));
    }
    Ok(resolved as u32)
}

/// Parses ASCII Wavefront OBJ. Only `v` and `f` records are used; polygons
/// are fan-triangulated from their first vertex.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(line, format!("bad vertex: {e}")))?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(parse_err(line, "vertex needs three finite coordinates"));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx = tokens
                    .map(|t| face_index(t, vertices.len(), line))
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(line, "face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    parse_obj(&fs::read_to_string(path)?)
}

/// Like [`load_mesh`] but rejects meshes that are not closed 2-manifolds.
pub fn load_watertight_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let mesh = load_mesh(path)?;
    match mesh.first_open_edge() {
        Some(reason) => Err(Error::NonManifold(reason)),
        None if mesh.is_empty() => Err(Error::NonManifold("mesh has no faces".into())),
        None => Ok(mesh),
    }
}

pub fn write_obj(mesh: &TriangleMesh, out: impl Write) -> Result<()> {
    let mut w = BufWriter::new(out);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    write_obj(mesh, fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3
f 1 3 2
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

    #[test]
    fn cube_is_watertight() {
        let m = parse_obj(CUBE).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (8, 12));
        assert!(m.is_watertight());
        assert!(m.volume() > 0.0);
    }

    #[test]
    fn quads_are_fan_triangulated() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/1 3//1 4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices_are_relative() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn zero_index_is_a_parse_error() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn malformed_records_are_parse_errors() {
        assert!(matches!(parse_obj("v 1 2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_obj("v 1 2 x\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_obj("v 0 0 0\nf 1 2 3\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn open_mesh_rejected_when_watertight_required() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("open.obj");
        fs::write(&path, CUBE.lines().take(20).collect::<Vec<_>>().join("\n")).unwrap();
        assert!(load_mesh(&path).is_ok());
        assert!(matches!(load_watertight_mesh(&path), Err(Error::NonManifold(_))));
    }

    #[test]
    fn written_obj_parses_back() {
        let m = parse_obj(CUBE).unwrap();
        let mut buf = Vec::new();
        write_obj(&m, &mut buf).unwrap();
        assert_eq!(parse_obj(std::str::from_utf8(&buf).unwrap()).unwrap(), m);
    }
}
