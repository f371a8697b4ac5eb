//! Mesh ingestion: OFF-style indexed text and binary STL.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::IoError;
use crate::geometry::Vec3;
use crate::lidar_sim::TriangleMesh;

fn mesh_err(e: impl std::fmt::Display) -> IoError {
    IoError::Mesh(e.to_string())
}

/// Reads `OFF` text: optional `OFF` keyword, a `vertices faces edges`
/// line, vertex coordinates, then faces as `n i0 .. i(n-1)`. Polygons are
/// fan-triangulated.
pub fn read_off<R: BufRead>(r: R) -> Result<TriangleMesh, IoError> {
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("");
        tokens.extend(body.split_whitespace().map(|t| (no + 1, t.to_string())));
    }
    let mut it = tokens.into_iter().peekable();
    if it.peek().is_some_and(|(_, t)| t == "OFF") {
        it.next();
    }
    let mut next_num = |what: &str| -> Result<(usize, String), IoError> {
        it.next()
            .ok_or_else(|| IoError::Truncated(format!("OFF file ends before {what}")))
    };
    let parse_usize = |(line, t): (usize, String)| {
        t.parse::<usize>()
            .map_err(|e| IoError::Parse { line, msg: format!("'{t}': {e}") })
    };
    let parse_f64 = |(line, t): (usize, String)| {
        t.parse::<f64>()
            .map_err(|e| IoError::Parse { line, msg: format!("'{t}': {e}") })
    };
    let nv = parse_usize(next_num("the vertex count")?)?;
    let nf = parse_usize(next_num("the face count")?)?;
    let _ne = parse_usize(next_num("the edge count")?)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = parse_f64(next_num("a vertex")?)?;
        let y = parse_f64(next_num("a vertex")?)?;
        let z = parse_f64(next_num("a vertex")?)?;
        vertices.push(Vec3::new(x, y, z));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let n = parse_usize(next_num("a face")?)?;
        let idx: Vec<u32> = (0..n)
            .map(|_| parse_usize(next_num("a face index")?).map(|v| v as u32))
            .collect::<Result<_, _>>()?;
        for k in 1..n.saturating_sub(1) {
            triangles.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    TriangleMesh::new(vertices, triangles).map_err(mesh_err)
}

pub fn write_off<W: Write>(w: &mut W, mesh: &TriangleMesh) -> Result<(), IoError> {
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} 0", mesh.vertices().len(), mesh.triangle_count())?;
    for v in mesh.vertices() {
        writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
    }
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

/// Reads binary STL; every facet gets its own three vertices.
pub fn read_stl<R: Read>(mut r: R) -> Result<TriangleMesh, IoError> {
    let mut head = [0u8; 84];
    r.read_exact(&mut head)
        .map_err(|_| IoError::Truncated("STL header".into()))?;
    let n = u32::from_le_bytes(head[80..84].try_into().unwrap()) as usize;
    let mut vertices = Vec::with_capacity(3 * n);
    let mut triangles = Vec::with_capacity(n);
    let mut rec = [0u8; 50];
    for i in 0..n {
        r.read_exact(&mut rec)
            .map_err(|_| IoError::Truncated(format!("STL facet {i}")))?;
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
        let base = vertices.len() as u32;
        for v in 0..3 {
            let o = 12 + 12 * v;
            vertices.push(Vec3::new(f(o), f(o + 4), f(o + 8)));
        }
        triangles.push([base, base + 1, base + 2]);
    }
    TriangleMesh::new(vertices, triangles).map_err(mesh_err)
}

pub fn write_stl<W: Write>(w: &mut W, mesh: &TriangleMesh) -> Result<(), IoError> {
    let mut head = [0u8; 80];
    head[..7].copy_from_slice(b"skyscan");
    w.write_all(&head)?;
    w.write_all(&(mesh.triangle_count() as u32).to_le_bytes())?;
    for t in 0..mesh.triangle_count() {
        let n = mesh.normals()[t];
        for v in std::iter::once(n).chain(mesh.triangle(t)) {
            for c in [v.x, v.y, v.z] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        w.write_all(&[0, 0])?;
    }
    Ok(())
}

/// Dispatches on the `.stl` or `.off` extension.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh, IoError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let r = super::open(path)?;
    match ext.as_deref() {
        Some("stl") => read_stl(r),
        Some("off") => read_off(r),
        _ => Err(IoError::Mesh(format!(
            "{}: expected a .off or .stl file",
            path.display()
        ))),
    }
}
