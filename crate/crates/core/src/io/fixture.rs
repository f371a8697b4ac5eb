//! Text fixtures for sparse feature maps and kernels.
//!
//! Sparse maps: a `# sparse H W C` line, then `row col v0 .. v(C-1)` per
//! active site. Kernels: a `# kernel K IN OUT` line, then one line of `IN`
//! weights per `(out, row, col)` in row-major order.

use std::io::{BufRead, Write};

use super::IoError;
use crate::spconv::{KernelTensor, SparseFeatureMap};

fn header(line: &str, tag: &str, no: usize) -> Result<[usize; 3], IoError> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let err = |msg: String| IoError::Parse { line: no, msg };
    if parts.len() != 5 || parts[0] != "#" || parts[1] != tag {
        return Err(err(format!("expected '# {tag} a b c'")));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(&parts[2..]) {
        *o = p.parse().map_err(|e| err(format!("'{p}': {e}")))?;
    }
    Ok(out)
}

fn numbered_lines<R: BufRead>(r: R) -> Result<Vec<(usize, String)>, IoError> {
    let mut out = Vec::new();
    for (i, l) in r.lines().enumerate() {
        let l = l?;
        if !l.trim().is_empty() {
            out.push((i + 1, l));
        }
    }
    Ok(out)
}

fn conv_err(line: usize) -> impl Fn(crate::spconv::ConvError) -> IoError {
    move |e| IoError::Parse {
        line,
        msg: e.to_string(),
    }
}

pub fn write_sparse<W: Write>(w: &mut W, m: &SparseFeatureMap) -> Result<(), IoError> {
    writeln!(w, "# sparse {} {} {}", m.height(), m.width(), m.channels())?;
    for (i, (r, c)) in m.coords().iter().enumerate() {
        write!(w, "{r} {c}")?;
        for v in m.feature(i) {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Sites may appear in any order.
pub fn read_sparse<R: BufRead>(r: R) -> Result<SparseFeatureMap, IoError> {
    let lines = numbered_lines(r)?;
    let (first_no, first) = lines
        .first()
        .ok_or_else(|| IoError::Truncated("empty sparse fixture".into()))?;
    let [h, w, c] = header(first, "sparse", *first_no)?;
    let mut sites: Vec<((usize, usize), Vec<f32>)> = Vec::new();
    for (no, l) in &lines[1..] {
        let parts: Vec<&str> = l.split_whitespace().collect();
        let err = |msg: String| IoError::Parse { line: *no, msg };
        if parts.len() != 2 + c {
            return Err(err(format!("expected {} columns, found {}", 2 + c, parts.len())));
        }
        let row = parts[0].parse().map_err(|e| err(format!("row: {e}")))?;
        let col = parts[1].parse().map_err(|e| err(format!("col: {e}")))?;
        let vals = parts[2..]
            .iter()
            .map(|p| p.parse::<f32>().map_err(|e| err(format!("'{p}': {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        sites.push(((row, col), vals));
    }
    sites.sort_by_key(|s| s.0);
    let coords = sites.iter().map(|s| s.0).collect();
    let feats = sites.into_iter().flat_map(|s| s.1).collect();
    SparseFeatureMap::new(h, w, c, coords, feats).map_err(conv_err(*first_no))
}

pub fn write_kernel<W: Write>(w: &mut W, k: &KernelTensor) -> Result<(), IoError> {
    writeln!(w, "# kernel {} {} {}", k.k(), k.in_channels(), k.out_channels())?;
    for row in k.weights().chunks(k.in_channels()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_kernel<R: BufRead>(r: R) -> Result<KernelTensor, IoError> {
    let lines = numbered_lines(r)?;
    let (first_no, first) = lines
        .first()
        .ok_or_else(|| IoError::Truncated("empty kernel fixture".into()))?;
    let [k, cin, cout] = header(first, "kernel", *first_no)?;
    let mut weights = Vec::with_capacity(k * k * cin * cout);
    for (no, l) in &lines[1..] {
        for p in l.split_whitespace() {
            weights.push(p.parse::<f32>().map_err(|e| IoError::Parse {
                line: *no,
                msg: format!("'{p}': {e}"),
            })?);
        }
    }
    KernelTensor::new(k, cin, cout, weights).map_err(conv_err(*first_no))
}
