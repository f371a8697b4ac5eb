//! Independent reference computations shared by the integration tests.
//!
//! Everything here is deliberately written along a different route than
//! the library code it checks.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use skyscan::geometry::Vec2;
use skyscan::lidar_sim::{Ray, TriangleMesh};
use skyscan::pillars::PillarGridSpec;
use skyscan::spconv::{FeatureMap, KernelTensor, SparseFeatureMap};
use skyscan::{Box3D, LidarPoint, Vec3};

/// Raw weight lookup from the `[out][row][col][in]` layout.
fn w(kernel: &KernelTensor, o: usize, m: usize, n: usize, c: usize) -> f64 {
    let k = kernel.k();
    let cin = kernel.in_channels();
    kernel.weights()[((o * k + m) * k + n) * cin + c] as f64
}

/// Same-padded gather convolution in f64: output `(y, x)` reads input
/// `(s*y + m - k/2, s*x + n - k/2)`. Result is `oh x ow x f`, row-major.
pub fn gather_conv(input: &FeatureMap, kernel: &KernelTensor, stride: usize) -> (usize, usize, Vec<f64>) {
    let (h, wd, c) = (input.height(), input.width(), input.channels());
    let k = kernel.k();
    let f = kernel.out_channels();
    let half = (k / 2) as i64;
    let oh = h.div_ceil(stride);
    let ow = wd.div_ceil(stride);
    let mut out = vec![0.0; oh * ow * f];
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..f {
                let mut acc = 0.0;
                for m in 0..k {
                    for n in 0..k {
                        let iy = (y * stride) as i64 + m as i64 - half;
                        let ix = (x * stride) as i64 + n as i64 - half;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                            continue;
                        }
                        for ch in 0..c {
                            acc += input.get(iy as usize, ix as usize, ch) as f64 * w(kernel, o, m, n, ch);
                        }
                    }
                }
                out[(y * ow + x) * f + o] = acc;
            }
        }
    }
    (oh, ow, out)
}

/// Inserts `s - 1` zeros between input pixels (input `(i, j)` moves to
/// `(i*s, j*s)` of an `h*s x w*s` map) and runs a stride-1 gather.
pub fn transposed_oracle(input: &FeatureMap, kernel: &KernelTensor, s: usize) -> (usize, usize, Vec<f64>) {
    let (h, wd, c) = (input.height(), input.width(), input.channels());
    let mut up = FeatureMap::zeros(h * s, wd * s, c);
    for i in 0..h {
        for j in 0..wd {
            for ch in 0..c {
                up.set(i * s, j * s, ch, input.get(i, j, ch));
            }
        }
    }
    gather_conv(&up, kernel, 1)
}

pub fn max_abs_diff(a: &FeatureMap, b: &[f64]) -> f64 {
    assert_eq!(a.data().len(), b.len());
    a.data()
        .iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - y).abs())
        .fold(0.0, f64::max)
}

/// Bernoulli site selection with the given density, features in `[-1, 1)`.
pub fn random_sparse<R: Rng>(rng: &mut R, h: usize, w: usize, c: usize, density: f64) -> SparseFeatureMap {
    let mut coords = Vec::new();
    let mut feats = Vec::new();
    for r in 0..h {
        for col in 0..w {
            if rng.random::<f64>() < density {
                coords.push((r, col));
                for _ in 0..c {
                    feats.push(rng.random_range(-1.0f32..1.0));
                }
            }
        }
    }
    SparseFeatureMap::new(h, w, c, coords, feats).unwrap()
}

pub fn random_kernel<R: Rng>(rng: &mut R, k: usize, cin: usize, cout: usize) -> KernelTensor {
    let n = k * k * cin * cout;
    KernelTensor::new(k, cin, cout, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Ray against a single triangle: plane intersection, then inside test by
/// signed sub-triangle areas along the plane normal.
pub fn ray_triangle(ray: &Ray, tri: &[Vec3; 3]) -> Option<f64> {
    let [a, b, c] = *tri;
    let n = (b - a).cross(&(c - a));
    let area2 = n.norm();
    if area2 < 1e-15 {
        return None;
    }
    let denom = n.dot(&ray.dir);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = n.dot(&(a - ray.origin)) / denom;
    if t <= 1e-9 {
        return None;
    }
    let p = ray.at(t);
    let tol = -1e-12 * area2 * area2;
    let inside = [(a, b), (b, c), (c, a)]
        .iter()
        .all(|(u, v)| (v - u).cross(&(p - u)).dot(&n) >= tol);
    inside.then_some(t)
}

/// Nearest hit over every triangle: `(t, point, triangle)`.
pub fn brute_cast(ray: &Ray, mesh: &TriangleMesh) -> Option<(f64, Vec3, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for t in 0..mesh.triangle_count() {
        if let Some(d) = ray_triangle(ray, &mesh.triangle(t)) {
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, t));
            }
        }
    }
    best.map(|(d, t)| (d, ray.at(d), t))
}

fn footprint(b: &Box3D) -> [Vec2; 4] {
    let ux = Vec2::new(b.yaw.cos(), b.yaw.sin());
    let uy = Vec2::new(-ux.y, ux.x);
    let c = Vec2::new(b.center.x, b.center.y);
    let (hl, hw) = (b.size.x / 2.0, b.size.y / 2.0);
    [
        c + ux * hl + uy * hw,
        c - ux * hl + uy * hw,
        c - ux * hl - uy * hw,
        c + ux * hl - uy * hw,
    ]
}

fn in_footprint(b: &Box3D, p: &Vec2) -> bool {
    let d = p - Vec2::new(b.center.x, b.center.y);
    let lx = d.x * b.yaw.cos() + d.y * b.yaw.sin();
    let ly = -d.x * b.yaw.sin() + d.y * b.yaw.cos();
    lx.abs() <= b.size.x / 2.0 + 1e-9 && ly.abs() <= b.size.y / 2.0 + 1e-9
}

fn segment_hit(p: Vec2, p2: Vec2, q: Vec2, q2: Vec2) -> Option<Vec2> {
    let r = p2 - p;
    let s = q2 - q;
    let den = r.x * s.y - r.y * s.x;
    if den.abs() < 1e-14 {
        return None;
    }
    let qp = q - p;
    let t = (qp.x * s.y - qp.y * s.x) / den;
    let u = (qp.x * r.y - qp.y * r.x) / den;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| p + r * t)
}

/// Footprint overlap by vertex enumeration: corners inside the other box
/// plus all edge crossings, ordered by angle and integrated.
pub fn bev_overlap_oracle(a: &Box3D, b: &Box3D) -> f64 {
    let ca = footprint(a);
    let cb = footprint(b);
    let mut pts: Vec<Vec2> = ca.iter().filter(|p| in_footprint(b, p)).copied().collect();
    pts.extend(cb.iter().filter(|p| in_footprint(a, p)));
    for i in 0..4 {
        for j in 0..4 {
            if let Some(p) = segment_hit(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]) {
                pts.push(p);
            }
        }
    }
    if pts.len() < 3 {
        return 0.0;
    }
    let centroid = pts.iter().sum::<Vec2>() / pts.len() as f64;
    pts.sort_by(|p, q| {
        let ap = (p.y - centroid.y).atan2(p.x - centroid.x);
        let aq = (q.y - centroid.y).atan2(q.x - centroid.x);
        ap.total_cmp(&aq)
    });
    let mut area = 0.0;
    for i in 0..pts.len() {
        let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
        area += p.x * q.y - q.x * p.y;
    }
    area.abs() / 2.0
}

pub fn iou3d_oracle(a: &Box3D, b: &Box3D) -> f64 {
    let z = (a.center.z + a.size.z / 2.0).min(b.center.z + b.size.z / 2.0)
        - (a.center.z - a.size.z / 2.0).max(b.center.z - b.size.z / 2.0);
    if z <= 0.0 {
        return 0.0;
    }
    let inter = bev_overlap_oracle(a, b) * z;
    let va = a.size.x * a.size.y * a.size.z;
    let vb = b.size.x * b.size.y * b.size.z;
    inter / (va + vb - inter)
}

/// Cell key per in-range point by floor division, points grouped in input
/// order and then sorted by time.
pub fn naive_pillars(points: &[LidarPoint], g: &PillarGridSpec) -> BTreeMap<(usize, usize), Vec<LidarPoint>> {
    let mut out: BTreeMap<(usize, usize), Vec<LidarPoint>> = BTreeMap::new();
    let cols = ((g.x_max - g.x_min) / g.cell_size).round() as i64;
    let rows = ((g.y_max - g.y_min) / g.cell_size).round() as i64;
    for p in points {
        if p.z < g.z_min || p.z >= g.z_max || p.x < g.x_min || p.x >= g.x_max || p.y < g.y_min || p.y >= g.y_max {
            continue;
        }
        let col = ((p.x - g.x_min) / g.cell_size).floor() as i64;
        let row = ((p.y - g.y_min) / g.cell_size).floor() as i64;
        if col < cols && row < rows {
            out.entry((row as usize, col as usize)).or_default().push(*p);
        }
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.t_us.total_cmp(&b.t_us));
    }
    out
}

/// Keeps a box unless some higher-ranked kept box overlaps it by more than
/// `thr`, ranking by score and then by anchor index.
pub fn nms_oracle(boxes: &[(Box3D, f64, usize)], thr: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..boxes.len()).collect();
    idx.sort_by(|&a, &b| boxes[b].1.total_cmp(&boxes[a].1).then(boxes[a].2.cmp(&boxes[b].2)));
    let mut kept: Vec<usize> = Vec::new();
    for i in idx {
        if kept.iter().all(|&k| iou3d_oracle(&boxes[k].0, &boxes[i].0) <= thr) {
            kept.push(i);
        }
    }
    kept
}

/// Largest matching with every matched pair at or above `thr`, by
/// enumerating all assignments.
pub fn optimal_matches(dets: &[Box3D], gts: &[Box3D], thr: f64) -> usize {
    fn go(d: usize, used: &mut Vec<bool>, ok: &[Vec<bool>]) -> usize {
        if d == ok.len() {
            return 0;
        }
        let mut best = go(d + 1, used, ok);
        for g in 0..used.len() {
            if !used[g] && ok[d][g] {
                used[g] = true;
                best = best.max(1 + go(d + 1, used, ok));
                used[g] = false;
            }
        }
        best
    }
    let ok: Vec<Vec<bool>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| iou3d_oracle(d, g) >= thr).collect())
        .collect();
    go(0, &mut vec![false; gts.len()], &ok)
}

/// Cubic lattice of `n^3` points with the given spacing, centered on `c`.
pub fn lattice(c: Vec3, n: usize, spacing: f64, t_us: f64) -> Vec<LidarPoint> {
    let off = (n as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = c + Vec3::new(i as f64 - off, j as f64 - off, k as f64 - off) * spacing;
                out.push(LidarPoint::new(p.x, p.y, p.z, 0.5, t_us));
            }
        }
    }
    out
}

/// LAS 1.2 PRF3 file assembled byte by byte: one 60-byte variable length
/// record before the points, record length 34, three points.
pub fn hand_las() -> Vec<u8> {
    let mut h = vec![0u8; 227];
    h[0..4].copy_from_slice(b"LASF");
    h[24] = 1;
    h[25] = 2;
    h[94..96].copy_from_slice(&227u16.to_le_bytes());
    h[96..100].copy_from_slice(&(227u32 + 60).to_le_bytes());
    h[100..104].copy_from_slice(&1u32.to_le_bytes());
    h[104] = 3;
    h[105..107].copy_from_slice(&34u16.to_le_bytes());
    h[107..111].copy_from_slice(&3u32.to_le_bytes());
    for (i, v) in [0.01f64, 0.01, 0.001, 100.0, -50.0, 2.0].iter().enumerate() {
        h[131 + 8 * i..139 + 8 * i].copy_from_slice(&v.to_le_bytes());
    }
    h.extend(std::iter::repeat_n(0xAB, 60));
    let records: [(i32, i32, i32, u16, f64); 3] = [
        (0, 0, 0, 0, 0.0),
        (150, -2500, 1750, 65535, 0.25),
        (-10000, 5000, -2000, 13107, 1.5),
    ];
    for (x, y, z, i, t) in records {
        let mut r = vec![0u8; 34];
        r[0..4].copy_from_slice(&x.to_le_bytes());
        r[4..8].copy_from_slice(&y.to_le_bytes());
        r[8..12].copy_from_slice(&z.to_le_bytes());
        r[12..14].copy_from_slice(&i.to_le_bytes());
        r[20..28].copy_from_slice(&t.to_le_bytes());
        h.extend(r);
    }
    h
}
