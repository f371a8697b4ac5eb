//! Indexed triangle meshes and a procedural quadcopter.

use std::f64::consts::TAU;

use super::{Pose2D, SimError};
use crate::geometry::{rot_z, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    /// Unit normals; degenerate triangles carry `+z` and are listed in `degenerate`.
    normals: Vec<Vec3>,
    degenerate: Vec<usize>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, SimError> {
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(SimError::NonFiniteVertex(i));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(SimError::IndexOutOfRange {
                    triangle: t,
                    index,
                    vertices: vertices.len(),
                });
            }
        }
        let mut degenerate = Vec::new();
        let normals = triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let [a, b, c] = tri.map(|i| vertices[i as usize]);
                let n = (b - a).cross(&(c - a));
                let norm = n.norm();
                let scale = (b - a).norm().max((c - a).norm()).max(f64::MIN_POSITIVE);
                if norm <= 1e-12 * scale * scale {
                    degenerate.push(t);
                    Vec3::z()
                } else {
                    n / norm
                }
            })
            .collect();
        Ok(Self {
            vertices,
            triangles,
            normals,
            degenerate,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    /// Zero-area triangles, excluded from ray casting.
    pub fn degenerate(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for tri in &self.triangles {
            for &i in tri {
                let v = self.vertices[i as usize];
                lo = lo.inf(&v);
                hi = hi.sup(&v);
            }
        }
        (lo, hi)
    }

    /// Center of the bounding box; the pivot for poses.
    pub fn center(&self) -> Vec3 {
        let (lo, hi) = self.bounds();
        0.5 * (lo + hi)
    }

    pub fn extent(&self) -> Vec3 {
        let (lo, hi) = self.bounds();
        hi - lo
    }

    /// Radius of the sphere about [`Self::center`] enclosing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        let c = self.center();
        self.triangles
            .iter()
            .flatten()
            .map(|&i| (self.vertices[i as usize] - c).norm())
            .fold(0.0, f64::max)
    }

    /// Copy with every vertex moved by the pose about the mesh center.
    pub fn posed(&self, pose: &Pose2D) -> Self {
        let c = self.center();
        let r = rot_z(pose.yaw);
        let vertices = self
            .vertices
            .iter()
            .map(|v| r * (v - c) + pose.translation)
            .collect();
        let normals = self.normals.iter().map(|n| r * n).collect();
        Self {
            vertices,
            triangles: self.triangles.clone(),
            normals,
            degenerate: self.degenerate.clone(),
        }
    }

    fn append(&mut self, other: MeshBuilder) {
        let base = self.vertices.len() as u32;
        let m = TriangleMesh::new(other.vertices, other.triangles).expect("builder output is valid");
        self.vertices.extend(m.vertices);
        self.normals.extend(m.normals);
        let offset = self.triangles.len();
        self.degenerate.extend(m.degenerate.iter().map(|d| d + offset));
        self.triangles
            .extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    /// Closed axis-aligned box.
    pub fn cuboid(center: Vec3, size: Vec3) -> Self {
        let mut b = MeshBuilder::default();
        b.cuboid(center, size, 0.0);
        b.build()
    }

    /// Closed latitude-longitude sphere with `2 * stacks * slices` faces
    /// minus the pole fans.
    pub fn sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> Self {
        let mut b = MeshBuilder::default();
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        for i in 0..=stacks {
            let phi = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let th = TAU * j as f64 / slices as f64;
                b.vertices.push(
                    center
                        + radius * Vec3::new(phi.sin() * th.cos(), phi.sin() * th.sin(), phi.cos()),
                );
            }
        }
        let idx = |i: usize, j: usize| (i * slices + j % slices) as u32;
        for i in 0..stacks {
            for j in 0..slices {
                let (a, bb, c, d) = (idx(i, j), idx(i, j + 1), idx(i + 1, j), idx(i + 1, j + 1));
                if i != 0 {
                    b.triangles.push([a, c, bb]);
                }
                if i != stacks - 1 {
                    b.triangles.push([bb, c, d]);
                }
            }
        }
        b.build()
    }

    /// A quadcopter about 1.6 m across: a central body, four diagonal arms,
    /// four motor pods with rotor discs, and two landing skids.
    pub fn quadcopter() -> Self {
        let mut b = MeshBuilder::default();
        b.cuboid(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.45, 0.35, 0.18), 0.0);
        b.cuboid(Vec3::new(0.0, 0.0, 0.12), Vec3::new(0.25, 0.2, 0.06), 0.0);
        let arm_len = 0.76;
        for k in 0..4 {
            let a = std::f64::consts::FRAC_PI_4 + k as f64 * std::f64::consts::FRAC_PI_2;
            let dir = Vec3::new(a.cos(), a.sin(), 0.0);
            b.cuboid(dir * (arm_len * 0.5 + 0.1), Vec3::new(arm_len, 0.04, 0.04), a);
            let hub = dir * (arm_len + 0.1);
            b.cylinder(hub + Vec3::new(0.0, 0.0, 0.03), 0.05, 0.1, 12);
            b.cylinder(hub + Vec3::new(0.0, 0.0, 0.09), 0.19, 0.01, 24);
        }
        for side in [-1.0, 1.0] {
            b.cuboid(Vec3::new(0.0, side * 0.2, -0.2), Vec3::new(0.5, 0.03, 0.03), 0.0);
            for end in [-1.0, 1.0] {
                b.cuboid(
                    Vec3::new(end * 0.15, side * 0.2, -0.13),
                    Vec3::new(0.03, 0.03, 0.12),
                    0.0,
                );
            }
        }
        b.build()
    }

    /// Merges several meshes.
    pub fn merged(parts: &[TriangleMesh]) -> Self {
        let mut out = TriangleMesh::new(Vec::new(), Vec::new()).unwrap();
        for p in parts {
            out.append(MeshBuilder {
                vertices: p.vertices.clone(),
                triangles: p.triangles.clone(),
            });
        }
        out
    }
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
}

impl MeshBuilder {
    fn cuboid(&mut self, center: Vec3, size: Vec3, yaw: f64) {
        let base = self.vertices.len() as u32;
        let r = rot_z(yaw);
        for i in 0..8 {
            let s = Vec3::new(
                if i & 1 == 0 { -0.5 } else { 0.5 },
                if i & 2 == 0 { -0.5 } else { 0.5 },
                if i & 4 == 0 { -0.5 } else { 0.5 },
            );
            self.vertices.push(center + r * s.component_mul(&size));
        }
        const FACES: [[u32; 4]; 6] = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        for f in FACES {
            self.triangles.push([base + f[0], base + f[1], base + f[2]]);
            self.triangles.push([base + f[0], base + f[2], base + f[3]]);
        }
    }

    fn cylinder(&mut self, center: Vec3, radius: f64, height: f64, segments: usize) {
        let base = self.vertices.len() as u32;
        let n = segments as u32;
        for z in [-0.5 * height, 0.5 * height] {
            for j in 0..segments {
                let a = TAU * j as f64 / segments as f64;
                self.vertices
                    .push(center + Vec3::new(radius * a.cos(), radius * a.sin(), z));
            }
        }
        self.vertices.push(center - Vec3::new(0.0, 0.0, 0.5 * height));
        self.vertices.push(center + Vec3::new(0.0, 0.0, 0.5 * height));
        let (bot, top) = (base + 2 * n, base + 2 * n + 1);
        for j in 0..n {
            let k = (j + 1) % n;
            let (a, b, c, d) = (base + j, base + k, base + n + j, base + n + k);
            self.triangles.push([a, b, d]);
            self.triangles.push([a, d, c]);
            self.triangles.push([bot, b, a]);
            self.triangles.push([top, c, d]);
        }
    }

    fn build(self) -> TriangleMesh {
        TriangleMesh::new(self.vertices, self.triangles).expect("builder output is valid")
    }
}
