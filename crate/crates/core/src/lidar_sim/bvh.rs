//! Median-split bounding volume hierarchy with Möller-Trumbore leaves.

use super::mesh::TriangleMesh;
use super::{Ray, SimError};
use crate::geometry::Vec3;

const LEAF_SIZE: usize = 4;
const T_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Entry distance of the ray, or `None` on a miss or when the box lies
    /// beyond `t_max`.
    pub fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut near = (self.min[a] - origin[a]) * inv_dir[a];
            let mut far = (self.max[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN arises for an axis-parallel ray on a slab plane; treat it as inside.
            if !near.is_nan() {
                t0 = t0.max(near);
            }
            if !far.is_nan() {
                t1 = t1.min(far * (1.0 + 4.0 * f64::EPSILON));
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Leaf { bounds: Aabb, start: u32, count: u32 },
    Inner { bounds: Aabb, right: u32 },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance along the ray.
    pub t: f64,
    pub point: Vec3,
    pub triangle: usize,
    /// `|cos|` of the angle between ray and normal.
    pub cos_incidence: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraversalStats {
    pub nodes_visited: u64,
    pub triangle_tests: u64,
}

impl std::ops::AddAssign for TraversalStats {
    fn add_assign(&mut self, o: Self) {
        self.nodes_visited += o.nodes_visited;
        self.triangle_tests += o.triangle_tests;
    }
}

/// Acceleration structure over a mesh that stays fixed for its lifetime.
#[derive(Debug, Clone)]
pub struct Bvh {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(mesh: TriangleMesh) -> Result<Self, SimError> {
        let degenerate = mesh.degenerate();
        let mut order: Vec<u32> = (0..mesh.triangle_count() as u32)
            .filter(|t| degenerate.binary_search(&(*t as usize)).is_err())
            .collect();
        if order.is_empty() {
            return Err(SimError::EmptyMesh);
        }
        if !degenerate.is_empty() {
            log::warn!("skipping {} degenerate triangles", degenerate.len());
        }
        let centroids: Vec<Vec3> = (0..mesh.triangle_count())
            .map(|t| mesh.triangle(t).iter().sum::<Vec3>() / 3.0)
            .collect();
        let mut nodes = Vec::with_capacity(2 * order.len() / LEAF_SIZE + 1);
        let len = order.len();
        build_node(&mesh, &centroids, &mut order, 0, len, &mut nodes);
        Ok(Self { mesh, nodes, order })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn bounds(&self) -> Aabb {
        *self.nodes[0].bounds()
    }

    /// Nearest hit along the ray; equal distances go to the lower triangle id.
    pub fn intersect(&self, ray: &Ray) -> (Option<Hit>, TraversalStats) {
        let inv = ray.dir.map(|d| 1.0 / d);
        let mut stats = TraversalStats::default();
        let mut best: Option<(f64, usize)> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            stats.nodes_visited += 1;
            let t_max = best.map_or(f64::INFINITY, |b| b.0);
            if node.bounds().hit(&ray.origin, &inv, t_max).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &tri in &self.order[start as usize..(start + count) as usize] {
                        stats.triangle_tests += 1;
                        let tri = tri as usize;
                        if let Some(t) = moller_trumbore(ray, &self.mesh.triangle(tri)) {
                            let better = match best {
                                None => true,
                                Some((bt, bi)) => t < bt || (t == bt && tri < bi),
                            };
                            if better {
                                best = Some((t, tri));
                            }
                        }
                    }
                }
                Node::Inner { right, .. } => {
                    let left = i + 1;
                    let tl = self.nodes[left as usize].bounds().hit(&ray.origin, &inv, t_max);
                    let tr = self.nodes[right as usize].bounds().hit(&ray.origin, &inv, t_max);
                    match (tl, tr) {
                        (Some(a), Some(b)) if a <= b => {
                            stack.push(right);
                            stack.push(left);
                        }
                        (Some(_), Some(_)) => {
                            stack.push(left);
                            stack.push(right);
                        }
                        (Some(_), None) => stack.push(left),
                        (None, Some(_)) => stack.push(right),
                        (None, None) => {}
                    }
                }
            }
        }
        let hit = best.map(|(t, triangle)| Hit {
            t,
            point: ray.at(t),
            triangle,
            cos_incidence: ray.dir.dot(&self.mesh.normals()[triangle]).abs().min(1.0),
        });
        (hit, stats)
    }
}

fn build_node(
    mesh: &TriangleMesh,
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &t in &order[start..end] {
        for v in mesh.triangle(t as usize) {
            bounds.grow(&v);
        }
        cbounds.grow(&centroids[t as usize]);
    }
    let count = end - start;
    let spread = cbounds.max - cbounds.min;
    if count <= LEAF_SIZE || spread.max() <= 0.0 {
        nodes.push(Node::Leaf {
            bounds,
            start: start as u32,
            count: count as u32,
        });
        return;
    }
    let axis = spread.imax();
    let mid = start + count / 2;
    order[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let me = nodes.len();
    nodes.push(Node::Inner { bounds, right: 0 });
    build_node(mesh, centroids, order, start, mid, nodes);
    let right = nodes.len() as u32;
    nodes[me] = Node::Inner { bounds, right };
    build_node(mesh, centroids, order, mid, end, nodes);
}

/// Ray-triangle distance with inclusive edges, in double precision.
fn moller_trumbore(ray: &Ray, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 * e1.norm() * e2.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > T_MIN).then_some(t)
}
