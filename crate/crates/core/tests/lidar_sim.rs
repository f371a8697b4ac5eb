mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skyscan::lidar_sim::*;
use skyscan::Vec3;

fn sphere_mesh() -> TriangleMesh {
    // 2 * 20 * 25 - 2 * 25 = 950 triangles, close to a thousand.
    TriangleMesh::sphere(Vec3::new(8.0, 0.5, -0.3), 1.5, 20, 25)
}

fn random_dir<R: Rng>(r: &mut R, toward: Vec3, spread: f64) -> Vec3 {
    let jitter = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    (toward + jitter * spread).normalize()
}

#[test]
fn bvh_matches_every_triangle_scan() {
    let mesh = sphere_mesh();
    assert!((900..=1100).contains(&mesh.triangle_count()));
    let bvh = Bvh::build(mesh.clone()).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut hits = 0;
    for _ in 0..10_000 {
        let origin = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let ray = Ray::new(origin, random_dir(&mut r, mesh.center() - origin, 2.0));
        let (fast, _) = bvh.intersect(&ray);
        let slow = common::brute_cast(&ray, &mesh);
        match (fast, slow) {
            (Some(h), Some((t, p, _))) => {
                hits += 1;
                assert!((h.point - p).norm() < 1e-7, "{:?} vs {p:?}", h.point);
                assert!((h.t - t).abs() < 1e-7);
            }
            (None, None) => {}
            (a, b) => panic!("ray {ray:?}: bvh {a:?} brute {b:?}"),
        }
    }
    assert!(hits > 1000 && hits < 9000, "{hits} hits");
}

#[test]
fn axis_ray_hits_triangle_at_five() {
    let mesh = TriangleMesh::new(
        vec![Vec3::new(5.0, -1.0, -1.0), Vec3::new(5.0, 1.0, -1.0), Vec3::new(5.0, 0.0, 1.0)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let bvh = Bvh::build(mesh).unwrap();
    let (h, _) = bvh.intersect(&Ray::new(Vec3::zeros(), Vec3::x()));
    let h = h.unwrap();
    assert!((h.point - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
    assert!((h.cos_incidence - 1.0).abs() < 1e-12);
    let (miss, stats) = bvh.intersect(&Ray::new(Vec3::zeros(), -Vec3::x()));
    assert!(miss.is_none());
    assert_eq!(stats.triangle_tests, 0);
}

#[test]
fn degenerate_triangles_are_reported() {
    let mesh = TriangleMesh::new(
        vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(2.0, 0.0, 0.0)],
        vec![[0, 1, 2], [0, 1, 3]],
    )
    .unwrap();
    assert_eq!(mesh.degenerate(), &[1]);
    assert!(mesh.normals().iter().all(|n| n.norm() == 0.0 || (n.norm() - 1.0).abs() < 1e-12));
}

#[test]
fn pattern_budget_and_field_of_view() {
    let p = ScanPattern::default();
    let rays = gen_pattern(&p, 0.0, 100_000.0).unwrap();
    assert_eq!(rays.len(), 24_000);
    assert!(gen_pattern(&p, 0.0, 0.0).is_err());
    let (h, v) = (35.2f64.to_radians(), 38.6f64.to_radians());
    for t in &rays {
        let d = t.ray.dir;
        assert!((d.norm() - 1.0).abs() < 1e-9);
        assert!(p.in_fov(&d));
        assert!(d.y.atan2(d.x).abs() <= h + 1e-12);
        assert!(d.z.atan2(d.x.hypot(d.y)).abs() <= v + 1e-12);
        assert!(t.t_us > 0.0 && t.t_us < 100_000.0);
    }
    let next = gen_pattern(&p, 100_000.0, 100_000.0).unwrap();
    let same = rays.iter().zip(&next).filter(|(a, b)| (a.ray.dir - b.ray.dir).norm() < 1e-9).count();
    assert!(same < 10, "{same} directions repeat in the next frame");
}

#[test]
fn nearer_mesh_gets_more_returns() {
    let bvh = Bvh::build(TriangleMesh::quadcopter()).unwrap();
    let p = ScanPattern::default();
    let o = SimOptions::default();
    let near = simulate_frame(&p, &bvh, &Pose2D::new(0.0, Vec3::new(10.0, 0.0, 0.0)), 0.0, 1e5, &o).unwrap();
    let far = simulate_frame(&p, &bvh, &Pose2D::new(0.0, Vec3::new(40.0, 0.0, 0.0)), 0.0, 1e5, &o).unwrap();
    assert!(near.frame.len() > far.frame.len());
    let behind = simulate_frame(&p, &bvh, &Pose2D::new(0.0, Vec3::new(-10.0, 0.0, 0.0)), 0.0, 1e5, &o).unwrap();
    assert_eq!(behind.hit_count, 0);
    assert!(behind.frame.is_empty());
}

#[test]
fn nine_hits_are_rejected_and_ten_accepted() {
    let bvh = Bvh::build(TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(0.3, 0.3, 0.3))).unwrap();
    let p = ScanPattern::default();
    let pose = Pose2D::new(0.0, Vec3::new(12.0, 0.0, 0.0));
    let period = 1e6 / p.points_per_second;
    let mut seen = [false; 2];
    // Growing the window one ray at a time raises the hit count by at most
    // one, so both 9 and 10 are met on the way.
    for n in 1..24_000 {
        let f = simulate_frame(&p, &bvh, &pose, 0.0, n as f64 * period, &SimOptions::default()).unwrap();
        match f.hit_count {
            9 => {
                assert!(!f.accepted && f.frame.is_empty());
                seen[0] = true;
            }
            10 => {
                assert!(f.accepted && f.frame.len() == 10);
                seen[1] = true;
                break;
            }
            _ => {}
        }
    }
    assert_eq!(seen, [true, true]);
}

#[test]
fn longer_window_extends_shorter() {
    let bvh = Bvh::build(TriangleMesh::quadcopter()).unwrap();
    let p = ScanPattern::default();
    let o = SimOptions { min_hits: 0, ..SimOptions::default() };
    let pose = Pose2D::new(0.7, Vec3::new(15.0, 1.0, -1.0));
    let short = simulate_frame(&p, &bvh, &pose, 0.0, 50_000.0, &o).unwrap();
    let long = simulate_frame(&p, &bvh, &pose, 0.0, 120_000.0, &o).unwrap();
    assert!(short.frame.len() < long.frame.len());
    assert_eq!(short.frame.points[..], long.frame.points[..short.frame.len()]);
}

#[test]
fn lambertian_bounds_and_landmarks() {
    assert_eq!(lambertian(2.0, 0.0).unwrap(), 2.0);
    assert_eq!(lambertian(2.0, PI / 3.0).unwrap(), 1.0);
    assert_eq!(lambertian(2.0, FRAC_PI_2).unwrap(), 0.0);
    let vals: Vec<f64> = (0..=900).map(|i| lambertian(1.0, i as f64 / 900.0 * FRAC_PI_2).unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn transformed_rays_hit_where_posed_mesh_is_hit(
        yaw in -PI..PI,
        x in -50.0f64..50.0, y in -50.0f64..50.0, z in -20.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let mesh = TriangleMesh::quadcopter();
        let bvh = Bvh::build(mesh.clone()).unwrap();
        let pose = Pose2D::new(yaw, Vec3::new(x, y, z));
        let posed = mesh.posed(&pose);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rays: Vec<Ray> = (0..300)
            .map(|_| Ray::new(Vec3::zeros(), random_dir(&mut r, pose.translation, 0.3)))
            .collect();
        let local = transform_rays(&rays, &pose, &mesh.center());
        for (ray, lr) in rays.iter().zip(&local) {
            let (h, _) = bvh.intersect(lr);
            let oracle = common::brute_cast(ray, &posed);
            match (h, oracle) {
                // Triangle ids may differ on shared edges; the point may not.
                (Some(h), Some((_, p, _))) => prop_assert!((ray.at(h.t) - p).norm() <= 1e-6),
                (None, None) => {}
                (a, b) => prop_assert!(false, "trick {:?} oracle {:?}", a, b),
            }
        }
    }
}
