//! Module round trips and an oracle-backed localization run.

use std::f64::consts::PI;

use ndf_core::io_store::{decode_grid, encode_grid, load_scans, parse_mesh_ply, format_mesh_ply, write_scans};
use ndf_core::mcl::{localize, run_metrics, MclConfig, Pose2};
use ndf_core::mesher::{marching_cubes, marching_squares};
use ndf_core::scene_oracle::{simulate_scan, AnalyticScene, ScannerConfig};
use ndf_core::field::GridField;
use ndf_core::{Aabb, Dim, Pose, Scan, Vec3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cube(half: f64, dim: Dim) -> Aabb {
    Aabb::cube(Vec3::zeros(), 2.0 * half, dim).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scans_round_trip_through_disk(
        scans in prop::collection::vec((vec3(5.0), -PI..PI, prop::collection::vec(vec3(20.0), 1..30)), 1..6),
    ) {
        let scans: Vec<Scan> = scans
            .into_iter()
            .map(|(t, yaw, pts)| Scan::new(Pose::planar(t.x, t.y, yaw), pts).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        write_scans(dir.path(), &scans).unwrap();
        let back = load_scans(dir.path()).unwrap();
        prop_assert_eq!(back.len(), scans.len());
        for (a, b) in scans.iter().zip(&back) {
            prop_assert_eq!(a.points().len(), b.points().len());
            // Points are stored as 32-bit floats.
            for (p, q) in a.points().iter().zip(b.points()) {
                prop_assert!((p - q).amax() <= 1e-6 * p.amax().max(1.0));
            }
            prop_assert!((a.pose().rotation() - b.pose().rotation()).amax() < 1e-9);
        }
    }

    #[test]
    fn sphere_meshes_are_valid(c in vec3(0.5), r in 0.3f64..1.2, res in 8usize..24) {
        let scene = AnalyticScene::parse(&format!("sphere {} {} {} {}", c.x, c.y, c.z, r)).unwrap();
        let mesh = marching_cubes(&scene, &cube(2.0, Dim::Three), res);
        prop_assert!(!mesh.is_empty());
        let n = mesh.vertices.len() as u32;
        for t in &mesh.triangles {
            prop_assert!(t.iter().all(|&i| i < n));
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            prop_assert!((b - a).cross(&(c - a)).norm() > 1e-12);
        }
        prop_assert_eq!(mesh.euler_characteristic(), 2);
        // PLY stores 32-bit vertices.
        let back = parse_mesh_ply(&format_mesh_ply(&mesh)).unwrap();
        prop_assert_eq!(&back.triangles, &mesh.triangles);
        for (p, q) in mesh.vertices.iter().zip(&back.vertices) {
            prop_assert!((p - q).amax() < 1e-6);
        }
    }

    #[test]
    fn circle_polylines_are_valid(c in vec3(0.5), r in 0.3f64..1.2, res in 8usize..40) {
        let scene = AnalyticScene::parse(&format!("circle {} {} {}", c.x, c.y, r)).unwrap();
        let lines = marching_squares(&scene, &cube(2.0, Dim::Two), res);
        let n = lines.vertices.len() as u32;
        prop_assert!(!lines.segments.is_empty());
        for s in &lines.segments {
            prop_assert!(s[0] < n && s[1] < n);
            prop_assert!((lines.vertices[s[0] as usize] - lines.vertices[s[1] as usize]).norm() > 1e-12);
        }
    }

    #[test]
    fn grids_round_trip(c in vec3(0.5), res in 2usize..10, three in any::<bool>()) {
        let dim = if three { Dim::Three } else { Dim::Two };
        let scene = AnalyticScene::parse(&format!("sphere {} {} {} 0.7", c.x, c.y, c.z)).unwrap();
        let grid = GridField::sample(&scene, &cube(1.0, dim), res);
        let back = decode_grid(&encode_grid(&grid)).unwrap();
        prop_assert_eq!(back.values().len(), grid.values().len());
        for (a, b) in grid.values().iter().zip(back.values()) {
            prop_assert_eq!(*b, *a as f32 as f64);
        }
    }
}

fn room() -> AnalyticScene {
    AnalyticScene::parse(
        "line 1 0 -4\nline -1 0 -4\nline 0 1 -3\nline 0 -1 -3\n\
         circle 0.3 0.2 0.7\nrect 3.2 2.2 0.4 0.4\ncircle -3 -2.2 0.4\n\
         polygon -3.6 1.6 -2.8 1.8 -3.3 2.6",
    )
    .unwrap()
}

#[test]
fn oracle_localization_converges() {
    let scene = room();
    let noise = 0.02;
    let steps = 60;
    let truth: Vec<Pose2> = (0..steps)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 100.0;
            Pose2::new(2.0 * a.cos(), 2.0 * a.sin(), a + PI / 2.0)
        })
        .collect();
    let beams: Vec<Vec<Vec3>> = truth
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let cfg = ScannerConfig {
                beams: 64,
                fov: 2.0 * PI,
                max_range: 30.0,
                noise_sigma: noise,
                seed: i as u64,
            };
            simulate_scan(&scene, &Pose::planar(p.x, p.y, p.theta), &cfg).unwrap().points().to_vec()
        })
        .collect();
    let map = Aabb::new(Vec3::new(-4.0, -3.0, 0.0), Vec3::new(4.0, 3.0, 0.0), Dim::Two).unwrap();
    let cfg = MclConfig::default();
    let runs = localize(&scene, &map, &truth, &beams, &cfg).unwrap();
    let m = run_metrics(&truth, &runs).expect("no run converged");
    assert!(m.converged_runs >= 4, "{} of {} runs converged", m.converged_runs, m.runs);
    assert!(m.rmse < 3.0 * noise, "rmse {}", m.rmse);
    assert!(m.rmse >= m.mae);
}
