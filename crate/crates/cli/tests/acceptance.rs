//! Acceptance criteria A1 to A8. Runs without the libtest harness so the
//! report below is always printed:
//!
//! ```text
//! A1 PASS  <detail>
//! A2 FAIL  <detail>
//! ```
//!
//! The process exits non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use ndf_cli::{compare, CompareRow, RunConfig};
use ndf_core::encode::EncodingConfig;
use ndf_core::field_net::FieldNet;
use ndf_core::mesher::marching_cubes;
use ndf_core::raysample::{sample_ray, sample_t};
use ndf_core::scene_oracle::AnalyticScene;
use ndf_core::supervise::{curvature_distance, dcn_distance, iso_curvature, normal_dir, sample_weight, RadiusLimits, SupervisionMode};
use ndf_core::{Aabb, Dim, Ray, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const A1_STEP: f64 = 1e-3;
const A1_REL: f64 = 1e-4;
const A2_TOL: f64 = 1e-9;
const A3_REL: f64 = 1e-3;
const A3_R_MAX: f64 = 1e6;
const A4_MAE: f64 = 0.05;
const A4_EIKONAL: f64 = 0.1;
const A4_MESH_TOL: f64 = 0.05;
const A4_MESH_FRACTION: f64 = 0.95;
const A4_MESH_RES: usize = 64;
const A4_SECONDS: f64 = 600.0;

type Outcome = Result<String, String>;

const SPHERE: &str = "sphere 0 0 0 1\n";

const SPHERE_CONFIG: &str = "\
bounds = -2 -2 -2 2 2 2
trajectory = orbit 100 1.8
scanner.fov = 1.0472
scanner.max_range = 10
";

/// Fixed planar map for the localization comparison: a walled room with
/// obstacles of several shapes.
const ROOM: &str = "\
line 1 0 -4
line -1 0 -4
line 0 1 -3
line 0 -1 -3
circle 0.3 0.2 0.7
rect 3.2 2.2 0.4 0.4
circle -3 -2.2 0.4
polygon -3.6 1.6 -2.8 1.8 -3.3 2.6
";

const ROOM_CONFIG: &str = "\
bounds = -4.1 -3.1 4.1 3.1
trajectory = orbit 100 2
encoding.max_freq = 32
loss.eikonal = 0.0001
optim.lr = 0.0005
";

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(rng: &mut ChaCha8Rng, dim: Dim) -> Vec3 {
    loop {
        let v = dim.project(&Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn rel_close(a: f64, b: f64, scale: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * scale.max(1e-12)
}

fn a1_derivatives() -> Outcome {
    let started = Instant::now();
    let cfg = RunConfig::default();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let dim = if seed % 2 == 0 { Dim::Three } else { Dim::Two };
        let net = FieldNet::init(&cfg.net_config(dim), seed).map_err(|e| e.to_string())?;
        let x = dim.project(&Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let jet = net.eval_jet(&x);
        let g_scale = jet.gradient.amax();
        let h_scale = jet.hessian.amax();
        for a in 0..dim.m() {
            let mut e = Vec3::zeros();
            e[a] = A1_STEP;
            let fd = (net.eval(&(x + e)) - net.eval(&(x - e))) / (2.0 * A1_STEP);
            let err = (fd - jet.gradient[a]).abs() / g_scale.max(1e-12);
            worst = worst.max(err);
            if !rel_close(fd, jet.gradient[a], g_scale, A1_REL) {
                return Err(format!("net {seed}: d/dx{a} fd {fd} vs {}", jet.gradient[a]));
            }
            let col = (net.eval_jet(&(x + e)).gradient - net.eval_jet(&(x - e)).gradient) / (2.0 * A1_STEP);
            for b in 0..dim.m() {
                let err = (col[b] - jet.hessian[(b, a)]).abs() / h_scale.max(1e-12);
                worst = worst.max(err);
                if !rel_close(col[b], jet.hessian[(b, a)], h_scale, A1_REL) {
                    return Err(format!("net {seed}: H[{b},{a}] fd {} vs {}", col[b], jet.hessian[(b, a)]));
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("took {secs:.1} s"));
    }
    Ok(format!("100 nets, worst relative error {worst:.2e}, {secs:.2} s"))
}

/// Smallest positive t with |o + t d| = 1 (d unit), if any.
fn unit_ball_hit(o: &Vec3, d: &Vec3) -> Option<f64> {
    let b = o.dot(d);
    let c = o.norm_squared() - 1.0;
    let disc = b * b - c;
    (disc >= 0.0).then(|| -b - disc.sqrt()).filter(|t| *t > 0.0)
}

fn a2_exactness() -> Outcome {
    let limits = RadiusLimits::default();
    let mut worst = 0.0f64;
    let mut samples = 0usize;
    for (dim, text) in [(Dim::Three, "sphere 0 0 0 1"), (Dim::Two, "circle 0 0 1")] {
        let scene = AnalyticScene::parse(text).map_err(|e| e.to_string())?;
        let mut r = rng(2);
        let mut rays = 0;
        while rays < 1000 {
            let o = unit(&mut r, dim) * r.random_range(1.2..4.0);
            let target = unit(&mut r, dim) * r.random_range(0.0..0.99);
            let d = (target - o).normalize();
            let Some(t) = unit_ball_hit(&o, &d) else { continue };
            rays += 1;
            let ray = Ray::new(o, o + t * d).map_err(|e| e.to_string())?;
            for s in sample_ray(&ray, 40, 0, false).map_err(|e| e.to_string())? {
                let truth = scene.sdf(&s.x);
                if truth <= 0.0 {
                    continue;
                }
                let jet = scene.jet(&s.x);
                let n = normal_dir(&jet.gradient).map_err(|e| e.to_string())?;
                let (_, radius) = iso_curvature(&jet, dim, &limits).map_err(|e| e.to_string())?;
                let err = (curvature_distance(radius, &ray, &s.x, &n) - truth).abs();
                worst = worst.max(err);
                samples += 1;
                if err >= A2_TOL {
                    return Err(format!("{dim:?}: error {err:.3e} at {:?}", s.x));
                }
            }
        }
    }
    // Query at distance 2 from the unit circle's center; the endpoint lies
    // on the circle at d = sqrt(2) with projection p = 1.25 on the normal.
    let x2 = Vec3::new(2.0, 0.0, 0.0);
    let e2 = Vec3::new(0.75, (2.0f64 - 1.5625).sqrt(), 0.0);
    let circle = AnalyticScene::parse("circle 0 0 1").map_err(|e| e.to_string())?;
    let jet2 = circle.jet(&x2);
    let n2 = normal_dir(&jet2.gradient).map_err(|e| e.to_string())?;
    let (_, r2) = iso_curvature(&jet2, Dim::Two, &limits).map_err(|e| e.to_string())?;
    let ray2 = Ray::new(x2 + (x2 - e2), e2).map_err(|e| e.to_string())?;
    let fig = curvature_distance(r2, &ray2, &x2, &n2);
    if !((r2 - 2.0).abs() < A2_TOL && (fig - 1.0).abs() < A2_TOL) {
        return Err(format!("R=2 configuration gives R {r2}, d_hat {fig}"));
    }
    Ok(format!("{samples} free-space samples on 2000 rays, worst {worst:.2e}; R=2, d=sqrt2, p=1.25 gives {fig}"))
}

fn a3_flat_limit() -> Outcome {
    let scene = AnalyticScene::parse("plane 0 0 1 0").map_err(|e| e.to_string())?;
    let limits = RadiusLimits { r_max: A3_R_MAX, ..RadiusLimits::default() };
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let o = Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(0.2..3.0));
        let e = Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), 0.0);
        let ray = Ray::new(o, e).map_err(|e| e.to_string())?;
        let x = o + r.random_range(0.0..0.99) * (e - o);
        let jet = scene.jet(&x);
        let n = normal_dir(&jet.gradient).map_err(|e| e.to_string())?;
        let (_, radius) = iso_curvature(&jet, Dim::Three, &limits).map_err(|e| e.to_string())?;
        let d = (e - x).norm();
        let gap = (curvature_distance(radius, &ray, &x, &n) - dcn_distance(&n, &ray, &x)).abs();
        worst = worst.max(gap / d);
        if gap >= A3_REL * d {
            return Err(format!("gap {gap:.3e} at d {d:.3}"));
        }
    }
    Ok(format!("1000 queries, worst gap/d {worst:.2e}"))
}

fn sphere_compare() -> &'static Result<Vec<CompareRow>, String> {
    static ROWS: OnceLock<Result<Vec<CompareRow>, String>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let cfg = RunConfig::parse(SPHERE_CONFIG).map_err(|e| e.to_string())?;
        let scene = AnalyticScene::parse(SPHERE).map_err(|e| e.to_string())?;
        compare(&scene, &cfg).map_err(|e| e.to_string())
    })
}

fn row(rows: &[CompareRow], mode: SupervisionMode) -> &CompareRow {
    rows.iter().find(|r| r.mode == mode).expect("every mode is compared")
}

fn a4_training() -> Outcome {
    let rows = sphere_compare().as_ref().map_err(Clone::clone)?;
    let curv = row(rows, SupervisionMode::CurvatureConstrained);
    let aabb = Aabb::cube(Vec3::zeros(), 4.0, Dim::Three).map_err(|e| e.to_string())?;
    let mesh = marching_cubes(&curv.field, &aabb, A4_MESH_RES);
    let near = mesh.vertices.iter().filter(|v| (v.norm() - 1.0).abs() < A4_MESH_TOL).count();
    let fraction = near as f64 / mesh.vertices.len().max(1) as f64;
    let detail = format!(
        "band MAE {:.4} (< {A4_MAE}), eikonal {:.4} (< {A4_EIKONAL}), mesh {:.1}% within {A4_MESH_TOL} of r=1 ({} vertices), {:.0} s",
        curv.sdf.mae,
        curv.sdf.eikonal,
        100.0 * fraction,
        mesh.vertices.len(),
        curv.train_seconds
    );
    let ok = curv.sdf.mae < A4_MAE
        && curv.sdf.eikonal < A4_EIKONAL
        && fraction >= A4_MESH_FRACTION
        && curv.train_seconds < A4_SECONDS;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a5_localization() -> Outcome {
    let cfg = RunConfig::parse(ROOM_CONFIG).map_err(|e| e.to_string())?;
    let scene = AnalyticScene::parse(ROOM).map_err(|e| e.to_string())?;
    let rows = compare(&scene, &cfg).map_err(|e| e.to_string())?;
    let metric = |mode| row(&rows, mode).mcl;
    let fmt = |mode| match metric(mode) {
        Some(m) => format!("{mode}: rmse {:.3} mae {:.3} ({}/{})", m.rmse, m.mae, m.converged_runs, m.runs),
        None => format!("{mode}: -"),
    };
    let detail = SupervisionMode::ALL.iter().map(|&m| fmt(m)).collect::<Vec<_>>().join("; ");
    let Some(curv) = metric(SupervisionMode::CurvatureConstrained) else {
        return Err(detail);
    };
    // A baseline with no converged run cannot beat the proposed mode.
    let beaten = |mode| metric(mode).is_none_or(|m| curv.rmse <= m.rmse && curv.mae <= m.mae);
    if beaten(SupervisionMode::ClosestNormal) && beaten(SupervisionMode::RayDistance) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a6_sdf_ordering() -> Outcome {
    let rows = sphere_compare().as_ref().map_err(Clone::clone)?;
    let mae = |mode| row(rows, mode).sdf.mae;
    let (c, r, d) = (
        mae(SupervisionMode::CurvatureConstrained),
        mae(SupervisionMode::RayDistance),
        mae(SupervisionMode::ClosestNormal),
    );
    let detail = format!("band MAE curvature {c:.4}, ray {r:.4}, dcn {d:.4}");
    if c <= r {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a7_constants() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    check(EncodingConfig::dyadic(30).output_len(Dim::Three) == 183, "dyadic encoding length");
    let cfg = RunConfig::default();
    check(cfg.encoding().map(|e| e.output_len(Dim::Three)).ok() == Some(183), "default encoding length");
    for n in [2usize, 3, 10, 40, 100] {
        check(sample_t(n - 1, n) == 0.0, "t at n-1");
        check((1..=n).all(|l| l == 1 || sample_t(l, n) < sample_t(l - 1, n)), "t strictly decreasing");
    }
    let w: Vec<f64> = [0.0, 1.0, 2.0].iter().map(|d| sample_weight(*d, 2.0, 3.0)).collect();
    check(w == [8.0, 1.0, 0.0], "weights for |D| = 0, 1, 2");
    check(cfg.train_config().weights.gamma == 3.0, "gamma default");
    let mcl = cfg.mcl_config();
    check(mcl.n_particles == 10_000, "particle count");
    check(mcl.convergence_std == 0.30, "convergence threshold");
    check(mcl.gate_translation == 0.05 && mcl.gate_rotation == 0.1, "motion gates");
    check(mcl.runs == 5, "run count");
    check(cfg.train_config().optim.epochs == 10, "epochs");
    if failures.is_empty() {
        Ok("encoding 183, sample schedule, weights [8, 1, 0], MCL 10000 / 0.30 / 0.05 / 0.1 / 5 runs".into())
    } else {
        Err(failures.join(", "))
    }
}

const SMALL: &str = "\
bounds = -3 -3 3 3
trajectory = orbit 8 2
scanner.beams = 32
scanner.noise = 0.01
net.width = 16
net.depth = 1
encoding.h = 4
samples_per_ray = 8
optim.epochs = 2
optim.batch = 16
mesh.res = 24
eval.points = 200
mcl.particles = 500
mcl.runs = 2
mcl.grid_res = 32
";

fn run_pipeline(dir: &Path) -> Result<(), String> {
    fs::write(dir.join("scene.txt"), "circle 0.4 0.2 0.8\nrect -0.9 -0.6 0.3 0.3\n").map_err(|e| e.to_string())?;
    fs::write(dir.join("run.cfg"), SMALL).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 6] = [
        &["synth", "--scene", "scene.txt", "--out", "data"],
        &["train", "--scans", "data", "--out", "model.bin"],
        &["mesh", "--model", "model.bin", "--out", "mesh.ply"],
        &["eval-sdf", "--model", "model.bin", "--scene", "scene.txt", "--out", "eval.csv"],
        &["localize", "--model", "model.bin", "--data", "data", "--out", "mcl.csv"],
        &["compare", "--scene", "scene.txt", "--out", "compare.csv"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_ndf"))
            .current_dir(dir)
            .args(["--config", "run.cfg", "--threads", "1", "--seed", "11"])
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("ndf {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn files(dir: &Path, prefix: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            out.extend(files(&path, prefix));
        } else {
            let name = path.strip_prefix(prefix).unwrap().display().to_string();
            out.push((name, fs::read(&path).unwrap()));
        }
    }
    out
}

fn a8_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let (fa, fb) = (files(a.path(), a.path()), files(b.path(), b.path()));
    if fa.len() != fb.len() {
        return Err(format!("{} vs {} files", fa.len(), fb.len()));
    }
    for ((na, da), (nb, db)) in fa.iter().zip(&fb) {
        if na != nb || da != db {
            return Err(format!("{na} differs"));
        }
    }
    Ok(format!("{} output files byte-identical across two runs", fa.len()))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("A1", a1_derivatives),
        ("A2", a2_exactness),
        ("A3", a3_flat_limit),
        ("A7", a7_constants),
        ("A8", a8_determinism),
        ("A4", a4_training),
        ("A6", a6_sdf_ordering),
        ("A5", a5_localization),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{name} PASS  {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("{name} FAIL  {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
