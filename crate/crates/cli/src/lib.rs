//! Pipeline commands behind the `ndf` binary: scan synthesis, training,
//! meshing, field evaluation, localization and the supervision comparison.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndf_core::field::GridField;
use ndf_core::field_net::NetError;
use ndf_core::geom::{normalize_scene, origin_centroid, to_world, GeomError};
use ndf_core::io_store::{self, IoError, TrajectoryPoint};
use ndf_core::mcl::{self, Metrics, MclError, Pose2};
use ndf_core::mesher::{marching_cubes, marching_squares};
use ndf_core::scene_oracle::{simulate_scan, AnalyticScene, SceneError};
use ndf_core::supervise::SupervisionMode;
use ndf_core::train::{self, LossBreakdown, TrainError};
use ndf_core::{Aabb, Dim, DistanceField, FieldJet, FieldNet, NeuralField, Pose, Scan, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{ConfigError, RunConfig, Spacing, TrajectorySpec};

/// Name of the scene copy written next to synthesized scans.
pub const SCENE_FILE: &str = "scene.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Store(#[from] IoError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mcl(#[from] MclError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for anything the user can fix in arguments or configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Train(TrainError::InvalidConfig(_)) | CliError::Mcl(MclError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_scene(path: &Path) -> Result<AnalyticScene, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(AnalyticScene::parse(&text)?)
}

/// Sensor poses for `spec` around `center`.
pub fn trajectory_poses(spec: &TrajectorySpec, dim: Dim, center: &Vec3) -> Result<Vec<Pose>, CliError> {
    match spec {
        TrajectorySpec::Orbit { n, radius } => Ok(match dim {
            Dim::Three => {
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                (0..*n)
                    .map(|k| {
                        let z = 1.0 - 2.0 * (k as f64 + 0.5) / *n as f64;
                        let s = (1.0 - z * z).sqrt();
                        let phi = golden * k as f64;
                        let offset = Vec3::new(s * phi.cos(), s * phi.sin(), z) * *radius;
                        Pose::looking_along(center + offset, &-offset)
                    })
                    .collect::<Result<_, _>>()?
            }
            Dim::Two => (0..*n)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / *n as f64;
                    Pose::planar(
                        center.x + radius * a.cos(),
                        center.y + radius * a.sin(),
                        a + std::f64::consts::FRAC_PI_2,
                    )
                })
                .collect(),
        }),
        TrajectorySpec::File(path) => {
            if dim != Dim::Two {
                return Err(CliError::Usage("trajectory files hold planar poses; the scene is 3D".into()));
            }
            let points = io_store::read_trajectory(path)?;
            if points.is_empty() {
                return Err(CliError::Usage(format!("{}: empty trajectory", path.display())));
            }
            Ok(points.iter().map(|p| Pose::planar(p.x, p.y, p.theta)).collect())
        }
    }
}

/// Simulated scans of `scene` along the configured trajectory. Scan `i`
/// draws its range noise from seed `cfg.seed + i`.
pub fn synthesize(scene: &AnalyticScene, cfg: &RunConfig) -> Result<Vec<Scan>, CliError> {
    let dim = scene.dim();
    if let Some(b) = &cfg.bounds {
        if b.dim() != dim {
            return Err(CliError::Usage("bounds and scene have different dimensions".into()));
        }
    }
    let center = cfg.bounds.map_or(Vec3::zeros(), |b| b.center());
    let poses = trajectory_poses(&cfg.trajectory, dim, &center)?;
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| Ok(simulate_scan(scene, pose, &cfg.scanner(cfg.seed.wrapping_add(i as u64)))?))
        .collect()
}

fn planar(pose: &Pose) -> Pose2 {
    Pose2::new(pose.translation().x, pose.translation().y, pose.yaw())
}

/// Writes scans, poses, the planar trajectory and a copy of the scene.
pub fn cmd_synth(scene_path: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<usize, CliError> {
    let scene = read_scene(scene_path)?;
    let scans = synthesize(&scene, cfg)?;
    io_store::write_scans(out_dir, &scans)?;
    let traj: Vec<TrajectoryPoint> = scans
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = planar(s.pose());
            TrajectoryPoint {
                t: i as f64,
                x: p.x,
                y: p.y,
                theta: p.theta,
            }
        })
        .collect();
    io_store::write_trajectory(&out_dir.join(io_store::TRAJECTORY_FILE), &traj)?;
    let scene_copy = out_dir.join(SCENE_FILE);
    fs::write(&scene_copy, scene.to_text()).map_err(io_err(&scene_copy))?;
    Ok(scans.len())
}

/// Dimension of a dataset: planar when every origin and endpoint has z = 0.
pub fn infer_dim(scans: &[Scan]) -> Dim {
    let flat = scans
        .iter()
        .all(|s| s.pose().translation().z == 0.0 && to_world(s).map_or(false, |r| r.iter().all(|r| r.endpoint().z == 0.0)));
    if flat {
        Dim::Two
    } else {
        Dim::Three
    }
}

/// The configured box, or a cube centered on the centroid of the scan
/// origins that holds every origin and endpoint with a 10% margin.
pub fn scene_bounds(scans: &[Scan], cfg: &RunConfig) -> Result<Aabb, CliError> {
    if let Some(b) = cfg.bounds {
        return Ok(b);
    }
    if scans.is_empty() {
        return Err(CliError::Usage("no scans to fit a bounding box to".into()));
    }
    let dim = infer_dim(scans);
    let center = dim.project(&origin_centroid(scans));
    let mut reach = 0.0f64;
    for scan in scans {
        for ray in to_world(scan)? {
            for p in [ray.origin(), ray.endpoint()] {
                reach = reach.max((p - center).amax());
            }
        }
    }
    let size = 2.2 * reach.max(1e-6);
    Ok(Aabb::cube(center, size, dim)?)
}

/// Trains a fresh network on `scans`. The network seed and the batch order
/// both come from `cfg.seed`, so modes compared under one config start from
/// the same weights and see the same batches.
pub fn train_field(
    scans: &[Scan],
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<(NeuralField, Vec<LossBreakdown>), CliError> {
    let bounds = scene_bounds(scans, cfg)?;
    let mut rays = Vec::new();
    for scan in scans {
        rays.extend(to_world(scan)?);
    }
    let normalized = normalize_scene(&rays, &bounds)?;
    if normalized.dropped > 0 {
        log::info!("{} rays end outside the bounds and were dropped", normalized.dropped);
    }
    let mut net = FieldNet::init(&cfg.net_config(bounds.dim()), cfg.seed)?;
    let history = train::train(&mut net, &normalized.rays, &cfg.train_config(), |e, l, _| {
        log::info!(
            "epoch {e}: total {:.5} data {:.5} endpoint {:.5} eikonal {:.5} smoothness {:.5}",
            l.total,
            l.data,
            l.endpoint,
            l.eikonal,
            l.smoothness
        );
        on_epoch(e, l)
    })?;
    Ok((NeuralField::new(net, normalized.transform), history))
}

pub fn write_loss_csv(path: &Path, history: &[LossBreakdown]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "data", "endpoint", "eikonal", "smoothness", "total"])?;
    for (e, l) in history.iter().enumerate() {
        w.write_record([
            e.to_string(),
            l.data.to_string(),
            l.endpoint.to_string(),
            l.eikonal.to_string(),
            l.smoothness.to_string(),
            l.total.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Loss log written next to a model: `model.ndf` gets `model.loss.csv`.
pub fn loss_log_path(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

pub fn cmd_train(cfg: &RunConfig, scans_dir: &Path, out_model: &Path) -> Result<Vec<LossBreakdown>, CliError> {
    let scans = io_store::load_scans(scans_dir)?;
    let (field, history) = train_field(&scans, cfg, |_, _| {})?;
    io_store::save_model(out_model, &field)?;
    write_loss_csv(&loss_log_path(out_model), &history)?;
    Ok(history)
}

/// World-frame box covered by the canonical cube of `field`.
pub fn field_bounds(field: &NeuralField) -> Aabb {
    let dim = field.net.dim();
    let one = dim.project(&Vec3::repeat(1.0));
    let lo = field.transform.denormalize(&-one);
    let hi = field.transform.denormalize(&one);
    let (lo, hi) = match dim {
        Dim::Two => (Vec3::new(lo.x, lo.y, 0.0), Vec3::new(hi.x, hi.y, 0.0)),
        Dim::Three => (lo, hi),
    };
    Aabb::new(lo, hi, dim).expect("transform scale is positive")
}

/// Zero level set of the field: triangles in 3D, segments in 2D.
pub fn cmd_mesh(model: &Path, res: usize, out_ply: &Path) -> Result<(), CliError> {
    let field = io_store::load_model(model)?;
    let bounds = field_bounds(&field);
    match bounds.dim() {
        Dim::Three => io_store::export_mesh_ply(&marching_cubes(&field, &bounds, res), out_ply)?,
        Dim::Two => io_store::export_polylines_ply(&marching_squares(&field, &bounds, res), out_ply)?,
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean `| |grad D| - 1 |`.
    pub eikonal: f64,
    pub points: usize,
}

/// Seeded uniform points of `bounds` whose true distance is below `band`.
pub fn band_points(scene: &AnalyticScene, bounds: &Aabb, band: f64, n: usize, seed: u64) -> Result<Vec<Vec3>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (bounds.min(), bounds.max());
    let m = bounds.dim().m();
    let mut out = Vec::with_capacity(n);
    let max_tries = n.saturating_mul(10_000).max(100_000);
    for _ in 0..max_tries {
        let mut p = Vec3::zeros();
        for a in 0..m {
            p[a] = lo[a] + (hi[a] - lo[a]) * rng.random::<f64>();
        }
        if scene.sdf(&p).abs() < band {
            out.push(p);
            if out.len() == n {
                return Ok(out);
            }
        }
    }
    Err(CliError::Usage(format!("the evaluation band {band} barely intersects the bounds")))
}

/// Error statistics of field jets against true distances.
pub fn sdf_metrics(jets: &[FieldJet], truth: &[f64]) -> SdfMetrics {
    let n = jets.len().max(1) as f64;
    let (mut abs, mut sq, mut eik) = (0.0, 0.0, 0.0);
    for (j, t) in jets.iter().zip(truth) {
        let e = j.value - t;
        abs += e.abs();
        sq += e * e;
        eik += (j.gradient.norm() - 1.0).abs();
    }
    SdfMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        eikonal: eik / n,
        points: jets.len(),
    }
}

/// Evaluation band in world units.
pub fn eval_band(cfg: &RunConfig, field: &NeuralField) -> f64 {
    cfg.eval_band
        .unwrap_or_else(|| field.transform.distance_to_world(cfg.loss.truncation))
}

/// Near-surface errors of `field` against `scene`.
pub fn evaluate_field(field: &NeuralField, scene: &AnalyticScene, cfg: &RunConfig) -> Result<SdfMetrics, CliError> {
    let bounds = field_bounds(field);
    let points = band_points(scene, &bounds, eval_band(cfg, field), cfg.eval_points, cfg.seed)?;
    let truth: Vec<f64> = points.iter().map(|p| scene.sdf(p)).collect();
    Ok(sdf_metrics(&field.jet_batch(&points), &truth))
}

fn write_table(out: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    let text = String::from_utf8(bytes).expect("csv output is utf-8");
    if let Some(path) = out {
        fs::write(path, &text).map_err(io_err(path))?;
    }
    Ok(text)
}

pub fn cmd_eval_sdf(model: &Path, scene_path: &Path, cfg: &RunConfig, out: Option<&Path>) -> Result<String, CliError> {
    let field = io_store::load_model(model)?;
    let scene = read_scene(scene_path)?;
    if scene.dim() != field.net.dim() {
        return Err(CliError::Usage("model and scene have different dimensions".into()));
    }
    let m = evaluate_field(&field, &scene, cfg)?;
    write_table(
        out,
        &["mae", "rmse", "eikonal", "points"],
        &[vec![m.mae.to_string(), m.rmse.to_string(), m.eikonal.to_string(), m.points.to_string()]],
    )
}

/// Global localization along the dataset's poses with its own scans.
pub fn localize_scans(field: &dyn DistanceField, map: &Aabb, scans: &[Scan], cfg: &RunConfig) -> Result<Option<Metrics>, CliError> {
    if map.dim() != Dim::Two {
        return Err(CliError::Usage("localization runs on planar maps".into()));
    }
    let truth: Vec<Pose2> = scans.iter().map(|s| planar(s.pose())).collect();
    let beams: Vec<Vec<Vec3>> = scans.iter().map(|s| s.points().to_vec()).collect();
    let mcl_cfg = cfg.mcl_config();
    let runs = mcl::localize(field, map, &truth, &beams, &mcl_cfg)?;
    Ok(mcl::run_metrics(&truth, &runs))
}

/// Region particles are spread over: the configured bounds when given,
/// else the whole box the field was trained in. A learned field is only
/// meaningful where scans reached, so tight bounds keep particles out of
/// unobserved space.
pub fn localization_bounds(field: &NeuralField, cfg: &RunConfig) -> Aabb {
    cfg.bounds.unwrap_or_else(|| field_bounds(field))
}

/// The trained field sampled on a grid over `map`, used as the MCL map.
pub fn localization_grid(field: &NeuralField, map: &Aabb, cfg: &RunConfig) -> GridField {
    GridField::sample(field, map, cfg.mcl_grid_res)
}

fn dash_or(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| v.to_string())
}

/// Which field `cmd_localize` scores particles against.
pub enum MapSource<'a> {
    Model(&'a Path),
    Scene(&'a Path),
}

pub fn cmd_localize(map: MapSource, data_dir: &Path, cfg: &RunConfig, out: Option<&Path>) -> Result<String, CliError> {
    let scans = io_store::load_scans(data_dir)?;
    let metrics = match map {
        MapSource::Model(path) => {
            let field = io_store::load_model(path)?;
            let map = localization_bounds(&field, cfg);
            localize_scans(&localization_grid(&field, &map, cfg), &map, &scans, cfg)?
        }
        MapSource::Scene(path) => {
            let scene = read_scene(path)?;
            localize_scans(&scene, &scene_bounds(&scans, cfg)?, &scans, cfg)?
        }
    };
    write_table(
        out,
        &["rmse", "mae", "converged_runs", "runs"],
        &[vec![
            dash_or(metrics.map(|m| m.rmse)),
            dash_or(metrics.map(|m| m.mae)),
            metrics.map_or(0, |m| m.converged_runs).to_string(),
            cfg.mcl.runs.to_string(),
        ]],
    )
}

/// One supervision mode of a comparison.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub mode: SupervisionMode,
    pub field: NeuralField,
    pub history: Vec<LossBreakdown>,
    /// Wall-clock training time; not part of any written output.
    pub train_seconds: f64,
    pub sdf: SdfMetrics,
    /// Localization metrics; `None` for 3D scenes or when no run converged.
    pub mcl: Option<Metrics>,
}

/// Trains one field per supervision mode on identical scans, seeds and
/// hyperparameters, then scores each against the scene.
pub fn compare(scene: &AnalyticScene, cfg: &RunConfig) -> Result<Vec<CompareRow>, CliError> {
    let scans = synthesize(scene, cfg)?;
    SupervisionMode::ALL
        .iter()
        .map(|&mode| {
            let run = RunConfig { mode, ..cfg.clone() };
            let started = std::time::Instant::now();
            let (field, history) = train_field(&scans, &run, |_, _| {})?;
            let train_seconds = started.elapsed().as_secs_f64();
            let sdf = evaluate_field(&field, scene, &run)?;
            let mcl = match scene.dim() {
                Dim::Two => {
                    let map = localization_bounds(&field, &run);
                    localize_scans(&localization_grid(&field, &map, &run), &map, &scans, &run)?
                }
                Dim::Three => None,
            };
            log::info!("{mode}: sdf {sdf:?} mcl {mcl:?}");
            Ok(CompareRow {
                mode,
                field,
                history,
                train_seconds,
                sdf,
                mcl,
            })
        })
        .collect()
}

pub fn compare_table(rows: &[CompareRow], out: Option<&Path>) -> Result<String, CliError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.mode.as_str().to_string(),
                r.sdf.mae.to_string(),
                r.sdf.rmse.to_string(),
                dash_or(r.mcl.map(|m| m.rmse)),
                dash_or(r.mcl.map(|m| m.mae)),
            ]
        })
        .collect();
    write_table(out, &["mode", "sdf_mae", "sdf_rmse", "mcl_rmse", "mcl_mae"], &body)
}

pub fn cmd_compare(scene_path: &Path, cfg: &RunConfig, out: Option<&Path>) -> Result<String, CliError> {
    let scene = read_scene(scene_path)?;
    compare_table(&compare(&scene, cfg)?, out)
}

/// Writes `text` to stdout, ignoring a closed pipe.
pub fn print(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}
