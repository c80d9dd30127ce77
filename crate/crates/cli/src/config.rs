//! Plain-text `key = value` run configuration.
//!
//! Every knob of the pipeline has a key. Files may set any subset; the rest
//! keep their defaults. Unknown or repeated keys are rejected.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndf_core::encode::EncodingConfig;
use ndf_core::mcl::MclConfig;
use ndf_core::scene_oracle::ScannerConfig;
use ndf_core::supervise::{RadiusLimits, SupervisionMode};
use ndf_core::train::{LossWeights, OptimConfig, TrainConfig};
use ndf_core::{Aabb, Dim, NetConfig, Vec3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` set twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: cannot use `{value}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Frequency layout of the positional encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    /// `h` bands geometrically spaced between the minimum and maximum frequency.
    Log,
    /// Octave bands `2^(k-1) pi`.
    Dyadic,
}

/// Where the sensor goes during synthesis.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec {
    /// `n` poses at distance `radius` from the bounds center. In 3D the poses
    /// cover a sphere and look at the center; in 2D they walk a circle
    /// counter-clockwise, heading along the tangent.
    Orbit { n: usize, radius: f64 },
    /// Planar poses read from a trajectory file (`t x y theta` per line).
    File(PathBuf),
}

impl TrajectorySpec {
    fn parse(value: &str) -> Result<Self, String> {
        let mut parts = value.split_whitespace();
        match parts.next() {
            Some("orbit") => {
                let n: usize = parts.next().ok_or("missing pose count")?.parse().map_err(|e| format!("{e}"))?;
                let radius: f64 = parts.next().ok_or("missing radius")?.parse().map_err(|e| format!("{e}"))?;
                if parts.next().is_some() {
                    return Err("expected `orbit N RADIUS`".into());
                }
                if n == 0 || !(radius > 0.0) || !radius.is_finite() {
                    return Err("orbit needs at least one pose and a positive radius".into());
                }
                Ok(Self::Orbit { n, radius })
            }
            Some("file") => {
                let rest = value.trim_start()["file".len()..].trim();
                if rest.is_empty() {
                    return Err("missing trajectory path".into());
                }
                Ok(Self::File(PathBuf::from(rest)))
            }
            _ => Err("expected `orbit N RADIUS` or `file PATH`".into()),
        }
    }

    fn to_text(&self) -> String {
        match self {
            Self::Orbit { n, radius } => format!("orbit {n} {radius}"),
            Self::File(p) => format!("file {}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub mode: SupervisionMode,
    /// World-frame box the field lives in. Without it the box is fitted to
    /// the data.
    pub bounds: Option<Aabb>,
    pub trajectory: TrajectorySpec,
    pub scanner_beams: usize,
    pub scanner_fov: f64,
    pub scanner_max_range: f64,
    pub scanner_noise: f64,
    pub encoding_h: usize,
    pub encoding_spacing: Spacing,
    pub encoding_min_freq: f64,
    pub encoding_max_freq: f64,
    pub net_width: usize,
    pub net_depth: usize,
    pub net_first_omega: f64,
    pub net_hidden_omega: f64,
    pub samples_per_ray: usize,
    pub drop_behind_origin: bool,
    pub neighbors: usize,
    pub warmup_steps: usize,
    pub loss: LossWeights,
    pub radius_min: f64,
    pub radius_max: f64,
    pub optim: OptimConfig,
    pub mesh_res: usize,
    /// Evaluation band in world units; defaults to the truncation distance.
    pub eval_band: Option<f64>,
    pub eval_points: usize,
    pub mcl: MclConfig,
    /// Grid resolution (points per axis) the trained field is sampled on for
    /// localization.
    pub mcl_grid_res: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let radius = RadiusLimits::default();
        Self {
            seed: 0,
            threads: 0,
            mode: SupervisionMode::CurvatureConstrained,
            bounds: None,
            trajectory: TrajectorySpec::Orbit { n: 100, radius: 1.8 },
            scanner_beams: 64,
            scanner_fov: 2.0 * PI,
            scanner_max_range: 30.0,
            scanner_noise: 0.0,
            encoding_h: 30,
            encoding_spacing: Spacing::Log,
            encoding_min_freq: 1.0,
            encoding_max_freq: 8.0,
            net_width: 128,
            net_depth: 2,
            net_first_omega: 1.0,
            net_hidden_omega: 1.0,
            samples_per_ray: 40,
            drop_behind_origin: false,
            neighbors: 4,
            warmup_steps: 0,
            loss: LossWeights {
                eikonal: 1.0,
                ..LossWeights::default()
            },
            radius_min: radius.r_min,
            radius_max: radius.r_max,
            optim: OptimConfig {
                rays_per_batch: 64,
                ..OptimConfig::default()
            },
            mesh_res: 256,
            eval_band: None,
            eval_points: 4000,
            mcl: MclConfig::default(),
            mcl_grid_res: 256,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn parse_bounds(key: &str, value: &str) -> Result<Option<Aabb>, ConfigError> {
    if value == "auto" {
        return Ok(None);
    }
    let v: Vec<f64> = value.split_whitespace().map(|s| num(key, s)).collect::<Result<_, _>>()?;
    let (dim, m) = match v.len() {
        4 => (Dim::Two, 2),
        6 => (Dim::Three, 3),
        _ => return Err(bad(key, value, "expected `auto`, `xmin ymin xmax ymax` or six values for 3D")),
    };
    let mut lo = Vec3::zeros();
    let mut hi = Vec3::zeros();
    for a in 0..m {
        lo[a] = v[a];
        hi[a] = v[m + a];
    }
    Aabb::new(lo, hi, dim).map(Some).map_err(|e| bad(key, value, &e.to_string()))
}

fn bounds_text(b: &Option<Aabb>) -> String {
    match b {
        None => "auto".into(),
        Some(b) => {
            let m = b.dim().m();
            let lo = (0..m).map(|a| b.min()[a].to_string());
            let hi = (0..m).map(|a| b.max()[a].to_string());
            lo.chain(hi).collect::<Vec<_>>().join(" ")
        }
    }
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "expected `true` or `false`")),
    }
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let o = &self.mcl.odometry;
        vec![
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("mode", self.mode.as_str().into()),
            ("bounds", bounds_text(&self.bounds)),
            ("trajectory", self.trajectory.to_text()),
            ("scanner.beams", self.scanner_beams.to_string()),
            ("scanner.fov", self.scanner_fov.to_string()),
            ("scanner.max_range", self.scanner_max_range.to_string()),
            ("scanner.noise", self.scanner_noise.to_string()),
            ("encoding.h", self.encoding_h.to_string()),
            (
                "encoding.spacing",
                match self.encoding_spacing {
                    Spacing::Log => "log",
                    Spacing::Dyadic => "dyadic",
                }
                .into(),
            ),
            ("encoding.min_freq", self.encoding_min_freq.to_string()),
            ("encoding.max_freq", self.encoding_max_freq.to_string()),
            ("net.width", self.net_width.to_string()),
            ("net.depth", self.net_depth.to_string()),
            ("net.first_omega", self.net_first_omega.to_string()),
            ("net.hidden_omega", self.net_hidden_omega.to_string()),
            ("samples_per_ray", self.samples_per_ray.to_string()),
            ("drop_behind_origin", self.drop_behind_origin.to_string()),
            ("neighbors", self.neighbors.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("loss.endpoint", self.loss.endpoint.to_string()),
            ("loss.eikonal", self.loss.eikonal.to_string()),
            ("loss.smoothness", self.loss.smoothness.to_string()),
            ("loss.smoothness_literal", self.loss.smoothness_literal.to_string()),
            ("loss.gamma", self.loss.gamma.to_string()),
            ("loss.truncation", self.loss.truncation.to_string()),
            ("radius.min", self.radius_min.to_string()),
            ("radius.max", self.radius_max.to_string()),
            ("optim.lr", self.optim.lr.to_string()),
            ("optim.beta1", self.optim.beta1.to_string()),
            ("optim.beta2", self.optim.beta2.to_string()),
            ("optim.eps", self.optim.eps.to_string()),
            ("optim.weight_decay", self.optim.weight_decay.to_string()),
            ("optim.epochs", self.optim.epochs.to_string()),
            ("optim.batch", self.optim.rays_per_batch.to_string()),
            ("mesh.res", self.mesh_res.to_string()),
            ("eval.band", self.eval_band.map_or("auto".into(), |b| b.to_string())),
            ("eval.points", self.eval_points.to_string()),
            ("mcl.particles", self.mcl.n_particles.to_string()),
            ("mcl.convergence_std", self.mcl.convergence_std.to_string()),
            ("mcl.gate_translation", self.mcl.gate_translation.to_string()),
            ("mcl.gate_rotation", self.mcl.gate_rotation.to_string()),
            ("mcl.sigma_z", self.mcl.sigma_z.to_string()),
            ("mcl.max_beams", self.mcl.max_beams.to_string()),
            ("mcl.runs", self.mcl.runs.to_string()),
            ("mcl.grid_res", self.mcl_grid_res.to_string()),
            ("mcl.odom_trans_abs", o.trans_abs.to_string()),
            ("mcl.odom_trans_rel", o.trans_rel.to_string()),
            ("mcl.odom_rot_abs", o.rot_abs.to_string()),
            ("mcl.odom_rot_rel", o.rot_rel.to_string()),
        ]
    }

    /// Sets one key. Returns `Ok(false)` for unknown keys.
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "mode" => {
                self.mode = SupervisionMode::parse(value).ok_or_else(|| bad(key, value, "expected ray, dcn or curvature"))?
            }
            "bounds" => self.bounds = parse_bounds(key, value)?,
            "trajectory" => self.trajectory = TrajectorySpec::parse(value).map_err(|r| bad(key, value, &r))?,
            "scanner.beams" => self.scanner_beams = num(key, value)?,
            "scanner.fov" => self.scanner_fov = num(key, value)?,
            "scanner.max_range" => self.scanner_max_range = num(key, value)?,
            "scanner.noise" => self.scanner_noise = num(key, value)?,
            "encoding.h" => self.encoding_h = num(key, value)?,
            "encoding.spacing" => {
                self.encoding_spacing = match value {
                    "log" => Spacing::Log,
                    "dyadic" => Spacing::Dyadic,
                    _ => return Err(bad(key, value, "expected log or dyadic")),
                }
            }
            "encoding.min_freq" => self.encoding_min_freq = num(key, value)?,
            "encoding.max_freq" => self.encoding_max_freq = num(key, value)?,
            "net.width" => self.net_width = num(key, value)?,
            "net.depth" => self.net_depth = num(key, value)?,
            "net.first_omega" => self.net_first_omega = num(key, value)?,
            "net.hidden_omega" => self.net_hidden_omega = num(key, value)?,
            "samples_per_ray" => self.samples_per_ray = num(key, value)?,
            "neighbors" => self.neighbors = num(key, value)?,
            "drop_behind_origin" => self.drop_behind_origin = boolean(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "loss.endpoint" => self.loss.endpoint = num(key, value)?,
            "loss.eikonal" => self.loss.eikonal = num(key, value)?,
            "loss.smoothness" => self.loss.smoothness = num(key, value)?,
            "loss.smoothness_literal" => self.loss.smoothness_literal = boolean(key, value)?,
            "loss.gamma" => self.loss.gamma = num(key, value)?,
            "loss.truncation" => self.loss.truncation = num(key, value)?,
            "radius.min" => self.radius_min = num(key, value)?,
            "radius.max" => self.radius_max = num(key, value)?,
            "optim.lr" => self.optim.lr = num(key, value)?,
            "optim.beta1" => self.optim.beta1 = num(key, value)?,
            "optim.beta2" => self.optim.beta2 = num(key, value)?,
            "optim.eps" => self.optim.eps = num(key, value)?,
            "optim.weight_decay" => self.optim.weight_decay = num(key, value)?,
            "optim.epochs" => self.optim.epochs = num(key, value)?,
            "optim.batch" => self.optim.rays_per_batch = num(key, value)?,
            "mesh.res" => self.mesh_res = num(key, value)?,
            "eval.band" => self.eval_band = if value == "auto" { None } else { Some(num(key, value)?) },
            "eval.points" => self.eval_points = num(key, value)?,
            "mcl.particles" => self.mcl.n_particles = num(key, value)?,
            "mcl.convergence_std" => self.mcl.convergence_std = num(key, value)?,
            "mcl.gate_translation" => self.mcl.gate_translation = num(key, value)?,
            "mcl.gate_rotation" => self.mcl.gate_rotation = num(key, value)?,
            "mcl.sigma_z" => self.mcl.sigma_z = num(key, value)?,
            "mcl.max_beams" => self.mcl.max_beams = num(key, value)?,
            "mcl.runs" => self.mcl.runs = num(key, value)?,
            "mcl.grid_res" => self.mcl_grid_res = num(key, value)?,
            "mcl.odom_trans_abs" => self.mcl.odometry.trans_abs = num(key, value)?,
            "mcl.odom_trans_rel" => self.mcl.odometry.trans_rel = num(key, value)?,
            "mcl.odom_rot_abs" => self.mcl.odometry.rot_abs = num(key, value)?,
            "mcl.odom_rot_rel" => self.mcl.odometry.rot_rel = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a config file body over the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if !cfg.set(key, value)? {
                return Err(ConfigError::UnknownKey {
                    line: i + 1,
                    key: key.into(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: key.into(),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| crate::CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::parse(&text)?)
    }

    /// The whole configuration as a file `parse` reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        self.train_config().weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.optim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mcl.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.encoding().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.net_width == 0 || self.net_depth == 0 {
            return invalid("network width and depth must be at least 1");
        }
        if !(self.net_first_omega > 0.0 && self.net_hidden_omega > 0.0) {
            return invalid("sine frequency factors must be positive");
        }
        if self.samples_per_ray < 2 {
            return invalid("need at least 2 samples per ray");
        }
        if self.neighbors == 0 {
            return invalid("need at least one smoothness neighbor");
        }
        if !(self.radius_min > 0.0 && self.radius_min < self.radius_max && self.radius_max.is_finite()) {
            return invalid("radius limits must satisfy 0 < min < max < inf");
        }
        if self.scanner_beams == 0 || !(self.scanner_fov > 0.0) || !(self.scanner_max_range > 0.0) {
            return invalid("scanner needs beams, a positive field of view and a positive range");
        }
        if !(self.scanner_noise >= 0.0) {
            return invalid("scanner noise must be non-negative");
        }
        if self.mesh_res < 2 || self.mcl_grid_res < 2 {
            return invalid("grid resolutions must be at least 2");
        }
        if self.eval_points == 0 {
            return invalid("need at least one evaluation point");
        }
        if let Some(b) = self.eval_band {
            if !(b > 0.0 && b.is_finite()) {
                return invalid("evaluation band must be positive");
            }
        }
        Ok(())
    }

    pub fn encoding(&self) -> Result<EncodingConfig, ndf_core::encode::EncodingError> {
        match self.encoding_spacing {
            Spacing::Dyadic => Ok(EncodingConfig::dyadic(self.encoding_h)),
            Spacing::Log => EncodingConfig::log_spaced(self.encoding_h, self.encoding_min_freq, self.encoding_max_freq),
        }
    }

    pub fn net_config(&self, dim: Dim) -> NetConfig {
        NetConfig {
            dim,
            encoding: self.encoding().expect("validated on load"),
            hidden_width: self.net_width,
            hidden_layers: self.net_depth,
            first_omega: self.net_first_omega,
            hidden_omega: self.net_hidden_omega,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            weights: self.loss,
            optim: OptimConfig {
                seed: self.seed,
                ..self.optim
            },
            mode: self.mode,
            samples_per_ray: self.samples_per_ray,
            neighbors: self.neighbors,
            limits: RadiusLimits {
                r_min: self.radius_min,
                r_max: self.radius_max,
            },
            warmup_steps: self.warmup_steps,
            drop_behind_origin: self.drop_behind_origin,
        }
    }

    pub fn scanner(&self, seed: u64) -> ScannerConfig {
        ScannerConfig {
            beams: self.scanner_beams,
            fov: self.scanner_fov,
            max_range: self.scanner_max_range,
            noise_sigma: self.scanner_noise,
            seed,
        }
    }

    pub fn mcl_config(&self) -> MclConfig {
        MclConfig {
            seed: self.seed,
            ..self.mcl
        }
    }
}
