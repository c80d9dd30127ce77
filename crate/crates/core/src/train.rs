//! Loss assembly over batches of ray samples and AdamW optimization.

use crate::field_net::{FieldNet, Tape};
use crate::geom::{Dim, Mat3, Ray, Vec3};
use crate::raysample::{sample_ray, RaySample, SampleError};
use crate::supervise::{assign_weights, estimate, DistanceEstimate, RadiusLimits, SupervisionMode, TargetSettings};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("batch contains no samples")]
    EmptyBatch,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {breakdown:?}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        breakdown: LossBreakdown,
    },
    #[error("non-finite gradient entry at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("gradient has {got} entries, expected {expected}")]
    GradientShape { got: usize, expected: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub endpoint: f64,
    pub eikonal: f64,
    pub smoothness: f64,
    pub gamma: f64,
    /// Upper clamp on distance targets, in canonical units.
    pub truncation: f64,
    /// Use `|n_l . n_j|` on raw gradients instead of `1 - n_l . n_j` on unit normals.
    pub smoothness_literal: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            endpoint: 1e-1,
            eikonal: 1e-4,
            smoothness: 1e-3,
            gamma: 3.0,
            truncation: 0.2,
            smoothness_literal: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let all = [self.endpoint, self.eikonal, self.smoothness, self.gamma];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(TrainError::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        if !(self.truncation > 0.0) {
            return Err(TrainError::InvalidConfig("truncation must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub rays_per_batch: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            epochs: 10,
            rays_per_batch: 512,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(TrainError::InvalidConfig("weight decay must be >= 0 and eps > 0".into()));
        }
        if self.rays_per_batch == 0 {
            return Err(TrainError::InvalidConfig("rays per batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything the training loop needs besides the net and the rays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub optim: OptimConfig,
    pub mode: SupervisionMode,
    pub samples_per_ray: usize,
    pub neighbors: usize,
    pub limits: RadiusLimits,
    /// Curvature-constrained runs use closest-normal targets for this many
    /// optimizer steps first.
    pub warmup_steps: usize,
    /// Omit the last sample of each ray, which sits behind the sensor.
    pub drop_behind_origin: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            optim: OptimConfig::default(),
            mode: SupervisionMode::CurvatureConstrained,
            samples_per_ray: 40,
            neighbors: 4,
            limits: RadiusLimits::default(),
            warmup_steps: 0,
            drop_behind_origin: false,
        }
    }
}

impl TrainConfig {
    pub fn target_settings(&self) -> TargetSettings {
        TargetSettings {
            truncation: self.weights.truncation,
            gamma: self.weights.gamma,
            limits: self.limits,
        }
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub data: f64,
    pub endpoint: f64,
    pub eikonal: f64,
    pub smoothness: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn is_finite(&self) -> bool {
        [self.data, self.endpoint, self.eikonal, self.smoothness, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn residual(d_pred: f64, d_hat: f64) -> f64 {
    (d_pred - d_hat).abs()
}

/// Rays together with their samples, in ray order.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub rays: Vec<Ray>,
    pub samples: Vec<RaySample>,
}

impl SampleBatch {
    pub fn new(rays: Vec<Ray>, samples_per_ray: usize, drop_behind_origin: bool) -> Result<Self, TrainError> {
        let mut samples = Vec::with_capacity(rays.len() * samples_per_ray);
        for (i, ray) in rays.iter().enumerate() {
            samples.extend(sample_ray(ray, samples_per_ray, i, drop_behind_origin)?);
        }
        Ok(Self { rays, samples })
    }
}

/// Field quantities the loss is evaluated on.
#[derive(Debug, Clone)]
pub struct LossInputs<'a> {
    pub values: &'a [f64],
    pub gradients: &'a [Vec3],
    pub endpoint_values: &'a [f64],
    pub targets: &'a [DistanceEstimate],
    pub neighbors: &'a [Vec<usize>],
}

/// Loss value plus its sensitivities to the sample values, sample gradients
/// and endpoint values. Targets and weights are treated as constants.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub breakdown: LossBreakdown,
    pub d_values: Vec<f64>,
    pub d_gradients: Vec<Vec3>,
    pub d_endpoints: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss_terms(inputs: &LossInputs, w: &LossWeights) -> Result<LossEval, TrainError> {
    let n = inputs.values.len();
    if n == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let mut d_values = vec![0.0; n];
    let mut d_gradients = vec![Vec3::zeros(); n];
    let mut d_endpoints = vec![0.0; inputs.endpoint_values.len()];

    let w_sum: f64 = inputs.targets.iter().map(|t| t.weight).sum();
    let mut data = 0.0;
    if w_sum > 0.0 {
        for (i, (d, t)) in inputs.values.iter().zip(inputs.targets).enumerate() {
            let eps = d - t.d_hat;
            data += t.weight * eps.abs();
            d_values[i] = t.weight * sign(eps) / w_sum;
        }
        data /= w_sum;
    }

    let mut endpoint = 0.0;
    let n_end = inputs.endpoint_values.len();
    for (i, d) in inputs.endpoint_values.iter().enumerate() {
        endpoint += d.abs();
        d_endpoints[i] = w.endpoint * sign(*d) / n_end as f64;
    }
    if n_end > 0 {
        endpoint /= n_end as f64;
    }

    let mut eikonal = 0.0;
    for (i, g) in inputs.gradients.iter().enumerate() {
        let norm = g.norm();
        eikonal += (norm - 1.0).abs();
        if norm > 0.0 {
            d_gradients[i] += g * (w.eikonal * sign(norm - 1.0) / (norm * n as f64));
        }
    }
    eikonal /= n as f64;

    let pairs: usize = inputs.neighbors.iter().map(Vec::len).sum();
    let mut smoothness = 0.0;
    if pairs > 0 {
        let scale = w.smoothness / pairs as f64;
        for (l, nbrs) in inputs.neighbors.iter().enumerate() {
            let gl = inputs.gradients[l];
            for &j in nbrs {
                let gj = inputs.gradients[j];
                if w.smoothness_literal {
                    let dot = gl.dot(&gj);
                    smoothness += dot.abs();
                    let s = sign(dot) * scale;
                    d_gradients[l] += gj * s;
                    d_gradients[j] += gl * s;
                } else {
                    let (nl, nj) = (gl.norm(), gj.norm());
                    if nl == 0.0 || nj == 0.0 {
                        smoothness += 1.0;
                        continue;
                    }
                    let (ul, uj) = (gl / nl, gj / nj);
                    let dot = ul.dot(&uj);
                    smoothness += 1.0 - dot;
                    d_gradients[l] -= (uj - ul * dot) * (scale / nl);
                    d_gradients[j] -= (ul - uj * dot) * (scale / nj);
                }
            }
        }
        smoothness /= pairs as f64;
    }

    let total = data + w.endpoint * endpoint + w.eikonal * eikonal + w.smoothness * smoothness;
    Ok(LossEval {
        breakdown: LossBreakdown {
            data,
            endpoint,
            eikonal,
            smoothness,
            total,
        },
        d_values,
        d_gradients,
        d_endpoints,
    })
}

/// For each point the `k` nearest other points (Euclidean), nearest first,
/// ties broken by index. Uses a uniform bucket grid over the bounding box.
pub fn k_nearest(points: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return vec![Vec::new(); n];
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = hi - lo;
    let spread: Vec<usize> = (0..3).filter(|&a| ext[a] > 0.0).collect();
    let cells_wanted = (n as f64 / 2.0).max(1.0);
    let measure: f64 = spread.iter().map(|&a| ext[a]).product();
    let cell = if spread.is_empty() {
        1.0
    } else {
        (measure / cells_wanted).powf(1.0 / spread.len() as f64)
    };
    let mut dims = [1usize; 3];
    for &a in &spread {
        dims[a] = ((ext[a] / cell).floor() as usize).clamp(1, 1 << 10);
    }
    let size = Vec3::from_fn(|a, _| if dims[a] > 1 { ext[a] / dims[a] as f64 } else { f64::INFINITY });
    let cell_of = |p: &Vec3| -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            if dims[a] > 1 {
                c[a] = (((p[a] - lo[a]) / size[a]) as usize).min(dims[a] - 1);
            }
        }
        c
    };
    let flat = |c: [usize; 3]| c[0] + dims[0] * (c[1] + dims[1] * c[2]);
    let total = dims[0] * dims[1] * dims[2];
    let mut start = vec![0usize; total + 1];
    let homes: Vec<[usize; 3]> = points.iter().map(cell_of).collect();
    for c in &homes {
        start[flat(*c) + 1] += 1;
    }
    for i in 0..total {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut bucket = vec![0usize; n];
    for (i, c) in homes.iter().enumerate() {
        let f = flat(*c);
        bucket[fill[f]] = i;
        fill[f] += 1;
    }
    let min_size = size.min();
    let max_dim = *dims.iter().max().unwrap();
    let better = |a: (f64, usize), b: (f64, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);

    (0..n)
        .map(|i| {
            let p = points[i];
            let home = homes[i];
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for r in 0..=max_dim {
                let range = |a: usize| {
                    let lo = home[a].saturating_sub(r);
                    let hi = (home[a] + r).min(dims[a] - 1);
                    lo..=hi
                };
                for cz in range(2) {
                    for cy in range(1) {
                        for cx in range(0) {
                            let ring = [cx, cy, cz]
                                .iter()
                                .zip(&home)
                                .map(|(c, h)| c.abs_diff(*h))
                                .max()
                                .unwrap();
                            if ring != r {
                                continue;
                            }
                            let f = flat([cx, cy, cz]);
                            for &j in &bucket[start[f]..start[f + 1]] {
                                if j == i {
                                    continue;
                                }
                                let cand = ((points[j] - p).norm_squared(), j);
                                if best.len() == k && !better(cand, best[k - 1]) {
                                    continue;
                                }
                                let pos = best.iter().position(|&b| better(cand, b)).unwrap_or(best.len());
                                best.insert(pos, cand);
                                best.truncate(k);
                            }
                        }
                    }
                }
                let reach = r as f64 * min_size;
                if best.len() == k && best[k - 1].0 < reach * reach {
                    break;
                }
            }
            best.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

const CHUNK: usize = 256;

/// Targets for every sample computed from jets of the current field.
pub fn compute_targets(
    mode: SupervisionMode,
    batch: &SampleBatch,
    values: &[f64],
    gradients: &[Vec3],
    hessians: Option<&[Mat3]>,
    dim: Dim,
    settings: &TargetSettings,
) -> Vec<DistanceEstimate> {
    let mut targets: Vec<DistanceEstimate> = batch
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let jet = crate::field_net::FieldJet {
                value: values[i],
                gradient: gradients[i],
                hessian: hessians.map(|h| h[i]).unwrap_or_else(Mat3::zeros),
            };
            estimate(mode, &jet, &batch.rays[s.ray_index], &s.x, dim, settings)
        })
        .collect();
    assign_weights(&mut targets, values, settings.gamma);
    targets
}

/// Loss and exact parameter gradient for one batch.
pub fn batch_loss(net: &FieldNet, batch: &SampleBatch, cfg: &TrainConfig) -> Result<(LossBreakdown, Vec<f64>), TrainError> {
    let n = batch.samples.len();
    if n == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let mut points: Vec<Vec3> = batch.samples.iter().map(|s| s.x).collect();
    points.extend(batch.rays.iter().map(|r| *r.endpoint()));
    let want_hessian = cfg.mode.needs_hessian();

    let chunks: Vec<(Vec<f64>, Vec<Vec3>, Option<Vec<Mat3>>, Tape)> = points
        .par_chunks(CHUNK)
        .map(|c| {
            let (jets, tape) = net.forward_batch(c, want_hessian, true);
            (jets.values, jets.gradients, jets.hessians, tape.expect("tape requested"))
        })
        .collect();
    let mut values = Vec::with_capacity(points.len());
    let mut gradients = Vec::with_capacity(points.len());
    let mut hessians = Vec::new();
    for (v, g, h, _) in &chunks {
        values.extend_from_slice(v);
        gradients.extend_from_slice(g);
        if let Some(h) = h {
            hessians.extend_from_slice(h);
        }
    }

    let settings = cfg.target_settings();
    let targets = compute_targets(
        cfg.mode,
        batch,
        &values[..n],
        &gradients[..n],
        want_hessian.then(|| &hessians[..n]),
        net.dim(),
        &settings,
    );
    let neighbors = k_nearest(&points[..n], cfg.neighbors);
    let eval = loss_terms(
        &LossInputs {
            values: &values[..n],
            gradients: &gradients[..n],
            endpoint_values: &values[n..],
            targets: &targets,
            neighbors: &neighbors,
        },
        &cfg.weights,
    )?;

    let mut d_value = eval.d_values;
    d_value.extend(eval.d_endpoints);
    let mut d_grad = eval.d_gradients;
    d_grad.extend(std::iter::repeat_n(Vec3::zeros(), batch.rays.len()));

    let partials: Vec<Vec<f64>> = chunks
        .par_iter()
        .enumerate()
        .map(|(c, (_, _, _, tape))| {
            let lo = c * CHUNK;
            let hi = lo + tape.len();
            let mut g = vec![0.0; net.param_count()];
            net.backward_batch(tape, &d_value[lo..hi], &d_grad[lo..hi], &mut g);
            g
        })
        .collect();
    let mut grad = vec![0.0; net.param_count()];
    for p in &partials {
        for (a, b) in grad.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok((eval.breakdown, grad))
}

/// First and second moment estimates of AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update with weight decay applied directly to the parameters.
pub fn adamw_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &OptimConfig) -> Result<(), TrainError> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::GradientShape {
            got: grad.len(),
            expected: params.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient(i));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * params[i]);
    }
    Ok(())
}

/// Trains `net` on canonical-frame rays. `on_epoch` receives the epoch index,
/// the mean loss breakdown over that epoch's batches and the current net.
pub fn train(
    net: &mut FieldNet,
    rays: &[Ray],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossBreakdown, &FieldNet),
) -> Result<Vec<LossBreakdown>, TrainError> {
    cfg.weights.validate()?;
    cfg.optim.validate()?;
    let mut history = Vec::with_capacity(cfg.optim.epochs);
    if cfg.optim.epochs == 0 {
        return Ok(history);
    }
    if rays.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.optim.seed);
    let mut order: Vec<usize> = (0..rays.len()).collect();
    let mut state = AdamState::new(net.param_count());
    let mut params = net.params();
    for epoch in 0..cfg.optim.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.optim.rays_per_batch).enumerate() {
            let batch = SampleBatch::new(idx.iter().map(|&i| rays[i]).collect(), cfg.samples_per_ray, cfg.drop_behind_origin)?;
            let (loss, grad) = if cfg.mode == SupervisionMode::CurvatureConstrained && state.step() < cfg.warmup_steps as u64 {
                let warm = TrainConfig {
                    mode: SupervisionMode::ClosestNormal,
                    ..*cfg
                };
                batch_loss(net, &batch, &warm)?
            } else {
                batch_loss(net, &batch, cfg)?
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    breakdown: loss,
                });
            }
            adamw_step(&mut params, &grad, &mut state, &cfg.optim)?;
            net.set_params(&params).expect("parameter count is fixed");
            sum.data += loss.data;
            sum.endpoint += loss.endpoint;
            sum.eikonal += loss.eikonal;
            sum.smoothness += loss.smoothness;
            sum.total += loss.total;
            batches += 1;
        }
        let k = batches as f64;
        let mean = LossBreakdown {
            data: sum.data / k,
            endpoint: sum.endpoint / k,
            eikonal: sum.eikonal / k,
            smoothness: sum.smoothness / k,
            total: sum.total / k,
        };
        log::debug!("epoch {epoch}: {mean:?}");
        on_epoch(epoch, &mean, net);
        history.push(mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::EncodingConfig;
    use crate::field_net::NetConfig;
    use crate::scene_oracle::{AnalyticScene, Primitive};
    use crate::supervise::SupervisionMode;
    use rand::Rng;

    fn est(d_hat: f64, weight: f64) -> DistanceEstimate {
        DistanceEstimate {
            d_hat,
            weight,
            roc_query: 1.0,
            roc_surface: 1.0,
            normal_unit: Vec3::x(),
            mode: SupervisionMode::RayDistance,
        }
    }

    fn no_reg() -> LossWeights {
        LossWeights {
            endpoint: 0.0,
            eikonal: 0.0,
            smoothness: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual(0.3, 0.3), 0.0);
        assert!((residual(1.0, 0.98) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn single_term_collapse() {
        let eval = loss_terms(
            &LossInputs {
                values: &[0.7],
                gradients: &[Vec3::x()],
                endpoint_values: &[0.1],
                targets: &[est(0.4, 1.0)],
                neighbors: &[vec![]],
            },
            &no_reg(),
        )
        .unwrap();
        assert!((eval.breakdown.total - 0.3).abs() < 1e-15);
    }

    #[test]
    fn data_term_normalizes_by_weight_sum() {
        let values = [0.5, 0.1, 0.9];
        let grads = [Vec3::x(); 3];
        let nbrs = vec![vec![]; 3];
        let run = |targets: &[DistanceEstimate]| {
            loss_terms(
                &LossInputs {
                    values: &values,
                    gradients: &grads,
                    endpoint_values: &[],
                    targets,
                    neighbors: &nbrs,
                },
                &no_reg(),
            )
            .unwrap()
            .breakdown
            .data
        };
        let only_one = run(&[est(0.2, 0.0), est(0.3, 2.5), est(0.0, 0.0)]);
        assert!((only_one - 0.2).abs() < 1e-15);
        let base = [est(0.2, 0.3), est(0.3, 2.5), est(0.0, 1.0)];
        let scaled: Vec<_> = base.iter().map(|e| est(e.d_hat, e.weight * 7.0)).collect();
        assert!((run(&base) - run(&scaled)).abs() < 1e-15);
    }

    #[test]
    fn total_is_weighted_sum() {
        let values = [0.5, -0.1, 0.2];
        let grads = [Vec3::new(1.2, 0.1, 0.0), Vec3::new(0.9, -0.3, 0.1), Vec3::new(0.0, 1.0, 0.0)];
        let nbrs = vec![vec![1, 2], vec![0], vec![1]];
        let w = LossWeights::default();
        let e = loss_terms(
            &LossInputs {
                values: &values,
                gradients: &grads,
                endpoint_values: &[0.3, -0.2],
                targets: &[est(0.2, 0.3), est(0.3, 2.5), est(0.0, 1.0)],
                neighbors: &nbrs,
            },
            &w,
        )
        .unwrap()
        .breakdown;
        let want = e.data + w.endpoint * e.endpoint + w.eikonal * e.eikonal + w.smoothness * e.smoothness;
        assert!((e.total - want).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let e = loss_terms(
            &LossInputs {
                values: &[],
                gradients: &[],
                endpoint_values: &[],
                targets: &[],
                neighbors: &[],
            },
            &LossWeights::default(),
        );
        assert_eq!(e.unwrap_err(), TrainError::EmptyBatch);
    }

    #[test]
    fn loss_sensitivities_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let grads: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
            .collect();
        let ends = [0.13, -0.4];
        let targets: Vec<_> = (0..n).map(|i| est(0.1 * i as f64, 0.2 + i as f64)).collect();
        let nbrs: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n, (i + 3) % n]).collect();
        for literal in [false, true] {
            let w = LossWeights {
                endpoint: 0.3,
                eikonal: 0.7,
                smoothness: 0.5,
                smoothness_literal: literal,
                ..Default::default()
            };
            let total = |g: &[Vec3]| {
                loss_terms(
                    &LossInputs {
                        values: &values,
                        gradients: g,
                        endpoint_values: &ends,
                        targets: &targets,
                        neighbors: &nbrs,
                    },
                    &w,
                )
                .unwrap()
            };
            let base = total(&grads);
            let h = 1e-6;
            for i in 0..n {
                for a in 0..3 {
                    let mut gp = grads.clone();
                    gp[i][a] += h;
                    let mut gm = grads.clone();
                    gm[i][a] -= h;
                    let fd = (total(&gp).breakdown.total - total(&gm).breakdown.total) / (2.0 * h);
                    assert!((fd - base.d_gradients[i][a]).abs() < 1e-7, "{literal} {i} {a}");
                }
            }
        }
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        pts.push(pts[5]);
        pts.push(pts[5]);
        let fast = k_nearest(&pts, 4);
        for (i, got) in fast.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| ((pts[j] - pts[i]).norm_squared(), j))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..4].iter().map(|p| p.1).collect();
            assert_eq!(got, &want);
        }
        assert!(k_nearest(&pts[..1], 4)[0].is_empty());
    }

    fn sphere_rays(count: usize, seed: u64) -> (AnalyticScene, Vec<Ray>) {
        let scene = AnalyticScene::new(vec![Primitive::Sphere {
            center: Vec3::zeros(),
            radius: 0.5,
        }])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rays = (0..count)
            .map(|_| {
                let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
                let origin = dir * 0.9 + Vec3::new(0.0, 0.0, rng.random_range(-0.05..0.05));
                let end = dir * 0.5;
                Ray::new(origin, end).unwrap()
            })
            .collect();
        (scene, rays)
    }

    #[test]
    fn oracle_sphere_satisfies_every_term() {
        // rays along radial lines so every target is exact
        let scene = AnalyticScene::new(vec![Primitive::Sphere {
            center: Vec3::zeros(),
            radius: 0.5,
        }])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = Vec3::new(0.3, -0.8, 0.5).normalize();
        let rays: Vec<Ray> = (0..64)
            .map(|_| {
                let jitter = Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01));
                let dir = (base + jitter).normalize();
                Ray::new(dir * 0.95, dir * 0.5).unwrap()
            })
            .collect();
        let batch = SampleBatch::new(rays, 40, false).unwrap();
        let n = batch.samples.len();
        let jets: Vec<_> = batch.samples.iter().map(|s| scene.jet(&s.x)).collect();
        let values: Vec<f64> = jets.iter().map(|j| j.value).collect();
        let grads: Vec<Vec3> = jets.iter().map(|j| j.gradient).collect();
        let hess: Vec<Mat3> = jets.iter().map(|j| j.hessian).collect();
        let settings = TargetSettings {
            truncation: 1.0,
            gamma: 3.0,
            limits: RadiusLimits::default(),
        };
        let targets = compute_targets(SupervisionMode::CurvatureConstrained, &batch, &values, &grads, Some(&hess), Dim::Three, &settings);
        for (t, v) in targets.iter().zip(&values) {
            assert!(residual(*v, t.d_hat) < 1e-9);
        }
        let ends: Vec<f64> = batch.rays.iter().map(|r| scene.sdf(r.endpoint())).collect();
        let pts: Vec<Vec3> = batch.samples.iter().map(|s| s.x).collect();
        let e = loss_terms(
            &LossInputs {
                values: &values,
                gradients: &grads,
                endpoint_values: &ends,
                targets: &targets,
                neighbors: &k_nearest(&pts, 4),
            },
            &LossWeights::default(),
        )
        .unwrap()
        .breakdown;
        assert_eq!(n, 64 * 40);
        assert!(e.data < 1e-6 && e.endpoint < 1e-6 && e.eikonal < 1e-6);
        // all normals within ~2 degrees of each other
        assert!(e.smoothness < 1e-3, "{}", e.smoothness);
    }

    fn small_net(seed: u64) -> FieldNet {
        FieldNet::init(
            &NetConfig {
                dim: Dim::Three,
                encoding: EncodingConfig::log_spaced(3, 1.0, 4.0).unwrap(),
                hidden_width: 12,
                hidden_layers: 2,
                first_omega: 3.0,
                hidden_omega: 2.0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let (_, rays) = sphere_rays(6, 4);
        let batch = SampleBatch::new(rays, 8, false).unwrap();
        let net = small_net(1);
        for mode in SupervisionMode::ALL {
            let cfg = TrainConfig {
                mode,
                weights: LossWeights {
                    endpoint: 0.3,
                    eikonal: 0.2,
                    smoothness: 0.1,
                    ..Default::default()
                },
                ..Default::default()
            };
            let (_, grad) = batch_loss(&net, &batch, &cfg).unwrap();
            // Freeze targets, weights and neighbors at the base parameters.
            let n = batch.samples.len();
            let mut pts: Vec<Vec3> = batch.samples.iter().map(|s| s.x).collect();
            pts.extend(batch.rays.iter().map(|r| *r.endpoint()));
            let (jets, _) = net.forward_batch(&pts, mode.needs_hessian(), false);
            let targets = compute_targets(
                mode,
                &batch,
                &jets.values[..n],
                &jets.gradients[..n],
                jets.hessians.as_deref().map(|h| &h[..n]),
                Dim::Three,
                &cfg.target_settings(),
            );
            let nbrs = k_nearest(&pts[..n], 4);
            let frozen = |p: &[f64]| {
                let mut net = net.clone();
                net.set_params(p).unwrap();
                let (j, _) = net.forward_batch(&pts, false, false);
                loss_terms(
                    &LossInputs {
                        values: &j.values[..n],
                        gradients: &j.gradients[..n],
                        endpoint_values: &j.values[n..],
                        targets: &targets,
                        neighbors: &nbrs,
                    },
                    &cfg.weights,
                )
                .unwrap()
                .breakdown
                .total
            };
            let params = net.params();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let h = 1e-6;
            for _ in 0..20 {
                let i = rng.random_range(0..params.len());
                let mut p = params.clone();
                p[i] += h;
                let up = frozen(&p);
                p[i] -= 2.0 * h;
                let down = frozen(&p);
                let fd = (up - down) / (2.0 * h);
                let tol = 1e-3 * fd.abs().max(grad[i].abs()).max(1e-4);
                assert!((fd - grad[i]).abs() < tol, "{mode} param {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn adamw_decay_only() {
        let cfg = OptimConfig {
            lr: 1e-2,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut p = vec![1.0, -2.0, 0.5];
        let mut st = AdamState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut st, &cfg).unwrap();
        let f = 1.0 - 1e-2 * 0.5;
        assert_eq!(p, vec![f, -2.0 * f, 0.5 * f]);
    }

    #[test]
    fn adamw_minimizes_a_quadratic() {
        let cfg = OptimConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        let mut prev = 1.0f64;
        let mut reached = None;
        for step in 0..5000 {
            let g = 2.0 * p[0];
            adamw_step(&mut p, &[g], &mut st, &cfg).unwrap();
            if p[0].abs() < 1e-3 && reached.is_none() {
                reached = Some(step);
            }
            if reached.is_none() {
                assert!(p[0].abs() < prev);
                prev = p[0].abs();
            }
        }
        assert!(reached.is_some());
        assert!(matches!(
            adamw_step(&mut p, &[f64::NAN], &mut st, &cfg),
            Err(TrainError::NonFiniteGradient(0))
        ));
    }

    #[test]
    fn training_bookkeeping_and_determinism() {
        let (_, rays) = sphere_rays(40, 5);
        let mut cfg = TrainConfig::default();
        cfg.optim.epochs = 0;
        let mut net = small_net(2);
        let before = net.clone();
        assert!(train(&mut net, &rays, &cfg, |_, _, _| {}).unwrap().is_empty());
        assert_eq!(net, before);

        cfg.optim.epochs = 3;
        cfg.optim.rays_per_batch = 16;
        cfg.samples_per_ray = 10;
        let mut calls = 0;
        let mut a = small_net(2);
        let hist = train(&mut a, &rays, &cfg, |_, _, _| calls += 1).unwrap();
        assert_eq!(hist.len(), 3);
        assert_eq!(calls, 3);
        let mut b = small_net(2);
        train(&mut b, &rays, &cfg, |_, _, _| {}).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), before.params());
    }

    #[test]
    fn warmup_uses_closest_normal_targets() {
        let (_, rays) = sphere_rays(24, 5);
        let mut cfg = TrainConfig::default();
        cfg.optim.epochs = 1;
        cfg.optim.rays_per_batch = 8;
        cfg.samples_per_ray = 6;
        // Every step of the single epoch is a warm-up step.
        let warm = TrainConfig { warmup_steps: 3, ..cfg };
        let dcn = TrainConfig {
            mode: SupervisionMode::ClosestNormal,
            ..cfg
        };
        let (mut a, mut b, mut c) = (small_net(4), small_net(4), small_net(4));
        train(&mut a, &rays, &warm, |_, _, _| {}).unwrap();
        train(&mut b, &rays, &dcn, |_, _, _| {}).unwrap();
        train(&mut c, &rays, &cfg, |_, _, _| {}).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn dropping_the_sample_behind_the_origin() {
        let (_, rays) = sphere_rays(3, 2);
        let all = SampleBatch::new(rays.clone(), 10, false).unwrap();
        let kept = SampleBatch::new(rays, 10, true).unwrap();
        assert_eq!(all.samples.len(), 30);
        assert_eq!(kept.samples.len(), 27);
        assert!(kept.samples.iter().all(|s| s.t >= 0.0));
    }
}
