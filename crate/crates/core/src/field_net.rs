//! Sine-activated MLP over encoded coordinates.
//!
//! Derivatives with respect to the input point are propagated forward
//! through the layers as jets: each neuron carries its value, its gradient
//! and (optionally) its Hessian, so `eval_jet` is exact to floating point.
//! For training, the value and gradient channels are additionally
//! back-propagated to the parameters (reverse over forward), which is what
//! the eikonal and normal-smoothness terms need.

use crate::encode::{encode, encode_jet, feature_axis, EncodedJet, EncodingConfig};
use crate::geom::{Dim, Mat3, Vec3};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("layer {0} has zero fan-in or fan-out")]
    ZeroWidth(usize),
    #[error("layer {layer} expects {expected} inputs but receives {got}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("network output must be a single value")]
    BadOutput,
    #[error("hidden layer {0} has no sine activation")]
    LinearHidden(usize),
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub dim: Dim,
    pub encoding: EncodingConfig,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Frequency factor of the first sine layer.
    pub first_omega: f64,
    /// Frequency factor of the remaining sine layers.
    pub hidden_omega: f64,
}

impl NetConfig {
    pub fn input_len(&self) -> usize {
        self.encoding.output_len(self.dim)
    }

    /// Neuron counts from input to output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_len()];
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        sizes.push(1);
        sizes
    }
}

/// Affine map optionally followed by `sin(omega * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(fan_out, fan_in)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// `None` for the final linear layer.
    pub omega: Option<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    fn preactivation(&self, input: &[f64], i: usize) -> f64 {
        let row = self.weights.row(i);
        let mut z = self.bias[i];
        for (w, a) in row.iter().zip(input) {
            z += w * a;
        }
        z
    }
}

/// Field value with its exact gradient and Hessian at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldJet {
    pub value: f64,
    pub gradient: Vec3,
    pub hessian: Mat3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldNet {
    dim: Dim,
    encoding: EncodingConfig,
    layers: Vec<Layer>,
}

/// Upper-triangle index pairs of the Hessian channels.
fn hessian_pairs(m: usize) -> &'static [(usize, usize)] {
    const PAIRS2: [(usize, usize); 3] = [(0, 0), (0, 1), (1, 1)];
    const PAIRS3: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    if m == 2 {
        &PAIRS2
    } else {
        &PAIRS3
    }
}

impl FieldNet {
    /// SIREN-style initialization, deterministic in `seed`.
    ///
    /// First layer weights are uniform in `±1/fan_in`; later layers in
    /// `±sqrt(6/fan_in)/hidden_omega`. Biases are uniform in `±1/sqrt(fan_in)`.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self, NetError> {
        let sizes = cfg.layer_sizes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(NetError::ZeroWidth(l));
            }
            let bound = if l == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / cfg.hidden_omega
            };
            let bias_bound = 1.0 / (fan_in as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound));
            let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bias_bound..bias_bound));
            let omega = if l + 1 == n_layers {
                None
            } else if l == 0 {
                Some(cfg.first_omega)
            } else {
                Some(cfg.hidden_omega)
            };
            layers.push(Layer {
                weights,
                bias,
                omega,
            });
        }
        Ok(Self {
            dim: cfg.dim,
            encoding: cfg.encoding.clone(),
            layers,
        })
    }

    /// Builds a network from explicit layers, checking the shape chain.
    pub fn from_layers(dim: Dim, encoding: EncodingConfig, layers: Vec<Layer>) -> Result<Self, NetError> {
        let mut expected = encoding.output_len(dim);
        for (l, layer) in layers.iter().enumerate() {
            if layer.fan_in() == 0 || layer.fan_out() == 0 {
                return Err(NetError::ZeroWidth(l));
            }
            if layer.fan_in() != expected {
                return Err(NetError::ShapeMismatch {
                    layer: l,
                    expected,
                    got: layer.fan_in(),
                });
            }
            if layer.bias.len() != layer.fan_out() {
                return Err(NetError::ShapeMismatch {
                    layer: l,
                    expected: layer.fan_out(),
                    got: layer.bias.len(),
                });
            }
            if !layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(NetError::NonFinite(l));
            }
            expected = layer.fan_out();
        }
        if expected != 1 || layers.is_empty() || layers.last().unwrap().omega.is_some() {
            return Err(NetError::BadOutput);
        }
        if let Some(l) = layers[..layers.len() - 1].iter().position(|l| l.omega.is_none()) {
            return Err(NetError::LinearHidden(l));
        }
        Ok(Self {
            dim,
            encoding,
            layers,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn encoding(&self) -> &EncodingConfig {
        &self.encoding
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in()];
        sizes.extend(self.layers.iter().map(Layer::fan_out));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NetError> {
        if params.len() != self.param_count() {
            return Err(NetError::ParamCount {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Mutable parameter slices in flattening order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        let mut act = encode(x, self.dim, &self.encoding);
        for layer in &self.layers {
            act = (0..layer.fan_out())
                .map(|i| {
                    let z = layer.preactivation(&act, i);
                    match layer.omega {
                        Some(w) => (w * z).sin(),
                        None => z,
                    }
                })
                .collect();
        }
        act[0]
    }

    /// Value, gradient and Hessian at `x`, propagated exactly.
    pub fn eval_jet(&self, x: &Vec3) -> FieldJet {
        let m = self.dim.m();
        let pairs = hessian_pairs(m);
        let mut enc = EncodedJet::default();
        encode_jet(x, self.dim, &self.encoding, &mut enc);

        // Per neuron: value, gradient (m), Hessian upper triangle.
        let n_in = enc.value.len();
        let mut val = enc.value.clone();
        let mut grad = vec![[0.0; 3]; n_in];
        let mut hess = vec![[0.0; 6]; n_in];
        for j in 0..n_in {
            let a = feature_axis(j, self.dim);
            grad[j][a] = enc.d1[j];
            let p = pairs.iter().position(|&(u, v)| u == a && v == a).unwrap();
            hess[j][p] = enc.d2[j];
        }

        for layer in &self.layers {
            let n_out = layer.fan_out();
            let mut nval = Vec::with_capacity(n_out);
            let mut ngrad = Vec::with_capacity(n_out);
            let mut nhess = Vec::with_capacity(n_out);
            for i in 0..n_out {
                let z = layer.preactivation(&val, i);
                let row = layer.weights.row(i);
                let mut zg = [0.0; 3];
                let mut zh = [0.0; 6];
                for (k, w) in row.iter().enumerate() {
                    for a in 0..m {
                        zg[a] += w * grad[k][a];
                    }
                    for p in 0..pairs.len() {
                        zh[p] += w * hess[k][p];
                    }
                }
                match layer.omega {
                    Some(w) => {
                        // Separate calls: a fused sincos may round the sine
                        // differently from the plain `sin` used by `eval`.
                        let s = (w * z).sin();
                        let c = std::hint::black_box(w * z).cos();
                        let mut g = [0.0; 3];
                        let mut h = [0.0; 6];
                        for a in 0..m {
                            g[a] = w * c * zg[a];
                        }
                        for (p, &(a, b)) in pairs.iter().enumerate() {
                            h[p] = w * c * zh[p] - w * w * s * zg[a] * zg[b];
                        }
                        nval.push(s);
                        ngrad.push(g);
                        nhess.push(h);
                    }
                    None => {
                        nval.push(z);
                        ngrad.push(zg);
                        nhess.push(zh);
                    }
                }
            }
            val = nval;
            grad = ngrad;
            hess = nhess;
        }

        let mut gradient = Vec3::zeros();
        let mut hessian = Mat3::zeros();
        for a in 0..m {
            gradient[a] = grad[0][a];
        }
        for (p, &(a, b)) in pairs.iter().enumerate() {
            hessian[(a, b)] = hess[0][p];
            hessian[(b, a)] = hess[0][p];
        }
        FieldJet {
            value: val[0],
            gradient,
            hessian,
        }
    }

    /// Values at many points through dense matrix products.
    pub fn eval_batch(&self, xs: &[Vec3]) -> Vec<f64> {
        let n_in = self.encoding.output_len(self.dim);
        let mut act = Array2::<f64>::zeros((n_in, xs.len()));
        for (s, x) in xs.iter().enumerate() {
            for (j, v) in encode(x, self.dim, &self.encoding).into_iter().enumerate() {
                act[[j, s]] = v;
            }
        }
        for layer in &self.layers {
            let mut z = Array2::<f64>::zeros((layer.fan_out(), xs.len()));
            general_mat_mul(1.0, &layer.weights, &act, 0.0, &mut z);
            for (mut row, b) in z.rows_mut().into_iter().zip(layer.bias.iter()) {
                match layer.omega {
                    Some(w) => row.mapv_inplace(|v| (w * (v + b)).sin()),
                    None => row.mapv_inplace(|v| v + b),
                }
            }
            act = z;
        }
        act.row(0).to_vec()
    }

    /// Jets at many points. With `keep_tape` the intermediate activations are
    /// retained for [`FieldNet::backward_batch`].
    pub fn forward_batch(&self, xs: &[Vec3], want_hessian: bool, keep_tape: bool) -> (BatchJets, Option<Tape>) {
        let m = self.dim.m();
        let c1 = 1 + m;
        let pairs = hessian_pairs(m);
        let c2 = pairs.len();
        let n = xs.len();
        let n_in = self.encoding.output_len(self.dim);

        let mut x1 = Array2::<f64>::zeros((n_in, n * c1));
        let mut x2 = if want_hessian {
            Array2::<f64>::zeros((n_in, n * c2))
        } else {
            Array2::<f64>::zeros((0, 0))
        };
        let mut enc = EncodedJet::default();
        for (s, x) in xs.iter().enumerate() {
            encode_jet(x, self.dim, &self.encoding, &mut enc);
            for j in 0..n_in {
                let a = feature_axis(j, self.dim);
                x1[[j, s * c1]] = enc.value[j];
                x1[[j, s * c1 + 1 + a]] = enc.d1[j];
                if want_hessian {
                    let p = pairs.iter().position(|&(u, v)| u == a && v == a).unwrap();
                    x2[[j, s * c2 + p]] = enc.d2[j];
                }
            }
        }

        let mut tape = Tape {
            inputs: Vec::new(),
            preacts: Vec::new(),
            n,
        };
        for layer in &self.layers {
            let rows = layer.fan_out();
            let mut z1 = Array2::<f64>::zeros((rows, n * c1));
            general_mat_mul(1.0, &layer.weights, &x1, 0.0, &mut z1);
            for (mut row, b) in z1.rows_mut().into_iter().zip(layer.bias.iter()) {
                for s in 0..n {
                    row[s * c1] += b;
                }
            }
            let z2 = if want_hessian {
                let mut z2 = Array2::<f64>::zeros((rows, n * c2));
                general_mat_mul(1.0, &layer.weights, &x2, 0.0, &mut z2);
                z2
            } else {
                Array2::<f64>::zeros((0, 0))
            };

            let (a1, a2) = match layer.omega {
                None => (z1.clone(), z2),
                Some(w) => {
                    let mut a1 = Array2::<f64>::zeros((rows, n * c1));
                    let mut a2 = Array2::<f64>::zeros(z2.raw_dim());
                    for i in 0..rows {
                        let zr = z1.row(i);
                        let zr = zr.as_slice().expect("standard layout");
                        let mut ar = a1.row_mut(i);
                        let ar = ar.as_slice_mut().expect("standard layout");
                        let z2row = want_hessian.then(|| z2.row(i));
                        let z2r: &[f64] = z2row.as_ref().map_or(&[], |r| r.as_slice().expect("standard layout"));
                        let mut a2row = want_hessian.then(|| a2.row_mut(i));
                        let a2r: &mut [f64] = match a2row.as_mut() {
                            Some(r) => r.as_slice_mut().expect("standard layout"),
                            None => &mut [],
                        };
                        for s in 0..n {
                            let base = s * c1;
                            let (sn, cs) = (w * zr[base]).sin_cos();
                            ar[base] = sn;
                            for a in 0..m {
                                ar[base + 1 + a] = w * cs * zr[base + 1 + a];
                            }
                            if want_hessian {
                                let h_in = &z2r[s * c2..(s + 1) * c2];
                                let h_out = &mut a2r[s * c2..(s + 1) * c2];
                                for (p, &(u, v)) in pairs.iter().enumerate() {
                                    h_out[p] = w * cs * h_in[p] - w * w * sn * zr[base + 1 + u] * zr[base + 1 + v];
                                }
                            }
                        }
                    }
                    (a1, a2)
                }
            };
            if keep_tape {
                tape.inputs.push(std::mem::replace(&mut x1, a1));
                tape.preacts.push(z1);
            } else {
                x1 = a1;
            }
            x2 = a2;
        }

        let mut jets = BatchJets {
            values: Vec::with_capacity(n),
            gradients: Vec::with_capacity(n),
            hessians: want_hessian.then(|| Vec::with_capacity(n)),
        };
        for s in 0..n {
            jets.values.push(x1[[0, s * c1]]);
            let mut g = Vec3::zeros();
            for a in 0..m {
                g[a] = x1[[0, s * c1 + 1 + a]];
            }
            jets.gradients.push(g);
            if let Some(hs) = jets.hessians.as_mut() {
                let mut h = Mat3::zeros();
                for (p, &(u, v)) in pairs.iter().enumerate() {
                    h[(u, v)] = x2[[0, s * c2 + p]];
                    h[(v, u)] = x2[[0, s * c2 + p]];
                }
                hs.push(h);
            }
        }
        (jets, keep_tape.then_some(tape))
    }

    /// Accumulates into `grads` (flattened like [`FieldNet::params`]) the
    /// parameter gradient of a loss whose sensitivities to the output value
    /// and output gradient at each sample are `d_value` and `d_grad`.
    pub fn backward_batch(&self, tape: &Tape, d_value: &[f64], d_grad: &[Vec3], grads: &mut [f64]) {
        let m = self.dim.m();
        let c1 = 1 + m;
        let n = tape.n;
        assert_eq!(d_value.len(), n);
        assert_eq!(d_grad.len(), n);
        assert_eq!(grads.len(), self.param_count());

        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.bias.len();
        }

        let mut dz = Array2::<f64>::zeros((1, n * c1));
        for s in 0..n {
            dz[[0, s * c1]] = d_value[s];
            for a in 0..m {
                dz[[0, s * c1 + 1 + a]] = d_grad[s][a];
            }
        }

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &tape.inputs[l];
            let (rows, cols) = layer.weights.dim();
            let start = offsets[l];
            {
                let gw = &mut grads[start..start + rows * cols];
                let mut gw = ndarray::ArrayViewMut2::from_shape((rows, cols), gw).expect("shape");
                general_mat_mul(1.0, &dz, &input.t(), 1.0, &mut gw);
            }
            let gb = &mut grads[start + rows * cols..start + rows * cols + rows];
            for (i, g) in gb.iter_mut().enumerate() {
                let r = dz.row(i);
                let mut acc = 0.0;
                for s in 0..n {
                    acc += r[s * c1];
                }
                *g += acc;
            }
            if l == 0 {
                break;
            }

            let mut da = Array2::<f64>::zeros((cols, n * c1));
            general_mat_mul(1.0, &layer.weights.t(), &dz, 0.0, &mut da);
            let prev = &self.layers[l - 1];
            let w = prev.omega.expect("hidden layers are sine layers");
            let z = &tape.preacts[l - 1];
            let mut ndz = Array2::<f64>::zeros((cols, n * c1));
            for i in 0..cols {
                let zr = z.row(i);
                let zr = zr.as_slice().expect("standard layout");
                let dar = da.row(i);
                let dar = dar.as_slice().expect("standard layout");
                let mut out = ndz.row_mut(i);
                let out = out.as_slice_mut().expect("standard layout");
                for s in 0..n {
                    let base = s * c1;
                    let (sn, cs) = (w * zr[base]).sin_cos();
                    let mut dv = dar[base] * w * cs;
                    for a in 0..m {
                        dv -= dar[base + 1 + a] * w * w * sn * zr[base + 1 + a];
                        out[base + 1 + a] = dar[base + 1 + a] * w * cs;
                    }
                    out[base] = dv;
                }
            }
            dz = ndz;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchJets {
    pub values: Vec<f64>,
    pub gradients: Vec<Vec3>,
    pub hessians: Option<Vec<Mat3>>,
}

/// Activations retained by [`FieldNet::forward_batch`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
    n: usize,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}
