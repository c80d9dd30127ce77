//! Periodic positional encoding of coordinates.
//!
//! Layout for a point with `m` active coordinates and `h` bands:
//! `[x, sin(w1 x), cos(w1 x), ..., sin(wh x), cos(wh x)]`, each block of
//! length `m`. Feature `j` depends only on coordinate `j % m`, which keeps
//! the Jacobian and Hessian of the encoding diagonal per feature.

use crate::geom::{Dim, Vec3};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("frequencies must be positive, finite and strictly increasing")]
    BadFrequencies,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingConfig {
    frequencies: Vec<f64>,
}

impl EncodingConfig {
    pub fn new(frequencies: Vec<f64>) -> Result<Self, EncodingError> {
        let ok = frequencies.iter().all(|w| w.is_finite() && *w > 0.0)
            && frequencies.windows(2).all(|p| p[0] < p[1]);
        if !ok {
            return Err(EncodingError::BadFrequencies);
        }
        Ok(Self { frequencies })
    }

    /// Raw coordinates only.
    pub fn none() -> Self {
        Self {
            frequencies: Vec::new(),
        }
    }

    /// Octave bands `w_k = 2^(k-1) * pi`.
    pub fn dyadic(h: usize) -> Self {
        Self {
            frequencies: (0..h).map(|k| PI * 2f64.powi(k as i32)).collect(),
        }
    }

    /// `h` bands geometrically spaced from `lo` to `hi` inclusive.
    pub fn log_spaced(h: usize, lo: f64, hi: f64) -> Result<Self, EncodingError> {
        let freqs = match h {
            0 => Vec::new(),
            1 => vec![lo],
            _ => {
                let ratio = (hi / lo).ln() / (h - 1) as f64;
                (0..h).map(|k| lo * (ratio * k as f64).exp()).collect()
            }
        };
        EncodingConfig::new(freqs)
    }

    pub fn h(&self) -> usize {
        self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn output_len(&self, dim: Dim) -> usize {
        (2 * self.h() + 1) * dim.m()
    }
}

/// Per-feature derivatives of the encoding with respect to the one
/// coordinate the feature depends on.
#[derive(Debug, Clone, Default)]
pub struct EncodedJet {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

pub fn encode(x: &Vec3, dim: Dim, cfg: &EncodingConfig) -> Vec<f64> {
    let m = dim.m();
    let mut out = Vec::with_capacity(cfg.output_len(dim));
    out.extend((0..m).map(|a| x[a]));
    for &w in &cfg.frequencies {
        out.extend((0..m).map(|a| (w * x[a]).sin()));
        out.extend((0..m).map(|a| (w * x[a]).cos()));
    }
    out
}

/// Encoding with first and second derivatives, written into `jet`.
///
/// Values come from [`encode`] so both paths agree bit for bit.
pub fn encode_jet(x: &Vec3, dim: Dim, cfg: &EncodingConfig, jet: &mut EncodedJet) {
    let m = dim.m();
    jet.value = encode(x, dim, cfg);
    jet.d1.clear();
    jet.d2.clear();
    jet.d1.resize(m, 1.0);
    jet.d2.resize(m, 0.0);
    for (k, &w) in cfg.frequencies.iter().enumerate() {
        let base = m + 2 * m * k;
        for a in 0..m {
            let cosine = jet.value[base + m + a];
            jet.d1.push(w * cosine);
            jet.d2.push(-w * w * jet.value[base + a]);
        }
        for a in 0..m {
            let sine = jet.value[base + a];
            jet.d1.push(-w * sine);
            jet.d2.push(-w * w * jet.value[base + m + a]);
        }
    }
}

/// Coordinate axis that feature `j` depends on.
#[inline]
pub fn feature_axis(j: usize, dim: Dim) -> usize {
    j % dim.m()
}
