//! Log-linear query points along sensor rays.
//!
//! `t_l = (1/0.9) * (1 - 10^(l/(n-1) - 1))` for `l = 1..=n`. Points crowd
//! toward the endpoint (`t -> 1`); `l = n-1` lands exactly on the sensor
//! origin and `l = n` slightly behind it.

use crate::geom::{Ray, Vec3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("need at least 2 samples per ray, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub x: Vec3,
    pub t: f64,
    /// Distance from the sample to the ray endpoint.
    pub ray_distance: f64,
    /// Index of the parent ray within the batch.
    pub ray_index: usize,
}

/// Interpolation parameter of sample `l` out of `n`.
pub fn sample_t(l: usize, n: usize) -> f64 {
    let exponent = l as f64 / (n - 1) as f64 - 1.0;
    (1.0 - 10f64.powf(exponent)) / 0.9
}

/// Samples `n` points on `ray`. With `drop_behind_origin` the final sample
/// (which sits behind the sensor) is omitted.
pub fn sample_ray(ray: &Ray, n: usize, ray_index: usize, drop_behind_origin: bool) -> Result<Vec<RaySample>, SampleError> {
    if n < 2 {
        return Err(SampleError::TooFewSamples(n));
    }
    let last = if drop_behind_origin { n - 1 } else { n };
    let (o, e) = (ray.origin(), ray.endpoint());
    Ok((1..=last)
        .map(|l| {
            let t = sample_t(l, n);
            let x = (1.0 - t) * o + t * e;
            RaySample {
                x,
                t,
                ray_distance: (e - x).norm(),
                ray_index,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values_for_forty_samples() {
        assert_eq!(sample_t(39, 40), 0.0);
        let t1 = sample_t(1, 40);
        // 10^(1/39 - 1) = 0.106081...
        assert!((t1 - (1.0 - 10f64.powf(1.0 / 39.0 - 1.0)) / 0.9).abs() < 1e-15);
        assert!((t1 - 0.993243).abs() < 1e-6);
        assert!(sample_t(40, 40) < 0.0);
    }

    #[test]
    fn strictly_decreasing_with_growing_gaps() {
        for n in [2usize, 3, 10, 40, 100] {
            let ts: Vec<f64> = (1..=n).map(|l| sample_t(l, n)).collect();
            assert!(ts.windows(2).all(|w| w[0] > w[1]));
            assert!(ts[0] < 1.0);
            let gaps: Vec<f64> = ts.windows(2).map(|w| w[0] - w[1]).collect();
            assert!(gaps.windows(2).all(|g| g[1] > g[0]));
        }
    }

    #[test]
    fn midpoint_sample_geometry() {
        let ray = Ray::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let t = 0.5;
        let x = (1.0 - t) * ray.origin() + t * ray.endpoint();
        assert_eq!(x, Vec3::new(0.5, 0.0, 0.0));
        assert_eq!((ray.endpoint() - x).norm(), 0.5);
    }

    #[test]
    fn samples_lie_on_the_ray() {
        let ray = Ray::new(Vec3::new(-1.0, 2.0, 0.5), Vec3::new(3.0, -1.0, 2.0)).unwrap();
        let samples = sample_ray(&ray, 40, 7, false).unwrap();
        assert_eq!(samples.len(), 40);
        for s in &samples {
            assert_eq!(s.ray_index, 7);
            let want = (1.0 - s.t) * ray.length();
            assert!((s.ray_distance - want).abs() < 1e-12);
        }
        assert_eq!(samples[38].x, *ray.origin());
        assert_eq!(sample_ray(&ray, 40, 0, true).unwrap().len(), 39);
        assert_eq!(sample_ray(&ray, 1, 0, false).unwrap_err(), SampleError::TooFewSamples(1));
    }
}
