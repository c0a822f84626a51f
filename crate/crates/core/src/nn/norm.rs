//! Instance normalization without affine parameters.

use super::Tensor;
use crate::error::{Error, Result};

/// Variance floor inside the square root.
pub const IN_EPS: f64 = 1e-5;

/// Per-channel statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct InstanceNormCache {
    mean: Vec<f64>,
    var: Vec<f64>,
    normalized: Tensor,
}

impl InstanceNormCache {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn output(&self) -> &Tensor {
        &self.normalized
    }
}

/// `y = (x - mean_c) / sqrt(var_c + IN_EPS)` per channel, with the biased
/// (population) variance over that channel's spatial positions.
pub fn instance_norm_forward(x: &Tensor) -> Result<(Tensor, InstanceNormCache)> {
    let n = x.height() * x.width();
    if n < 2 {
        return Err(Error::Shape("instance norm needs at least 2 spatial positions".into()));
    }
    let mut y = Tensor::zeros(x.channels(), x.height(), x.width());
    let mut means = Vec::with_capacity(x.channels());
    let mut vars = Vec::with_capacity(x.channels());
    for c in 0..x.channels() {
        let src = x.plane(c);
        let mean = src.iter().sum::<f64>() / n as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + IN_EPS).sqrt();
        for (d, s) in y.plane_mut(c).iter_mut().zip(src) {
            *d = (s - mean) * inv;
        }
        means.push(mean);
        vars.push(var);
    }
    let cache = InstanceNormCache {
        mean: means,
        var: vars,
        normalized: y.clone(),
    };
    Ok((y, cache))
}

/// Exact input gradient, including the paths through the mean and variance:
/// `dx = (g - mean(g) - y * mean(g * y)) / sqrt(var + eps)`.
pub fn instance_norm_backward_input(grad_out: &Tensor, cache: &InstanceNormCache) -> Result<Tensor> {
    let y = &cache.normalized;
    grad_out.ensure_same_shape(y, "instance norm gradient")?;
    let n = (y.height() * y.width()) as f64;
    let mut out = Tensor::zeros(y.channels(), y.height(), y.width());
    for c in 0..y.channels() {
        let g = grad_out.plane(c);
        let yc = y.plane(c);
        let g_mean = g.iter().sum::<f64>() / n;
        let gy_mean = g.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / n;
        let inv = 1.0 / (cache.var[c] + IN_EPS).sqrt();
        for ((d, &gv), &yv) in out.plane_mut(c).iter_mut().zip(g).zip(yc) {
            *d = (gv - g_mean - yv * gy_mean) * inv;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyring::derive_stream;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut r = derive_stream(seed, "test/in");
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.uniform(-2.0, 3.0)).collect()).unwrap()
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let (y, _) = instance_norm_forward(&Tensor::filled(2, 4, 4, 0.75)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        // a mean that is not exactly representable leaves only rounding residue
        let (y, _) = instance_norm_forward(&Tensor::filled(2, 4, 4, 3.7)).unwrap();
        assert!(y.max_abs() < 1e-12);
    }

    #[test]
    fn output_is_standardized() {
        let x = random_tensor(3, 6, 6, 1);
        let (y, _) = instance_norm_forward(&x).unwrap();
        for c in 0..3 {
            let p = y.plane(c);
            let m = p.iter().sum::<f64>() / 36.0;
            let v = p.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 36.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4, "variance {v}");
        }
    }

    #[test]
    fn matches_two_pass_oracle() {
        let x = random_tensor(4, 6, 6, 2);
        let (y, cache) = instance_norm_forward(&x).unwrap();
        for c in 0..4 {
            let vals: Vec<f64> = (0..6)
                .flat_map(|i| (0..6).map(move |j| (i, j)))
                .map(|(i, j)| x.at(c, i, j))
                .collect();
            let mut mean = 0.0;
            for v in &vals {
                mean += v;
            }
            mean /= 36.0;
            let mut var = 0.0;
            for v in &vals {
                var += (v - mean).powi(2);
            }
            var /= 36.0;
            assert!((cache.mean()[c] - mean).abs() < 1e-12);
            for i in 0..6 {
                for j in 0..6 {
                    let want = (x.at(c, i, j) - mean) / (var + IN_EPS).sqrt();
                    assert!((y.at(c, i, j) - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = random_tensor(2, 5, 5, 3);
        let probe = random_tensor(2, 5, 5, 4);
        let loss = |x: &Tensor| instance_norm_forward(x).unwrap().0.dot(&probe);
        let (_, cache) = instance_norm_forward(&x).unwrap();
        let grad = instance_norm_backward_input(&probe, &cache).unwrap();
        let h = 1e-3;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let a = grad.data()[i];
            if a.abs() > 1e-6 {
                assert!(((a - fd) / a).abs() < 1e-4, "idx {i}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn backward_kills_constant_and_zero() {
        let x = random_tensor(2, 5, 5, 5);
        let (_, cache) = instance_norm_forward(&x).unwrap();
        let mut g = Tensor::zeros(2, 5, 5);
        g.plane_mut(0).fill(1.5);
        g.plane_mut(1).fill(-0.25);
        let gi = instance_norm_backward_input(&g, &cache).unwrap();
        assert!(gi.max_abs() < 1e-10);
        let gi = instance_norm_backward_input(&Tensor::zeros(2, 5, 5), &cache).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_input_rejected() {
        assert!(instance_norm_forward(&Tensor::zeros(1, 1, 1)).is_err());
    }
}
