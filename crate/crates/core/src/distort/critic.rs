use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gradcheck::{check_gradient, FdOptions};
use crate::keyring::derive_stream;
use crate::nn::{ImagePlane, Tensor};

/// A differentiable detectability score `j(image)` in `[0, 1]`.
pub trait Critic: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, image: &ImagePlane) -> f64;
    /// Gradient of [`Critic::score`] with respect to every pixel.
    fn gradient(&self, image: &ImagePlane) -> ImagePlane;
}

/// A critic that passed the finite-difference consistency check.
#[derive(Clone)]
pub struct CriticHandle {
    inner: Arc<dyn Critic>,
}

impl fmt::Debug for CriticHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CriticHandle").field("id", &self.id()).finish()
    }
}

const REGISTRATION_TOLERANCE: f64 = 1e-3;

impl CriticHandle {
    /// Wraps `critic` after checking its gradient against central finite
    /// differences on random 3x16x16 images (mid-grey plus faint noise, the
    /// regime stego images live in).
    pub fn register(critic: impl Critic + 'static) -> Result<Self> {
        for seed in 0..2u64 {
            let mut r = derive_stream(seed, "critic/registration");
            let x = Tensor::from_vec(3, 16, 16, (0..768).map(|_| r.uniform(0.49, 0.51)).collect())?;
            let g = critic.gradient(&x);
            if !g.same_shape(&x) {
                return Err(Error::Config(format!(
                    "critic {} returned a gradient of the wrong shape",
                    critic.id()
                )));
            }
            let report = check_gradient(&x, &g, |x| (critic.score(x), ()), &FdOptions::new(20, seed).step(1e-4));
            if !report.passes(REGISTRATION_TOLERANCE) {
                return Err(Error::Config(format!(
                    "critic {} failed its gradient check: {report:?}",
                    critic.id()
                )));
            }
        }
        Ok(Self {
            inner: Arc::new(critic),
        })
    }

    pub fn id(&self) -> &str {
        self.inner.id()
    }

    pub fn score(&self, image: &ImagePlane) -> f64 {
        self.inner.score(image)
    }

    pub fn gradient(&self, image: &ImagePlane) -> ImagePlane {
        self.inner.gradient(image)
    }
}

/// High-pass residual energy critic.
///
/// Filters every channel with a fixed bank of 3x3 high-pass kernels (valid
/// positions only), takes the mean squared response `E`, and reports
/// `1 - exp(-E / scale)`. Flat images score 0; added noise raises the score.
#[derive(Debug, Clone)]
pub struct HfResidualCritic {
    scale: f64,
}

impl HfResidualCritic {
    /// Energy at which the score reaches `1 - 1/e`.
    pub const DEFAULT_SCALE: f64 = 1e-3;

    pub fn new(scale: f64) -> Self {
        Self { scale }
    }

    fn bank() -> [[f64; 9]; 4] {
        [
            [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, -2.0, 0.0, 0.0, 1.0, 0.0],
            [-0.25, 0.5, -0.25, 0.5, -1.0, 0.5, -0.25, 0.5, -0.25],
        ]
    }

    fn responses(image: &ImagePlane) -> (Vec<f64>, usize) {
        let (c, h, w) = image.shape();
        let (vh, vw) = (h.saturating_sub(2), w.saturating_sub(2));
        let mut out = Vec::with_capacity(4 * c * vh * vw);
        for k in Self::bank() {
            for ch in 0..c {
                for y in 0..vh {
                    for x in 0..vw {
                        let mut acc = 0.0;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += k[ky * 3 + kx] * image.at(ch, y + ky, x + kx);
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        let n = out.len();
        (out, n)
    }

    pub fn energy(&self, image: &ImagePlane) -> f64 {
        let (r, n) = Self::responses(image);
        if n == 0 {
            return 0.0;
        }
        r.iter().map(|v| v * v).sum::<f64>() / n as f64
    }
}

impl Default for HfResidualCritic {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SCALE)
    }
}

impl Critic for HfResidualCritic {
    fn id(&self) -> &str {
        "hf_residual"
    }

    fn score(&self, image: &ImagePlane) -> f64 {
        1.0 - (-self.energy(image) / self.scale).exp()
    }

    fn gradient(&self, image: &ImagePlane) -> ImagePlane {
        let (c, h, w) = image.shape();
        let mut g = Tensor::zeros(c, h, w);
        let (r, n) = Self::responses(image);
        if n == 0 {
            return g;
        }
        let e = r.iter().map(|v| v * v).sum::<f64>() / n as f64;
        // dS/dE * dE/dr
        let k0 = (-e / self.scale).exp() / self.scale * 2.0 / n as f64;
        let (vh, vw) = (h - 2, w - 2);
        let mut idx = 0;
        for k in Self::bank() {
            for ch in 0..c {
                for y in 0..vh {
                    for x in 0..vw {
                        let coef = k0 * r[idx];
                        idx += 1;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                *g.at_mut(ch, y + ky, x + kx) += coef * k[ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
        g
    }
}

/// The built-in high-frequency critic, registered.
pub fn hf_residual_critic() -> CriticHandle {
    CriticHandle::register(HfResidualCritic::default()).expect("built-in critic is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_scores_zero() {
        let c = hf_residual_critic();
        assert_eq!(c.score(&Tensor::filled(3, 16, 16, 0.4)), 0.0);
        assert!(c.gradient(&Tensor::filled(3, 16, 16, 0.4)).max_abs() == 0.0);
    }

    #[test]
    fn noise_raises_score() {
        let c = hf_residual_critic();
        let mut r = derive_stream(3, "critic/noise");
        let base = Tensor::from_vec(
            3,
            32,
            32,
            (0..3 * 32 * 32).map(|i| 0.3 + 0.4 * ((i % 32) as f64 / 31.0)).collect(),
        )
        .unwrap();
        let noise: Vec<f64> = (0..base.len()).map(|_| r.uniform(-1.0, 1.0) / 255.0).collect();
        let noisy = base.add(&Tensor::from_vec(3, 32, 32, noise).unwrap()).unwrap();
        assert!(c.score(&noisy) > c.score(&base));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = HfResidualCritic::default();
        let mut r = derive_stream(4, "critic/fd");
        let x = Tensor::from_vec(3, 12, 12, (0..432).map(|_| 0.5 + r.uniform(-0.02, 0.02)).collect()).unwrap();
        let g = c.gradient(&x);
        let report = check_gradient(&x, &g, |x| (c.score(x), ()), &FdOptions::new(30, 9));
        assert!(report.passes(1e-3), "{report:?}");
    }

    struct Broken;
    impl Critic for Broken {
        fn id(&self) -> &str {
            "broken"
        }
        fn score(&self, image: &ImagePlane) -> f64 {
            image.data().iter().map(|v| v * v).sum::<f64>() * 1e-3
        }
        fn gradient(&self, image: &ImagePlane) -> ImagePlane {
            image.scale(1e-3)
        }
    }

    #[test]
    fn inconsistent_critic_is_rejected() {
        assert!(matches!(CriticHandle::register(Broken), Err(Error::Config(_))));
    }
}
