use serde::Serialize;

use super::{compute_bounds, reparameterize, reparameterize_backward, BoundBox, NormMode, SpsConfig};
use crate::distort::{quantize8, Channel, CriticHandle};
use crate::error::{Error, Result};
use crate::nn::{Decoder, ImagePlane, Tensor};

/// Value of every term of the objective at one iterate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Norm of the perturbation.
    pub perturbation_norm: f64,
    /// Norm of `decoder_t(delta) - secret_t`, one per receiver.
    pub recovery_terms: Vec<f64>,
    /// Critic scores of `cover + delta`, one per critic. Reported even while
    /// their weight is zero.
    pub critic_terms: Vec<f64>,
    /// Critic weight that was in effect.
    pub gamma_effective: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `perturbation_norm + beta * (sum(recovery) + gamma_effective * sum(critic))`.
    pub fn recompose(&self, beta: f64) -> f64 {
        let rec: f64 = self.recovery_terms.iter().sum();
        let crit: f64 = self.critic_terms.iter().sum();
        self.perturbation_norm + beta * (rec + self.gamma_effective * crit)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.perturbation_norm.is_finite()
            && self.recovery_terms.iter().all(|v| v.is_finite())
            && self.critic_terms.iter().all(|v| v.is_finite())
    }
}

fn norm(x: &Tensor, mode: NormMode) -> f64 {
    match mode {
        NormMode::Euclidean => x.norm_l2(),
        NormMode::PerPixelRms => x.norm_l2() / (x.len() as f64).sqrt(),
    }
}

/// Gradient of [`norm`] scaled by `k`; zero at the origin.
fn norm_gradient(x: &Tensor, n: f64, k: f64, mode: NormMode) -> Tensor {
    if n == 0.0 {
        let (c, h, w) = x.shape();
        return Tensor::zeros(c, h, w);
    }
    let denom = match mode {
        NormMode::Euclidean => n,
        NormMode::PerPixelRms => n * x.len() as f64,
    };
    x.scale(k / denom)
}

/// The search objective for one cover, a set of receivers and critics.
///
/// Receiver `t` decodes what arrives after `channel`, so with a JPEG channel
/// the decoders see `jpeg(C + delta) - C` and the gradient passes straight
/// through the compression. With [`SpsConfig::quantize_in_loop`] the 8-bit
/// rounding of the transmitted image is treated the same way.
pub struct Objective<'a> {
    cover: &'a ImagePlane,
    bounds: BoundBox,
    secrets: &'a [ImagePlane],
    decoders: &'a [Decoder],
    critics: &'a [CriticHandle],
    channel: Channel,
    cfg: &'a SpsConfig,
}

impl<'a> Objective<'a> {
    pub fn new(
        cover: &'a ImagePlane,
        secrets: &'a [ImagePlane],
        decoders: &'a [Decoder],
        critics: &'a [CriticHandle],
        channel: Channel,
        cfg: &'a SpsConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        cover.check_image()?;
        if secrets.is_empty() || secrets.len() != decoders.len() {
            return Err(Error::Config(format!(
                "{} secrets for {} decoders; need one secret per decoder and at least one",
                secrets.len(),
                decoders.len()
            )));
        }
        for (t, (s, d)) in secrets.iter().zip(decoders).enumerate() {
            let (oh, ow) = d.spec().check_input(cover.height(), cover.width())?;
            if s.shape() != (3, oh, ow) {
                return Err(Error::Shape(format!(
                    "secret {t} is {}x{}, decoder {t} produces {oh}x{ow} from a {}x{} cover",
                    s.height(),
                    s.width(),
                    cover.height(),
                    cover.width()
                )));
            }
        }
        let bounds = compute_bounds(cover, cfg.epsilon)?;
        Ok(Self {
            cover,
            bounds,
            secrets,
            decoders,
            critics,
            channel,
            cfg,
        })
    }

    pub fn bounds(&self) -> &BoundBox {
        &self.bounds
    }

    pub fn config(&self) -> &SpsConfig {
        self.cfg
    }

    pub fn perturbation(&self, z: &Tensor) -> Result<Tensor> {
        reparameterize(z, &self.bounds)
    }

    /// Loss terms and the gradient of the total with respect to `z`.
    pub fn evaluate(&self, z: &Tensor, iter: usize) -> Result<(LossBreakdown, Tensor)> {
        let (loss, grad, _) = self.run(z, iter, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    /// Total loss plus the rectifier sign pattern of every decoder, for
    /// finite-difference checks.
    pub fn value_and_pattern(&self, z: &Tensor, iter: usize) -> Result<(f64, Vec<bool>)> {
        let (loss, _, pattern) = self.run(z, iter, false)?;
        Ok((loss.total, pattern))
    }

    fn run(&self, z: &Tensor, iter: usize, want_grad: bool) -> Result<(LossBreakdown, Option<Tensor>, Vec<bool>)> {
        let mode = self.cfg.norm_mode;
        let beta = self.cfg.beta;
        let gamma = self.cfg.gamma_at(iter);
        let delta = reparameterize(z, &self.bounds)?;
        let received = if self.cfg.quantize_in_loop {
            let stego = quantize8(&self.cover.add(&delta)?);
            self.channel.transmit(&stego)?.sub(self.cover)?
        } else {
            self.channel.received_perturbation(self.cover, &delta)?
        };

        let (c, h, w) = delta.shape();
        let mut grad_received = Tensor::zeros(c, h, w);
        let mut recovery_terms = Vec::with_capacity(self.decoders.len());
        let mut pattern = Vec::new();
        for (decoder, secret) in self.decoders.iter().zip(self.secrets) {
            let (out, trace) = decoder.forward_traced(&received)?;
            let residual = out.sub(secret)?;
            let n = norm(&residual, mode);
            recovery_terms.push(n);
            if want_grad {
                let g_out = norm_gradient(&residual, n, beta, mode);
                grad_received.add_assign(&decoder.backward_input(&trace, &g_out)?)?;
            } else {
                pattern.extend(trace.activation_pattern());
            }
        }

        let mut grad_delta = if want_grad {
            self.channel.backward(&grad_received)
        } else {
            grad_received
        };

        let pnorm = norm(&delta, mode);
        if want_grad {
            grad_delta.add_assign(&norm_gradient(&delta, pnorm, 1.0, mode))?;
        }

        let mut critic_terms = Vec::with_capacity(self.critics.len());
        if !self.critics.is_empty() {
            let stego = self.cover.add(&delta)?;
            for critic in self.critics {
                critic_terms.push(critic.score(&stego));
                if want_grad && gamma > 0.0 {
                    grad_delta.add_assign(&critic.gradient(&stego).scale(beta * gamma))?;
                }
            }
        }

        let mut loss = LossBreakdown {
            perturbation_norm: pnorm,
            recovery_terms,
            critic_terms,
            gamma_effective: gamma,
            total: 0.0,
        };
        loss.total = loss.recompose(beta);
        let grad = if want_grad {
            Some(reparameterize_backward(&grad_delta, z, &self.bounds)?)
        } else {
            None
        };
        Ok((loss, grad, pattern))
    }
}

/// One-shot evaluation of the objective at `z`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_loss(
    z: &Tensor,
    cover: &ImagePlane,
    secrets: &[ImagePlane],
    decoders: &[Decoder],
    critics: &[CriticHandle],
    channel: Channel,
    cfg: &SpsConfig,
    iter: usize,
) -> Result<(LossBreakdown, Tensor)> {
    Objective::new(cover, secrets, decoders, critics, channel, cfg)?.evaluate(z, iter)
}
