//! What happens to the stego image between sender and receiver, and how
//! detectable it is: 8-bit quantization, a JPEG proxy with a straight-through
//! gradient, and differentiable critics.

mod critic;
mod jpeg;

pub use critic::{hf_residual_critic, Critic, CriticHandle, HfResidualCritic};
pub use jpeg::{
    jpeg_proxy_forward, jpeg_proxy_gradient, quality_table, tables_report, JpegProxyConfig, STD_CHROMA_QTABLE,
    STD_LUMA_QTABLE,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{ImagePlane, Tensor};

/// Rounds every value to the nearest multiple of 1/255, ties to even.
///
/// Inputs are clamped to `[0, 1]` first, which only matters for sums such as
/// `C + u` that overshoot 1 by an ulp.
pub fn quantize8(x: &Tensor) -> Tensor {
    x.map(|v| (v.clamp(0.0, 1.0) * 255.0).round_ties_even() / 255.0)
}

/// 8-bit code of a single value, same rounding as [`quantize8`].
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

pub fn is_on_lattice(x: &Tensor) -> bool {
    x.data()
        .iter()
        .all(|&v| (0.0..=1.0).contains(&v) && ((v * 255.0).round() / 255.0) == v)
}

/// Transmission channel modelled inside the search.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Channel {
    /// The receiver sees the stego unchanged.
    #[default]
    Lossless,
    /// The stego passes through the JPEG proxy before extraction.
    JpegProxy { quality: u8 },
}

impl Channel {
    /// Perturbation the receiver recovers after subtracting the regenerated
    /// cover: `delta` itself, or `jpeg(C + delta) - C`.
    pub fn received_perturbation(&self, cover: &ImagePlane, delta: &Tensor) -> Result<Tensor> {
        match *self {
            Channel::Lossless => Ok(delta.clone()),
            Channel::JpegProxy { quality } => {
                let cfg = JpegProxyConfig::new(quality)?;
                let stego = cover.add(delta)?;
                jpeg_proxy_forward(&stego, &cfg)?.sub(cover)
            }
        }
    }

    /// Gradient of [`Self::received_perturbation`]: identity for both variants
    /// (straight-through for the JPEG proxy).
    pub fn backward(&self, grad_out: &Tensor) -> Tensor {
        match self {
            Channel::Lossless => grad_out.clone(),
            Channel::JpegProxy { .. } => jpeg_proxy_gradient(grad_out),
        }
    }

    /// Applies the channel to an 8-bit stego and re-quantizes, as a decoder
    /// writing an 8-bit file would.
    pub fn transmit(&self, stego: &ImagePlane) -> Result<ImagePlane> {
        match *self {
            Channel::Lossless => Ok(stego.clone()),
            Channel::JpegProxy { quality } => {
                Ok(quantize8(&jpeg_proxy_forward(stego, &JpegProxyConfig::new(quality)?)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyring::derive_stream;
    use proptest::prelude::*;

    #[test]
    fn half_rounds_to_even() {
        let q = quantize8(&Tensor::filled(1, 1, 1, 0.5));
        assert_eq!(q.data()[0], 128.0 / 255.0);
        assert!((q.data()[0] - 0.50196).abs() < 1e-5);
        assert_eq!(to_u8(0.5), 128);
        // 0.5/255 -> 0.5 -> ties to 0
        assert_eq!(to_u8(0.5 / 255.0), 0);
        assert_eq!(to_u8(1.5 / 255.0), 2);
    }

    #[test]
    fn lattice_detection() {
        let mut r = derive_stream(1, "lattice");
        let x = Tensor::from_vec(3, 8, 8, (0..192).map(|_| r.next_f64()).collect()).unwrap();
        assert!(!is_on_lattice(&x));
        assert!(is_on_lattice(&quantize8(&x)));
    }

    #[test]
    fn lossless_channel_is_identity() {
        let c = Tensor::filled(3, 8, 8, 0.5);
        let d = Tensor::filled(3, 8, 8, 0.01);
        assert_eq!(Channel::Lossless.received_perturbation(&c, &d).unwrap(), d);
        assert_eq!(Channel::Lossless.backward(&d), d);
    }

    proptest! {
        #[test]
        fn quantize_idempotent_and_bounded(v in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
            let n = v.len();
            let x = Tensor::from_vec(1, 1, n, v).unwrap();
            let q = quantize8(&x);
            prop_assert_eq!(quantize8(&q), q.clone());
            let err = x.sub(&q).unwrap().max_abs();
            prop_assert!(err <= 1.0 / 510.0 + 1e-15);
            prop_assert!(is_on_lattice(&q));
        }
    }
}
