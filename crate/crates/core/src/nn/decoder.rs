use sha2::{Digest, Sha256};

use super::{
    conv2d_backward_input, conv2d_forward, instance_norm_backward_input, instance_norm_forward, leaky_relu_backward,
    leaky_relu_forward, sigmoid_backward, sigmoid_forward, Activation, DecoderSpec, DecoderWeights, InstanceNormCache,
    Tensor,
};
use crate::error::{Error, Result};
use crate::keyring::{init_weights, InitAlgorithm};

/// A decoder network with frozen weights.
#[derive(Debug, Clone)]
pub struct Decoder {
    spec: DecoderSpec,
    weights: DecoderWeights,
    fingerprint: u64,
}

struct LayerCache {
    in_h: usize,
    in_w: usize,
    norm: Option<InstanceNormCache>,
    activated: Tensor,
}

/// Intermediate values of one forward pass, consumed by
/// [`Decoder::backward_input`].
pub struct DecoderTrace {
    fingerprint: u64,
    layers: Vec<LayerCache>,
}

impl DecoderTrace {
    pub fn output(&self) -> &Tensor {
        &self.layers.last().expect("trace has layers").activated
    }

    /// Sign bit of every LeakyReLU output. Two inputs with equal patterns lie
    /// in the same linear piece of every rectifier, which finite-difference
    /// checks use to skip coordinates that straddle a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.layers
            .iter()
            .filter(|c| c.norm.is_some())
            .flat_map(|c| c.activated.data().iter().map(|&v| v > 0.0))
            .collect()
    }
}

impl Decoder {
    pub fn new(spec: DecoderSpec, weights: DecoderWeights) -> Result<Self> {
        spec.validate()?;
        let weights = DecoderWeights::new(&spec, weights.layers().to_vec())?;
        let digest = Sha256::digest(weights.to_le_bytes());
        let fingerprint = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        Ok(Self {
            spec,
            weights,
            fingerprint,
        })
    }

    pub fn from_seed(spec: &DecoderSpec, seed: u64, init: InitAlgorithm) -> Result<Self> {
        Self::new(spec.clone(), init_weights(spec, seed, init)?)
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    pub fn weights(&self) -> &DecoderWeights {
        &self.weights
    }

    /// Digest of the weight bytes; identifies which decoder produced a trace.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, DecoderTrace)> {
        if x.channels() != 3 {
            return Err(Error::Shape(format!(
                "decoder input needs 3 channels, got {}",
                x.channels()
            )));
        }
        self.spec.check_input(x.height(), x.width())?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut cur = x.clone();
        for (layer, w) in self.spec.layers.iter().zip(self.weights.layers()) {
            let (in_h, in_w) = (cur.height(), cur.width());
            let mut y = conv2d_forward(&cur, layer, w)?;
            let norm = if layer.instance_norm {
                let (n, cache) = instance_norm_forward(&y)?;
                y = n;
                Some(cache)
            } else {
                None
            };
            let activated = match layer.activation {
                Activation::LeakyRelu { slope } => leaky_relu_forward(&y, slope),
                Activation::Sigmoid => sigmoid_forward(&y),
                Activation::None => y,
            };
            cur = activated.clone();
            caches.push(LayerCache {
                in_h,
                in_w,
                norm,
                activated,
            });
        }
        Ok((
            cur,
            DecoderTrace {
                fingerprint: self.fingerprint,
                layers: caches,
            },
        ))
    }

    /// Gradient of a downstream scalar with respect to the decoder input,
    /// given its gradient with respect to the decoder output.
    pub fn backward_input(&self, trace: &DecoderTrace, grad_out: &Tensor) -> Result<Tensor> {
        if trace.fingerprint != self.fingerprint || trace.layers.len() != self.spec.layers.len() {
            return Err(Error::Shape("trace was produced by a different decoder".into()));
        }
        grad_out.ensure_same_shape(trace.output(), "decoder output gradient")?;
        let mut g = grad_out.clone();
        for ((layer, w), cache) in self
            .spec
            .layers
            .iter()
            .zip(self.weights.layers())
            .zip(&trace.layers)
            .rev()
        {
            g = match layer.activation {
                Activation::LeakyRelu { slope } => leaky_relu_backward(&g, &cache.activated, slope)?,
                Activation::Sigmoid => sigmoid_backward(&g, &cache.activated)?,
                Activation::None => g,
            };
            if let Some(norm) = &cache.norm {
                g = instance_norm_backward_input(&g, norm)?;
            }
            g = conv2d_backward_input(&g, layer, w, cache.in_h, cache.in_w)?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, FdOptions};
    use crate::keyring::derive_stream;

    fn random_image(h: usize, w: usize, seed: u64, scale: f64) -> Tensor {
        let mut r = derive_stream(seed, "test/img");
        Tensor::from_vec(3, h, w, (0..3 * h * w).map(|_| r.uniform(-scale, scale)).collect()).unwrap()
    }

    #[test]
    fn shape_and_range() {
        let d = Decoder::from_seed(&DecoderSpec::standard([1, 1, 2]), 1, InitAlgorithm::Xavier).unwrap();
        let y = d.forward(&random_image(64, 64, 1, 0.2)).unwrap();
        assert_eq!(y.shape(), (3, 32, 32));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn deterministic() {
        let spec = DecoderSpec::standard([1, 1, 2]);
        let x = random_image(32, 32, 2, 0.2);
        let a = Decoder::from_seed(&spec, 7, InitAlgorithm::Xavier)
            .unwrap()
            .forward(&x)
            .unwrap();
        let b = Decoder::from_seed(&spec, 7, InitAlgorithm::Xavier)
            .unwrap()
            .forward(&x)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn incompatible_input_rejected() {
        let d = Decoder::from_seed(&DecoderSpec::standard([1, 2, 2]), 1, InitAlgorithm::Xavier).unwrap();
        assert!(d.forward(&random_image(30, 32, 1, 0.1)).is_err());
        assert!(d.forward(&Tensor::zeros(1, 32, 32)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for strides in [[1, 1, 2], [1, 2, 2]] {
            let d = Decoder::from_seed(&DecoderSpec::with_shape(strides, 8, 3, 0.2), 3, InitAlgorithm::Xavier).unwrap();
            let x = random_image(16, 16, 4, 0.2);
            let (y, trace) = d.forward_traced(&x).unwrap();
            let probe = random_image(y.height(), y.width(), 5, 1.0);
            let g = d.backward_input(&trace, &probe).unwrap();
            let report = check_gradient(
                &x,
                &g,
                |x| {
                    let (y, t) = d.forward_traced(x).unwrap();
                    (y.dot(&probe), t.activation_pattern())
                },
                &FdOptions::new(20, 6),
            );
            assert!(report.passes(1e-3), "{report:?}");
        }
    }

    #[test]
    fn backward_is_linear_and_checks_trace() {
        let spec = DecoderSpec::standard([1, 1, 2]);
        let d = Decoder::from_seed(&spec, 8, InitAlgorithm::Xavier).unwrap();
        let other = Decoder::from_seed(&spec, 9, InitAlgorithm::Xavier).unwrap();
        let x = random_image(16, 16, 9, 0.2);
        let (_, trace) = d.forward_traced(&x).unwrap();
        let g1 = random_image(8, 8, 10, 1.0);
        let g2 = random_image(8, 8, 11, 1.0);
        let a = d.backward_input(&trace, &g1).unwrap();
        let b = d.backward_input(&trace, &g2).unwrap();
        let ab = d.backward_input(&trace, &g1.scale(2.0).add(&g2).unwrap()).unwrap();
        for i in 0..a.len() {
            let want = 2.0 * a.data()[i] + b.data()[i];
            assert!((ab.data()[i] - want).abs() < 1e-6 * (1.0 + want.abs()));
        }
        let z = d.backward_input(&trace, &Tensor::zeros(3, 8, 8)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(other.backward_input(&trace, &g1).is_err());
        assert!(d.backward_input(&trace, &Tensor::zeros(3, 4, 8)).is_err());
    }
}
