//! The fixed random decoder: layer specs, frozen weights, and the
//! forward / input-gradient passes for each layer type.
//!
//! Weights never change after construction, so backward passes compute
//! gradients with respect to layer inputs only.

mod activation;
mod conv;
mod decoder;
mod norm;
mod tensor;

pub use activation::{leaky_relu_backward, leaky_relu_forward, sigmoid_backward, sigmoid_forward};
pub use conv::{conv2d_backward_input, conv2d_forward, conv_output_size};
pub use decoder::{Decoder, DecoderTrace};
pub use norm::{instance_norm_backward_input, instance_norm_forward, InstanceNormCache, IN_EPS};
pub use tensor::{ImagePlane, Tensor, MIN_IMAGE_SIDE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default hidden width of the standard decoder.
pub const DEFAULT_HIDDEN_CHANNELS: usize = 32;
pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Sigmoid,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub instance_norm: bool,
    pub activation: Activation,
}

impl ConvLayerSpec {
    /// Zero-padded "same" convolution (`padding = kernel / 2`).
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        instance_norm: bool,
        activation: Activation,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            instance_norm,
            activation,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("convolution channel counts must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {} is not odd", self.kernel)));
        }
        if self.padding != self.kernel / 2 {
            return Err(Error::Config(format!(
                "padding {} must equal kernel/2 = {}",
                self.padding,
                self.kernel / 2
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !(slope.is_finite() && slope > 0.0 && slope < 1.0) {
                return Err(Error::Config(format!("LeakyReLU slope {slope} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Architecture of the decoder: an ordered stack of convolution blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSpec {
    pub layers: Vec<ConvLayerSpec>,
}

impl DecoderSpec {
    /// Three-layer decoder `3 -> 32 -> 32 -> 3` with 3x3 kernels:
    /// (Conv, IN, LeakyReLU 0.2) twice, then (Conv, Sigmoid).
    pub fn standard(strides: [usize; 3]) -> Self {
        Self::with_shape(strides, DEFAULT_HIDDEN_CHANNELS, DEFAULT_KERNEL, DEFAULT_LEAKY_SLOPE)
    }

    pub fn with_shape(strides: [usize; 3], hidden: usize, kernel: usize, slope: f64) -> Self {
        let act = Activation::LeakyRelu { slope };
        Self {
            layers: vec![
                ConvLayerSpec::same(3, hidden, kernel, strides[0], true, act),
                ConvLayerSpec::same(hidden, hidden, kernel, strides[1], true, act),
                ConvLayerSpec::same(hidden, 3, kernel, strides[2], false, Activation::Sigmoid),
            ],
        }
    }

    pub fn stride_product(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn strides(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.stride).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::Config("decoder has no layers".into()));
        };
        for l in &self.layers {
            l.validate()?;
        }
        if self.layers[0].in_channels != 3 || last.out_channels != 3 {
            return Err(Error::Config("decoder must map 3 channels to 3 channels".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::Config(format!(
                    "layer {i} emits {} channels but layer {} expects {}",
                    pair[0].out_channels,
                    i + 1,
                    pair[1].in_channels
                )));
            }
        }
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            let is_last = i + 1 == n;
            match (is_last, l.activation, l.instance_norm) {
                (true, Activation::Sigmoid, false) => {}
                (true, _, _) => {
                    return Err(Error::Config(
                        "final layer must be Sigmoid without instance norm".into(),
                    ))
                }
                (false, Activation::LeakyRelu { .. }, true) => {}
                (false, _, _) => {
                    return Err(Error::Config(format!(
                        "hidden layer {i} must be instance-normalized and LeakyReLU-activated"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Spatial output size for an input of `height x width`.
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let mut h = height;
        let mut w = width;
        for l in &self.layers {
            h = conv_output_size(h, l.kernel, l.stride, l.padding)?;
            w = conv_output_size(w, l.kernel, l.stride, l.padding)?;
        }
        Ok((h, w))
    }

    /// Checks that an input of `height x width` divides evenly through the
    /// stride plan and returns the exact output size.
    pub fn check_input(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let s = self.stride_product();
        if !height.is_multiple_of(s) || !width.is_multiple_of(s) {
            return Err(Error::Shape(format!(
                "input {height}x{width} is not divisible by the stride product {s}"
            )));
        }
        let out = self.output_size(height, width)?;
        if out != (height / s, width / s) {
            return Err(Error::Shape(format!(
                "input {height}x{width} gives output {out:?}, expected {}x{}",
                height / s,
                width / s
            )));
        }
        Ok(out)
    }
}

/// Kernel (`out x in x k x k`, row-major) and bias of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    kernel: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvWeights {
    pub fn new(kernel: Vec<f64>, bias: Vec<f64>, layer: &ConvLayerSpec) -> Result<Self> {
        if kernel.len() != layer.weight_len() || bias.len() != layer.out_channels {
            return Err(Error::Shape(format!(
                "weights ({} kernel, {} bias) do not fit layer {}->{} k={}",
                kernel.len(),
                bias.len(),
                layer.in_channels,
                layer.out_channels,
                layer.kernel
            )));
        }
        Ok(Self { kernel, bias })
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// Frozen parameter set of a decoder, shape-checked against its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    layers: Vec<ConvWeights>,
}

impl DecoderWeights {
    pub fn new(spec: &DecoderSpec, layers: Vec<ConvWeights>) -> Result<Self> {
        if layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "{} weight sets for {} layers",
                layers.len(),
                spec.layers.len()
            )));
        }
        for (l, w) in spec.layers.iter().zip(&layers) {
            if w.kernel.len() != l.weight_len() || w.bias.len() != l.out_channels {
                return Err(Error::Shape("weight set does not match layer spec".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvWeights] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &ConvWeights {
        &self.layers[i]
    }

    /// Little-endian byte image of every kernel then bias, layer by layer.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.layers
            .iter()
            .flat_map(|l| l.kernel.iter().chain(&l.bias))
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_spec_is_valid() {
        for strides in [[1, 1, 2], [1, 2, 2], [1, 1, 1]] {
            let s = DecoderSpec::standard(strides);
            s.validate().unwrap();
            assert_eq!(s.stride_product(), strides.iter().product::<usize>());
        }
    }

    #[test]
    fn output_size_matches_declared_ratio() {
        let s = DecoderSpec::standard([1, 1, 2]);
        assert_eq!(s.check_input(64, 64).unwrap(), (32, 32));
        assert_eq!(s.check_input(96, 40).unwrap(), (48, 20));
        assert!(s.check_input(63, 64).is_err());
        let s = DecoderSpec::standard([1, 2, 2]);
        assert_eq!(s.check_input(96, 96).unwrap(), (24, 24));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = DecoderSpec::standard([1, 1, 2]);
        s.layers[1].kernel = 4;
        s.layers[1].padding = 2;
        assert!(s.validate().is_err());

        let mut s = DecoderSpec::standard([1, 1, 2]);
        s.layers[2].activation = Activation::None;
        assert!(s.validate().is_err());

        let mut s = DecoderSpec::standard([1, 1, 2]);
        s.layers[1].in_channels = 16;
        assert!(s.validate().is_err());

        let mut s = DecoderSpec::standard([1, 1, 2]);
        s.layers[0].padding = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = DecoderSpec::standard([1, 2, 2]);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("leaky_relu"));
        let back: DecoderSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
