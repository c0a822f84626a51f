//! Central finite-difference checks for analytic input gradients.
//!
//! Used by the test suites and by critic registration. The objective closure
//! returns its value together with a piecewise-linearity signature (for the
//! decoder: the LeakyReLU sign pattern); a coordinate whose `x - h` and `x + h`
//! probes land on different signatures straddles a kink and is replaced by
//! another random coordinate.

use crate::distort::{hf_residual_critic, Channel};
use crate::keyring::{derive_stream, init_weights, InitAlgorithm};
use crate::nn::{
    conv2d_backward_input, conv2d_forward, instance_norm_backward_input, instance_norm_forward, leaky_relu_backward,
    leaky_relu_forward, sigmoid_backward, sigmoid_forward, ConvLayerSpec, Decoder, DecoderSpec, Tensor,
};
use crate::sps::{compute_bounds, reparameterize, reparameterize_backward, Objective, SpsConfig};

#[derive(Debug, Clone)]
pub struct FdOptions {
    /// Number of coordinates that must be checked.
    pub coords: usize,
    pub step: f64,
    /// Coordinates whose analytic derivative is at most this in magnitude are
    /// not counted.
    pub min_magnitude: f64,
    pub seed: u64,
}

impl FdOptions {
    pub fn new(coords: usize, seed: u64) -> Self {
        Self {
            coords,
            step: 1e-3,
            min_magnitude: 1e-6,
            seed,
        }
    }

    pub fn step(mut self, h: f64) -> Self {
        self.step = h;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub skipped_small: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates wanted; `passes` fails if fewer were checked.
    pub wanted: usize,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked >= self.wanted && self.max_rel_error < tolerance
    }
}

/// Compares `analytic` with central differences of `f` around `x` at random
/// coordinates.
pub fn check_gradient<F, P>(x: &Tensor, analytic: &Tensor, mut f: F, opts: &FdOptions) -> FdReport
where
    F: FnMut(&Tensor) -> (f64, P),
    P: PartialEq,
{
    assert!(x.same_shape(analytic), "gradient shape differs from input");
    let mut rng = derive_stream(opts.seed, "gradcheck/coords");
    let mut report = FdReport {
        wanted: opts.coords,
        ..Default::default()
    };
    let max_attempts = 50 * opts.coords.max(1);
    let mut probe = x.clone();
    for _ in 0..max_attempts {
        if report.checked >= opts.coords {
            break;
        }
        let i = (rng.next_u64() % x.len() as u64) as usize;
        let a = analytic.data()[i];
        if a.abs() <= opts.min_magnitude {
            report.skipped_small += 1;
            continue;
        }
        let x0 = x.data()[i];
        probe.data_mut()[i] = x0 + opts.step;
        let (fp, pp) = f(&probe);
        probe.data_mut()[i] = x0 - opts.step;
        let (fm, pm) = f(&probe);
        probe.data_mut()[i] = x0;
        if pp != pm {
            report.skipped_kinks += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * opts.step);
        let rel = ((a - fd) / a).abs();
        report.checked += 1;
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
            report.worst_index = Some(i);
        }
    }
    report
}

/// Tolerance for a single layer.
pub const LAYER_TOLERANCE: f64 = 1e-4;
/// Tolerance for composed passes (decoder, objective).
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

/// One entry of [`gradient_suite`].
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: &'static str,
    pub report: FdReport,
    pub tolerance: f64,
}

impl SuiteCase {
    pub fn passes(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

fn uniform(c: usize, h: usize, w: usize, lo: f64, hi: f64, seed: u64, label: &str) -> Tensor {
    let mut r = derive_stream(seed, format!("gradcheck/suite/{label}"));
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.uniform(lo, hi)).collect()).expect("sizes match")
}

fn sign_pattern(t: &Tensor) -> Vec<bool> {
    t.data().iter().map(|&v| v > 0.0).collect()
}

/// Input-gradient checks of every differentiable stage, from single layers up
/// to the full objective with one and two receivers, each on `coords` random
/// coordinates at step 1e-3. Layers are probed through a random linear
/// functional of their output. The objective is checked with quantization
/// out of the loop, where it is smooth.
pub fn gradient_suite(seed: u64, coords: usize) -> Vec<SuiteCase> {
    let opts = FdOptions::new(coords, seed);
    let mut cases = Vec::new();
    let mut push = |name, report, tolerance| {
        cases.push(SuiteCase {
            name,
            report,
            tolerance,
        })
    };

    // first layer of the 6 bpp decoder (stride 1), middle layer of the 1.5 bpp one (stride 2)
    for (name, strides, index) in [("conv2d stride 1", [1, 1, 2], 0), ("conv2d stride 2", [1, 2, 2], 1)] {
        let spec = DecoderSpec::standard(strides);
        let layer: &ConvLayerSpec = &spec.layers[index];
        let w = init_weights(&spec, seed, InitAlgorithm::Xavier)
            .expect("valid spec")
            .layer(index)
            .clone();
        let x = uniform(layer.in_channels, 12, 12, -1.0, 1.0, seed, name);
        let y = conv2d_forward(&x, layer, &w).expect("valid conv");
        let probe = uniform(layer.out_channels, y.height(), y.width(), -1.0, 1.0, seed, "conv probe");
        let g = conv2d_backward_input(&probe, layer, &w, 12, 12).expect("valid conv");
        let f = |x: &Tensor| (conv2d_forward(x, layer, &w).expect("valid conv").dot(&probe), ());
        push(name, check_gradient(&x, &g, f, &opts), LAYER_TOLERANCE);
    }

    let x = uniform(4, 8, 8, -2.0, 2.0, seed, "in");
    let probe = uniform(4, 8, 8, -1.0, 1.0, seed, "in probe");
    let (_, cache) = instance_norm_forward(&x).expect("valid input");
    let g = instance_norm_backward_input(&probe, &cache).expect("valid input");
    let f = |x: &Tensor| (instance_norm_forward(x).expect("valid input").0.dot(&probe), ());
    push("instance norm", check_gradient(&x, &g, f, &opts), LAYER_TOLERANCE);

    let x = uniform(3, 8, 8, -1.0, 1.0, seed, "lrelu");
    let probe = uniform(3, 8, 8, -1.0, 1.0, seed, "lrelu probe");
    let g = leaky_relu_backward(&probe, &leaky_relu_forward(&x, 0.2), 0.2).expect("same shape");
    let f = |x: &Tensor| {
        let y = leaky_relu_forward(x, 0.2);
        (y.dot(&probe), sign_pattern(&y))
    };
    push("leaky relu", check_gradient(&x, &g, f, &opts), LAYER_TOLERANCE);

    let x = uniform(3, 8, 8, -4.0, 4.0, seed, "sigmoid");
    let probe = uniform(3, 8, 8, -1.0, 1.0, seed, "sigmoid probe");
    let g = sigmoid_backward(&probe, &sigmoid_forward(&x)).expect("same shape");
    let f = |x: &Tensor| (sigmoid_forward(x).dot(&probe), ());
    push("sigmoid", check_gradient(&x, &g, f, &opts), LAYER_TOLERANCE);

    let cover = uniform(3, 8, 8, 0.0, 1.0, seed, "reparam cover");
    let bounds = compute_bounds(&cover, 0.2).expect("valid cover");
    let z = uniform(3, 8, 8, -2.0, 2.0, seed, "reparam z");
    let probe = uniform(3, 8, 8, -1.0, 1.0, seed, "reparam probe");
    let g = reparameterize_backward(&probe, &z, &bounds).expect("same shape");
    let f = |z: &Tensor| (reparameterize(z, &bounds).expect("same shape").dot(&probe), ());
    push("reparameterization", check_gradient(&z, &g, f, &opts), LAYER_TOLERANCE);

    for (name, strides) in [("decoder 6 bpp", [1, 1, 2]), ("decoder 1.5 bpp", [1, 2, 2])] {
        let d = Decoder::from_seed(&DecoderSpec::standard(strides), seed, InitAlgorithm::Xavier).expect("valid spec");
        let x = uniform(3, 16, 16, -0.2, 0.2, seed, name);
        let (y, trace) = d.forward_traced(&x).expect("valid input");
        let probe = uniform(3, y.height(), y.width(), -1.0, 1.0, seed, "decoder probe");
        let g = d.backward_input(&trace, &probe).expect("matching trace");
        let f = |x: &Tensor| {
            let (y, t) = d.forward_traced(x).expect("valid input");
            (y.dot(&probe), t.activation_pattern())
        };
        push(name, check_gradient(&x, &g, f, &opts), END_TO_END_TOLERANCE);
    }

    let cover = uniform(3, 16, 16, 0.0, 1.0, seed, "objective cover");
    let spec = DecoderSpec::standard([1, 1, 2]);
    let critics = [hf_residual_critic()];
    let cfg = SpsConfig {
        gamma: 0.5,
        quantize_in_loop: false,
        ..Default::default()
    };
    for (name, receivers) in [("objective T=1", 1u64), ("objective T=2", 2)] {
        let decoders: Vec<Decoder> = (0..receivers)
            .map(|t| Decoder::from_seed(&spec, seed ^ (t + 1), InitAlgorithm::Xavier).expect("valid spec"))
            .collect();
        let secrets: Vec<Tensor> = (0..receivers)
            .map(|t| uniform(3, 8, 8, 0.0, 1.0, seed + t, "objective secret"))
            .collect();
        let obj =
            Objective::new(&cover, &secrets, &decoders, &critics, Channel::Lossless, &cfg).expect("consistent shapes");
        let z = uniform(3, 16, 16, -1.5, 1.5, seed, name);
        let iter = cfg.gamma_start_iter;
        let (_, g) = obj.evaluate(&z, iter).expect("finite loss");
        let f = |z: &Tensor| obj.value_and_pattern(z, iter).expect("finite loss");
        push(name, check_gradient(&z, &g, f, &opts), END_TO_END_TOLERANCE);
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_exact_gradient_and_rejects_wrong_one() {
        let x = Tensor::from_vec(1, 4, 4, (0..16).map(|i| i as f64 * 0.1 - 0.7).collect()).unwrap();
        let f = |x: &Tensor| (x.data().iter().map(|v| v.powi(3)).sum::<f64>(), ());
        let good = x.map(|v| 3.0 * v * v);
        let r = check_gradient(&x, &good, f, &FdOptions::new(10, 1));
        assert!(r.passes(1e-4), "{r:?}");
        let bad = good.scale(1.01);
        let r = check_gradient(&x, &bad, f, &FdOptions::new(10, 1));
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn suite_covers_every_stage_and_passes() {
        let cases = gradient_suite(17, 20);
        assert_eq!(cases.len(), 10);
        for c in &cases {
            assert!(c.passes(), "{}: {:?}", c.name, c.report);
        }
    }

    #[test]
    fn kinks_are_skipped() {
        // |x| with a coordinate sitting right at the kink
        let x = Tensor::from_vec(1, 1, 4, vec![0.0, 0.5, -0.5, 1e-4]).unwrap();
        let f = |x: &Tensor| {
            let v = x.data().iter().map(|v| v.abs()).sum::<f64>();
            (v, x.data().iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        };
        let g = x.map(|v| if v > 0.0 { 1.0 } else { -1.0 });
        let r = check_gradient(&x, &g, f, &FdOptions::new(20, 2));
        assert!(r.skipped_kinks > 0);
        assert!(r.passes(1e-9), "{r:?}");
    }
}
