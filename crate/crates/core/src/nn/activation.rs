use super::Tensor;
use crate::error::Result;

pub fn leaky_relu_forward(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Takes the forward *output*; with a positive slope its sign equals the
/// input's sign.
pub fn leaky_relu_backward(grad_out: &Tensor, output: &Tensor, slope: f64) -> Result<Tensor> {
    grad_out.zip_map(output, |g, y| if y > 0.0 { g } else { slope * g })
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}

/// Takes the forward output `y`: `dx = g * y * (1 - y)`.
pub fn sigmoid_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    grad_out.zip_map(output, |g, y| g * y * (1.0 - y))
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(1, 1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn scalar_values() {
        assert_eq!(leaky_relu_forward(&t(&[-1.0, 2.0]), 0.2).data(), &[-0.2, 2.0]);
        let y = sigmoid_forward(&t(&[0.0]));
        assert_eq!(y.data(), &[0.5]);
        assert_eq!(sigmoid_backward(&t(&[1.0]), &y).unwrap().data(), &[0.25]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let y = sigmoid_forward(&t(&[-800.0, 800.0]));
        assert_eq!(y.data(), &[0.0, 1.0]);
    }

    #[test]
    fn finite_differences() {
        let xs = [-2.3, -0.7, -0.01, 0.02, 0.4, 1.9, 5.0];
        let h = 1e-3;
        for &x in &xs {
            let fd = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
            let y = sigmoid_forward(&t(&[x]));
            let a = sigmoid_backward(&t(&[1.0]), &y).unwrap().data()[0];
            assert!(((a - fd) / a).abs() < 1e-5);

            if x.abs() > h {
                let f = |v: f64| leaky_relu_forward(&t(&[v]), 0.2).data()[0];
                let fd = (f(x + h) - f(x - h)) / (2.0 * h);
                let y = leaky_relu_forward(&t(&[x]), 0.2);
                let a = leaky_relu_backward(&t(&[1.0]), &y, 0.2).unwrap().data()[0];
                assert!(((a - fd) / a).abs() < 1e-5);
            }
        }
    }
}
