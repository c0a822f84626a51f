use crate::error::{Error, Result};
use crate::nn::{ImagePlane, Tensor};

/// Per-pixel box `[lower, upper]` the perturbation must stay in so that it is
/// at most `epsilon` in magnitude and `cover + delta` stays a valid image.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundBox {
    lower: Tensor,
    upper: Tensor,
}

impl BoundBox {
    pub fn lower(&self) -> &Tensor {
        &self.lower
    }

    pub fn upper(&self) -> &Tensor {
        &self.upper
    }

    pub fn contains(&self, delta: &Tensor) -> bool {
        delta.same_shape(&self.lower)
            && delta
                .data()
                .iter()
                .zip(self.lower.data().iter().zip(self.upper.data()))
                .all(|(d, (l, u))| l <= d && d <= u)
    }
}

/// `lower = max(-C, -epsilon)`, `upper = min(1 - C, epsilon)`.
pub fn compute_bounds(cover: &ImagePlane, epsilon: f64) -> Result<BoundBox> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    cover.check_unit_range("cover")?;
    Ok(BoundBox {
        lower: cover.map(|c| (-c).max(-epsilon)),
        upper: cover.map(|c| (1.0 - c).min(epsilon)),
    })
}

/// `delta = lower + (upper - lower) * (tanh(z) + 1) / 2`, which lies in the box
/// for every real `z`.
pub fn reparameterize(z: &Tensor, bounds: &BoundBox) -> Result<Tensor> {
    z.ensure_same_shape(&bounds.lower, "search variable vs bounds")?;
    let mut out = z.clone();
    for ((d, l), u) in out
        .data_mut()
        .iter_mut()
        .zip(bounds.lower.data())
        .zip(bounds.upper.data())
    {
        let t = (d.tanh() + 1.0) * 0.5;
        // the clamp only absorbs rounding in l + (u - l) * 1
        *d = (l + (u - l) * t).clamp(*l, *u);
    }
    Ok(out)
}

/// Chain rule through [`reparameterize`]: multiplies by
/// `(upper - lower) * (1 - tanh^2(z)) / 2`.
pub fn reparameterize_backward(grad_delta: &Tensor, z: &Tensor, bounds: &BoundBox) -> Result<Tensor> {
    z.ensure_same_shape(&bounds.lower, "search variable vs bounds")?;
    grad_delta.ensure_same_shape(z, "perturbation gradient")?;
    let mut out = grad_delta.clone();
    for (((g, zv), l), u) in out
        .data_mut()
        .iter_mut()
        .zip(z.data())
        .zip(bounds.lower.data())
        .zip(bounds.upper.data())
    {
        let t = zv.tanh();
        *g *= (u - l) * (1.0 - t * t) * 0.5;
    }
    Ok(out)
}
