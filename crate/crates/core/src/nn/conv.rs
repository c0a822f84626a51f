//! 2-D convolution (cross-correlation) with zero padding, lowered to a single
//! matrix product over an im2col buffer.
//!
//! Row `r = (ci * k + ky) * k + kx` of the column buffer holds input channel
//! `ci` shifted by kernel tap `(ky, kx)`; the kernel is stored in the same
//! order, so the product sums taps kernel-row-major.

use super::{ConvLayerSpec, ConvWeights, Tensor};
use crate::error::{Error, Result};

pub fn conv_output_size(n: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    if n + 2 * padding < kernel {
        return Err(Error::Shape(format!(
            "input extent {n} with padding {padding} is smaller than kernel {kernel}"
        )));
    }
    Ok((n + 2 * padding - kernel) / stride + 1)
}

struct Geometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

fn geometry(layer: &ConvLayerSpec, in_h: usize, in_w: usize) -> Result<Geometry> {
    if in_h < layer.kernel || in_w < layer.kernel {
        return Err(Error::Shape(format!(
            "input {in_h}x{in_w} is smaller than the {k}x{k} kernel",
            k = layer.kernel
        )));
    }
    Ok(Geometry {
        in_h,
        in_w,
        out_h: conv_output_size(in_h, layer.kernel, layer.stride, layer.padding)?,
        out_w: conv_output_size(in_w, layer.kernel, layer.stride, layer.padding)?,
    })
}

fn check_weights(layer: &ConvLayerSpec, w: &ConvWeights) -> Result<()> {
    if w.kernel().len() != layer.weight_len() || w.bias().len() != layer.out_channels {
        return Err(Error::Shape("weights do not match convolution layer".into()));
    }
    Ok(())
}

/// Valid output index range `[lo, hi)` along one axis for kernel offset `tap`.
#[inline]
fn valid_range(tap: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    // need 0 <= o*stride + tap - pad < n_in
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if n_in + pad > tap {
        ((n_in + pad - tap - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col(x: &Tensor, layer: &ConvLayerSpec, g: &Geometry) -> Vec<f64> {
    let k = layer.kernel;
    let (s, p) = (layer.stride, layer.padding);
    let plen = g.out_h * g.out_w;
    let mut col = vec![0.0; layer.in_channels * k * k * plen];
    for ci in 0..layer.in_channels {
        let src = x.plane(ci);
        for ky in 0..k {
            let (oy0, oy1) = valid_range(ky, p, s, g.in_h, g.out_h);
            for kx in 0..k {
                let (ox0, ox1) = valid_range(kx, p, s, g.in_w, g.out_w);
                let row = ((ci * k + ky) * k + kx) * plen;
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    let dst = &mut col[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    let src_row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                    if s == 1 {
                        let ix0 = ox0 + kx - p;
                        dst[ox0..ox1].copy_from_slice(&src_row[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox] = src_row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], layer: &ConvLayerSpec, g: &Geometry) -> Tensor {
    let k = layer.kernel;
    let (s, p) = (layer.stride, layer.padding);
    let plen = g.out_h * g.out_w;
    let mut out = Tensor::zeros(layer.in_channels, g.in_h, g.in_w);
    for ci in 0..layer.in_channels {
        let dst = out.plane_mut(ci);
        for ky in 0..k {
            let (oy0, oy1) = valid_range(ky, p, s, g.in_h, g.out_h);
            for kx in 0..k {
                let (ox0, ox1) = valid_range(kx, p, s, g.in_w, g.out_w);
                let row = ((ci * k + ky) * k + kx) * plen;
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    let src = &col[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    let dst_row = &mut dst[iy * g.in_w..(iy + 1) * g.in_w];
                    if s == 1 {
                        let ix0 = ox0 + kx - p;
                        for (d, v) in dst_row[ix0..ix0 + (ox1 - ox0)].iter_mut().zip(&src[ox0..ox1]) {
                            *d += v;
                        }
                    } else {
                        for ox in ox0..ox1 {
                            dst_row[ox * s + kx - p] += src[ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c`, with explicit strides for
/// `a` so the transposed kernel can be used without copying.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], beta: f64, c: &mut [f64]) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every index dgemm touches: `a` is read at
    // i*rsa + l*csa for i < m, l < k; `b` and `c` are dense row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(x: &Tensor, layer: &ConvLayerSpec, w: &ConvWeights) -> Result<Tensor> {
    check_weights(layer, w)?;
    if x.channels() != layer.in_channels {
        return Err(Error::Shape(format!(
            "convolution expects {} input channels, got {}",
            layer.in_channels,
            x.channels()
        )));
    }
    let g = geometry(layer, x.height(), x.width())?;
    let plen = g.out_h * g.out_w;
    let kdim = layer.in_channels * layer.kernel * layer.kernel;
    let col = im2col(x, layer, &g);
    let mut out = Tensor::zeros(layer.out_channels, g.out_h, g.out_w);
    for (co, &b) in w.bias().iter().enumerate() {
        out.plane_mut(co).fill(b);
    }
    gemm(
        layer.out_channels,
        kdim,
        plen,
        w.kernel(),
        kdim,
        1,
        &col,
        1.0,
        out.data_mut(),
    );
    Ok(out)
}

/// Gradient with respect to the convolution input. `in_h x in_w` is the
/// spatial size of the forward input (ambiguous from the output when the
/// stride exceeds one).
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    layer: &ConvLayerSpec,
    w: &ConvWeights,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor> {
    check_weights(layer, w)?;
    let g = geometry(layer, in_h, in_w)?;
    if grad_out.shape() != (layer.out_channels, g.out_h, g.out_w) {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match forward output {:?}",
            grad_out.shape(),
            (layer.out_channels, g.out_h, g.out_w)
        )));
    }
    let plen = g.out_h * g.out_w;
    let kdim = layer.in_channels * layer.kernel * layer.kernel;
    let mut col = vec![0.0; kdim * plen];
    // kernel^T: element (r, co) sits at co * kdim + r
    gemm(
        kdim,
        layer.out_channels,
        plen,
        w.kernel(),
        1,
        kdim,
        grad_out.data(),
        0.0,
        &mut col,
    );
    Ok(col2im(&col, layer, &g))
}
