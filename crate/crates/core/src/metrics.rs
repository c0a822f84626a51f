//! Image quality measures on `[0, 1]` planes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::ImagePlane;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityReport {
    pub psnr_db: f64,
    /// NaN when the images are smaller than the SSIM window.
    pub ssim: f64,
    pub linf: f64,
    pub l2: f64,
}

fn same(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    a.ensure_same_shape(b, "metric operands")
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    same(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(1 / MSE)` over all channels jointly; infinite for identical
/// images.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Largest absolute difference and Euclidean norm of the difference.
pub fn residual_stats(a: &ImagePlane, b: &ImagePlane) -> Result<(f64, f64)> {
    same(a, b)?;
    let (mut linf, mut sq) = (0.0f64, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (x - y).abs();
        linf = linf.max(d);
        sq += d * d;
    }
    Ok((linf, sq.sqrt()))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filtering over valid positions only.
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win.iter().enumerate().map(|(k, g)| g * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(k, g)| g * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and dynamic range 1, averaged over valid window positions and
/// then over channels.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    same(a, b)?;
    let (c, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let x = a.plane(ch);
        let y = b.plane(ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, h, w, &win);
        let my = filter_valid(y, h, w, &win);
        let sxx = filter_valid(&xx, h, w, &win);
        let syy = filter_valid(&yy, h, w, &win);
        let sxy = filter_valid(&xy, h, w, &win);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// All metrics of a pair. Unlike [`ssim`], images under the window size are
/// accepted, with `ssim` set to NaN.
pub fn quality_report(a: &ImagePlane, b: &ImagePlane) -> Result<QualityReport> {
    let (linf, l2) = residual_stats(a, b)?;
    let small = a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW;
    Ok(QualityReport {
        psnr_db: psnr(a, b)?,
        ssim: if small { f64::NAN } else { ssim(a, b)? },
        linf,
        l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyring::derive_stream;
    use crate::nn::Tensor;
    use proptest::prelude::*;

    fn random(h: usize, w: usize, seed: u64) -> Tensor {
        let mut r = derive_stream(seed, "metrics/test");
        Tensor::from_vec(3, h, w, (0..3 * h * w).map(|_| r.next_f64()).collect()).unwrap()
    }

    fn smooth(h: usize, w: usize) -> Tensor {
        let mut t = Tensor::zeros(3, h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    *t.at_mut(c, y, x) = 0.5 + 0.4 * ((x as f64 * 0.3 + c as f64).sin() * (y as f64 * 0.2).cos());
                }
            }
        }
        t
    }

    #[test]
    fn psnr_examples() {
        let a = random(16, 16, 1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|v| if v > 0.5 { v - 10.0 / 255.0 } else { v + 10.0 / 255.0 });
        let p = psnr(&a, &b).unwrap();
        assert!((p - 28.13).abs() < 0.01, "{p}");
        assert!((p - 10.0 * (255.0f64 * 255.0 / 100.0).log10()).abs() < 1e-9);
        assert_eq!(
            psnr(&Tensor::zeros(3, 8, 8), &Tensor::filled(3, 8, 8, 1.0)).unwrap(),
            0.0
        );
        assert!(psnr(&a, &random(8, 8, 2)).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = Tensor::filled(3, 16, 16, 0.5);
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let p = psnr(&a, &a.map(|v| v + k as f64 * 0.01)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_inversion_symmetry() {
        let a = smooth(32, 24);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.5);
        let b = random(32, 24, 3);
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((s1 - s2).abs() < 1e-9);
        assert!(s1 < 1.0);
        assert!(ssim(&Tensor::zeros(3, 10, 20), &Tensor::zeros(3, 10, 20)).is_err());
    }

    #[test]
    fn ssim_matches_direct_window_oracle() {
        let a = random(14, 13, 4);
        let b = a.zip_map(&random(14, 13, 5), |x, y| 0.7 * x + 0.3 * y).unwrap();
        // 2-D Gaussian applied window by window
        let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let norm: f64 = g.iter().sum::<f64>().powi(2);
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut count = 0;
            for y0 in 0..=3 {
                for x0 in 0..=2 {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wgt = g[i] * g[j] / norm;
                            let (p, q) = (a.at(c, y0 + i, x0 + j), b.at(c, y0 + i, x0 + j));
                            mx += wgt * p;
                            my += wgt * q;
                            sxx += wgt * p * p;
                            syy += wgt * q * q;
                            sxy += wgt * p * q;
                        }
                    }
                    let (vx, vy, cv) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    acc += (2.0 * mx * my + c1) * (2.0 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        assert!((ssim(&a, &b).unwrap() - total / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_on_small_images_leaves_ssim_undefined() {
        let a = random(8, 8, 11);
        let q = quality_report(&a, &a).unwrap();
        assert!(q.ssim.is_nan());
        assert_eq!(q.psnr_db, f64::INFINITY);
        assert!(quality_report(&a, &random(8, 9, 12)).is_err());
        assert_eq!(
            quality_report(&random(11, 11, 13), &random(11, 11, 13)).unwrap().ssim,
            1.0
        );
    }

    #[test]
    fn residual_examples() {
        let a = random(8, 8, 6);
        assert_eq!(residual_stats(&a, &a).unwrap(), (0.0, 0.0));
        let mut b = a.clone();
        *b.at_mut(1, 2, 3) += 0.2;
        let (linf, l2) = residual_stats(&a, &b).unwrap();
        assert!((linf - 0.2).abs() < 1e-15 && (l2 - 0.2).abs() < 1e-15);
        let c = random(8, 8, 7);
        let (mut m, mut s) = (0.0f64, 0.0);
        for i in 0..a.len() {
            let d = a.data()[i] - c.data()[i];
            m = m.max(d.abs());
            s += d * d;
        }
        let (linf, l2) = residual_stats(&a, &c).unwrap();
        assert!((linf - m).abs() < 1e-9 && (l2 - s.sqrt()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn ssim_bounded_and_symmetric(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let a = random(12, 12, seed_a);
            let b = random(12, 12, seed_b + 1000);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-9);
        }
    }
}
