//! Pixel-domain JPEG model: colour conversion, 8x8 DCT, table quantization
//! and reconstruction, without entropy coding (which is lossless).
//!
//! Chroma is kept at full resolution (4:4:4).

use std::fmt::Write;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::nn::{ImagePlane, Tensor};

/// Luminance quantization table, Annex K.1 of ITU-T T.81, row-major.
pub const STD_LUMA_QTABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Chrominance quantization table, Annex K.2 of ITU-T T.81, row-major.
pub const STD_CHROMA_QTABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JpegProxyConfig {
    quality: u8,
}

impl JpegProxyConfig {
    pub const DEFAULT_QUALITY: u8 = 90;

    pub fn new(quality: u8) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::Config(format!("JPEG quality {quality} not in 1..=100")));
        }
        Ok(Self { quality })
    }

    pub fn quality(&self) -> u8 {
        self.quality
    }
}

impl Default for JpegProxyConfig {
    fn default() -> Self {
        Self {
            quality: Self::DEFAULT_QUALITY,
        }
    }
}

/// IJG quality scaling: percentage `5000/q` below 50, `200 - 2q` otherwise;
/// entries are `(base * scale + 50) / 100` in integer arithmetic, clamped to
/// `1..=255`.
pub fn quality_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = u32::from(quality.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16;
    }
    out
}

/// Human-readable dump of the base tables and their scaled versions.
pub fn tables_report(quality: u8) -> String {
    let mut s = String::new();
    for (name, base) in [("luma", &STD_LUMA_QTABLE), ("chroma", &STD_CHROMA_QTABLE)] {
        for (label, table) in [
            (format!("{name} (base)"), *base),
            (format!("{name} (quality {quality})"), quality_table(base, quality)),
        ] {
            let _ = writeln!(s, "{label}:");
            for row in table.chunks(8) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
                let _ = writeln!(s, "{}", cells.join(""));
            }
        }
    }
    s
}

// basis[u][x] = c(u)/2 * cos((2x+1) u pi / 16), orthonormal 8-point DCT-II
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * cu * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        b
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Compresses and decompresses `x` (values in `[0, 1]`) through the proxy.
/// Sides that are not multiples of 8 are reflect-padded, then cropped back.
pub fn jpeg_proxy_forward(x: &ImagePlane, cfg: &JpegProxyConfig) -> Result<ImagePlane> {
    if x.channels() != 3 {
        return Err(Error::Shape("JPEG proxy expects 3 channels".into()));
    }
    let (h, w) = (x.height(), x.width());
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    let luma_q = quality_table(&STD_LUMA_QTABLE, cfg.quality);
    let chroma_q = quality_table(&STD_CHROMA_QTABLE, cfg.quality);

    // Level-shifted YCbCr planes on the padded grid.
    let mut ycc = vec![vec![0.0; ph * pw]; 3];
    for yy in 0..ph {
        let sy = reflect(yy as isize, h);
        for xx in 0..pw {
            let sx = reflect(xx as isize, w);
            let r = x.at(0, sy, sx) * 255.0;
            let g = x.at(1, sy, sx) * 255.0;
            let b = x.at(2, sy, sx) * 255.0;
            let i = yy * pw + xx;
            ycc[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
            ycc[1][i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b;
            ycc[2][i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
        }
    }

    for (ch, plane) in ycc.iter_mut().enumerate() {
        let table = if ch == 0 { &luma_q } else { &chroma_q };
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [0.0; 64];
                for r in 0..8 {
                    block[r * 8..r * 8 + 8].copy_from_slice(&plane[(by + r) * pw + bx..(by + r) * pw + bx + 8]);
                }
                let mut coef = fdct(&block);
                for (c, &q) in coef.iter_mut().zip(table) {
                    let q = f64::from(q);
                    *c = (*c / q).round() * q;
                }
                let rec = idct(&coef);
                for r in 0..8 {
                    plane[(by + r) * pw + bx..(by + r) * pw + bx + 8].copy_from_slice(&rec[r * 8..r * 8 + 8]);
                }
            }
        }
    }

    let mut out = Tensor::zeros(3, h, w);
    for yy in 0..h {
        for xx in 0..w {
            let i = yy * pw + xx;
            let yv = ycc[0][i] + 128.0;
            let cb = ycc[1][i];
            let cr = ycc[2][i];
            let rgb = [yv + 1.402 * cr, yv - 0.344_136 * cb - 0.714_136 * cr, yv + 1.772 * cb];
            for (c, v) in rgb.into_iter().enumerate() {
                *out.at_mut(c, yy, xx) = (v / 255.0).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Straight-through gradient of [`jpeg_proxy_forward`].
pub fn jpeg_proxy_gradient(grad_out: &Tensor) -> Tensor {
    grad_out.clone()
}
