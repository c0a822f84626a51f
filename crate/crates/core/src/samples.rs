//! Seeded synthetic test images: a smooth multi-octave background with a
//! handful of flat-coloured discs and rectangles, so there are both gradients
//! and hard edges to recover.

use crate::cover::{generate_cover, CoverProvider};
use crate::keyring::derive_stream;
use crate::nn::{ImagePlane, Tensor};

/// A `3 x height x width` image in `[0, 1]`, quantized to 8 bits.
pub fn synthetic_image(seed: u64, height: usize, width: usize) -> ImagePlane {
    // the cover generator needs >= 32 px; render large and shrink if needed
    let (bh, bw) = (height.max(32), width.max(32));
    let background = generate_cover(&CoverProvider::procedural(seed ^ 0x5ec7e7, bh, bw), 1)
        .expect("size is valid")
        .resize_bilinear(height, width);
    let mut img = background;
    let mut r = derive_stream(seed, "samples/shapes");
    let shapes = 3 + (r.next_u64() % 4) as usize;
    for _ in 0..shapes {
        let colour = [r.next_f64(), r.next_f64(), r.next_f64()];
        let cy = r.uniform(0.0, height as f64);
        let cx = r.uniform(0.0, width as f64);
        let size = r.uniform(0.08, 0.3) * height.min(width) as f64;
        let disc = r.next_f64() < 0.5;
        let alpha = r.uniform(0.6, 1.0);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let inside = if disc {
                    dy * dy + dx * dx <= size * size
                } else {
                    dy.abs() <= size && dx.abs() <= 0.7 * size
                };
                if inside {
                    for (c, col) in colour.iter().enumerate() {
                        let v = img.at_mut(c, y, x);
                        *v = (1.0 - alpha) * *v + alpha * col;
                    }
                }
            }
        }
    }
    crate::distort::quantize8(&img)
}

/// `n` synthetic images with seeds `first_seed..first_seed + n`.
pub fn synthetic_set(first_seed: u64, n: usize, height: usize, width: usize) -> Vec<Tensor> {
    (0..n as u64)
        .map(|i| synthetic_image(first_seed + i, height, width))
        .collect()
}
