//! Cover images both parties can regenerate bit-exactly.
//!
//! The procedural generator sums four octaves of seeded Gaussian grids,
//! bilinearly upsampled to the image size. Octave `o` has a `2^(o+2)`-cell
//! grid and weight `1/2^o`. Each octave contributes a shared luminance grid
//! plus fainter per-channel grids, on top of a random per-image tone. The sum
//! goes through a logistic squash into `(0, 1)` and is quantized to 8 bits,
//! so the cover that reaches the search is already on the lattice the
//! receiver will reconstruct.

use std::path::{Path, PathBuf};

use crate::distort::quantize8;
use crate::error::{Error, Result};
use crate::keyring::derive_stream;
use crate::nn::{ImagePlane, Tensor};

pub const MIN_COVER_SIDE: usize = 32;
const OCTAVES: usize = 4;
const CHANNEL_SPREAD: f64 = 0.35;
const CONTRAST: f64 = 1.6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoverProvider {
    Procedural {
        seed: u64,
        height: usize,
        width: usize,
    },
    /// A PNG both parties already hold. Moves cover sharing out of band, so
    /// it is meant for benchmarking on fixed images.
    FileBacked(PathBuf),
}

impl CoverProvider {
    pub fn procedural(seed: u64, height: usize, width: usize) -> Self {
        CoverProvider::Procedural { seed, height, width }
    }
}

/// Produces the cover and checks that both sides are multiples of
/// `required_multiple` (the decoder's stride product).
pub fn generate_cover(provider: &CoverProvider, required_multiple: usize) -> Result<ImagePlane> {
    let cover = match provider {
        CoverProvider::Procedural { seed, height, width } => {
            check_size(*height, *width, required_multiple)?;
            procedural_cover(*seed, *height, *width)
        }
        CoverProvider::FileBacked(path) => {
            let c = crate::io::read_png(path)?;
            check_size(c.height(), c.width(), required_multiple)?;
            c
        }
    };
    Ok(cover)
}

fn check_size(h: usize, w: usize, multiple: usize) -> Result<()> {
    if h < MIN_COVER_SIDE || w < MIN_COVER_SIDE {
        return Err(Error::Shape(format!(
            "cover must be at least {MIN_COVER_SIDE}x{MIN_COVER_SIDE}, got {h}x{w}"
        )));
    }
    if multiple == 0 || !h.is_multiple_of(multiple) || !w.is_multiple_of(multiple) {
        return Err(Error::Shape(format!(
            "cover size {h}x{w} is not a multiple of the stride product {multiple}"
        )));
    }
    Ok(())
}

fn grid(seed: u64, label: &str, side: usize) -> Tensor {
    let mut r = derive_stream(seed, label);
    let data = (0..side * side).map(|_| r.gaussian()).collect();
    Tensor::from_vec(1, side, side, data).expect("length matches")
}

fn procedural_cover(seed: u64, height: usize, width: usize) -> ImagePlane {
    let mut tone_rng = derive_stream(seed, "cover/tone");
    let base = tone_rng.gaussian() * 0.5;
    let tone: Vec<f64> = (0..3).map(|_| base + 0.3 * tone_rng.gaussian()).collect();

    let mut acc = Tensor::zeros(3, height, width);
    for o in 0..OCTAVES {
        let side = 1usize << (o + 2);
        let weight = 1.0 / (1u64 << o) as f64;
        let luma = grid(seed, &format!("cover/octave/{o}/luma"), side).resize_bilinear(height, width);
        for c in 0..3 {
            let own = grid(seed, &format!("cover/octave/{o}/{c}"), side).resize_bilinear(height, width);
            for ((a, l), p) in acc.plane_mut(c).iter_mut().zip(luma.data()).zip(own.data()) {
                *a += weight * (l + CHANNEL_SPREAD * p);
            }
        }
    }
    for (c, &t) in tone.iter().enumerate() {
        for v in acc.plane_mut(c) {
            *v = 1.0 / (1.0 + (-(CONTRAST * *v + t)).exp());
        }
    }
    quantize8(&acc)
}

/// Reads a cover from `path`; convenience for [`CoverProvider::FileBacked`].
pub fn load_cover(path: impl AsRef<Path>) -> Result<ImagePlane> {
    crate::io::read_png(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distort::is_on_lattice;
    use std::collections::HashSet;

    #[test]
    fn regeneration_is_exact_and_on_lattice() {
        let p = CoverProvider::procedural(7, 64, 64);
        let a = generate_cover(&p, 2).unwrap();
        let b = generate_cover(&p, 2).unwrap();
        assert_eq!(a, b);
        assert!(is_on_lattice(&a));
        assert_eq!(a.shape(), (3, 64, 64));
    }

    #[test]
    fn different_seeds_differ_in_most_pixels() {
        let a = generate_cover(&CoverProvider::procedural(1, 64, 64), 1).unwrap();
        let b = generate_cover(&CoverProvider::procedural(2, 64, 64), 1).unwrap();
        let differ = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
        assert!(differ * 2 > a.len(), "{differ} of {}", a.len());
    }

    #[test]
    fn histogram_is_not_degenerate() {
        for seed in [0, 1, 99] {
            let c = generate_cover(&CoverProvider::procedural(seed, 256, 256), 1).unwrap();
            for ch in 0..3 {
                let levels: HashSet<u64> = c.plane(ch).iter().map(|v| (v * 255.0).round() as u64).collect();
                assert!(levels.len() >= 100, "seed {seed} channel {ch}: {} levels", levels.len());
            }
        }
    }

    #[test]
    fn size_constraints() {
        assert!(matches!(
            generate_cover(&CoverProvider::procedural(1, 16, 64), 1),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            generate_cover(&CoverProvider::procedural(1, 66, 64), 4),
            Err(Error::Shape(_))
        ));
        assert!(generate_cover(&CoverProvider::procedural(1, 68, 64), 4).is_ok());
    }

    #[test]
    fn missing_file_rejected() {
        let p = CoverProvider::FileBacked("/nonexistent/cover.png".into());
        assert!(generate_cover(&p, 1).is_err());
    }
}
