//! 8-bit RGB PNG reading and writing.

use std::path::Path;

use image::{ColorType, ImageFormat, RgbImage};

use crate::distort::to_u8;
use crate::error::{Error, Result};
use crate::nn::{ImagePlane, Tensor};

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Image(format!("{}: {other}", path.display())),
    }
}

/// Converts an 8-bit RGB buffer to a `[0, 1]` plane.
pub fn from_rgb8(img: &RgbImage) -> Result<ImagePlane> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(3, h, w);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            *t.at_mut(c, y as usize, x as usize) = f64::from(px[c]) / 255.0;
        }
    }
    t.check_image()?;
    Ok(t)
}

/// Rounds a plane to 8 bits (ties to even) as an RGB buffer.
pub fn to_rgb8(x: &ImagePlane) -> Result<RgbImage> {
    if x.channels() != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", x.channels())));
    }
    let mut img = RgbImage::new(x.width() as u32, x.height() as u32);
    for (xx, yy, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            px[c] = to_u8(x.at(c, yy as usize, xx as usize));
        }
    }
    Ok(img)
}

/// Reads any PNG, dropping alpha and converting to 8-bit RGB.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    from_rgb8(&img.to_rgb8())
}

/// Reads a PNG that must already be 8-bit RGB, as stego files are. Any
/// conversion would change the pixels the receiver subtracts from.
pub fn read_png_exact(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    if img.color() != ColorType::Rgb8 {
        return Err(Error::Image(format!(
            "{}: expected 8-bit RGB, found {:?}",
            path.display(),
            img.color()
        )));
    }
    from_rgb8(&img.to_rgb8())
}

pub fn write_png(path: impl AsRef<Path>, x: &ImagePlane) -> Result<()> {
    let path = path.as_ref();
    to_rgb8(x)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}
