use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};

use fnsteg::distort::{jpeg_proxy_forward, JpegProxyConfig};
use fnsteg::io::{from_rgb8, to_rgb8};
use fnsteg::nn::ImagePlane;
use fnsteg::samples::synthetic_image;

fn reference_jpeg(x: &ImagePlane, quality: u8) -> ImagePlane {
    let rgb: RgbImage = to_rgb8(x).unwrap();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&rgb)
        .unwrap();
    let back = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .unwrap()
        .to_rgb8();
    from_rgb8(&back).unwrap()
}

fn mean_abs_diff(a: &ImagePlane, b: &ImagePlane) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[test]
fn proxy_tracks_a_real_codec_at_q90() {
    let cfg = JpegProxyConfig::new(90).unwrap();
    for seed in 0..4 {
        let x = synthetic_image(seed, 64, 64);
        let proxy = jpeg_proxy_forward(&x, &cfg).unwrap();
        let reference = reference_jpeg(&x, 90);
        let mad = mean_abs_diff(&proxy, &reference);
        assert!(mad < 3.0 / 255.0, "seed {seed}: mean abs diff {:.3}/255", mad * 255.0);
    }
}

#[test]
fn proxy_and_codec_lose_similar_detail_across_qualities() {
    let x = synthetic_image(9, 64, 64);
    let mut last = 0.0;
    for q in [95, 75, 50, 25] {
        let cfg = JpegProxyConfig::new(q).unwrap();
        let proxy_err = mean_abs_diff(&jpeg_proxy_forward(&x, &cfg).unwrap(), &x);
        let codec_err = mean_abs_diff(&reference_jpeg(&x, q), &x);
        assert!(proxy_err > last, "q{q}");
        assert!(
            (proxy_err - codec_err).abs() < 0.5 * codec_err + 1.0 / 255.0,
            "q{q}: {proxy_err} vs {codec_err}"
        );
        last = proxy_err;
    }
}
