use std::path::Path;

use misfit_core::data::{load_image_pair, preprocess_pair};
use misfit_core::error::Error;

fn write_rgb(path: &Path, w: u32, h: u32) {
    let img = image::RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 255]));
    img.save(path).unwrap();
}

fn write_gray(path: &Path, w: u32, h: u32) {
    let img = image::GrayImage::from_fn(w, h, |x, y| image::Luma([((x + y) % 200) as u8]));
    img.save(path).unwrap();
}

#[test]
fn mismatched_resolutions_are_preserved_then_equalised() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = (dir.path().join("a_rgb.png"), dir.path().join("a_ir.png"));
    write_rgb(&v, 640, 512);
    write_gray(&t, 336, 256);
    let pair = load_image_pair(&v, &t).unwrap();
    assert_eq!(pair.visual.dims(), (512, 640));
    assert_eq!(pair.thermal.dims(), (256, 336));
    assert_eq!((pair.visual.channels(), pair.thermal.channels()), (3, 1));
    assert!(!pair.aligned);
    // 8-bit data is divided by 255, so the saturated blue channel reads 1.0.
    assert_eq!(pair.visual.max_value(), 1.0);
    assert!(pair.visual.min_value() >= 0.0);

    let p = preprocess_pair(&pair, (256, 256), 16).unwrap();
    assert_eq!(p.visual.dims(), (256, 256));
    assert_eq!(p.thermal.dims(), (256, 256));
    assert!(p.visual.data().iter().chain(p.thermal.data()).all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn sixteen_bit_thermal_uses_its_full_range() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = (dir.path().join("b_rgb.png"), dir.path().join("b_ir.tif"));
    write_rgb(&v, 64, 64);
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(64, 64, |x, _| {
        image::Luma([if x == 0 { 65535 } else { 32768 }])
    });
    img.save(&t).unwrap();
    let pair = load_image_pair(&v, &t).unwrap();
    assert_eq!(pair.thermal.max_value(), 1.0);
    assert!((pair.thermal.get(0, 5, 0) - 32768.0 / 65535.0).abs() < 1e-6);
}

#[test]
fn missing_thermal_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("c_rgb.png");
    write_rgb(&v, 64, 64);
    let t = dir.path().join("nowhere_ir.png");
    let err = load_image_pair(&v, &t).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("nowhere_ir.png"), "{err}");
}

#[test]
fn undecodable_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = (dir.path().join("d_rgb.png"), dir.path().join("d_ir.png"));
    write_rgb(&v, 64, 64);
    std::fs::write(&t, b"not an image").unwrap();
    assert!(matches!(load_image_pair(&v, &t), Err(Error::Format { .. })));
}
