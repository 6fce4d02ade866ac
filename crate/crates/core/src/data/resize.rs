use crate::image::RawImage;

/// Bilinear resize with half-pixel centres and edge clamping.
///
/// Interpolation runs in `f64`, so a constant image stays exactly constant.
/// Resizing to the current size returns a bit-identical copy.
pub fn resize_bilinear(img: &RawImage, out_h: usize, out_w: usize) -> RawImage {
    if img.dims() == (out_h, out_w) {
        return img.clone();
    }
    let (in_h, in_w, ch) = (img.height(), img.width(), img.channels());
    let rows: Vec<(usize, usize, f64)> = (0..out_h).map(|r| taps(r, in_h, out_h)).collect();
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|c| taps(c, in_w, out_w)).collect();
    let mut out = RawImage::from_fn(out_h, out_w, ch, |r, c, k| {
        let (r0, r1, fy) = rows[r];
        let (c0, c1, fx) = cols[c];
        let top = img.get(r0, c0, k) as f64 * (1.0 - fx) + img.get(r0, c1, k) as f64 * fx;
        let bottom = img.get(r1, c0, k) as f64 * (1.0 - fx) + img.get(r1, c1, k) as f64 * fx;
        ((top * (1.0 - fy) + bottom * fy) as f32).clamp(0.0, 1.0)
    })
    .expect("bilinear interpolation preserves the unit range");
    out.source = img.source.clone();
    out
}

fn taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let src = (dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    let src = src.clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}
