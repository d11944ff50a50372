//! Full-reference and gradient indices: AG, SSIM, PSNR.

use super::MetricError;
use crate::image::{convolve, gaussian_kernel, GrayImage, Plane};

pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Average gradient over the `(M-1) x (N-1)` forward-difference grid, in
/// 8-bit intensity units.
pub fn avg_gradient(img: &GrayImage) -> Result<f64, MetricError> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(MetricError::TooSmall(format!(
            "average gradient needs at least 2x2, got {w}x{h}"
        )));
    }
    let mut acc = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let c = img.get(x, y) * 255.0;
            let dx = img.get(x + 1, y) * 255.0 - c;
            let dy = img.get(x, y + 1) * 255.0 - c;
            acc += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(acc / ((w - 1) * (h - 1)) as f64)
}

/// Mean of the local SSIM map (11x11 Gaussian window, sigma 1.5, 8-bit
/// constants).
pub fn ssim(p: &GrayImage, r: &GrayImage) -> Result<f64, MetricError> {
    if !p.same_dims(r) {
        return Err(MetricError::dims(p, r));
    }
    let (w, h) = p.dims();
    if w < 11 || h < 11 {
        return Err(MetricError::TooSmall(format!(
            "SSIM needs at least 11x11, got {w}x{h}"
        )));
    }
    let map = ssim_map(&p.scaled_255(), &r.scaled_255());
    Ok(map.mean())
}

fn ssim_map(p: &Plane, r: &Plane) -> Plane {
    let k = gaussian_kernel(SSIM_RADIUS, SSIM_SIGMA).expect("ssim window");
    let mu_p = convolve(p, &k);
    let mu_r = convolve(r, &k);
    let pp = convolve(&p.zip_map(p, |a, b| a * b), &k);
    let rr = convolve(&r.zip_map(r, |a, b| a * b), &k);
    let pr = convolve(&p.zip_map(r, |a, b| a * b), &k);
    let n = p.data.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (mp, mr) = (mu_p.data[i], mu_r.data[i]);
        let vp = pp.data[i] - mp * mp;
        let vr = rr.data[i] - mr * mr;
        let cov = pr.data[i] - mp * mr;
        let num = (2.0 * mp * mr + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mp * mp + mr * mr + SSIM_C1) * (vp + vr + SSIM_C2);
        out.push(num / den);
    }
    Plane::new(p.width, p.height, out)
}

/// Peak signal-to-noise ratio in dB against peak 255. Returns
/// `f64::INFINITY` for identical images.
pub fn psnr(p: &GrayImage, r: &GrayImage) -> Result<f64, MetricError> {
    if !p.same_dims(r) {
        return Err(MetricError::dims(p, r));
    }
    let mse = p
        .data()
        .iter()
        .zip(r.data())
        .map(|(a, b)| {
            let d = (a - b) * 255.0;
            d * d
        })
        .sum::<f64>()
        / p.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ag_constant_and_ramp() {
        assert_eq!(avg_gradient(&GrayImage::constant(5, 5, 0.3)).unwrap(), 0.0);
        let ramp = GrayImage::from_fn(20, 6, |x, _| x as f64 / 255.0);
        let ag = avg_gradient(&ramp).unwrap();
        assert!((ag - 1.0 / 2f64.sqrt()).abs() < 1e-9, "{ag}");
    }

    #[test]
    fn ag_checkerboard() {
        let img = GrayImage::from_fn(8, 8, |x, y| ((x + y) % 2) as f64);
        assert!((avg_gradient(&img).unwrap() - 255.0).abs() < 1e-9);
    }

    #[test]
    fn ag_too_small() {
        assert!(matches!(
            avg_gradient(&GrayImage::constant(1, 5, 0.0)),
            Err(MetricError::TooSmall(_))
        ));
    }

    #[test]
    fn ssim_identity_and_extremes() {
        let a = GrayImage::from_fn(16, 16, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let black = GrayImage::constant(12, 12, 0.0);
        let white = GrayImage::constant(12, 12, 1.0);
        let expected = SSIM_C1 / (255.0 * 255.0 + SSIM_C1);
        assert!((ssim(&black, &white).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 9.999e-5).abs() < 1e-7);
    }

    #[test]
    fn ssim_errors() {
        let a = GrayImage::constant(10, 12, 0.0);
        assert!(matches!(ssim(&a, &a), Err(MetricError::TooSmall(_))));
        let b = GrayImage::constant(12, 12, 0.0);
        assert!(matches!(
            ssim(&a, &b),
            Err(MetricError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn psnr_reference_values() {
        let a = GrayImage::constant(4, 4, 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = GrayImage::constant(4, 4, 1.0);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
        let c = GrayImage::constant(4, 4, 1.0 / 255.0);
        let v = psnr(&a, &c).unwrap();
        assert!((v - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((v - 48.1308).abs() < 1e-4);
    }
}
