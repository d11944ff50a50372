//! Pixel-domain visual information fidelity.

use super::MetricError;
use crate::image::{convolve, downsample2, gaussian_kernel, GrayImage, Plane};

pub const VIF_SCALES: usize = 4;
/// Visual noise variance on the 8-bit scale.
pub const VIF_NOISE_VAR: f64 = 2.0;
const EPS: f64 = 1e-10;

fn window(scale: usize) -> (usize, f64) {
    ((2 * scale + 1).min(11), scale as f64)
}

/// Ratio of the information the distorted image `p` preserves about `r` to
/// the information carried by `r`, summed over four dyadic scales.
///
/// A reference with no local variance at any scale carries no information;
/// the index is reported as 0 in that case.
pub fn vif(p: &GrayImage, r: &GrayImage) -> Result<f64, MetricError> {
    if !p.same_dims(r) {
        return Err(MetricError::dims(p, r));
    }
    let (w, h) = p.dims();
    if w.min(h) < 32 {
        return Err(MetricError::TooSmall(format!(
            "VIF needs a minimum side of 32, got {w}x{h}"
        )));
    }
    let mut dist = p.scaled_255();
    let mut refr = r.scaled_255();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=VIF_SCALES {
        if scale > 1 {
            dist = downsample2(&dist);
            refr = downsample2(&refr);
        }
        let (radius, sigma) = window(scale);
        let k = gaussian_kernel(radius, sigma).expect("vif window");
        let mu_p = convolve(&dist, &k);
        let mu_r = convolve(&refr, &k);
        let pp = convolve(&dist.zip_map(&dist, |a, b| a * b), &k);
        let rr = convolve(&refr.zip_map(&refr, |a, b| a * b), &k);
        let pr = convolve(&dist.zip_map(&refr, |a, b| a * b), &k);
        let (n, d) = scale_terms(&mu_p, &mu_r, &pp, &rr, &pr);
        num += n;
        den += d;
    }
    if den <= 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).max(0.0))
}

fn scale_terms(mu_p: &Plane, mu_r: &Plane, pp: &Plane, rr: &Plane, pr: &Plane) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..mu_p.data.len() {
        let (mp, mr) = (mu_p.data[i], mu_r.data[i]);
        let var_p = (pp.data[i] - mp * mp).max(0.0);
        let var_r = (rr.data[i] - mr * mr).max(0.0);
        let cov = pr.data[i] - mp * mr;
        let g = cov / (var_r + EPS);
        let var_v = (var_p - g * cov).max(0.0);
        num += (1.0 + g * g * var_r / (var_v + VIF_NOISE_VAR)).log2();
        den += (1.0 + var_r / VIF_NOISE_VAR).log2();
    }
    (num, den)
}
