//! The built-in fusion operators.

use super::FusionError;
use crate::image::{box_kernel, convolve, upsample2, GrayImage, ImagePair, Kernel, Plane, Pyramid};

const RATIO_EPS: f64 = 1e-3;
const SALIENCY_EPS: f64 = 1e-10;
const BASE_RADIUS: usize = 15;
const SALIENCY_RADIUS: usize = 3;

/// `weight * a + (1 - weight) * b`.
pub fn fuse_average(pair: &ImagePair, weight: f64) -> Result<GrayImage, FusionError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(FusionError::WeightOutOfRange(weight));
    }
    let (w, h) = pair.dims();
    let data = pair
        .a
        .data()
        .iter()
        .zip(pair.b.data())
        .map(|(&a, &b)| weight * a + (1.0 - weight) * b)
        .collect();
    Ok(GrayImage::from_clamped(w, h, data))
}

fn laplacian_stencil() -> Kernel {
    Kernel::new(3, 3, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]).expect("3x3")
}

/// Local energy: windowed mean of the squared Laplacian response.
pub(crate) fn local_energy(img: &GrayImage, window_radius: usize) -> Plane {
    let lap = convolve(&img.to_plane(), &laplacian_stencil());
    convolve(&lap.map(|v| v * v), &box_kernel(window_radius))
}

/// Per pixel, the source with the larger local Laplacian energy; ties go to `a`.
pub fn fuse_max_energy(pair: &ImagePair, window_radius: usize) -> Result<GrayImage, FusionError> {
    if window_radius < 1 {
        return Err(FusionError::InvalidParameter(
            "window radius must be at least 1".into(),
        ));
    }
    let ea = local_energy(&pair.a, window_radius);
    let eb = local_energy(&pair.b, window_radius);
    let (w, h) = pair.dims();
    let data = (0..w * h)
        .map(|i| {
            if ea.data[i] >= eb.data[i] {
                pair.a.data()[i]
            } else {
                pair.b.data()[i]
            }
        })
        .collect();
    Ok(GrayImage::from_clamped(w, h, data))
}

fn check_levels(pair: &ImagePair, levels: usize) -> Result<(), FusionError> {
    let (w, h) = pair.dims();
    let max = (w.min(h) as f64).log2().floor() as usize;
    if levels < 2 || levels > max {
        return Err(FusionError::TooManyLevels {
            levels,
            max,
            width: w,
            height: h,
        });
    }
    Ok(())
}

/// Laplacian-pyramid fusion: band-pass coefficients by larger magnitude
/// (ties to `a`), residual base by averaging.
pub fn fuse_laplacian_pyramid(pair: &ImagePair, levels: usize) -> Result<GrayImage, FusionError> {
    check_levels(pair, levels)?;
    let pa = Pyramid::laplacian(&pair.a.to_plane(), levels);
    let pb = Pyramid::laplacian(&pair.b.to_plane(), levels);
    let mut fused = Vec::with_capacity(levels);
    for (k, (la, lb)) in pa.levels.iter().zip(&pb.levels).enumerate() {
        if k + 1 == levels {
            fused.push(la.zip_map(lb, |x, y| 0.5 * (x + y)));
        } else {
            fused.push(la.zip_map(lb, |x, y| if x.abs() >= y.abs() { x } else { y }));
        }
    }
    Ok(Pyramid { levels: fused }.collapse_laplacian().into_image())
}

/// Ratio-of-lowpass pyramid fusion: ratios by larger deviation from 1 (ties
/// to `a`), base by averaging.
pub fn fuse_ratio_pyramid(pair: &ImagePair, levels: usize) -> Result<GrayImage, FusionError> {
    check_levels(pair, levels)?;
    let ratios = |img: &GrayImage| -> (Vec<Plane>, Plane) {
        let g = Pyramid::gaussian(&img.to_plane(), levels);
        let mut r = Vec::with_capacity(levels - 1);
        for k in 0..levels - 1 {
            let (w, h) = g.levels[k].dims();
            let up = upsample2(&g.levels[k + 1], w, h).expect("pyramid dims");
            r.push(g.levels[k].zip_map(&up, |num, den| (num + RATIO_EPS) / (den + RATIO_EPS)));
        }
        (r, g.levels[levels - 1].clone())
    };
    let (ra, base_a) = ratios(&pair.a);
    let (rb, base_b) = ratios(&pair.b);
    let mut cur = base_a.zip_map(&base_b, |x, y| 0.5 * (x + y));
    for k in (0..levels - 1).rev() {
        let fused = ra[k].zip_map(&rb[k], |x, y| {
            if (x - 1.0).abs() >= (y - 1.0).abs() {
                x
            } else {
                y
            }
        });
        let (w, h) = fused.dims();
        let up = upsample2(&cur, w, h).expect("pyramid dims");
        cur = fused.zip_map(&up, |r, u| r * (u + RATIO_EPS) - RATIO_EPS);
    }
    Ok(cur.into_image())
}

/// Detail weight map of `a` for the two-scale saliency operator; the weight
/// of `b` is its complement.
pub fn saliency_weights(pair: &ImagePair) -> Plane {
    let saliency = |img: &GrayImage| {
        let p = img.to_plane();
        let fine = convolve(&p, &box_kernel(SALIENCY_RADIUS));
        let coarse = convolve(&p, &box_kernel(BASE_RADIUS));
        fine.zip_map(&coarse, |f, c| (f - c).abs())
    };
    let sa = saliency(&pair.a);
    let sb = saliency(&pair.b);
    sa.zip_map(&sb, |x, y| x / (x + y + SALIENCY_EPS))
}

/// Two-scale decomposition with saliency-weighted detail layers.
pub fn fuse_two_scale_saliency(pair: &ImagePair) -> Result<GrayImage, FusionError> {
    let mean = box_kernel(BASE_RADIUS);
    let (a, b) = (pair.a.to_plane(), pair.b.to_plane());
    let base_a = convolve(&a, &mean);
    let base_b = convolve(&b, &mean);
    let wa = saliency_weights(pair);
    let n = a.data.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let da = a.data[i] - base_a.data[i];
        let db = b.data[i] - base_b.data[i];
        let w = wa.data[i];
        out.push(0.5 * (base_a.data[i] + base_b.data[i]) + w * da + (1.0 - w) * db);
    }
    Ok(Plane::new(a.width, a.height, out).into_image())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::TaskKind;
    use crate::metrics::{avg_gradient, entropy};
    use crate::synthetic;

    fn same_pair(img: &GrayImage) -> ImagePair {
        ImagePair::new("same", img.clone(), img.clone(), TaskKind::Unknown).unwrap()
    }

    #[test]
    fn average_endpoints_and_pixel() {
        let p = synthetic::pair("p", TaskKind::MultiExposure, 32, 32, 1);
        assert_eq!(fuse_average(&p, 1.0).unwrap(), p.a);
        assert_eq!(fuse_average(&p, 0.0).unwrap(), p.b);
        let a = GrayImage::new(1, 1, vec![0.2]).unwrap();
        let b = GrayImage::new(1, 1, vec![0.8]).unwrap();
        let q = ImagePair::new("q", a, b, TaskKind::Unknown).unwrap();
        assert!((fuse_average(&q, 0.5).unwrap().data()[0] - 0.5).abs() < 1e-15);
        assert!(matches!(
            fuse_average(&q, 1.2),
            Err(FusionError::WeightOutOfRange(_))
        ));
    }

    #[test]
    fn average_matches_per_pixel_loop() {
        let p = synthetic::pair("p", TaskKind::InfraredVisible, 24, 20, 4);
        let w = 0.3;
        let out = fuse_average(&p, w).unwrap();
        for y in 0..20 {
            for x in 0..24 {
                let expected = (w * p.a.get(x, y) + (1.0 - w) * p.b.get(x, y)).clamp(0.0, 1.0);
                assert_eq!(out.get(x, y), expected);
            }
        }
    }

    #[test]
    fn max_energy_selection() {
        let img = synthetic::scene(32, 32, 2);
        assert_eq!(fuse_max_energy(&same_pair(&img), 1).unwrap(), img);
        let textured = synthetic::noise_image(32, 32, 5);
        let flat = GrayImage::constant(32, 32, 0.4);
        let p = ImagePair::new("t", textured.clone(), flat, TaskKind::Unknown).unwrap();
        let ea = local_energy(&p.a, 2);
        let out = fuse_max_energy(&p, 2).unwrap();
        for y in 1..31 {
            for x in 1..31 {
                assert!(ea.get(x, y) > 0.0);
                assert_eq!(out.get(x, y), textured.get(x, y));
            }
        }
        let mixed = synthetic::pair("m", TaskKind::MultiFocus, 32, 32, 8);
        let out = fuse_max_energy(&mixed, 1).unwrap();
        for i in 0..out.len() {
            let v = out.data()[i];
            assert!(v == mixed.a.data()[i] || v == mixed.b.data()[i]);
        }
    }

    #[test]
    fn max_energy_radius_validation() {
        let img = synthetic::scene(8, 8, 2);
        assert!(fuse_max_energy(&same_pair(&img), 0).is_err());
    }

    #[test]
    fn pyramid_identity() {
        let img = synthetic::scene(40, 36, 6);
        let p = same_pair(&img);
        assert!(fuse_laplacian_pyramid(&p, 4).unwrap().max_abs_diff(&img) <= 1e-6);
        assert!(fuse_ratio_pyramid(&p, 4).unwrap().max_abs_diff(&img) <= 1e-6);
        let c = GrayImage::constant(32, 32, 0.37);
        assert!(
            fuse_ratio_pyramid(&same_pair(&c), 5)
                .unwrap()
                .max_abs_diff(&c)
                <= 1e-6
        );
    }

    #[test]
    fn pyramid_level_limits() {
        let img = synthetic::scene(40, 36, 6);
        let p = same_pair(&img);
        // floor(log2(36)) = 5
        assert!(fuse_laplacian_pyramid(&p, 5).is_ok());
        assert!(matches!(
            fuse_laplacian_pyramid(&p, 6),
            Err(FusionError::TooManyLevels { max: 5, .. })
        ));
        assert!(fuse_ratio_pyramid(&p, 1).is_err());
    }

    #[test]
    fn laplacian_fusion_keeps_focus() {
        let p = synthetic::pair("mf", TaskKind::MultiFocus, 64, 64, 12);
        let fused = fuse_laplacian_pyramid(&p, 4).unwrap();
        let ag = avg_gradient(&fused).unwrap();
        let (ga, gb) = (avg_gradient(&p.a).unwrap(), avg_gradient(&p.b).unwrap());
        assert!(ag >= ga.max(gb), "{ag} < max({ga}, {gb})");
    }

    #[test]
    fn ratio_fusion_entropy_on_exposure_pair() {
        let p = synthetic::pair("me", TaskKind::MultiExposure, 64, 64, 21);
        let fused = fuse_ratio_pyramid(&p, 4).unwrap();
        assert!(fused.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(entropy(&fused) >= entropy(&p.a).min(entropy(&p.b)));
    }

    #[test]
    fn saliency_identity_and_weights() {
        let img = synthetic::scene(48, 48, 3);
        let p = same_pair(&img);
        assert!(fuse_two_scale_saliency(&p).unwrap().max_abs_diff(&img) <= 1e-6);
        let q = synthetic::pair("ir", TaskKind::InfraredVisible, 48, 48, 3);
        for w in saliency_weights(&q).data {
            let sum = w + (1.0 - w);
            assert!((sum - 1.0).abs() <= 1e-9);
            assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn saliency_prefers_detailed_source() {
        let sharp = synthetic::scene(64, 64, 17);
        let soft = synthetic::blur(&sharp, 2.0);
        let p = ImagePair::new("s", sharp.clone(), soft.clone(), TaskKind::Unknown).unwrap();
        let fused = fuse_two_scale_saliency(&p).unwrap();
        let mse = |x: &GrayImage, y: &GrayImage| {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        assert!(mse(&fused, &sharp) < mse(&fused, &soft));
    }
}
