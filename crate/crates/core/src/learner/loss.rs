//! Differentiable training losses on the `[0, 1]` intensity scale.

use super::LearnerError;
use crate::image::{convolve, convolve_adjoint, gaussian_kernel, Plane};
use crate::metrics::{SSIM_RADIUS, SSIM_SIGMA};

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Keeps the gradient magnitude differentiable on flat regions.
const GRAD_EPS: f64 = 1e-8;

fn check_dims(p: &Plane, q: &Plane) -> Result<(), LearnerError> {
    if p.dims() != q.dims() {
        return Err(LearnerError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            p.width, p.height, q.width, q.height
        )));
    }
    Ok(())
}

/// Mean SSIM of `p` against `r` and its gradient with respect to `p`.
/// Same window and constants as the SSIM metric, without a size floor.
pub fn ssim_with_grad(p: &Plane, r: &Plane) -> (f64, Plane) {
    let k = gaussian_kernel(SSIM_RADIUS, SSIM_SIGMA).expect("ssim window");
    let mu_p = convolve(p, &k);
    let mu_r = convolve(r, &k);
    let pp = convolve(&p.zip_map(p, |a, b| a * b), &k);
    let rr = convolve(&r.zip_map(r, |a, b| a * b), &k);
    let pr = convolve(&p.zip_map(r, |a, b| a * b), &k);
    let n = p.data.len();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    // dS/d(moment) per pixel, pre-scaled by 1/N
    let mut g_mu = vec![0.0; n];
    let mut g_pp = vec![0.0; n];
    let mut g_pr = vec![0.0; n];
    for i in 0..n {
        let (mp, mr) = (mu_p.data[i], mu_r.data[i]);
        let vp = pp.data[i] - mp * mp;
        let vr = rr.data[i] - mr * mr;
        let cov = pr.data[i] - mp * mr;
        let a1 = 2.0 * mp * mr + C1;
        let a2 = 2.0 * cov + C2;
        let b1 = mp * mp + mr * mr + C1;
        let b2 = vp + vr + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        // A1 = 2 mp mr + C1, A2 = 2 (E[pr] - mp mr) + C2,
        // B1 = mp² + mr² + C1, B2 = E[p²] - mp² + vr + C2
        let d_mp =
            (2.0 * mr * a2 - 2.0 * mr * a1) / (b1 * b2) - s * (2.0 * mp / b1 - 2.0 * mp / b2);
        g_mu[i] = d_mp * inv_n;
        g_pp[i] = -s / b2 * inv_n;
        g_pr[i] = 2.0 * a1 / (b1 * b2) * inv_n;
    }
    let (w, h) = p.dims();
    let back_mu = convolve_adjoint(&Plane::new(w, h, g_mu), &k);
    let back_pp = convolve_adjoint(&Plane::new(w, h, g_pp), &k);
    let back_pr = convolve_adjoint(&Plane::new(w, h, g_pr), &k);
    let grad = (0..n)
        .map(|i| back_mu.data[i] + 2.0 * p.data[i] * back_pp.data[i] + r.data[i] * back_pr.data[i])
        .collect();
    (total * inv_n, Plane::new(w, h, grad))
}

/// Forward-difference gradient magnitude with a replicated last row/column.
fn gradient_magnitude(u: &Plane) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (w, h) = u.dims();
    let n = w * h;
    let (mut dx, mut dy, mut mag) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                dx[i] = u.data[i + 1] - u.data[i];
            }
            if y + 1 < h {
                dy[i] = u.data[i + w] - u.data[i];
            }
            mag[i] = (dx[i] * dx[i] + dy[i] * dy[i] + GRAD_EPS).sqrt();
        }
    }
    (dx, dy, mag)
}

/// `mean((|∇p| - max(|∇x|, |∇y|))²)` and its gradient.
pub fn gradient_preservation(p: &Plane, x: &Plane, y: &Plane) -> (f64, Plane) {
    let (w, h) = p.dims();
    let n = w * h;
    let (dx, dy, mag) = gradient_magnitude(p);
    let (_, _, mx) = gradient_magnitude(x);
    let (_, _, my) = gradient_magnitude(y);
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let diff = mag[i] - mx[i].max(my[i]);
        value += diff * diff;
        let g = 2.0 * diff / n as f64 / mag[i];
        let (gx, gy) = (g * dx[i], g * dy[i]);
        let col = i % w;
        if col + 1 < w {
            grad[i + 1] += gx;
            grad[i] -= gx;
        }
        if i / w + 1 < h {
            grad[i + w] += gy;
            grad[i] -= gy;
        }
    }
    (value / n as f64, Plane::new(w, h, grad))
}

/// Distillation term: `0.5 * MSE(p, o) + 0.5 * (1 - SSIM(p, o))`.
pub fn loss_supervised(p: &Plane, o: &Plane) -> Result<(f64, Plane), LearnerError> {
    check_dims(p, o)?;
    let n = p.data.len() as f64;
    let mse = p
        .data
        .iter()
        .zip(&o.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    let (s, ds) = ssim_with_grad(p, o);
    let grad = p
        .data
        .iter()
        .zip(&o.data)
        .zip(&ds.data)
        .map(|((a, b), g)| (a - b) / n - 0.5 * g)
        .collect();
    Ok((
        0.5 * mse + 0.5 * (1.0 - s),
        Plane::new(p.width, p.height, grad),
    ))
}

/// Source-consistency term: mean over both sources of
/// `0.5 * (1 - SSIM(p, s)) + 0.5 * gradient_preservation(p, x, y)`.
pub fn loss_unsupervised(p: &Plane, x: &Plane, y: &Plane) -> Result<(f64, Plane), LearnerError> {
    check_dims(p, x)?;
    check_dims(p, y)?;
    let (sx, gx) = ssim_with_grad(p, x);
    let (sy, gy) = ssim_with_grad(p, y);
    let (gp, ggp) = gradient_preservation(p, x, y);
    let value = 0.5 * (1.0 - 0.5 * (sx + sy)) + 0.5 * gp;
    let grad = (0..p.data.len())
        .map(|i| -0.25 * (gx.data[i] + gy.data[i]) + 0.5 * ggp.data[i])
        .collect();
    Ok((value, Plane::new(p.width, p.height, grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ssim;
    use crate::synthetic;

    fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
        synthetic::noise_image(w, h, seed).to_plane()
    }

    /// Central differences of `f` at every pixel of `p`.
    fn numeric_grad(p: &Plane, f: impl Fn(&Plane) -> f64) -> Vec<f64> {
        let h = 1e-4;
        (0..p.data.len())
            .map(|i| {
                let mut plus = p.clone();
                plus.data[i] += h;
                let mut minus = p.clone();
                minus.data[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn ssim_value_matches_metric() {
        let p = synthetic::scene(24, 20, 1);
        let r = synthetic::blur(&p, 1.5);
        let (s, _) = ssim_with_grad(&p.to_plane(), &r.to_plane());
        assert!((s - ssim(&p, &r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn supervised_minimum() {
        let p = random_plane(16, 16, 3);
        let (v, g) = loss_supervised(&p, &p).unwrap();
        assert!(v.abs() < 1e-9);
        let norm: f64 = g.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 1e-7, "{norm}");
    }

    #[test]
    fn supervised_gradient_matches_differences() {
        for seed in 0..4 {
            let p = random_plane(16, 16, 10 + seed);
            let o = random_plane(16, 16, 20 + seed);
            let (v, g) = loss_supervised(&p, &o).unwrap();
            assert!(v >= 0.0);
            let num = numeric_grad(&p, |q| loss_supervised(q, &o).unwrap().0);
            let e = rel_err(&g.data, &num);
            assert!(e <= 1e-4, "seed {seed}: {e}");
        }
    }

    #[test]
    fn unsupervised_constant_is_zero() {
        let c = Plane::new(8, 8, vec![0.3; 64]);
        let (v, _) = loss_unsupervised(&c, &c, &c).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn unsupervised_symmetric_and_gradient() {
        let p = random_plane(16, 16, 31);
        let x = random_plane(16, 16, 32);
        let y = random_plane(16, 16, 33);
        let (v1, g1) = loss_unsupervised(&p, &x, &y).unwrap();
        let (v2, g2) = loss_unsupervised(&p, &y, &x).unwrap();
        assert!((v1 - v2).abs() <= 1e-12);
        assert!(rel_err(&g1.data, &g2.data) <= 1e-12);
        let num = numeric_grad(&p, |q| loss_unsupervised(q, &x, &y).unwrap().0);
        let e = rel_err(&g1.data, &num);
        assert!(e <= 1e-4, "{e}");
    }

    #[test]
    fn mismatched_dims() {
        let a = Plane::zeros(4, 4);
        let b = Plane::zeros(4, 5);
        assert!(loss_supervised(&a, &b).is_err());
        assert!(loss_unsupervised(&a, &a, &b).is_err());
    }
}
