//! Seeded synthetic scenes and source pairs.
//!
//! Scenes mix Gaussian blobs, a ramp, a sinusoidal grating and a checker
//! patch. Pairs apply task-specific degradations so that no single source
//! carries all of the scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{convolve, gaussian_kernel, GrayImage, ImagePair, Plane, TaskKind};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth structure: blobs over a gentle ramp.
fn blob_layer(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Plane {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(0.06..0.22) * w.min(h) as f64,
                rng.random_range(-0.35..0.45),
            )
        })
        .collect();
    let (gx, gy) = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
            let mut v = 0.45 + gx * (fx - 0.5) + gy * (fy - 0.5);
            for &(cx, cy, s, amp) in &blobs {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v += amp * (-d2 / (2.0 * s * s)).exp();
            }
            data.push(v);
        }
    }
    Plane::new(w, h, data)
}

/// Fine structure: a grating plus a checker patch, zero mean.
fn texture_layer(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Plane {
    let freq = rng.random_range(0.25..0.7);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (c, s) = (theta.cos(), theta.sin());
    let cell = rng.random_range(3..7usize);
    let (px, py) = (
        rng.random_range(0..w / 2 + 1),
        rng.random_range(0..h / 2 + 1),
    );
    let (pw, ph) = (w / 3 + 1, h / 3 + 1);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.08 * (freq * (c * x as f64 + s * y as f64)).sin();
            if (px..px + pw).contains(&x) && (py..py + ph).contains(&y) {
                v += if ((x / cell) + (y / cell)) % 2 == 0 {
                    0.12
                } else {
                    -0.12
                };
            }
            data.push(v);
        }
    }
    Plane::new(w, h, data)
}

/// A clean scene in `[0, 1]`.
pub fn scene(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    let base = blob_layer(w, h, &mut r);
    let tex = texture_layer(w, h, &mut r);
    base.zip_map(&tex, |a, b| a + b).into_image()
}

pub fn blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let k = gaussian_kernel(radius, sigma).expect("blur kernel");
    convolve(&img.to_plane(), &k).into_image()
}

/// Additive Gaussian noise with standard deviation `sigma_255` on the 8-bit
/// scale; the result is clamped.
pub fn add_gaussian_noise(img: &GrayImage, sigma_255: f64, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, sigma_255 / 255.0).expect("noise sigma");
    let data = img
        .data()
        .iter()
        .map(|v| v + normal.sample(&mut r))
        .collect();
    GrayImage::from_clamped(img.width(), img.height(), data)
}

/// Replaces `density` of the pixels with 0 or 1 at random.
pub fn salt_and_pepper(img: &GrayImage, density: f64, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            if r.random::<f64>() < density {
                if r.random::<bool>() {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        })
        .collect();
    GrayImage::from_clamped(img.width(), img.height(), data)
}

/// Uniform random image.
pub fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    GrayImage::from_clamped(w, h, (0..w * h).map(|_| r.random::<f64>()).collect())
}

/// Task cycle used by [`pair_set`].
pub const TASK_CYCLE: [TaskKind; 4] = [
    TaskKind::MultiFocus,
    TaskKind::MultiExposure,
    TaskKind::InfraredVisible,
    TaskKind::Medical,
];

/// One registered source pair for `task`, with the clean scene as reference.
pub fn pair(id: &str, task: TaskKind, w: usize, h: usize, seed: u64) -> ImagePair {
    let mut r = rng(seed ^ 0x005e_ed0f_fa15);
    let base = blob_layer(w, h, &mut r);
    let tex = texture_layer(w, h, &mut r);
    let clean = base.zip_map(&tex, |a, b| a + b).into_image();
    let noise_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let (a, b) = match task {
        TaskKind::MultiFocus | TaskKind::Cvs | TaskKind::Unknown => {
            let sigma = r.random_range(1.5..3.0);
            let blurred = blur(&clean, sigma);
            let split = w / 2;
            let a = GrayImage::from_fn(w, h, |x, y| {
                if x < split {
                    clean.get(x, y)
                } else {
                    blurred.get(x, y)
                }
            });
            let b = GrayImage::from_fn(w, h, |x, y| {
                if x < split {
                    blurred.get(x, y)
                } else {
                    clean.get(x, y)
                }
            });
            (a, b)
        }
        TaskKind::MultiExposure => {
            let under = r.random_range(0.35..0.55);
            let over = r.random_range(1.6..2.2);
            let a = GrayImage::from_fn(w, h, |x, y| clean.get(x, y).powf(1.4) * under);
            let b = GrayImage::from_fn(w, h, |x, y| clean.get(x, y) * over - 0.15);
            (a, b)
        }
        TaskKind::InfraredVisible => {
            // thermal: smooth structure with hot spots; visible: texture on a
            // flattened, dim background
            let thermal = base.map(|v| (v - 0.2) * 1.3);
            let visible = tex.map(|t| 0.4 + 1.6 * t);
            let visible = visible.zip_map(&base, |t, b| t + 0.15 * b);
            (
                blur(&thermal.into_image(), 1.0),
                add_gaussian_noise(&visible.into_image(), 2.0, noise_seed),
            )
        }
        TaskKind::Medical => {
            // structural modality keeps edges, functional keeps intensity
            let functional = blur(&base.into_image(), 2.5);
            let structural = tex.map(|t| 0.5 + 2.5 * t.abs() - 0.1).into_image();
            (structural, functional)
        }
    };
    ImagePair::new(id, a, b, task)
        .and_then(|p| p.with_reference(clean))
        .expect("synthetic pair dims")
}

/// `count` pairs of size `w x h`, tasks cycling through [`TASK_CYCLE`].
pub fn pair_set(count: usize, w: usize, h: usize, seed: u64) -> Vec<ImagePair> {
    (0..count)
        .map(|i| {
            let task = TASK_CYCLE[i % TASK_CYCLE.len()];
            pair(
                &format!("syn{i:03}"),
                task,
                w,
                h,
                seed.wrapping_add(i as u64 * 7919),
            )
        })
        .collect()
}

/// Pristine scenes for fitting the NSS model.
pub fn pristine_corpus(count: usize, size: usize, seed: u64) -> Vec<GrayImage> {
    (0..count)
        .map(|i| scene(size, size, seed.wrapping_add(1_000 + i as u64)))
        .collect()
}

/// Default NSS model: 16 pristine 192x192 scenes, 96-pixel patches.
pub fn default_nss_model() -> crate::metrics::NssModel {
    crate::metrics::niqe_fit(
        &pristine_corpus(16, 192, 2021),
        crate::metrics::niqe::DEFAULT_PATCH_SIZE,
        crate::metrics::niqe::DEFAULT_SHARPNESS_FRACTION,
    )
    .expect("bundled corpus fits")
}
