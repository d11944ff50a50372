//! Natural-scene-statistics model and the no-reference naturalness distance.
//!
//! Features per patch (18): GGD `(shape, sigma)` of the MSCN coefficients and
//! AGGD `(shape, mean, sigma_left, sigma_right)` of the horizontal, vertical
//! and two diagonal neighbour products.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use super::MetricError;
use crate::image::{convolve, gaussian_kernel, GrayImage, Plane};

pub const FEATURES: usize = 18;
pub const DEFAULT_PATCH_SIZE: usize = 96;
pub const DEFAULT_SHARPNESS_FRACTION: f64 = 0.75;
pub const MIN_FIT_PATCHES: usize = 36;
const REGULARIZER: f64 = 1e-6;
const MSCN_STABILIZER: f64 = 1.0 / 255.0;
const MAGIC: &[u8; 5] = b"NSSM1";

pub type FeatureVector = [f64; FEATURES];

/// Multivariate Gaussian fitted to pristine patch features.
#[derive(Clone, Debug, PartialEq)]
pub struct NssModel {
    feature_mean: FeatureVector,
    feature_cov: Vec<f64>,
    patch_size: usize,
    sharpness_fraction: f64,
}

impl NssModel {
    pub fn new(
        feature_mean: FeatureVector,
        feature_cov: Vec<f64>,
        patch_size: usize,
        sharpness_fraction: f64,
    ) -> Result<Self, MetricError> {
        if feature_cov.len() != FEATURES * FEATURES {
            return Err(MetricError::InvalidModel(format!(
                "covariance has {} entries",
                feature_cov.len()
            )));
        }
        if patch_size < 8 {
            return Err(MetricError::InvalidModel(format!(
                "patch size {patch_size} below 8"
            )));
        }
        if !(sharpness_fraction > 0.0 && sharpness_fraction <= 1.0) {
            return Err(MetricError::InvalidModel(format!(
                "sharpness fraction {sharpness_fraction} outside (0,1]"
            )));
        }
        if feature_mean
            .iter()
            .chain(&feature_cov)
            .any(|v| !v.is_finite())
        {
            return Err(MetricError::InvalidModel("non-finite parameter".into()));
        }
        for i in 0..FEATURES {
            for j in 0..i {
                let (a, b) = (feature_cov[i * FEATURES + j], feature_cov[j * FEATURES + i]);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(MetricError::InvalidModel(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let model = Self {
            feature_mean,
            feature_cov,
            patch_size,
            sharpness_fraction,
        };
        if regularized(&model.cov_matrix(), &model.cov_matrix())
            .cholesky()
            .is_none()
        {
            return Err(MetricError::SingularCovariance);
        }
        Ok(model)
    }

    pub fn feature_mean(&self) -> &FeatureVector {
        &self.feature_mean
    }

    /// Row-major 18x18 covariance.
    pub fn feature_cov(&self) -> &[f64] {
        &self.feature_cov
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn sharpness_fraction(&self) -> f64 {
        self.sharpness_fraction
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(FEATURES, FEATURES, &self.feature_cov)
    }

    /// Distance between two fitted models; zero for identical models.
    pub fn distance(&self, other: &NssModel) -> Result<f64, MetricError> {
        mvg_distance(
            &self.feature_mean,
            &self.cov_matrix(),
            &other.feature_mean,
            &other.cov_matrix(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 4 + 8 * (1 + FEATURES + FEATURES * FEATURES));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.patch_size as u32).to_le_bytes());
        out.extend_from_slice(&self.sharpness_fraction.to_le_bytes());
        for v in self.feature_mean.iter().chain(&self.feature_cov) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MetricError> {
        let expected = 5 + 4 + 8 * (1 + FEATURES + FEATURES * FEATURES);
        if bytes.len() < 5 || &bytes[..5] != MAGIC {
            return Err(MetricError::InvalidModel("bad magic".into()));
        }
        if bytes.len() != expected {
            return Err(MetricError::InvalidModel(format!(
                "model file is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let patch_size = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let mut values = bytes[9..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let fraction = values.next().unwrap();
        let mut mean = [0.0; FEATURES];
        for m in &mut mean {
            *m = values.next().unwrap();
        }
        let cov: Vec<f64> = values.collect();
        Self::new(mean, cov, patch_size, fraction)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MetricError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| MetricError::Io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| MetricError::Io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

fn regularized(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> DMatrix<f64> {
    let avg = (s1 + s2) * 0.5;
    let sym = (&avg + avg.transpose()) * 0.5;
    sym + DMatrix::identity(FEATURES, FEATURES) * REGULARIZER
}

fn mvg_distance(
    nu1: &FeatureVector,
    s1: &DMatrix<f64>,
    nu2: &FeatureVector,
    s2: &DMatrix<f64>,
) -> Result<f64, MetricError> {
    let d = DVector::from_iterator(FEATURES, nu1.iter().zip(nu2).map(|(a, b)| a - b));
    let chol = regularized(s1, s2)
        .cholesky()
        .ok_or(MetricError::SingularCovariance)?;
    let q = d.dot(&chol.solve(&d));
    Ok(q.max(0.0).sqrt())
}

/// Mean-subtracted contrast-normalized coefficients.
pub fn mscn(img: &GrayImage) -> Plane {
    let k = gaussian_kernel(3, 7.0 / 6.0).expect("mscn window");
    let x = img.to_plane();
    let mu = convolve(&x, &k);
    let xx = convolve(&x.zip_map(&x, |a, b| a * b), &k);
    let mut out = Vec::with_capacity(x.data.len());
    for i in 0..x.data.len() {
        let var = (xx.data[i] - mu.data[i] * mu.data[i]).abs();
        out.push((x.data[i] - mu.data[i]) / (var.sqrt() + MSCN_STABILIZER));
    }
    Plane::new(x.width, x.height, out)
}

const SHAPE_MIN: f64 = 0.2;
const SHAPE_STEP: f64 = 0.001;
const SHAPE_COUNT: usize = 9801;

fn shape_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..SHAPE_COUNT)
            .map(|i| {
                let a = SHAPE_MIN + i as f64 * SHAPE_STEP;
                let rho = gamma(2.0 / a).powi(2) / (gamma(1.0 / a) * gamma(3.0 / a));
                (a, rho)
            })
            .collect()
    })
}

fn invert_shape(target: f64) -> f64 {
    let mut best = (f64::INFINITY, SHAPE_MIN);
    for &(a, rho) in shape_table() {
        let err = (rho - target) * (rho - target);
        if err < best.0 {
            best = (err, a);
        }
    }
    best.1
}

/// Symmetric generalized Gaussian by moment matching: `(shape, sigma)`.
pub fn fit_ggd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean_sq = xs.iter().map(|v| v * v).sum::<f64>() / n;
    let mean_abs = xs.iter().map(|v| v.abs()).sum::<f64>() / n;
    let ratio = if mean_sq > 0.0 {
        mean_abs * mean_abs / mean_sq
    } else {
        0.0
    };
    (invert_shape(ratio), mean_sq.sqrt())
}

/// Asymmetric generalized Gaussian by moment matching:
/// `(shape, mean, sigma_left, sigma_right)`.
pub fn fit_aggd(xs: &[f64]) -> (f64, f64, f64, f64) {
    let (mut left_sq, mut left_n, mut right_sq, mut right_n) = (0.0, 0usize, 0.0, 0usize);
    let (mut sum_abs, mut sum_sq) = (0.0, 0.0);
    for &v in xs {
        if v < 0.0 {
            left_sq += v * v;
            left_n += 1;
        } else if v > 0.0 {
            right_sq += v * v;
            right_n += 1;
        }
        sum_abs += v.abs();
        sum_sq += v * v;
    }
    let sigma_l = if left_n > 0 {
        (left_sq / left_n as f64).sqrt()
    } else {
        0.0
    };
    let sigma_r = if right_n > 0 {
        (right_sq / right_n as f64).sqrt()
    } else {
        0.0
    };
    let n = xs.len() as f64;
    let gamma_hat = if sigma_r > 0.0 {
        sigma_l / sigma_r
    } else {
        1.0
    };
    let r_hat = if sum_sq > 0.0 {
        (sum_abs / n).powi(2) / (sum_sq / n)
    } else {
        0.0
    };
    let g = gamma_hat;
    let r_norm = r_hat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let shape = invert_shape(r_norm);
    let mean = (sigma_r - sigma_l)
        * (gamma(2.0 / shape) / gamma(1.0 / shape))
        * (gamma(1.0 / shape) / gamma(3.0 / shape)).sqrt();
    (shape, mean, sigma_l, sigma_r)
}

/// One patch's 18 features and its sharpness (sum of local variance).
#[derive(Clone, Debug)]
pub struct PatchFeatures {
    pub features: FeatureVector,
    pub sharpness: f64,
}

/// Features of every non-overlapping `patch_size` patch in raster order.
pub fn patch_features(img: &GrayImage, patch_size: usize) -> Vec<PatchFeatures> {
    let (w, h) = img.dims();
    let (nx, ny) = (w / patch_size, h / patch_size);
    if nx == 0 || ny == 0 {
        return Vec::new();
    }
    let coeffs = mscn(img);
    let k = gaussian_kernel(3, 7.0 / 6.0).expect("mscn window");
    let x = img.to_plane();
    let mu = convolve(&x, &k);
    let xx = convolve(&x.zip_map(&x, |a, b| a * b), &k);
    let local_var: Vec<f64> = (0..x.data.len())
        .map(|i| (xx.data[i] - mu.data[i] * mu.data[i]).abs())
        .collect();

    let mut out = Vec::with_capacity(nx * ny);
    for py in 0..ny {
        for px in 0..nx {
            let (x0, y0) = (px * patch_size, py * patch_size);
            let at = |x: usize, y: usize| coeffs.data[(y0 + y) * w + x0 + x];
            let s = patch_size;
            let mut base = Vec::with_capacity(s * s);
            let mut sharp = 0.0;
            for y in 0..s {
                for x in 0..s {
                    base.push(at(x, y));
                    sharp += local_var[(y0 + y) * w + x0 + x];
                }
            }
            let mut hz = Vec::with_capacity(s * (s - 1));
            let mut vt = Vec::with_capacity(s * (s - 1));
            let mut d1 = Vec::with_capacity((s - 1) * (s - 1));
            let mut d2 = Vec::with_capacity((s - 1) * (s - 1));
            for y in 0..s {
                for x in 0..s {
                    if x + 1 < s {
                        hz.push(at(x, y) * at(x + 1, y));
                    }
                    if y + 1 < s {
                        vt.push(at(x, y) * at(x, y + 1));
                    }
                    if x + 1 < s && y + 1 < s {
                        d1.push(at(x, y) * at(x + 1, y + 1));
                        d2.push(at(x + 1, y) * at(x, y + 1));
                    }
                }
            }
            let mut f = [0.0; FEATURES];
            let (shape, sigma) = fit_ggd(&base);
            f[0] = shape;
            f[1] = sigma;
            for (i, prod) in [&hz, &vt, &d1, &d2].into_iter().enumerate() {
                let (a, m, l, r) = fit_aggd(prod);
                f[2 + 4 * i..6 + 4 * i].copy_from_slice(&[a, m, l, r]);
            }
            out.push(PatchFeatures {
                features: f,
                sharpness: sharp,
            });
        }
    }
    out
}

fn mean_and_cov(rows: &[FeatureVector]) -> (FeatureVector, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = [0.0; FEATURES];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; FEATURES * FEATURES];
    for r in rows {
        for i in 0..FEATURES {
            let di = r[i] - mean[i];
            for j in i..FEATURES {
                cov[i * FEATURES + j] += di * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    for i in 0..FEATURES {
        for j in i..FEATURES {
            let v = cov[i * FEATURES + j] / denom;
            cov[i * FEATURES + j] = v;
            cov[j * FEATURES + i] = v;
        }
    }
    (mean, cov)
}

/// Fits the pristine model. From each image the sharpest
/// `ceil(fraction * patches)` patches are kept.
pub fn niqe_fit(
    corpus: &[GrayImage],
    patch_size: usize,
    sharpness_fraction: f64,
) -> Result<NssModel, MetricError> {
    if !(sharpness_fraction > 0.0 && sharpness_fraction <= 1.0) {
        return Err(MetricError::InvalidModel(format!(
            "sharpness fraction {sharpness_fraction} outside (0,1]"
        )));
    }
    let mut rows = Vec::new();
    for img in corpus {
        let mut patches = patch_features(img, patch_size);
        if patches.is_empty() {
            continue;
        }
        let keep = ((patches.len() as f64 * sharpness_fraction).ceil() as usize).max(1);
        // stable sort keeps raster order among equally sharp patches
        patches.sort_by(|a, b| b.sharpness.total_cmp(&a.sharpness));
        rows.extend(patches.into_iter().take(keep).map(|p| p.features));
    }
    if rows.len() < MIN_FIT_PATCHES {
        return Err(MetricError::InsufficientPatches {
            found: rows.len(),
            required: MIN_FIT_PATCHES,
        });
    }
    let (mean, cov) = mean_and_cov(&rows);
    NssModel::new(mean, cov, patch_size, sharpness_fraction)
}

/// Minimum number of test patches for which the image's own covariance is
/// used; below it the model covariance stands in.
pub const MIN_TEST_PATCHES_FOR_COV: usize = 19;

/// Naturalness distance of `img` from the pristine model. Lower is better.
pub fn niqe(img: &GrayImage, model: &NssModel) -> Result<f64, MetricError> {
    let patches = patch_features(img, model.patch_size);
    if patches.is_empty() {
        return Err(MetricError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            patch: model.patch_size,
        });
    }
    let rows: Vec<FeatureVector> = patches.into_iter().map(|p| p.features).collect();
    let (mean, cov) = mean_and_cov(&rows);
    let s1 = model.cov_matrix();
    let s2 = if rows.len() >= MIN_TEST_PATCHES_FOR_COV {
        DMatrix::from_row_slice(FEATURES, FEATURES, &cov)
    } else {
        s1.clone()
    };
    mvg_distance(&model.feature_mean, &s1, &mean, &s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn small_corpus() -> Vec<GrayImage> {
        (0..12).map(|i| synthetic::scene(64, 64, 100 + i)).collect()
    }

    #[test]
    fn ggd_recovers_gaussian_shape() {
        // standard normal samples by inverse transform of a fixed grid
        let n = 20_000;
        let xs: Vec<f64> = (1..n)
            .map(|i| {
                let u = i as f64 / n as f64;
                statrs::function::erf::erf_inv(2.0 * u - 1.0) * std::f64::consts::SQRT_2
            })
            .collect();
        let (shape, sigma) = fit_ggd(&xs);
        assert!((shape - 2.0).abs() < 0.02, "{shape}");
        assert!((sigma - 1.0).abs() < 0.01, "{sigma}");
        let (a, m, l, r) = fit_aggd(&xs);
        assert!((a - 2.0).abs() < 0.05);
        assert!(m.abs() < 0.01);
        assert!((l - r).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs_stay_finite() {
        let (a, s) = fit_ggd(&[0.0; 10]);
        assert!(a.is_finite() && s == 0.0);
        let f = fit_aggd(&[0.5; 10]);
        assert!(f.0.is_finite() && f.1.is_finite());
    }

    #[test]
    fn fit_is_deterministic_and_symmetric() {
        let corpus = small_corpus();
        let m1 = niqe_fit(&corpus, 16, 0.75).unwrap();
        let m2 = niqe_fit(&corpus, 16, 0.75).unwrap();
        assert_eq!(m1, m2);
        let c = m1.feature_cov();
        for i in 0..FEATURES {
            for j in 0..FEATURES {
                assert!((c[i * FEATURES + j] - c[j * FEATURES + i]).abs() <= 1e-12);
            }
        }
        assert_eq!(m1.distance(&m1).unwrap(), 0.0);
    }

    #[test]
    fn insufficient_patches() {
        let corpus = vec![synthetic::scene(64, 64, 1)];
        assert!(matches!(
            niqe_fit(&corpus, 32, 0.75),
            Err(MetricError::InsufficientPatches { found: 3, .. })
        ));
    }

    #[test]
    fn zero_distance_when_features_match() {
        let img = synthetic::scene(48, 48, 7);
        let feats = patch_features(&img, 16);
        let rows: Vec<_> = feats.iter().map(|p| p.features).collect();
        let (mean, _) = mean_and_cov(&rows);
        let mut cov = vec![0.0; FEATURES * FEATURES];
        for i in 0..FEATURES {
            cov[i * FEATURES + i] = 1.0;
        }
        let model = NssModel::new(mean, cov, 16, 1.0).unwrap();
        assert!(niqe(&img, &model).unwrap().abs() < 1e-12);
    }

    #[test]
    fn too_small_for_a_patch() {
        let model = niqe_fit(&small_corpus(), 16, 0.75).unwrap();
        let img = GrayImage::constant(15, 40, 0.5);
        assert!(matches!(
            niqe(&img, &model),
            Err(MetricError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn persistence_round_trip() {
        let model = niqe_fit(&small_corpus(), 16, 0.5).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(bytes.len(), 5 + 4 + 8 + 8 * 18 + 8 * 324);
        assert_eq!(NssModel::from_bytes(&bytes).unwrap(), model);
        assert!(NssModel::from_bytes(&bytes[..100]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NssModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let mut cov = vec![0.0; FEATURES * FEATURES];
        for i in 0..FEATURES {
            cov[i * FEATURES + i] = 1.0;
        }
        cov[1] = 0.5;
        assert!(NssModel::new([0.0; FEATURES], cov, 16, 0.5).is_err());
    }
}
