use super::{ImageError, Plane};

/// Odd-sided 2-D stencil. Separable stencils keep their 1-D factors so that
/// convolution can run as two passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    coeffs: Vec<f64>,
    factors: Option<(Vec<f64>, Vec<f64>)>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, coeffs: Vec<f64>) -> Result<Self, ImageError> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(ImageError::EvenKernel { width, height });
        }
        if coeffs.len() != width * height {
            return Err(ImageError::DimensionMismatch(format!(
                "{} coefficients for a {width}x{height} kernel",
                coeffs.len()
            )));
        }
        Ok(Self {
            width,
            height,
            coeffs,
            factors: None,
        })
    }

    /// Outer product `vertical ⊗ horizontal`.
    pub fn separable(horizontal: Vec<f64>, vertical: Vec<f64>) -> Result<Self, ImageError> {
        let (width, height) = (horizontal.len(), vertical.len());
        if width % 2 == 0 || height % 2 == 0 {
            return Err(ImageError::EvenKernel { width, height });
        }
        let coeffs = vertical
            .iter()
            .flat_map(|v| horizontal.iter().map(move |h| v * h))
            .collect();
        Ok(Self {
            width,
            height,
            coeffs,
            factors: Some((horizontal, vertical)),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.coeffs[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    pub fn scaled(&self, s: f64) -> Kernel {
        Kernel {
            width: self.width,
            height: self.height,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
            factors: self
                .factors
                .as_ref()
                .map(|(h, v)| (h.iter().map(|c| c * s).collect(), v.clone())),
        }
    }
}

/// Separable Gaussian of side `2 * radius + 1`, normalized to unit sum.
pub fn gaussian_kernel(radius: usize, sigma: f64) -> Result<Kernel, ImageError> {
    if radius < 1 {
        return Err(ImageError::InvalidRadius);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ImageError::InvalidSigma(sigma));
    }
    let taps = gaussian_taps(radius, sigma);
    Kernel::separable(taps.clone(), taps)
}

pub(crate) fn gaussian_taps(radius: usize, sigma: f64) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean filter of side `2 * radius + 1`.
pub fn box_kernel(radius: usize) -> Kernel {
    let n = 2 * radius + 1;
    let taps = vec![1.0 / n as f64; n];
    Kernel::separable(taps.clone(), taps).expect("odd box kernel")
}

/// Correlates `img` with `kernel` using replicate borders:
/// `out(x, y) = Σ k(i, j) · img(clamp(x + i - rx), clamp(y + j - ry))`.
/// Output is not clamped.
pub fn convolve(img: &Plane, kernel: &Kernel) -> Plane {
    if let Some((h, v)) = &kernel.factors {
        let tmp = pass_horizontal(img, h);
        return pass_vertical(&tmp, v);
    }
    let (w, hgt) = img.dims();
    let rx = (kernel.width / 2) as isize;
    let ry = (kernel.height / 2) as isize;
    let mut out = vec![0.0; w * hgt];
    for y in 0..hgt as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for j in 0..kernel.height {
                for i in 0..kernel.width {
                    acc +=
                        kernel.at(i, j) * img.get_clamped(x + i as isize - rx, y + j as isize - ry);
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    Plane::new(w, hgt, out)
}

/// Adjoint (transpose) of [`convolve`]: scatters each sample back through
/// the stencil onto the clamped source positions.
pub fn convolve_adjoint(grad: &Plane, kernel: &Kernel) -> Plane {
    if let Some((h, v)) = &kernel.factors {
        let tmp = pass_vertical_adjoint(grad, v);
        return pass_horizontal_adjoint(&tmp, h);
    }
    let (w, hgt) = grad.dims();
    let rx = (kernel.width / 2) as isize;
    let ry = (kernel.height / 2) as isize;
    let mut out = vec![0.0; w * hgt];
    for y in 0..hgt as isize {
        for x in 0..w as isize {
            let g = grad.data[y as usize * w + x as usize];
            for j in 0..kernel.height {
                let sy = (y + j as isize - ry).clamp(0, hgt as isize - 1) as usize;
                for i in 0..kernel.width {
                    let sx = (x + i as isize - rx).clamp(0, w as isize - 1) as usize;
                    out[sy * w + sx] += kernel.at(i, j) * g;
                }
            }
        }
    }
    Plane::new(w, hgt, out)
}

fn pass_horizontal(img: &Plane, taps: &[f64]) -> Plane {
    let (w, h) = img.dims();
    let r = (taps.len() / 2) as isize;
    let last = w as isize - 1;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, last) as usize;
                acc += t * row[sx];
            }
            *d = acc;
        }
    }
    Plane::new(w, h, out)
}

fn pass_vertical(img: &Plane, taps: &[f64]) -> Plane {
    let (w, h) = img.dims();
    let r = (taps.len() / 2) as isize;
    let last = h as isize - 1;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (k, &t) in taps.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, last) as usize;
            let src = &img.data[sy * w..(sy + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    Plane::new(w, h, out)
}

fn pass_horizontal_adjoint(grad: &Plane, taps: &[f64]) -> Plane {
    let (w, h) = grad.dims();
    let r = (taps.len() / 2) as isize;
    let last = w as isize - 1;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &grad.data[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &g) in row.iter().enumerate() {
            for (k, &t) in taps.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, last) as usize;
                dst[sx] += t * g;
            }
        }
    }
    Plane::new(w, h, out)
}

fn pass_vertical_adjoint(grad: &Plane, taps: &[f64]) -> Plane {
    let (w, h) = grad.dims();
    let r = (taps.len() / 2) as isize;
    let last = h as isize - 1;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let src = &grad.data[y * w..(y + 1) * w];
        for (k, &t) in taps.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, last) as usize;
            let dst = &mut out[sy * w..(sy + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    Plane::new(w, h, out)
}

const PYRAMID_RADIUS: usize = 2;
const PYRAMID_SIGMA: f64 = 1.0;

fn pyramid_taps() -> Vec<f64> {
    gaussian_taps(PYRAMID_RADIUS, PYRAMID_SIGMA)
}

/// Gaussian blur (radius 2, sigma 1) followed by keeping every second sample.
/// Output is `ceil(w / 2) x ceil(h / 2)`.
pub fn downsample2(img: &Plane) -> Plane {
    let taps = pyramid_taps();
    let blurred = pass_vertical(&pass_horizontal(img, &taps), &taps);
    let (w, h) = img.dims();
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            out.push(blurred.get(2 * x, 2 * y));
        }
    }
    Plane::new(ow, oh, out)
}

/// Expands `img` to `target_w x target_h` (each within `{2n - 1, 2n}` of the
/// source side). Conceptually zero-insertion followed by the pyramid Gaussian;
/// each output is normalized by the stencil weight that lands on real
/// samples, so the expansion preserves constants exactly.
pub fn upsample2(img: &Plane, target_w: usize, target_h: usize) -> Result<Plane, ImageError> {
    let (w, h) = img.dims();
    let ok = |src: usize, dst: usize| dst + 1 >= 2 * src && dst <= 2 * src;
    if !ok(w, target_w) || !ok(h, target_h) {
        return Err(ImageError::DimensionMismatch(format!(
            "upsample {w}x{h} -> {target_w}x{target_h}"
        )));
    }
    let taps = pyramid_taps();
    let tmp = expand_axis(&img.data, w, h, target_w, &taps, true);
    let out = expand_axis(&tmp, target_w, h, target_h, &taps, false);
    Ok(Plane::new(target_w, target_h, out))
}

fn expand_axis(
    data: &[f64],
    w: usize,
    h: usize,
    target: usize,
    taps: &[f64],
    horizontal: bool,
) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let src_len = if horizontal { w } else { h } as isize;
    // per output position: (source index, weight) pairs, normalized
    let plan: Vec<Vec<(usize, f64)>> = (0..target as isize)
        .map(|o| {
            let mut entries = Vec::new();
            let mut total = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let pos = o + k as isize - r;
                if pos.rem_euclid(2) == 0 {
                    let s = pos.div_euclid(2).clamp(0, src_len - 1) as usize;
                    entries.push((s, t));
                    total += t;
                }
            }
            entries.iter().map(|&(s, t)| (s, t / total)).collect()
        })
        .collect();
    if horizontal {
        let mut out = vec![0.0; target * h];
        for y in 0..h {
            let row = &data[y * w..(y + 1) * w];
            for (x, entries) in plan.iter().enumerate() {
                out[y * target + x] = entries.iter().map(|&(s, t)| t * row[s]).sum();
            }
        }
        out
    } else {
        let mut out = vec![0.0; w * target];
        for (y, entries) in plan.iter().enumerate() {
            let dst = &mut out[y * w..(y + 1) * w];
            for &(s, t) in entries {
                let src = &data[s * w..(s + 1) * w];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += t * v;
                }
            }
        }
        out
    }
}
