//! Three-layer convolutional weight-map network with hand-written backprop.
//!
//! Input is the two source images stacked as channels. Every convolution is
//! 3x3 with replicate padding, so the output keeps the input size.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LearnerError;
use crate::image::{GrayImage, ImagePair, Plane};

/// `(input channels, output channels)` per layer.
pub const LAYERS: [(usize, usize); 3] = [(2, 8), (8, 8), (8, 1)];
pub const PARAM_COUNT: usize = 809;
const MAGIC: &[u8; 6] = b"AENET1";
const INIT_SCALE: f64 = 0.05;
const W_FLOOR: f64 = 1e-15;

const fn layer_len(cin: usize, cout: usize) -> usize {
    cin * cout * 9 + cout
}

const _: () = assert!(
    layer_len(LAYERS[0].0, LAYERS[0].1)
        + layer_len(LAYERS[1].0, LAYERS[1].1)
        + layer_len(LAYERS[2].0, LAYERS[2].1)
        == PARAM_COUNT
);

fn layer_offsets() -> [usize; 3] {
    let mut off = [0; 3];
    let mut acc = 0;
    for (i, &(cin, cout)) in LAYERS.iter().enumerate() {
        off[i] = acc;
        acc += layer_len(cin, cout);
    }
    off
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionNet {
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backprop.
pub struct ForwardTrace {
    w: usize,
    h: usize,
    input: Vec<Vec<f64>>,
    hidden1: Vec<Vec<f64>>,
    hidden2: Vec<Vec<f64>>,
    /// Logistic output per pixel, in `(0, 1)`.
    pub weights: Vec<f64>,
}

impl FusionNet {
    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; PARAM_COUNT],
        }
    }

    /// Uniform initialization in `[-0.05, 0.05)`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            params: (0..PARAM_COUNT)
                .map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE))
                .collect(),
        }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self, LearnerError> {
        if params.len() != PARAM_COUNT {
            return Err(LearnerError::WrongLength {
                expected: PARAM_COUNT,
                found: params.len(),
            });
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Fused image `w * a + (1 - w) * b` and the weight map `w`. Evaluated as
    /// `b + w * (a - b)`, so identical sources pass through unchanged.
    pub fn forward(&self, pair: &ImagePair) -> (GrayImage, GrayImage) {
        self.forward_images(&pair.a, &pair.b)
    }

    pub fn forward_images(&self, a: &GrayImage, b: &GrayImage) -> (GrayImage, GrayImage) {
        let trace = self.forward_trace(a, b);
        let (w, h) = a.dims();
        let fused = fuse_with(&trace.weights, a, b);
        (
            GrayImage::from_clamped(w, h, fused.data),
            GrayImage::from_clamped(w, h, trace.weights),
        )
    }

    pub fn forward_trace(&self, a: &GrayImage, b: &GrayImage) -> ForwardTrace {
        assert!(a.same_dims(b), "pair dimensions");
        let (w, h) = a.dims();
        let off = layer_offsets();
        let input = vec![a.data().to_vec(), b.data().to_vec()];
        let mut hidden1 = conv_forward(&input, w, h, &self.params[off[0]..], LAYERS[0]);
        relu(&mut hidden1);
        let mut hidden2 = conv_forward(&hidden1, w, h, &self.params[off[1]..], LAYERS[1]);
        relu(&mut hidden2);
        let logits = conv_forward(&hidden2, w, h, &self.params[off[2]..], LAYERS[2]);
        let weights = logits[0]
            .iter()
            .map(|&z| (1.0 / (1.0 + (-z).exp())).clamp(W_FLOOR, 1.0 - W_FLOOR))
            .collect();
        ForwardTrace {
            w,
            h,
            input,
            hidden1,
            hidden2,
            weights,
        }
    }

    /// Parameter gradient given `dL/dw` for every pixel of the weight map.
    pub fn backward(&self, trace: &ForwardTrace, grad_weights: &[f64]) -> Vec<f64> {
        let (w, h) = (trace.w, trace.h);
        let off = layer_offsets();
        let mut grad = vec![0.0; PARAM_COUNT];
        let d_logit: Vec<f64> = grad_weights
            .iter()
            .zip(&trace.weights)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        let mut d_h2 = conv_backward(
            &trace.hidden2,
            w,
            h,
            &self.params[off[2]..],
            LAYERS[2],
            &[d_logit],
            &mut grad[off[2]..],
            true,
        );
        relu_backward(&mut d_h2, &trace.hidden2);
        let mut d_h1 = conv_backward(
            &trace.hidden1,
            w,
            h,
            &self.params[off[1]..],
            LAYERS[1],
            &d_h2,
            &mut grad[off[1]..],
            true,
        );
        relu_backward(&mut d_h1, &trace.hidden1);
        conv_backward(
            &trace.input,
            w,
            h,
            &self.params[off[0]..],
            LAYERS[0],
            &d_h1,
            &mut grad[off[0]..],
            false,
        );
        grad
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MAGIC.len() + 8 * PARAM_COUNT);
        out.extend_from_slice(MAGIC);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnerError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(LearnerError::BadMagic);
        }
        let body = &bytes[MAGIC.len()..];
        if body.len() != 8 * PARAM_COUNT {
            return Err(LearnerError::WrongLength {
                expected: MAGIC.len() + 8 * PARAM_COUNT,
                found: bytes.len(),
            });
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { params })
    }
}

pub(crate) fn fuse_with(weights: &[f64], a: &GrayImage, b: &GrayImage) -> Plane {
    let data = weights
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&w, (&x, &y))| y + w * (x - y))
        .collect();
    Plane::new(a.width(), a.height(), data)
}

pub fn net_store(net: &FusionNet, path: impl AsRef<Path>) -> Result<(), LearnerError> {
    let path = path.as_ref();
    fs::write(path, net.to_bytes()).map_err(|e| LearnerError::Io(path.display().to_string(), e))
}

pub fn net_load(path: impl AsRef<Path>) -> Result<FusionNet, LearnerError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LearnerError::Io(path.display().to_string(), e))?;
    FusionNet::from_bytes(&bytes)
}

fn relu(maps: &mut [Vec<f64>]) {
    for m in maps {
        for v in m.iter_mut() {
            *v = v.max(0.0);
        }
    }
}

fn relu_backward(grads: &mut [Vec<f64>], activations: &[Vec<f64>]) {
    for (g, a) in grads.iter_mut().zip(activations) {
        for (gv, &av) in g.iter_mut().zip(a) {
            if av <= 0.0 {
                *gv = 0.0;
            }
        }
    }
}

/// Copies a channel into a `(w + 2) x (h + 2)` buffer with replicated edges.
fn pad(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let pw = w + 2;
    let mut out = vec![0.0; pw * (h + 2)];
    for py in 0..h + 2 {
        let sy = py.saturating_sub(1).min(h - 1);
        for px in 0..pw {
            let sx = px.saturating_sub(1).min(w - 1);
            out[py * pw + px] = src[sy * w + sx];
        }
    }
    out
}

/// Adds a padded gradient buffer back onto the unpadded channel.
fn unpad_add(padded: &[f64], w: usize, h: usize, dst: &mut [f64]) {
    let pw = w + 2;
    for py in 0..h + 2 {
        let sy = py.saturating_sub(1).min(h - 1);
        for px in 0..pw {
            let sx = px.saturating_sub(1).min(w - 1);
            dst[sy * w + sx] += padded[py * pw + px];
        }
    }
}

/// Parameter layout per layer: weights `[out][in][3][3]`, then biases `[out]`.
fn conv_forward(
    input: &[Vec<f64>],
    w: usize,
    h: usize,
    params: &[f64],
    (cin, cout): (usize, usize),
) -> Vec<Vec<f64>> {
    let pw = w + 2;
    let padded: Vec<Vec<f64>> = input.iter().map(|c| pad(c, w, h)).collect();
    let bias = &params[cin * cout * 9..cin * cout * 9 + cout];
    (0..cout)
        .map(|o| {
            let mut out = vec![bias[o]; w * h];
            for (c, src) in padded.iter().enumerate() {
                let k = &params[(o * cin + c) * 9..(o * cin + c) * 9 + 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        for y in 0..h {
                            let srow = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                            let drow = &mut out[y * w..(y + 1) * w];
                            for (d, s) in drow.iter_mut().zip(srow) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
            out
        })
        .collect()
}

/// Accumulates weight/bias gradients into `grad` and, when asked, returns
/// the gradient with respect to the layer input.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[Vec<f64>],
    w: usize,
    h: usize,
    params: &[f64],
    (cin, cout): (usize, usize),
    d_out: &[Vec<f64>],
    grad: &mut [f64],
    want_input_grad: bool,
) -> Vec<Vec<f64>> {
    let pw = w + 2;
    let padded: Vec<Vec<f64>> = input.iter().map(|c| pad(c, w, h)).collect();
    let mut d_padded = if want_input_grad {
        vec![vec![0.0; pw * (h + 2)]; cin]
    } else {
        Vec::new()
    };
    for (o, dout) in d_out.iter().enumerate().take(cout) {
        grad[cin * cout * 9 + o] += dout.iter().sum::<f64>();
        for c in 0..cin {
            let base = (o * cin + c) * 9;
            let src = &padded[c];
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let srow = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        let grow = &dout[y * w..(y + 1) * w];
                        acc += srow.iter().zip(grow).map(|(s, g)| s * g).sum::<f64>();
                    }
                    grad[base + ky * 3 + kx] += acc;
                    if want_input_grad {
                        let kv = params[base + ky * 3 + kx];
                        let dst = &mut d_padded[c];
                        for y in 0..h {
                            let drow = &mut dst[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                            let grow = &dout[y * w..(y + 1) * w];
                            for (d, g) in drow.iter_mut().zip(grow) {
                                *d += kv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    d_padded
        .iter()
        .map(|dp| {
            let mut out = vec![0.0; w * h];
            unpad_add(dp, w, h, &mut out);
            out
        })
        .collect()
}
