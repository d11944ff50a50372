//! Objective assembly, full-network gradients and the SGD loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{loss_supervised, loss_unsupervised};
use super::net::{fuse_with, FusionNet, PARAM_COUNT};
use super::{LearnerError, LossMode, LossReport, TrainConfig};
use crate::image::{GrayImage, ImagePair};
use crate::oracle::OptimalSolution;

/// One training pair with its distillation target, if any.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub pair: ImagePair,
    pub target: Option<GrayImage>,
}

impl TrainSample {
    pub fn new(pair: ImagePair, optimum: Option<&OptimalSolution>) -> Result<Self, LearnerError> {
        let target = optimum.map(|o| o.fused.clone());
        if let Some(t) = &target {
            if !t.same_dims(&pair.a) {
                return Err(LearnerError::DimensionMismatch(format!(
                    "optimum for '{}' is {}x{}, pair is {}x{}",
                    pair.id,
                    t.width(),
                    t.height(),
                    pair.a.width(),
                    pair.a.height()
                )));
            }
        }
        Ok(Self { pair, target })
    }
}

/// Objective of one pair under `mode` and its gradient with respect to every
/// network parameter.
pub fn loss_total(
    net: &FusionNet,
    pair: &ImagePair,
    target: Option<&GrayImage>,
    mode: LossMode,
) -> Result<(LossReport, Vec<f64>), LearnerError> {
    let (c_sup, c_unsup) = mode.coefficients();
    if c_sup > 0.0 && target.is_none() {
        return Err(LearnerError::MissingOracle(mode, pair.id.clone()));
    }
    let trace = net.forward_trace(&pair.a, &pair.b);
    let p = fuse_with(&trace.weights, &pair.a, &pair.b);
    let (w, h) = p.dims();
    let mut grad_p = vec![0.0; w * h];
    let mut report = LossReport::default();
    if c_sup > 0.0 {
        let o = target.expect("checked above").to_plane();
        let (v, g) = loss_supervised(&p, &o)?;
        report.term_supervised = v;
        for (acc, gi) in grad_p.iter_mut().zip(&g.data) {
            *acc += c_sup * gi;
        }
    }
    if c_unsup > 0.0 {
        let (v, g) = loss_unsupervised(&p, &pair.a.to_plane(), &pair.b.to_plane())?;
        report.term_unsupervised = v;
        for (acc, gi) in grad_p.iter_mut().zip(&g.data) {
            *acc += c_unsup * gi;
        }
    }
    report.total = c_sup * report.term_supervised + c_unsup * report.term_unsupervised;
    // p = b + w (a - b)  =>  dL/dw = dL/dp * (a - b)
    let grad_w: Vec<f64> = grad_p
        .iter()
        .zip(pair.a.data().iter().zip(pair.b.data()))
        .map(|(g, (a, b))| g * (a - b))
        .collect();
    Ok((report, net.backward(&trace, &grad_w)))
}

fn random_crop(
    sample: &TrainSample,
    crop: usize,
    rng: &mut ChaCha8Rng,
) -> (ImagePair, Option<GrayImage>) {
    let (w, h) = sample.pair.dims();
    let (cw, ch) = (crop.min(w), crop.min(h));
    let x0 = rng.random_range(0..=w - cw);
    let y0 = rng.random_range(0..=h - ch);
    let cut = |img: &GrayImage| img.crop(x0, y0, cw, ch).expect("crop inside image");
    let pair = ImagePair {
        id: sample.pair.id.clone(),
        a: cut(&sample.pair.a),
        b: cut(&sample.pair.b),
        task: sample.pair.task,
        reference: None,
    };
    (pair, sample.target.as_ref().map(cut))
}

/// Mini-batch SGD with momentum. Each epoch visits every sample once in a
/// seeded random order, on a seeded random crop. Returns the per-epoch mean
/// of the per-sample losses, measured before each batch's update.
pub fn train(
    net: &mut FusionNet,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<Vec<LossReport>, LearnerError> {
    cfg.validate(true)?;
    if dataset.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    if cfg.loss_mode.needs_oracle() {
        if let Some(s) = dataset.iter().find(|s| s.target.is_none()) {
            return Err(LearnerError::MissingOracle(
                cfg.loss_mode,
                s.pair.id.clone(),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = vec![0.0; PARAM_COUNT];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossReport::default();
        for batch in order.chunks(cfg.batch_size) {
            let crops: Vec<_> = batch
                .iter()
                .map(|&i| random_crop(&dataset[i], cfg.crop_size, &mut rng))
                .collect();
            let frozen = &*net;
            let results = crops
                .par_iter()
                .map(|(pair, target)| loss_total(frozen, pair, target.as_ref(), cfg.loss_mode))
                .collect::<Result<Vec<_>, _>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; PARAM_COUNT];
            for (report, g) in &results {
                sum.total += report.total;
                sum.term_supervised += report.term_supervised;
                sum.term_unsupervised += report.term_unsupervised;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi * inv;
                }
            }
            for ((p, v), g) in net.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *p += *v;
            }
        }
        let n = dataset.len() as f64;
        trace.push(LossReport {
            total: sum.total / n,
            term_supervised: sum.term_supervised / n,
            term_unsupervised: sum.term_unsupervised / n,
            epoch,
        });
    }
    Ok(trace)
}
