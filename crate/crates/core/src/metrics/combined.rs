//! Normalization onto `[0, 1]` and the weighted evaluators E1 and E2.

use sha2::{Digest, Sha256};

use super::{
    avg_gradient, entropy, mutual_information, niqe, psnr, ssim, vif, MetricError, MetricId,
    NssModel,
};
use crate::image::{GrayImage, ImagePair};

/// Maps a native metric value onto `[0, 1]`, higher meaning better.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalizer {
    /// `clamp((v - lo) / (hi - lo), 0, 1)`, optionally flipped to `1 - x`.
    /// `+inf` maps to the top of the range.
    Clamp { lo: f64, hi: f64, flip: bool },
    /// `1 / (1 + max(v, 0))`, for unbounded lower-is-better distances.
    Reciprocal,
}

impl Normalizer {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Normalizer::Clamp { lo, hi, flip } => {
                let x = if v.is_nan() {
                    0.0
                } else if v == f64::INFINITY {
                    1.0
                } else {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                };
                if flip {
                    1.0 - x
                } else {
                    x
                }
            }
            Normalizer::Reciprocal => {
                if v.is_nan() {
                    0.0
                } else {
                    1.0 / (1.0 + v.max(0.0))
                }
            }
        }
    }

    /// A native value that maps to `u` in `[0, 1]`. For clamps, values at the
    /// top of the range map to `hi` (or `lo` when flipped).
    pub fn invert(&self, u: f64) -> f64 {
        match *self {
            Normalizer::Clamp { lo, hi, flip } => {
                let x = if flip { 1.0 - u } else { u };
                lo + x * (hi - lo)
            }
            Normalizer::Reciprocal => {
                if u <= 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / u - 1.0
                }
            }
        }
    }

    fn canonical(&self) -> String {
        match self {
            Normalizer::Clamp { lo, hi, flip } => format!("clamp({lo:?},{hi:?},{flip})"),
            Normalizer::Reciprocal => "reciprocal".into(),
        }
    }

    pub fn default_for(metric: MetricId) -> Normalizer {
        let clamp = |lo, hi| Normalizer::Clamp {
            lo,
            hi,
            flip: false,
        };
        match metric {
            MetricId::En => clamp(0.0, 8.0),
            MetricId::Ag => clamp(0.0, 20.0),
            MetricId::Ssim => clamp(0.0, 1.0),
            MetricId::Vif => clamp(0.0, 1.0),
            MetricId::Niqe => Normalizer::Reciprocal,
            MetricId::Psnr => clamp(0.0, 60.0),
            MetricId::Mi => clamp(0.0, 8.0),
        }
    }
}

/// Coefficients of the supervised evaluator (`beta`, `beta1`) and the
/// cross-modal evaluator (`alpha[0..6]` for NIQE, EN, VIF, AG, PSNR, SSIM),
/// plus one normalizer per metric.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityWeights {
    pub beta: f64,
    pub beta1: f64,
    pub alpha: [f64; 6],
    pub norms: [Normalizer; 7],
}

impl Default for QualityWeights {
    fn default() -> Self {
        Self {
            beta: 0.5,
            beta1: 0.5,
            alpha: [1.0 / 6.0; 6],
            norms: MetricId::ALL.map(Normalizer::default_for),
        }
    }
}

impl QualityWeights {
    pub fn validate(&self) -> Result<(), MetricError> {
        let all = [self.beta, self.beta1].into_iter().chain(self.alpha);
        if all.clone().any(|w| !(w >= 0.0 && w.is_finite())) {
            return Err(MetricError::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        if self.beta + self.beta1 <= 0.0 {
            return Err(MetricError::InvalidWeights(
                "beta + beta1 must be positive".into(),
            ));
        }
        if self.alpha.iter().sum::<f64>() <= 0.0 {
            return Err(MetricError::InvalidWeights(
                "alpha weights sum to zero".into(),
            ));
        }
        for (m, n) in MetricId::ALL.iter().zip(&self.norms) {
            if let Normalizer::Clamp { lo, hi, .. } = n {
                if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                    return Err(MetricError::InvalidWeights(format!(
                        "normalizer for {m} needs finite lo < hi"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn norm(&self, metric: MetricId) -> &Normalizer {
        &self.norms[metric.index()]
    }

    pub fn normalize(&self, metric: MetricId, v: f64) -> f64 {
        self.norm(metric).apply(v)
    }

    /// Canonical text used for fingerprinting a weight configuration.
    pub fn canonical(&self) -> String {
        let mut s = format!("beta={:?};beta1={:?}", self.beta, self.beta1);
        for (i, a) in self.alpha.iter().enumerate() {
            s.push_str(&format!(";alpha{i}={a:?}"));
        }
        for (m, n) in MetricId::ALL.iter().zip(&self.norms) {
            s.push_str(&format!(";{m}={}", n.canonical()));
        }
        s
    }
}

/// Every native index for a candidate `p` against one reference `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricPanel {
    pub en: f64,
    pub ag: f64,
    pub ssim: f64,
    pub vif: f64,
    pub niqe: f64,
    pub psnr: f64,
    pub mi: f64,
}

impl MetricPanel {
    pub fn compute(p: &GrayImage, r: &GrayImage, model: &NssModel) -> Result<Self, MetricError> {
        Ok(Self {
            en: entropy(p),
            ag: avg_gradient(p)?,
            ssim: ssim(p, r)?,
            vif: vif(p, r)?,
            niqe: niqe(p, model)?,
            psnr: psnr(p, r)?,
            mi: mutual_information(p, r)?,
        })
    }

    pub fn get(&self, metric: MetricId) -> f64 {
        match metric {
            MetricId::En => self.en,
            MetricId::Ag => self.ag,
            MetricId::Ssim => self.ssim,
            MetricId::Vif => self.vif,
            MetricId::Niqe => self.niqe,
            MetricId::Psnr => self.psnr,
            MetricId::Mi => self.mi,
        }
    }

    pub fn crossmodal(&self, w: &QualityWeights) -> f64 {
        compose_crossmodal(
            w, self.niqe, self.en, self.vif, self.ag, self.psnr, self.ssim,
        )
    }
}

/// E1: `beta * n(SSIM) + beta1 * n(PSNR)`.
pub fn eval_supervised(
    p: &GrayImage,
    r: &GrayImage,
    w: &QualityWeights,
) -> Result<f64, MetricError> {
    let s = ssim(p, r)?;
    let q = psnr(p, r)?;
    Ok(w.beta * w.normalize(MetricId::Ssim, s) + w.beta1 * w.normalize(MetricId::Psnr, q))
}

/// Weighted sum of normalized indices in the fixed E2 term order.
pub fn compose_crossmodal(
    w: &QualityWeights,
    niqe: f64,
    en: f64,
    vif: f64,
    ag: f64,
    psnr: f64,
    ssim: f64,
) -> f64 {
    w.alpha[0] * w.normalize(MetricId::Niqe, niqe)
        + w.alpha[1] * w.normalize(MetricId::En, en)
        + w.alpha[2] * w.normalize(MetricId::Vif, vif)
        + w.alpha[3] * w.normalize(MetricId::Ag, ag)
        + w.alpha[4] * w.normalize(MetricId::Psnr, psnr)
        + w.alpha[5] * w.normalize(MetricId::Ssim, ssim)
}

/// E2: cross-modal combination of six normalized indices.
pub fn eval_crossmodal(
    p: &GrayImage,
    r: &GrayImage,
    w: &QualityWeights,
    model: &NssModel,
) -> Result<f64, MetricError> {
    if !p.same_dims(r) {
        return Err(MetricError::dims(p, r));
    }
    let n = niqe(p, model)?;
    let (e, g) = (entropy(p), avg_gradient(p)?);
    Ok(compose_crossmodal(
        w,
        n,
        e,
        vif(p, r)?,
        g,
        psnr(p, r)?,
        ssim(p, r)?,
    ))
}

/// Metric panels of a fusion result against each of its two sources. The
/// reference-free indices are computed once and shared.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairPanel {
    pub x: MetricPanel,
    pub y: MetricPanel,
}

impl PairPanel {
    pub fn compute(
        x: &GrayImage,
        y: &GrayImage,
        p: &GrayImage,
        model: &NssModel,
    ) -> Result<Self, MetricError> {
        if !x.same_dims(y) {
            return Err(MetricError::dims(x, y));
        }
        if !p.same_dims(x) {
            return Err(MetricError::dims(p, x));
        }
        let (n, e, g) = (niqe(p, model)?, entropy(p), avg_gradient(p)?);
        let against = |r: &GrayImage| -> Result<MetricPanel, MetricError> {
            Ok(MetricPanel {
                en: e,
                ag: g,
                ssim: ssim(p, r)?,
                vif: vif(p, r)?,
                niqe: n,
                psnr: psnr(p, r)?,
                mi: mutual_information(p, r)?,
            })
        };
        Ok(Self {
            x: against(x)?,
            y: against(y)?,
        })
    }

    /// `(E2(p, x) + E2(p, y)) / 2`.
    pub fn crossmodal(&self, w: &QualityWeights) -> f64 {
        (self.x.crossmodal(w) + self.y.crossmodal(w)) / 2.0
    }

    /// One panel summarizing both sources. Full-reference indices are
    /// averaged in normalized space and mapped back through the normalizer,
    /// so `summary(w).crossmodal(w)` reproduces [`PairPanel::crossmodal`];
    /// MI (not part of E2) is the plain mean.
    pub fn summary(&self, w: &QualityWeights) -> MetricPanel {
        let both = |m: MetricId| {
            let norm = w.norm(m);
            norm.invert((norm.apply(self.x.get(m)) + norm.apply(self.y.get(m))) / 2.0)
        };
        MetricPanel {
            en: self.x.en,
            ag: self.x.ag,
            ssim: both(MetricId::Ssim),
            vif: both(MetricId::Vif),
            niqe: self.x.niqe,
            psnr: both(MetricId::Psnr),
            mi: (self.x.mi + self.y.mi) / 2.0,
        }
    }
}

/// Mean of E2 against each source: `(E2(p, x) + E2(p, y)) / 2`.
pub fn eval_pair_quality(
    x: &GrayImage,
    y: &GrayImage,
    p: &GrayImage,
    w: &QualityWeights,
    model: &NssModel,
) -> Result<f64, MetricError> {
    Ok(PairPanel::compute(x, y, p, model)?.crossmodal(w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvaluatorKind {
    /// E1 against the pair's reference, or the mean over both sources when
    /// no reference exists.
    Supervised,
    /// E2 averaged over both sources.
    CrossModal,
}

impl EvaluatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EvaluatorKind::Supervised => "E1",
            EvaluatorKind::CrossModal => "E2",
        }
    }
}

/// A scoring configuration bound to one weight set (and NSS model for E2).
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub kind: EvaluatorKind,
    pub weights: QualityWeights,
    pub model: Option<NssModel>,
}

impl Evaluator {
    pub fn crossmodal(weights: QualityWeights, model: NssModel) -> Self {
        Self {
            kind: EvaluatorKind::CrossModal,
            weights,
            model: Some(model),
        }
    }

    pub fn supervised(weights: QualityWeights) -> Self {
        Self {
            kind: EvaluatorKind::Supervised,
            weights,
            model: None,
        }
    }

    /// Higher is better.
    pub fn score(&self, pair: &ImagePair, p: &GrayImage) -> Result<f64, MetricError> {
        match self.kind {
            EvaluatorKind::CrossModal => {
                let model = self.model.as_ref().ok_or(MetricError::MissingModel)?;
                eval_pair_quality(&pair.a, &pair.b, p, &self.weights, model)
            }
            EvaluatorKind::Supervised => match &pair.reference {
                Some(r) => eval_supervised(p, r, &self.weights),
                None => Ok((eval_supervised(p, &pair.a, &self.weights)?
                    + eval_supervised(p, &pair.b, &self.weights)?)
                    / 2.0),
            },
        }
    }

    /// `E1-<hash>` / `E2-<hash>`; the hash covers the weights and, for E2,
    /// the NSS model parameters.
    pub fn tag(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.weights.canonical().as_bytes());
        if self.kind == EvaluatorKind::CrossModal {
            if let Some(m) = &self.model {
                hasher.update(m.to_bytes());
            }
        }
        let digest = hasher.finalize();
        format!("{}-{}", self.kind.as_str(), &hex::encode(digest)[..16])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_maps() {
        let w = QualityWeights::default();
        assert_eq!(w.normalize(MetricId::Psnr, f64::INFINITY), 1.0);
        assert_eq!(w.normalize(MetricId::Psnr, 30.0), 0.5);
        assert_eq!(w.normalize(MetricId::Psnr, 75.0), 1.0);
        assert_eq!(w.normalize(MetricId::Ssim, -0.2), 0.0);
        assert_eq!(w.normalize(MetricId::En, 8.0), 1.0);
        assert_eq!(w.normalize(MetricId::Ag, 10.0), 0.5);
        assert_eq!(w.normalize(MetricId::Vif, 1.3), 1.0);
        assert_eq!(w.normalize(MetricId::Niqe, 0.0), 1.0);
        assert_eq!(w.normalize(MetricId::Niqe, 3.0), 0.25);
        let flipped = Normalizer::Clamp {
            lo: 0.0,
            hi: 10.0,
            flip: true,
        };
        assert_eq!(flipped.apply(2.5), 0.75);
    }

    #[test]
    fn weight_validation() {
        let mut w = QualityWeights::default();
        assert!(w.validate().is_ok());
        w.beta = -1.0;
        assert!(w.validate().is_err());
        let w = QualityWeights {
            alpha: [0.0; 6],
            ..QualityWeights::default()
        };
        assert!(w.validate().is_err());
        let w = QualityWeights {
            beta: 0.0,
            beta1: 0.0,
            ..QualityWeights::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn supervised_identity_and_degenerate_weights() {
        let a = GrayImage::from_fn(16, 16, |x, y| ((x * y) % 9) as f64 / 8.0);
        let w = QualityWeights::default();
        assert!((eval_supervised(&a, &a, &w).unwrap() - 1.0).abs() < 1e-9);
        let b = GrayImage::from_fn(16, 16, |x, y| ((x + 2 * y) % 5) as f64 / 4.0);
        let only_ssim = QualityWeights {
            beta: 1.0,
            beta1: 0.0,
            ..QualityWeights::default()
        };
        let e1 = eval_supervised(&a, &b, &only_ssim).unwrap();
        assert_eq!(e1, ssim(&a, &b).unwrap().clamp(0.0, 1.0));
    }

    #[test]
    fn supervised_black_white() {
        let black = GrayImage::constant(12, 12, 0.0);
        let white = GrayImage::constant(12, 12, 1.0);
        let e1 = eval_supervised(&black, &white, &QualityWeights::default()).unwrap();
        let expected = 0.5 * super::super::SSIM_C1 / (255.0 * 255.0 + super::super::SSIM_C1);
        assert!((e1 - expected).abs() < 1e-15);
        assert!((e1 - 5.0e-5).abs() < 1e-7);
    }

    #[test]
    fn tags_track_weights() {
        let a = Evaluator::supervised(QualityWeights::default());
        let b = Evaluator::supervised(QualityWeights {
            beta: 0.7,
            ..QualityWeights::default()
        });
        assert!(a.tag().starts_with("E1-"));
        assert_ne!(a.tag(), b.tag());
        assert_eq!(
            a.tag(),
            Evaluator::supervised(QualityWeights::default()).tag()
        );
    }

    #[test]
    fn pair_panel_summary_recomposes() {
        // low-contrast sources, so the full-contrast result has VIF above 1
        let scene = crate::synthetic::scene(128, 128, 3);
        let x = GrayImage::from_fn(128, 128, |i, j| 0.3 + 0.4 * scene.get(i, j));
        let y = crate::synthetic::blur(&x, 2.0);
        let p = scene;
        let model = crate::synthetic::default_nss_model();
        let w = QualityWeights::default();
        let panel = PairPanel::compute(&x, &y, &p, &model).unwrap();
        assert!(panel.x.vif > 1.0, "contrast boost should push VIF over 1");
        let direct = (eval_crossmodal(&p, &x, &w, &model).unwrap()
            + eval_crossmodal(&p, &y, &w, &model).unwrap())
            / 2.0;
        assert!((panel.crossmodal(&w) - direct).abs() <= 1e-12);
        assert!((panel.summary(&w).crossmodal(&w) - direct).abs() <= 1e-12);
        let swapped = eval_pair_quality(&y, &x, &p, &w, &model).unwrap();
        assert!((swapped - direct).abs() <= 1e-12);
    }

    #[test]
    fn normalizer_inverse() {
        for n in MetricId::ALL.map(Normalizer::default_for) {
            for u in [0.0, 0.25, 0.5, 1.0] {
                assert!((n.apply(n.invert(u)) - u).abs() < 1e-12, "{n:?} {u}");
            }
        }
        let f = Normalizer::Clamp {
            lo: 0.0,
            hi: 10.0,
            flip: true,
        };
        assert!((f.apply(f.invert(0.3)) - 0.3).abs() < 1e-12);
    }
}
