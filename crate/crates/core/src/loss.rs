//! Hybrid Dice + binary cross-entropy loss over the nine supervised signals.
//!
//! Every function takes flat probability and ground-truth slices in the same
//! voxel order and accumulates in `f64`.

use daf3d_tensor::Scalar;

use crate::config::{BceReduction, LossConfig, LossWeights};
use crate::error::{Error, Result};
use crate::model::PredictionBundle;

pub const DICE_EPS: f64 = 1e-7;
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-7;

fn check<F>(p: &[F], g: &[F]) -> Result<()> {
    if p.len() != g.len() {
        return Err(Error::Argument(format!("prediction has {} voxels, ground truth {}", p.len(), g.len())));
    }
    if p.is_empty() {
        return Err(Error::Argument("loss of an empty volume".into()));
    }
    Ok(())
}

struct DiceSums {
    pg: f64,
    denom: f64,
}

fn dice_sums<F: Scalar>(p: &[F], g: &[F]) -> DiceSums {
    let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
    for (&pi, &gi) in p.iter().zip(g) {
        let (pi, gi) = (pi.to_f64_lossy(), gi.to_f64_lossy());
        pg += pi * gi;
        pp += pi * pi;
        gg += gi * gi;
    }
    DiceSums { pg, denom: pp + gg + DICE_EPS }
}

/// `1 - 2 Σ p g / (Σ p² + Σ g² + ε)`.
pub fn dice_loss<F: Scalar>(p: &[F], g: &[F]) -> Result<f64> {
    check(p, g)?;
    let s = dice_sums(p, g);
    Ok(1.0 - 2.0 * s.pg / s.denom)
}

pub fn dice_loss_grad<F: Scalar>(p: &[F], g: &[F]) -> Result<(f64, Vec<F>)> {
    check(p, g)?;
    let s = dice_sums(p, g);
    let a = -2.0 / s.denom;
    let b = 4.0 * s.pg / (s.denom * s.denom);
    let grad = p
        .iter()
        .zip(g)
        .map(|(&pi, &gi)| F::from_f64_lossy(a * gi.to_f64_lossy() + b * pi.to_f64_lossy()))
        .collect();
    Ok((1.0 - 2.0 * s.pg / s.denom, grad))
}

fn bce_scale(n: usize, reduction: BceReduction) -> f64 {
    match reduction {
        BceReduction::Mean => 1.0 / n as f64,
        BceReduction::Sum => 1.0,
    }
}

/// Negated log-likelihood `-(1/N) Σ [g ln p + (1-g) ln(1-p)]`, or the plain
/// sum with [`BceReduction::Sum`].
pub fn bce_loss<F: Scalar>(p: &[F], g: &[F], reduction: BceReduction) -> Result<f64> {
    check(p, g)?;
    let mut acc = 0.0;
    for (&pi, &gi) in p.iter().zip(g) {
        let pc = pi.to_f64_lossy().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let gi = gi.to_f64_lossy();
        acc += gi * pc.ln() + (1.0 - gi) * (1.0 - pc).ln();
    }
    Ok(-acc * bce_scale(p.len(), reduction))
}

pub fn bce_loss_grad<F: Scalar>(p: &[F], g: &[F], reduction: BceReduction) -> Result<(f64, Vec<F>)> {
    check(p, g)?;
    let scale = bce_scale(p.len(), reduction);
    let mut acc = 0.0;
    let grad = p
        .iter()
        .zip(g)
        .map(|(&pi, &gi)| {
            let raw = pi.to_f64_lossy();
            let pc = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let gi = gi.to_f64_lossy();
            acc += gi * pc.ln() + (1.0 - gi) * (1.0 - pc).ln();
            let d = if raw == pc { -(gi / pc - (1.0 - gi) / (1.0 - pc)) * scale } else { 0.0 };
            F::from_f64_lossy(d)
        })
        .collect();
    Ok((-acc * scale, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SignalLoss {
    pub dice: f64,
    pub bce: f64,
}

impl SignalLoss {
    pub fn total(&self) -> f64 {
        self.dice + self.bce
    }
}

pub fn signal_loss<F: Scalar>(p: &[F], g: &[F], reduction: BceReduction) -> Result<SignalLoss> {
    Ok(SignalLoss { dice: dice_loss(p, g)?, bce: bce_loss(p, g, reduction)? })
}

pub fn signal_loss_grad<F: Scalar>(p: &[F], g: &[F], reduction: BceReduction) -> Result<(SignalLoss, Vec<F>)> {
    let (dice, mut grad) = dice_loss_grad(p, g)?;
    let (bce, gb) = bce_loss_grad(p, g, reduction)?;
    for (a, b) in grad.iter_mut().zip(gb) {
        *a += b;
    }
    Ok((SignalLoss { dice, bce }, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TotalLoss {
    pub total: f64,
    /// Per-signal losses: SLF 1-4, attentive 1-4, final.
    pub signals: [SignalLoss; 9],
}

impl TotalLoss {
    pub fn final_signal(&self) -> SignalLoss {
        self.signals[8]
    }
}

/// Weighted sum of the nine signal losses.
pub fn total_loss<F: Scalar>(
    preds: [&[F]; 9],
    g: &[F],
    weights: &LossWeights,
    reduction: BceReduction,
) -> Result<TotalLoss> {
    let w = weights.as_array();
    let mut signals = [SignalLoss::default(); 9];
    let mut total = 0.0;
    for i in 0..9 {
        signals[i] = signal_loss(preds[i], g, reduction)?;
        total += w[i] * signals[i].total();
    }
    Ok(TotalLoss { total, signals })
}

/// [`total_loss`] together with its gradient with respect to each prediction.
pub fn total_loss_grad<F: Scalar>(
    preds: [&[F]; 9],
    g: &[F],
    weights: &LossWeights,
    reduction: BceReduction,
) -> Result<(TotalLoss, Vec<Vec<F>>)> {
    let w = weights.as_array();
    let mut signals = [SignalLoss::default(); 9];
    let mut grads = Vec::with_capacity(9);
    let mut total = 0.0;
    for i in 0..9 {
        let (s, mut gr) = signal_loss_grad(preds[i], g, reduction)?;
        let wi = F::from_f64_lossy(w[i]);
        gr.iter_mut().for_each(|x| *x *= wi);
        signals[i] = s;
        total += w[i] * s.total();
        grads.push(gr);
    }
    Ok((TotalLoss { total, signals }, grads))
}

fn bundle_slices<F: Scalar>(b: &PredictionBundle<F>) -> [&[F]; 9] {
    b.signals().map(|t| t.data())
}

pub fn bundle_loss<F: Scalar>(b: &PredictionBundle<F>, g: &[F], cfg: &LossConfig) -> Result<TotalLoss> {
    total_loss(bundle_slices(b), g, &cfg.weights, cfg.bce_reduction)
}
