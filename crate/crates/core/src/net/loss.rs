use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Scores are clamped to `[SCORE_EPS, 1 − SCORE_EPS]` before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

fn clamp_score(s: f64) -> (f64, bool) {
    if s < SCORE_EPS {
        (SCORE_EPS, false)
    } else if s > 1.0 - SCORE_EPS {
        (1.0 - SCORE_EPS, false)
    } else {
        (s, true)
    }
}

/// `−mean(log s)` if `positive`, else `−mean(log(1 − s))`, with its gradient.
/// Clamped scores get zero gradient.
pub fn bce(scores: &Tensor, positive: bool) -> Result<(f64, Tensor)> {
    if scores.is_empty() {
        return Err(Error::ShapeMismatch("empty score tensor".into()));
    }
    scores.check_finite("discriminator scores")?;
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros_like(scores);
    for (g, &s) in grad.data.iter_mut().zip(&scores.data) {
        let (c, live) = clamp_score(s);
        if positive {
            loss -= c.ln();
            if live {
                *g = -1.0 / (c * n);
            }
        } else {
            loss -= (1.0 - c).ln();
            if live {
                *g = 1.0 / ((1.0 - c) * n);
            }
        }
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CganLoss {
    pub loss_d: f64,
    /// Non-saturating generator loss `−mean(log D(x, G(x)))`.
    pub loss_g_adv: f64,
}

/// Discriminator and generator adversarial losses from real and fake scores.
pub fn loss_cgan(real: &Tensor, fake: &Tensor) -> Result<CganLoss> {
    let (lr, _) = bce(real, true)?;
    let (lf, _) = bce(fake, false)?;
    let (lg, _) = bce(fake, true)?;
    Ok(CganLoss {
        loss_d: lr + lf,
        loss_g_adv: lg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reconstruction {
    L1,
    L2,
}

impl Reconstruction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Self::L1),
            "l2" | "L2" => Ok(Self::L2),
            other => Err(Error::InvalidParameter(format!(
                "unknown reconstruction loss `{other}`; expected l1 or l2"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
        }
    }
}

/// Mean absolute (or squared) difference and its gradient wrt `pred`.
/// The L1 subgradient at zero difference is zero.
pub fn reconstruction(pred: &Tensor, target: &Tensor, kind: Reconstruction) -> Result<(f64, Tensor)> {
    pred.same_shape(target, "reconstruction loss")?;
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("empty tensors".into()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros_like(pred);
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        match kind {
            Reconstruction::L1 => {
                loss += d.abs();
                *g = if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                };
            }
            Reconstruction::L2 => {
                loss += d * d;
                *g = 2.0 * d / n;
            }
        }
    }
    Ok((loss / n, grad))
}

pub fn loss_l1(pred: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(reconstruction(pred, target, Reconstruction::L1)?.0)
}

pub fn total_objective(adv: f64, recon: f64, lambda: f64) -> f64 {
    adv + lambda * recon
}
