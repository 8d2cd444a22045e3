//! The four training objectives and their weighted sum.

use hop_tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{HopError, Result};

/// Scores are clamped to `[SCORE_EPS, 1 − SCORE_EPS]` before logs.
pub const SCORE_EPS: f64 = 1e-7;

/// Mean smooth-L1 of `a − b` on plain values.
pub fn huber_value(a: &[f64], b: &[f64], delta: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(HopError::param(
            "huber_loss",
            "operands must have equal non-zero length",
        ));
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let r = (x - y).abs();
            if r < delta {
                0.5 * r * r / delta
            } else {
                r - 0.5 * delta
            }
        })
        .sum();
    Ok(total / a.len() as f64)
}

pub fn huber_loss(tape: &mut Tape, g: Var, target: Var, delta: f64) -> Result<Var> {
    Ok(tape.huber(g, target, delta)?)
}

/// `−min(huber(g1, g2), margin)`, computed as `relu(h − m) − h`.
/// `z1` and `z2` are the style latents that produced the two generations.
pub fn style_diversity_loss(
    tape: &mut Tape,
    g1: Var,
    g2: Var,
    z1: &Tensor,
    z2: &Tensor,
    margin: f64,
) -> Result<Var> {
    if z1 == z2 {
        return Err(HopError::param(
            "style_diversity_loss",
            "the two generations share a style latent",
        ));
    }
    let h = tape.huber(g1, g2, 1.0)?;
    let excess = tape.add_scalar(h, -margin)?;
    let excess = tape.relu(excess)?;
    Ok(tape.sub(excess, h)?)
}

/// `½ Σ (μ² + e^logvar − 1 − logvar)` averaged over speakers (rows).
pub fn kld_loss(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let speakers = tape.shape(mu)[0];
    let m2 = tape.mul(mu, mu)?;
    let ev = tape.exp(logvar)?;
    let s = tape.add(m2, ev)?;
    let s = tape.sub(s, logvar)?;
    let s = tape.add_scalar(s, -1.0)?;
    let total = tape.sum(s)?;
    Ok(tape.scale(total, 0.5 / speakers as f64)?)
}

pub fn kld_value(mu: &[f64], logvar: &[f64], speakers: usize) -> f64 {
    let s: f64 = mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum();
    0.5 * s / speakers as f64
}

fn check_scores(tape: &Tape, v: Var) -> Result<()> {
    if tape
        .value(v)
        .data()
        .iter()
        .any(|s| !(0.0..=1.0).contains(s))
    {
        return Err(HopError::param("gan_losses", "scores must lie in (0, 1)"));
    }
    Ok(())
}

/// `(L_D, L_G)` with `L_D = −mean[ln d_real + ln(1 − d_fake)]` and the
/// non-saturating `L_G = −mean ln d_fake`.
pub fn gan_losses(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    Ok((
        discriminator_loss(tape, d_real, d_fake)?,
        generator_gan_loss(tape, d_fake)?,
    ))
}

pub fn discriminator_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    check_scores(tape, d_real)?;
    check_scores(tape, d_fake)?;
    let real = tape.clamp(d_real, SCORE_EPS, 1.0 - SCORE_EPS)?;
    let fake = tape.clamp(d_fake, SCORE_EPS, 1.0 - SCORE_EPS)?;
    let lr = tape.ln(real)?;
    let one_minus = tape.neg(fake)?;
    let one_minus = tape.add_scalar(one_minus, 1.0)?;
    let lf = tape.ln(one_minus)?;
    let a = tape.mean(lr)?;
    let b = tape.mean(lf)?;
    let s = tape.add(a, b)?;
    Ok(tape.neg(s)?)
}

pub fn generator_gan_loss(tape: &mut Tape, d_fake: Var) -> Result<Var> {
    check_scores(tape, d_fake)?;
    let fake = tape.clamp(d_fake, SCORE_EPS, 1.0 - SCORE_EPS)?;
    let l = tape.ln(fake)?;
    let m = tape.mean(l)?;
    Ok(tape.neg(m)?)
}

/// α, β, γ, λ of the overall objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub huber: f64,
    pub style: f64,
    pub kld: f64,
    pub gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            huber: 1.0,
            style: 0.1,
            kld: 0.01,
            gan: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.huber, self.style, self.kld, self.gan];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(HopError::param(
                "total_loss",
                format!("weights must be non-negative, got {w:?}"),
            ));
        }
        Ok(())
    }

    pub fn combine(&self, huber: f64, style: f64, kld: f64, gan: f64) -> Result<f64> {
        self.validate()?;
        Ok(self.huber * huber + self.style * style + self.kld * kld + self.gan * gan)
    }
}

/// Weighted sum of the four parts on the tape.
pub fn total_loss(
    tape: &mut Tape,
    w: &LossWeights,
    huber: Var,
    style: Var,
    kld: Var,
    gan: Var,
) -> Result<Var> {
    w.validate()?;
    let terms = [
        (huber, w.huber),
        (style, w.style),
        (kld, w.kld),
        (gan, w.gan),
    ];
    let mut acc: Option<Var> = None;
    for (v, c) in terms {
        let t = tape.scale(v, c)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, t)?,
            None => t,
        });
    }
    Ok(acc.expect("four terms"))
}
