//! Training and fine-tuning losses with analytic gradients, plus a
//! central-difference gradient checker.
//!
//! Every loss returns its gradient with respect to the predicted scores.

use serde::{Deserialize, Serialize};

use crate::error::{FidelityError, Result};
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueAndGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Which way the critic loss pushes scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticConvention {
    /// `E[-σ(τ - F)]` as printed; minimized by scores below `τ`.
    #[default]
    Literal,
    /// `E[-σ(F - τ)]`; minimized by scores above `τ`.
    Flipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the correlation term.
    pub lambda: f64,
    /// Critic threshold.
    pub tau: f64,
    pub critic_convention: CriticConvention,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.3, tau: 0.0, critic_convention: CriticConvention::Literal }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FidelityError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !self.tau.is_finite() {
            return Err(FidelityError::Config("tau must be finite".into()));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow or loss of precision in the tails.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean of `-ln σ(s_h - s_l)` over pairs.
///
/// `grad` holds the derivatives for `better` followed by those for `worse`.
pub fn perceptual_loss(better: &[f64], worse: &[f64]) -> Result<LossValueAndGrad> {
    if better.len() != worse.len() {
        return Err(FidelityError::Shape(format!("{} better vs {} worse scores", better.len(), worse.len())));
    }
    if better.is_empty() {
        return Err(FidelityError::Shape("perceptual loss needs at least one pair".into()));
    }
    let n = better.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; 2 * better.len()];
    for (i, (&h, &l)) in better.iter().zip(worse).enumerate() {
        let d = h - l;
        value += softplus(-d);
        let g = sigmoid(-d) / n;
        grad[i] = -g;
        grad[better.len() + i] = g;
    }
    Ok(LossValueAndGrad { value: value / n, grad })
}

/// Centered copy and sum of squares.
fn centered(v: &[f64]) -> (Vec<f64>, f64) {
    let m = mean(v);
    let c: Vec<f64> = v.iter().map(|x| x - m).collect();
    let ss = c.iter().map(|x| x * x).sum();
    (c, ss)
}

/// Negative Pearson correlation between predictions and targets.
pub fn pearson_loss(pred: &[f64], target: &[f64]) -> Result<LossValueAndGrad> {
    if pred.len() != target.len() {
        return Err(FidelityError::Shape(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.len() < 2 {
        return Err(FidelityError::DegenerateInput("correlation loss needs at least 2 scores".into()));
    }
    let (p, b) = centered(pred);
    let (t, c) = centered(target);
    if b == 0.0 || c == 0.0 {
        return Err(FidelityError::DegenerateInput(
            if b == 0.0 { "constant predictions" } else { "constant targets" }.into(),
        ));
    }
    let a: f64 = p.iter().zip(&t).map(|(x, y)| x * y).sum();
    let root = (b * c).sqrt();
    let r = a / root;
    // centering terms drop out because the centered vectors sum to zero
    let grad = p.iter().zip(&t).map(|(pi, ti)| -(ti - a / b * pi) / root).collect();
    Ok(LossValueAndGrad { value: -r, grad })
}

/// Mean squared error between predictions and targets.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<LossValueAndGrad> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(FidelityError::Shape(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    let value = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok(LossValueAndGrad { value, grad })
}

/// How predicted scores are tied to the physical annotations.
pub trait CorrelationObjective: Send + Sync {
    fn name(&self) -> &str;
    fn loss(&self, pred: &[f64], target: &[f64]) -> Result<LossValueAndGrad>;
}

pub struct PearsonObjective;

impl CorrelationObjective for PearsonObjective {
    fn name(&self) -> &str {
        "pearson"
    }
    fn loss(&self, pred: &[f64], target: &[f64]) -> Result<LossValueAndGrad> {
        pearson_loss(pred, target)
    }
}

pub struct MseObjective;

impl CorrelationObjective for MseObjective {
    fn name(&self) -> &str {
        "mse"
    }
    fn loss(&self, pred: &[f64], target: &[f64]) -> Result<LossValueAndGrad> {
        mse_loss(pred, target)
    }
}

pub fn objective_registry() -> crate::registry::Registry<dyn CorrelationObjective> {
    use std::sync::Arc;
    let mut r = crate::registry::Registry::new("correlation objective");
    r.register("pearson", Arc::new(PearsonObjective) as Arc<dyn CorrelationObjective>);
    r.register("mse", Arc::new(MseObjective) as Arc<dyn CorrelationObjective>);
    r
}

/// Value and gradient of the combined objective, with its two parts.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub perceptual: f64,
    pub correlation: f64,
    pub grad: Vec<f64>,
}

/// `L_p + λ·L_c` over one batch of scores.
///
/// `pairs` index into `scores` as `(better, worse)`; with no pairs the
/// perceptual part is 0. `targets` runs parallel to `scores`. The
/// correlation term is skipped entirely when `λ = 0`.
pub fn total_loss_with(
    objective: &dyn CorrelationObjective,
    scores: &[f64],
    pairs: &[(usize, usize)],
    targets: &[f64],
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    cfg.validate()?;
    let mut grad = vec![0.0; scores.len()];
    let mut perceptual = 0.0;
    if !pairs.is_empty() {
        if let Some(&(h, l)) = pairs.iter().find(|(h, l)| *h >= scores.len() || *l >= scores.len()) {
            return Err(FidelityError::Shape(format!("pair ({h}, {l}) outside {} scores", scores.len())));
        }
        let better: Vec<f64> = pairs.iter().map(|&(h, _)| scores[h]).collect();
        let worse: Vec<f64> = pairs.iter().map(|&(_, l)| scores[l]).collect();
        let lp = perceptual_loss(&better, &worse)?;
        for (k, &(h, l)) in pairs.iter().enumerate() {
            grad[h] += lp.grad[k];
            grad[l] += lp.grad[pairs.len() + k];
        }
        perceptual = lp.value;
    }
    let mut correlation = 0.0;
    if cfg.lambda > 0.0 {
        let lc = objective.loss(scores, targets)?;
        for (g, c) in grad.iter_mut().zip(&lc.grad) {
            *g += cfg.lambda * c;
        }
        correlation = lc.value;
    }
    Ok(TotalLoss { value: perceptual + cfg.lambda * correlation, perceptual, correlation, grad })
}

/// [`total_loss_with`] using the Pearson correlation loss.
pub fn total_loss(
    scores: &[f64],
    pairs: &[(usize, usize)],
    targets: &[f64],
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    total_loss_with(&PearsonObjective, scores, pairs, targets, cfg)
}

/// Mean critic loss over generated-motion scores.
pub fn critic_loss(scores: &[f64], cfg: &LossConfig) -> Result<LossValueAndGrad> {
    if scores.is_empty() {
        return Err(FidelityError::DegenerateInput("critic loss needs at least one score".into()));
    }
    let n = scores.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for &f in scores {
        let (s, sign) = match cfg.critic_convention {
            CriticConvention::Literal => (sigmoid(cfg.tau - f), 1.0),
            CriticConvention::Flipped => (sigmoid(f - cfg.tau), -1.0),
        };
        value -= s;
        grad.push(sign * s * (1.0 - s) / n);
    }
    Ok(LossValueAndGrad { value: value / n, grad })
}

/// Population mean and variance.
fn gaussian_fit(v: &[f64]) -> Result<(f64, f64)> {
    if v.len() < 2 {
        return Err(FidelityError::DegenerateInput("Gaussian fit needs at least 2 scores".into()));
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    if var <= 0.0 {
        return Err(FidelityError::DegenerateInput("scores have zero variance".into()));
    }
    Ok((m, var))
}

/// KL divergence `KL(N_current ‖ N_reference)` between Gaussian fits of two
/// score populations. A stand-in for the divergence between generator
/// output distributions, which this crate does not model.
pub fn kl_loss(current: &[f64], reference: &[f64]) -> Result<f64> {
    let (m1, v1) = gaussian_fit(current)?;
    let (m2, v2) = gaussian_fit(reference)?;
    Ok(0.5 * (v2 / v1).ln() + (v1 + (m1 - m2) * (m1 - m2)) / (2.0 * v2) - 0.5)
}

/// Below this magnitude gradient components are compared in absolute terms,
/// since central differences carry roughly `1e-10` of rounding noise there.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Largest per-coordinate relative error between the analytic gradient and
/// central differences of step `step`.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x).0;
        x[i] = orig - step;
        let down = f(&x).0;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
