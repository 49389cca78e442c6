//! Training objectives: binary focal loss for intent-boundary tagging,
//! boundary-masked and per-timestep intent cross-entropy, the weighted
//! multi-task combination, and the Adam optimizer.
//!
//! Loss arithmetic runs in f64 regardless of the parameter precision;
//! gradients are returned in the caller's element type.

use crate::corpus::IntentTag;
use crate::error::{Error, Result};
use crate::numkernel::{Matrix, Parameter, Scalar};

/// Probabilities are clamped into [PROB_FLOOR, 1 - PROB_FLOOR] before any log.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha: 1.0, gamma: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MultiTaskWeights {
    pub beta: f64,
}

impl Default for MultiTaskWeights {
    fn default() -> Self {
        MultiTaskWeights { beta: 0.5 }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Binary focal loss over a tag sequence, averaged over valid timesteps:
/// `-(alpha/T) * sum_t [y (1-p)^g log p + (1-y) p^g log(1-p)]`.
///
/// Returns the loss and its gradient w.r.t. each probability (zero at
/// masked-out steps and wherever the clamp is active).
pub fn focal_loss<F: Scalar>(
    probs: &[F],
    labels: &[bool],
    mask: &[bool],
    cfg: &FocalConfig,
) -> Result<(f64, Vec<F>)> {
    if probs.len() != labels.len() || probs.len() != mask.len() {
        return Err(Error::Validation(format!(
            "focal loss length mismatch: {} probs, {} labels, {} mask",
            probs.len(),
            labels.len(),
            mask.len()
        )));
    }
    let t_valid = mask.iter().filter(|&&m| m).count();
    if t_valid == 0 {
        return Err(Error::Validation("focal loss over zero valid timesteps".into()));
    }
    let scale = cfg.alpha / t_valid as f64;
    let gamma = cfg.gamma;
    let mut loss = 0.0;
    let mut grads = vec![F::zero(); probs.len()];
    for t in 0..probs.len() {
        if !mask[t] {
            continue;
        }
        let raw = probs[t].to_f64();
        let p = clamp_prob(raw);
        let clamped = raw < PROB_FLOOR || raw > 1.0 - PROB_FLOOR;
        let (term, dterm) = if labels[t] {
            let w = (1.0 - p).powf(gamma);
            let term = w * p.ln();
            let dterm = if gamma == 0.0 {
                1.0 / p
            } else {
                -gamma * (1.0 - p).powf(gamma - 1.0) * p.ln() + w / p
            };
            (term, dterm)
        } else {
            let w = p.powf(gamma);
            let term = w * (1.0 - p).ln();
            let dterm = if gamma == 0.0 {
                -1.0 / (1.0 - p)
            } else {
                gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() - w / (1.0 - p)
            };
            (term, dterm)
        };
        loss -= scale * term;
        if !clamped {
            grads[t] = F::from_f64(-scale * dterm);
        }
    }
    Ok((loss, grads))
}

fn tag_target_index(tag: &IntentTag, dist_len: usize) -> usize {
    match tag {
        IntentTag::Class(c) => *c,
        // The no-intent tag maps to the head's last output.
        IntentTag::O => dist_len - 1,
    }
}

/// Cross-entropy masked to boundary positions only (sum form, not averaged):
/// `-sum_t I_IB(t) log dist_t[class_t]`.
///
/// Errors if a masked-in position is tagged `O` (label inconsistency).
pub fn masked_intent_loss<F: Scalar>(
    dists: &[Vec<F>],
    intent_tags: &[IntentTag],
    ib_mask: &[bool],
) -> Result<(f64, Vec<Vec<F>>)> {
    if dists.len() != intent_tags.len() || dists.len() != ib_mask.len() {
        return Err(Error::Validation("masked intent loss length mismatch".into()));
    }
    let mut loss = 0.0;
    let mut grads: Vec<Vec<F>> = dists.iter().map(|d| vec![F::zero(); d.len()]).collect();
    for t in 0..dists.len() {
        if !ib_mask[t] {
            continue;
        }
        let c = match &intent_tags[t] {
            IntentTag::Class(c) => *c,
            IntentTag::O => {
                return Err(Error::Validation(format!(
                    "boundary position {t} carries no intent class"
                )))
            }
        };
        if c >= dists[t].len() {
            return Err(Error::Validation(format!(
                "intent class {c} out of range for {}-way distribution",
                dists[t].len()
            )));
        }
        let raw = dists[t][c].to_f64();
        let p = raw.max(PROB_FLOOR);
        loss -= p.ln();
        if raw >= PROB_FLOOR {
            grads[t][c] = F::from_f64(-1.0 / p);
        }
    }
    Ok((loss, grads))
}

/// Per-timestep cross-entropy averaged over the sequence, with the no-intent
/// tag included as an ordinary target (the no-boundary training variant).
pub fn unmasked_intent_loss<F: Scalar>(
    dists: &[Vec<F>],
    intent_tags: &[IntentTag],
) -> Result<(f64, Vec<Vec<F>>)> {
    if dists.len() != intent_tags.len() {
        return Err(Error::Validation("unmasked intent loss length mismatch".into()));
    }
    let t_len = dists.len();
    if t_len == 0 {
        return Ok((0.0, Vec::new()));
    }
    let scale = 1.0 / t_len as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Vec<F>> = dists.iter().map(|d| vec![F::zero(); d.len()]).collect();
    for t in 0..t_len {
        let c = tag_target_index(&intent_tags[t], dists[t].len());
        let raw = dists[t][c].to_f64();
        let p = raw.max(PROB_FLOOR);
        loss -= scale * p.ln();
        if raw >= PROB_FLOOR {
            grads[t][c] = F::from_f64(-scale / p);
        }
    }
    Ok((loss, grads))
}

/// Multi-task combination: `beta * L_IB + (1 - beta) * L_INT`.
pub fn combined_loss(l_ib: f64, l_int: f64, w: &MultiTaskWeights) -> f64 {
    debug_assert!(l_ib.is_finite() && l_int.is_finite());
    w.beta * l_ib + (1.0 - w.beta) * l_int
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct AdamSlot<F: Scalar> {
    name: String,
    m: Matrix<F>,
    v: Matrix<F>,
}

/// Bias-corrected Adam. Moment buffers are created on the first step and
/// keyed to the parameter order, which must stay stable across steps.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub cfg: AdamConfig,
    t: u64,
    slots: Vec<AdamSlot<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState { cfg, t: 0, slots: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameters; gradients are consumed (zeroed).
    pub fn step(&mut self, params: &mut [&mut Parameter<F>]) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| AdamSlot {
                    name: p.name.clone(),
                    m: Matrix::zeros(p.value.rows, p.value.cols),
                    v: Matrix::zeros(p.value.rows, p.value.cols),
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::Numeric(format!(
                "optimizer saw {} parameters, expected {}",
                params.len(),
                self.slots.len()
            )));
        }
        self.t += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let one = F::one();
        let lr = F::from_f64(self.cfg.lr);
        let eps = F::from_f64(self.cfg.eps);
        let bc1 = F::from_f64(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - self.cfg.beta2.powi(self.t as i32));
        for (slot, param) in self.slots.iter_mut().zip(params.iter_mut()) {
            debug_assert_eq!(slot.name, param.name);
            if !param.grad.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in parameter {}", param.name)));
            }
            let m = slot.m.as_mut_slice();
            let v = slot.v.as_mut_slice();
            let g = param.grad.as_mut_slice();
            let theta = param.value.as_mut_slice();
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                theta[k] = theta[k] - lr * m_hat / (v_hat.sqrt() + eps);
                g[k] = F::zero();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn perfect_prediction_has_near_zero_focal_loss() {
        let cfg = FocalConfig::default();
        let (loss, _) = focal_loss(&[1.0f64], &[true], &[true], &cfg).unwrap();
        assert!(loss.abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn focal_single_step_matches_scalar_arithmetic() {
        // T=1, y=1, p=0.5, alpha=1, gamma=8: (0.5)^8 * (-ln 0.5) = 0.00390625 * 0.693147...
        let cfg = FocalConfig { alpha: 1.0, gamma: 8.0 };
        let (loss, _) = focal_loss(&[0.5f64], &[true], &[true], &cfg).unwrap();
        let expected = 0.00390625 * LN2;
        assert!((loss - expected).abs() < 1e-12, "loss {loss} vs {expected}");
    }

    #[test]
    fn gamma_zero_equals_binary_cross_entropy() {
        let cfg = FocalConfig { alpha: 1.0, gamma: 0.0 };
        let probs = [0.9f64, 0.2, 0.5, 0.71];
        let labels = [true, false, true, false];
        let mask = [true; 4];
        let (loss, _) = focal_loss(&probs, &labels, &mask, &cfg).unwrap();
        // Direct BCE reference.
        let bce = -probs
            .iter()
            .zip(labels.iter())
            .map(|(&p, &y)| if y { p.ln() } else { (1.0 - p).ln() })
            .sum::<f64>()
            / 4.0;
        assert!((loss - bce).abs() < 1e-9);
    }

    #[test]
    fn focal_zero_valid_timesteps_errors() {
        let cfg = FocalConfig::default();
        assert!(focal_loss(&[0.5f64], &[true], &[false], &cfg).is_err());
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let cfg = FocalConfig { alpha: 1.3, gamma: 8.0 };
        let probs = [0.3f64, 0.8, 0.05, 0.97];
        let labels = [true, false, false, true];
        let mask = [true, true, false, true];
        let (_, grads) = focal_loss(&probs, &labels, &mask, &cfg).unwrap();
        let eps = 1e-7;
        for t in 0..probs.len() {
            let mut plus = probs;
            plus[t] += eps;
            let mut minus = probs;
            minus[t] -= eps;
            let (lp, _) = focal_loss(&plus, &labels, &mask, &cfg).unwrap();
            let (lm, _) = focal_loss(&minus, &labels, &mask, &cfg).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - grads[t]).abs() < 1e-6, "t={t} fd={fd} analytic={}", grads[t]);
        }
    }

    #[test]
    fn masked_loss_is_zero_when_fully_masked() {
        let dists = vec![vec![0.5f64, 0.5]; 3];
        let tags = vec![IntentTag::O; 3];
        let mask = [false; 3];
        let (loss, grads) = masked_intent_loss(&dists, &tags, &mask).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn masked_loss_uniform_17_way() {
        let dists = vec![vec![1.0f64 / 17.0; 17]];
        let tags = vec![IntentTag::Class(4)];
        let (loss, _) = masked_intent_loss(&dists, &tags, &[true]).unwrap();
        assert!((loss - 17.0f64.ln()).abs() < 1e-12);
        assert!((loss - 2.8332).abs() < 1e-4);
    }

    #[test]
    fn masked_loss_ignores_unmasked_distributions() {
        let mut dists = vec![vec![0.1f64, 0.9], vec![0.7, 0.3]];
        let tags = vec![IntentTag::Class(1), IntentTag::O];
        let mask = [true, false];
        let (loss_a, _) = masked_intent_loss(&dists, &tags, &mask).unwrap();
        dists[1] = vec![0.999, 0.001];
        let (loss_b, _) = masked_intent_loss(&dists, &tags, &mask).unwrap();
        assert_eq!(loss_a.to_bits(), loss_b.to_bits());
    }

    #[test]
    fn masked_loss_rejects_o_tag_at_boundary() {
        let dists = vec![vec![0.5f64, 0.5]];
        let tags = vec![IntentTag::O];
        assert!(masked_intent_loss(&dists, &tags, &[true]).is_err());
    }

    #[test]
    fn unmasked_loss_uniform_pair() {
        let dists = vec![vec![1.0f64 / 17.0; 17]; 2];
        let tags = vec![IntentTag::Class(0), IntentTag::O];
        let (loss, _) = unmasked_intent_loss(&dists, &tags).unwrap();
        assert!((loss - 17.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unmasked_equals_masked_under_full_mask_and_matched_normalization() {
        let dists = vec![vec![0.2f64, 0.3, 0.5], vec![0.6, 0.3, 0.1]];
        let tags = vec![IntentTag::Class(2), IntentTag::Class(0)];
        let (unmasked, _) = unmasked_intent_loss(&dists, &tags).unwrap();
        let (masked, _) = masked_intent_loss(&dists, &tags, &[true, true]).unwrap();
        assert!((unmasked - masked / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_one_hot_unmasked_loss_is_near_zero() {
        let dists = vec![vec![1.0f64, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let tags = vec![IntentTag::Class(0), IntentTag::O];
        let (loss, _) = unmasked_intent_loss(&dists, &tags).unwrap();
        assert!(loss.abs() < 1e-5);
    }

    #[test]
    fn combined_loss_weighting() {
        let w = MultiTaskWeights { beta: 0.5 };
        assert!((combined_loss(0.4, 0.6, &w) - 0.5).abs() < 1e-15);
        assert_eq!(combined_loss(0.4, 0.6, &MultiTaskWeights { beta: 1.0 }), 0.4);
        assert_eq!(combined_loss(0.4, 0.6, &MultiTaskWeights { beta: 0.0 }), 0.6);
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut p = Parameter::new("p", Matrix::from_vec(1, 2, vec![1.0f64, -2.0]));
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        // theta=1, g=1, lr=0.001: m_hat=1, v_hat=1, update = lr/(1+eps) ~ 0.001.
        let mut p = Parameter::new("p", Matrix::from_vec(1, 1, vec![1.0f64]));
        p.grad.fill(1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        let expected = 1.0 - 0.001 * (1.0 / (1.0 + 1e-8));
        assert!((p.value.at(0, 0) - expected).abs() < 1e-12);
        assert_eq!(p.grad.at(0, 0), 0.0, "gradient is zeroed after the step");
    }

    #[test]
    fn adam_three_steps_match_reference_loop() {
        // Independent reference: the textbook update written as a plain loop.
        let (mut m, mut v, mut theta) = (0.0f64, 0.0, 1.0);
        let (b1, b2, lr, eps) = (0.9, 0.999, 0.001, 1e-8);
        let g = 0.3;
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut p = Parameter::new("p", Matrix::from_vec(1, 1, vec![1.0f64]));
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            p.grad.fill(0.3);
            adam.step(&mut [&mut p]).unwrap();
        }
        assert!((p.value.at(0, 0) - theta).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = Parameter::new("theta", Matrix::from_vec(1, 1, vec![1.0f64]));
        p.grad.fill(f64::NAN);
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.step(&mut [&mut p]).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }

    #[test]
    fn adam_descends_a_convex_quadratic() {
        // f(theta) = (theta - 3)^2 starting at 0; one small-lr step decreases f.
        let mut p = Parameter::new("p", Matrix::from_vec(1, 1, vec![0.0f64]));
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let before = f(p.value.at(0, 0));
        p.grad.fill(2.0 * (p.value.at(0, 0) - 3.0));
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        assert!(f(p.value.at(0, 0)) < before);
    }
}
