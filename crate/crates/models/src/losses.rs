//! Adversarial objectives, both as plain functions of discriminator outputs
//! and as tape builders for training.

use log::warn;
use qgan_nn::{Activation, NodeId, Tape};
use qgan_quat::{Quaternion, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::Result;

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy on sigmoid decisions (quaternion cross-entropy for
    /// quaternion decisions), non-saturating generator loss.
    Qce,
    Hinge,
    /// Wasserstein critic with a gradient penalty of weight `lambda`.
    WganGp {
        lambda: f64,
    },
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn clamp_prob(p: f64, warned: &mut bool) -> f64 {
    if p < PROB_EPS || p > 1.0 - PROB_EPS {
        if !*warned {
            warn!("probability {p} clamped to [{PROB_EPS}, 1 - {PROB_EPS}]");
            *warned = true;
        }
        p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    } else {
        p
    }
}

/// `(loss_d, loss_g)` for sigmoid decisions, with the non-saturating
/// generator loss `-mean(log d_fake)`.
pub fn gan_loss(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let mut w = false;
    let real: Vec<f64> = d_real.iter().map(|&p| clamp_prob(p, &mut w)).collect();
    let fake: Vec<f64> = d_fake.iter().map(|&p| clamp_prob(p, &mut w)).collect();
    let ld = -mean(real.iter().map(|p| p.ln())) - mean(fake.iter().map(|p| (1.0 - p).ln()));
    let lg = -mean(fake.iter().map(|p| p.ln()));
    (ld, lg)
}

/// Four-component binary cross-entropy, summed over components and
/// averaged over the batch.
pub fn quaternion_cross_entropy(target: &[Quaternion<f64>], estimate: &[Quaternion<f64>]) -> f64 {
    let mut w = false;
    mean(target.iter().zip(estimate).map(|(t, e)| {
        let (t, e) = (t.to_array(), e.to_array());
        (0..4)
            .map(|c| {
                let p = clamp_prob(e[c], &mut w);
                -(t[c] * p.ln() + (1.0 - t[c]) * (1.0 - p).ln())
            })
            .sum::<f64>()
    }))
}

/// `(loss_d, loss_g)` of the hinge objective on raw critic outputs.
pub fn hinge_losses(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let ld = -mean(d_real.iter().map(|&d| (d - 1.0).min(0.0))) - mean(d_fake.iter().map(|&d| (-1.0 - d).min(0.0)));
    let lg = -mean(d_fake.iter().copied());
    (ld, lg)
}

/// Critic loss `-mean(d_real) + mean(d_fake) + lambda mean((|grad| - 1)^2)`.
pub fn wgan_gp_loss(d_real: &[f64], d_fake: &[f64], grad_norms: &[f64], lambda: f64) -> f64 {
    -mean(d_real.iter().copied())
        + mean(d_fake.iter().copied())
        + lambda * mean(grad_norms.iter().map(|g| (g - 1.0).powi(2)))
}

/// Hinge critic loss on raw outputs.
pub fn hinge_d_node<T: Scalar>(tape: &mut Tape<T>, d_real: NodeId, d_fake: NodeId) -> Result<NodeId> {
    let r = tape.affine(d_real, -1.0, 1.0)?;
    let r = tape.activation(Activation::Relu, r)?;
    let r = tape.mean(r)?;
    let f = tape.affine(d_fake, 1.0, 1.0)?;
    let f = tape.activation(Activation::Relu, f)?;
    let f = tape.mean(f)?;
    Ok(tape.add(r, f)?)
}

/// `-mean(d_fake)`; shared by the hinge and Wasserstein generators.
pub fn neg_mean_node<T: Scalar>(tape: &mut Tape<T>, d_fake: NodeId) -> Result<NodeId> {
    let m = tape.mean(d_fake)?;
    Ok(tape.affine(m, -1.0, 0.0)?)
}

/// `-mean(d_real) + mean(d_fake)`.
pub fn wasserstein_d_node<T: Scalar>(tape: &mut Tape<T>, d_real: NodeId, d_fake: NodeId) -> Result<NodeId> {
    let r = neg_mean_node(tape, d_real)?;
    let f = tape.mean(d_fake)?;
    Ok(tape.add(r, f)?)
}

/// Cross-entropy of probabilities against a constant target, averaged over
/// the batch axis and summed over components.
pub fn cross_entropy_node<T: Scalar>(tape: &mut Tape<T>, probs: NodeId, target: f64) -> Result<NodeId> {
    let shape = tape.value(probs).shape().to_vec();
    let t = tape.constant(Tensor::full(&shape, T::from_f64(target)));
    Ok(tape.cross_entropy(probs, t, PROB_EPS)?)
}

/// `lambda mean((|D(x+hd) - D(x-hd)| / 2h - 1)^2)` from the two perturbed
/// critic outputs: the directional slope along `d` replaces the gradient
/// norm, so no second-order derivative is needed.
pub fn directional_penalty_node<T: Scalar>(
    tape: &mut Tape<T>,
    d_plus: NodeId,
    d_minus: NodeId,
    h: f64,
    lambda: f64,
) -> Result<NodeId> {
    let m = tape.affine(d_minus, -1.0, 0.0)?;
    let diff = tape.add(d_plus, m)?;
    let slope = tape.affine(diff, 1.0 / (2.0 * h), 0.0)?;
    let slope = tape.abs(slope)?;
    let dev = tape.affine(slope, 1.0, -1.0)?;
    let sq = tape.square(dev)?;
    let pen = tape.mean(sq)?;
    Ok(tape.affine(pen, lambda, 0.0)?)
}
