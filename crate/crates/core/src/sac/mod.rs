//! Foundation-policy acquisition: context-conditioned soft actor-critic with a
//! jointly trained context encoder.

mod buffer;
mod losses;
mod train;

use serde::{Deserialize, Serialize};

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use losses::{alpha_loss, bellman_targets, policy_encoder_loss, q_loss, v_bar, PolicyLoss, QLoss, UpdateNoise};
pub use train::{
    train_foundation, train_foundation_with, write_train_log_csv, EpochLog, TrainOutcome, Trainer, UpdatePhase,
};

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Tensor};
use crate::envs::EnvError;
use crate::networks::NetConfig;

#[derive(Debug, thiserror::Error)]
pub enum SacError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch}: {loss} is non-finite ({source})")]
    Diverged {
        epoch: usize,
        loss: &'static str,
        source: AutodiffError,
    },
    #[error("polyak update: {0} parameter tensors vs {1} targets")]
    ParamCount(usize, usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    /// KL weight on the encoder.
    pub beta: f64,
    pub batch_size: usize,
    pub collect_steps: usize,
    pub update_iterations: usize,
    pub epochs: usize,
    pub tau: f64,
    /// `None` means `-|A|`.
    pub target_entropy: Option<f64>,
    pub q_lr: f64,
    pub policy_lr: f64,
    pub encoder_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// Holds α constant instead of autotuning it.
    pub fixed_alpha: Option<f64>,
    /// Clipped double-Q; `false` trains and bootstraps from `q1` alone.
    pub twin_q: bool,
    pub buffer_capacity: usize,
    pub net: NetConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta: (-5.0f64).exp(),
            batch_size: 256,
            collect_steps: 1000,
            update_iterations: 1000,
            epochs: 100,
            tau: 0.005,
            target_entropy: None,
            q_lr: 1e-3,
            policy_lr: 3e-4,
            encoder_lr: 3e-4,
            alpha_lr: 3e-4,
            initial_alpha: 1.0,
            fixed_alpha: None,
            twin_q: true,
            buffer_capacity: 1_000_000,
            net: NetConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: &str| Err(SacError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if self.batch_size == 0 || self.collect_steps == 0 {
            return bad("batch_size and collect_steps must be positive");
        }
        if self.batch_size > self.collect_steps.min(self.buffer_capacity) {
            return bad("batch_size exceeds the buffer occupancy at the first update");
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            return bad("initial_alpha must be positive");
        }
        if let Some(a) = self.fixed_alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return bad("fixed_alpha must be finite and non-negative");
            }
        }
        for lr in [self.q_lr, self.policy_lr, self.encoder_lr, self.alpha_lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rates must be positive");
            }
        }
        if self.net.latent_dim == 0 || self.net.policy_hidden.is_empty() {
            return bad("latent_dim and policy_hidden must be non-empty");
        }
        if !(self.net.encoder_std > 0.0 && self.net.prior_std > 0.0) {
            return bad("encoder_std and prior_std must be positive");
        }
        Ok(())
    }
}

/// Entropy temperature, stored as `log α` so that `α > 0` by construction.
#[derive(Clone, Debug)]
pub struct Temperature {
    log_alpha: Tensor,
    fixed: Option<f64>,
    opt: AdamState,
}

impl Temperature {
    pub fn learned(initial: f64, lr: f64) -> Self {
        assert!(initial > 0.0, "temperature must be positive");
        let log_alpha = Tensor::scalar(initial.ln());
        let opt = AdamState::new(AdamConfig::with_lr(lr), [&log_alpha]);
        Self {
            log_alpha,
            fixed: None,
            opt,
        }
    }

    /// A constant α; `0` is allowed and disables the entropy terms.
    pub fn fixed(alpha: f64) -> Self {
        let log_alpha = Tensor::scalar(if alpha > 0.0 { alpha.ln() } else { f64::MIN });
        let opt = AdamState::new(AdamConfig::default(), [&log_alpha]);
        Self {
            log_alpha,
            fixed: Some(alpha),
            opt,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.fixed.unwrap_or_else(|| self.log_alpha.item().exp())
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha.item()
    }

    pub fn is_fixed(&self) -> bool {
        self.fixed.is_some()
    }

    /// One Adam step on `alpha_loss`; a no-op when fixed.
    pub fn update(&mut self, log_probs: &[f64], target_entropy: f64) -> Result<f64, AutodiffError> {
        if self.fixed.is_some() {
            return Ok(0.0);
        }
        let (loss, grad) = alpha_loss(self.log_alpha.item(), log_probs, target_entropy)?;
        self.opt.step(&mut [&mut self.log_alpha], &[Tensor::scalar(grad)])?;
        Ok(loss)
    }
}

/// `target ← τ online + (1 - τ) target`, elementwise.
pub fn polyak_update(online: &[&Tensor], target: &mut [&mut Tensor], tau: f64) -> Result<(), SacError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(SacError::Config(format!("tau {tau} outside (0, 1]")));
    }
    if online.len() != target.len() {
        return Err(SacError::ParamCount(online.len(), target.len()));
    }
    for (o, t) in online.iter().zip(target.iter()) {
        if o.shape() != t.shape() {
            return Err(AutodiffError::Shape {
                op: "polyak_update",
                shapes: vec![o.shape().to_vec(), t.shape().to_vec()],
            }
            .into());
        }
    }
    for (o, t) in online.iter().zip(target.iter_mut()) {
        for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}
