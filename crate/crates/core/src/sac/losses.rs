//! Critic, actor-encoder, and temperature objectives on a minibatch.
//!
//! Each function takes its noise explicitly so a fixed draw makes the loss a
//! deterministic function of the parameters, which is what the
//! finite-difference tests rely on.

use rand::Rng;

use super::Batch;
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::networks::{standard_normal, AgentParams, QNet};

/// Reparametrization noise for one minibatch: `ω` for the encoder, `ε` for
/// the policy.
#[derive(Clone, Debug)]
pub struct UpdateNoise {
    pub omega: Tensor,
    pub eps: Tensor,
}

impl UpdateNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, rows: usize, latent: usize, action: usize) -> Self {
        Self {
            omega: standard_normal(rng, &[rows, latent]),
            eps: standard_normal(rng, &[rows, action]),
        }
    }
}

/// Elementwise minimum over frozen critics (one or two).
fn min_q(tape: &mut Tape, nets: (&QNet, Option<&QNet>), s: Var, a: Var, c: Var) -> Result<Var, AutodiffError> {
    let eval = |net: &QNet, tape: &mut Tape| {
        let bound = net.mlp.bind_frozen(tape);
        net.forward(tape, &bound, s, a, c)
    };
    let q1 = eval(nets.0, tape)?;
    match nets.1 {
        Some(q2net) => {
            let q2 = eval(q2net, tape)?;
            tape.minimum(q1, q2)
        }
        None => Ok(q1),
    }
}

/// Soft state value of the next states under the target critics:
/// `min_i Q_i^targ(s', a', c) - α log π(a'|s', z')` with `z' ~ q(z|c)` and
/// `a' ~ π(·|s', z')`. Everything here is a constant for the critic loss.
pub fn v_bar(
    params: &AgentParams,
    s_next: &Tensor,
    c: &Tensor,
    alpha: f64,
    noise: &UpdateNoise,
    twin: bool,
) -> Result<Vec<f64>, AutodiffError> {
    let mut tape = Tape::new();
    let enc = params.encoder.mlp.bind_frozen(&mut tape);
    let cv = tape.constant(c.clone());
    let g = params.encoder.mean(&mut tape, &enc, cv)?;
    let z = params.encoder.sample(&mut tape, g, &noise.omega)?;
    let pol = params.policy.bind_frozen(&mut tape);
    let sv = tape.constant(s_next.clone());
    let draw = params.policy.sample(&mut tape, &pol, sv, z, &noise.eps)?;
    let second = twin.then_some(&params.q2_target);
    let q = min_q(&mut tape, (&params.q1_target, second), sv, draw.action, cv)?;
    let q = tape.value(q).data();
    let lp = tape.value(draw.log_prob).data();
    Ok(q.iter().zip(lp).map(|(q, lp)| q - alpha * lp).collect())
}

/// `y = r + γ (1 - done) V̄(s', c)`.
pub fn bellman_targets(batch: &Batch, v_next: &[f64], gamma: f64) -> Vec<f64> {
    batch
        .r
        .data()
        .iter()
        .zip(batch.done.data())
        .zip(v_next)
        .map(|((&r, &d), &v)| r + gamma * (1.0 - d) * v)
        .collect()
}

#[derive(Clone, Debug)]
pub struct QLoss {
    pub loss: f64,
    pub q1_grads: Vec<Tensor>,
    /// `None` in the single-critic ablation.
    pub q2_grads: Option<Vec<Tensor>>,
}

/// `Σ_i mean[(Q_i(s, a, c) - y)²]` over the online critics.
pub fn q_loss(params: &AgentParams, batch: &Batch, targets: &[f64], twin: bool) -> Result<QLoss, AutodiffError> {
    let mut tape = Tape::new();
    let s = tape.constant(batch.s.clone());
    let a = tape.constant(batch.a.clone());
    let c = tape.constant(batch.c.clone());
    let y = tape.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
    let term = |net: &QNet, tape: &mut Tape| -> Result<(Var, Vec<Var>), AutodiffError> {
        let bound = net.mlp.bind(tape);
        let q = net.forward(tape, &bound, s, a, c)?;
        let diff = tape.sub(q, y)?;
        let sq = tape.square(diff)?;
        Ok((tape.mean(sq)?, bound.vars().to_vec()))
    };
    let (l1, v1) = term(&params.q1, &mut tape)?;
    let (root, v2) = if twin {
        let (l2, v2) = term(&params.q2, &mut tape)?;
        (tape.add(l1, l2)?, Some(v2))
    } else {
        (l1, None)
    };
    let grads = tape.backward(root)?;
    Ok(QLoss {
        loss: tape.value(root).item(),
        q1_grads: grads.wrt(&v1),
        q2_grads: v2.map(|v| grads.wrt(&v)),
    })
}

#[derive(Clone, Debug)]
pub struct PolicyLoss {
    pub loss: f64,
    pub policy_grads: Vec<Tensor>,
    pub encoder_grads: Vec<Tensor>,
    /// Per-row `log π(a|s, z)` of the reparametrized draw.
    pub log_probs: Vec<f64>,
    pub kl_mean: f64,
}

/// `mean[α log π(a|s,z) - min_i Q_i(s, a, c)] + β mean[KL(q(z|c) ‖ ρ)]`.
///
/// The critics are frozen; gradients reach the policy and the encoder only.
pub fn policy_encoder_loss(
    params: &AgentParams,
    s: &Tensor,
    c: &Tensor,
    alpha: f64,
    beta: f64,
    noise: &UpdateNoise,
    twin: bool,
) -> Result<PolicyLoss, AutodiffError> {
    let mut tape = Tape::new();
    let enc = params.encoder.mlp.bind(&mut tape);
    let cv = tape.constant(c.clone());
    let g = params.encoder.mean(&mut tape, &enc, cv)?;
    let z = params.encoder.sample(&mut tape, g, &noise.omega)?;
    let pol = params.policy.bind(&mut tape);
    let sv = tape.constant(s.clone());
    let draw = params.policy.sample(&mut tape, &pol, sv, z, &noise.eps)?;
    let second = twin.then_some(&params.q2);
    let q = min_q(&mut tape, (&params.q1, second), sv, draw.action, cv)?;

    let weighted = tape.scale(draw.log_prob, alpha)?;
    let actor = tape.sub(weighted, q)?;
    let actor = tape.mean(actor)?;
    let kl = params.encoder.kl(&mut tape, g)?;
    let kl_mean = tape.mean(kl)?;
    let kl_term = tape.scale(kl_mean, beta)?;
    let root = tape.add(actor, kl_term)?;

    let grads = tape.backward(root)?;
    Ok(PolicyLoss {
        loss: tape.value(root).item(),
        policy_grads: grads.wrt(&pol.vars()),
        encoder_grads: grads.wrt(enc.vars()),
        log_probs: tape.value(draw.log_prob).data().to_vec(),
        kl_mean: tape.value(kl_mean).item(),
    })
}

/// `mean[α (-log π - H̄)]` with `α = exp(log_alpha)`; returns the loss and its
/// derivative with respect to `log_alpha`. Log-probs are constants here.
pub fn alpha_loss(log_alpha: f64, log_probs: &[f64], target_entropy: f64) -> Result<(f64, f64), AutodiffError> {
    let mut tape = Tape::new();
    let la = tape.param(Tensor::scalar(log_alpha));
    let alpha = tape.exp(la)?;
    let gap = Tensor::new(
        vec![log_probs.len()],
        log_probs.iter().map(|lp| -lp - target_entropy).collect(),
    )?;
    let gap = tape.constant(gap);
    let gap = tape.mean(gap)?;
    let root = tape.mul(alpha, gap)?;
    let grads = tape.backward(root)?;
    Ok((tape.value(root).item(), grads.get(la).item()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff::{central_difference, max_relative_error};
    use crate::autodiff::{AdamConfig, AdamState};
    use crate::networks::{Dims, NetConfig};
    use crate::sac::Transition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DIMS: Dims = Dims {
        obs: 3,
        action: 2,
        context: 2,
        latent: 1,
    };

    fn small_params(seed: u64) -> AgentParams {
        let cfg = NetConfig {
            policy_hidden: vec![5, 4],
            q_hidden: vec![5, 4],
            encoder_hidden: vec![4, 3],
            encoder_std: 0.3,
            ..NetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = AgentParams::new(DIMS, &cfg, &mut rng);
        // Distinct targets so the twin minimum and Polyak lag matter.
        p.q1_target = QNet::new(DIMS, &cfg.q_hidden, &mut rng);
        p.q2_target = QNet::new(DIMS, &cfg.q_hidden, &mut rng);
        p
    }

    fn batch(seed: u64, rows: usize) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let items: Vec<Transition> = (0..rows)
            .map(|k| Transition {
                s: v(3),
                a: v(2),
                r: v(1)[0],
                s_next: v(3),
                c: v(2),
                done: k % 4 == 1,
            })
            .collect();
        let refs: Vec<&Transition> = items.iter().collect();
        Batch::from_transitions(&refs)
    }

    fn set(target: Vec<&mut Tensor>, values: &[Tensor]) {
        for (t, v) in target.into_iter().zip(values) {
            *t = v.clone();
        }
    }

    fn owned(p: Vec<&Tensor>) -> Vec<Tensor> {
        p.into_iter().cloned().collect()
    }

    #[test]
    fn v_bar_matches_rowwise_scalar_oracle() {
        let p = small_params(1);
        let b = batch(2, 6);
        let noise = UpdateNoise::draw(&mut ChaCha8Rng::seed_from_u64(3), 6, 1, 2);
        let alpha = 0.37;
        let got = v_bar(&p, &b.s_next, &b.c, alpha, &noise, true).unwrap();
        for r in 0..6 {
            let c = b.c.row_slice(r);
            let z: Vec<f64> = p
                .encoder
                .eval_mean(c)
                .iter()
                .zip(noise.omega.row_slice(r))
                .map(|(g, w)| g + p.encoder.std * w)
                .collect();
            let s2 = b.s_next.row_slice(r);
            let (a, lp) = p.policy.act(s2, &z, noise.eps.row_slice(r));
            let q = p.q1_target.eval(s2, &a, c).min(p.q2_target.eval(s2, &a, c));
            assert!((got[r] - (q - alpha * lp)).abs() < 1e-12);
        }
    }

    #[test]
    fn v_bar_special_cases() {
        let mut p = small_params(4);
        let b = batch(5, 4);
        let noise = UpdateNoise::draw(&mut ChaCha8Rng::seed_from_u64(6), 4, 1, 2);
        // α = 0 leaves the twin minimum alone
        let v0 = v_bar(&p, &b.s_next, &b.c, 0.0, &noise, true).unwrap();
        let v1 = v_bar(&p, &b.s_next, &b.c, 0.0, &noise, false).unwrap();
        assert!(v0.iter().zip(&v1).all(|(a, b)| a <= b));
        // identical targets make the minimum a no-op
        p.q2_target = p.q1_target.clone();
        let tw = v_bar(&p, &b.s_next, &b.c, 0.5, &noise, true).unwrap();
        let single = v_bar(&p, &b.s_next, &b.c, 0.5, &noise, false).unwrap();
        assert_eq!(tw, single);
    }

    #[test]
    fn bellman_targets_drop_bootstrap_when_done() {
        let b = batch(7, 4);
        let y = bellman_targets(&b, &[10.0; 4], 0.9);
        for r in 0..4 {
            let expected = b.r.data()[r] + if b.done.data()[r] == 1.0 { 0.0 } else { 9.0 };
            assert!((y[r] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn q_loss_zero_when_outputs_hit_targets() {
        let p = small_params(8);
        let b = batch(9, 5);
        let y: Vec<f64> = (0..5)
            .map(|r| p.q1.eval(b.s.row_slice(r), b.a.row_slice(r), b.c.row_slice(r)))
            .collect();
        let out = q_loss(&p, &b, &y, false).unwrap();
        assert!(out.loss.abs() < 1e-24);
        assert!(out.q1_grads.iter().all(|g| g.norm() < 1e-12));
        assert!(out.q2_grads.is_none());
    }

    #[test]
    fn q_loss_gradient_matches_finite_differences() {
        let p = small_params(10);
        let b = batch(11, 6);
        let y: Vec<f64> = (0..6).map(|k| 0.3 * k as f64 - 0.5).collect();
        let out = q_loss(&p, &b, &y, true).unwrap();
        let mut flat = owned(p.q1.mlp.params());
        flat.extend(owned(p.q2.mlp.params()));
        let n1 = p.q1.mlp.params().len();
        let f = |ts: &[Tensor]| {
            let mut q = p.clone();
            set(q.q1.mlp.params_mut(), &ts[..n1]);
            set(q.q2.mlp.params_mut(), &ts[n1..]);
            q_loss(&q, &b, &y, true).unwrap().loss
        };
        let numeric = central_difference(&f, &flat, 1e-5);
        let mut analytic = out.q1_grads.clone();
        analytic.extend(out.q2_grads.unwrap());
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn policy_encoder_gradient_matches_finite_differences() {
        let p = small_params(12);
        let b = batch(13, 5);
        let noise = UpdateNoise::draw(&mut ChaCha8Rng::seed_from_u64(14), 5, 1, 2);
        let (alpha, beta) = (0.2, 0.7);
        let out = policy_encoder_loss(&p, &b.s, &b.c, alpha, beta, &noise, true).unwrap();
        let mut flat = owned(p.policy.params());
        flat.extend(owned(p.encoder.mlp.params()));
        let np = p.policy.params().len();
        let f = |ts: &[Tensor]| {
            let mut q = p.clone();
            set(q.policy.params_mut(), &ts[..np]);
            set(q.encoder.mlp.params_mut(), &ts[np..]);
            policy_encoder_loss(&q, &b.s, &b.c, alpha, beta, &noise, true)
                .unwrap()
                .loss
        };
        let numeric = central_difference(&f, &flat, 1e-5);
        let mut analytic = out.policy_grads.clone();
        analytic.extend(out.encoder_grads);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn policy_loss_value_matches_scalar_oracle() {
        let p = small_params(15);
        let b = batch(16, 4);
        let noise = UpdateNoise::draw(&mut ChaCha8Rng::seed_from_u64(17), 4, 1, 2);
        let (alpha, beta) = (0.1, 2.0);
        let out = policy_encoder_loss(&p, &b.s, &b.c, alpha, beta, &noise, true).unwrap();
        let mut actor = 0.0;
        let mut kl = 0.0;
        for r in 0..4 {
            let (s, c) = (b.s.row_slice(r), b.c.row_slice(r));
            let g = p.encoder.eval_mean(c);
            let z = [g[0] + p.encoder.std * noise.omega.row_slice(r)[0]];
            let (a, lp) = p.policy.act(s, &z, noise.eps.row_slice(r));
            actor += alpha * lp - p.q1.eval(s, &a, c).min(p.q2.eval(s, &a, c));
            kl += p.encoder.eval_kl(c);
        }
        let expected = actor / 4.0 + beta * kl / 4.0;
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn alpha_loss_gradient_and_sign() {
        let lps = [0.3, -1.2, 0.8];
        let target = -2.0;
        let (loss, grad) = alpha_loss(0.4, &lps, target).unwrap();
        let gap = lps.iter().map(|lp| -lp - target).sum::<f64>() / 3.0;
        assert!((loss - 0.4f64.exp() * gap).abs() < 1e-12);
        let h = 1e-6;
        let fd =
            (alpha_loss(0.4 + h, &lps, target).unwrap().0 - alpha_loss(0.4 - h, &lps, target).unwrap().0) / (2.0 * h);
        assert!((grad - fd).abs() / grad.abs() < 1e-6);
        // entropy above target: descent lowers α
        assert!(grad > 0.0);
        // entropy exactly on target: stationary
        let (_, g0) = alpha_loss(0.4, &[2.0, 2.0], target).unwrap();
        assert_eq!(g0, 0.0);
    }

    #[test]
    fn alpha_converges_geometrically_to_stationary_point() {
        // Synthetic policy whose entropy rises with α:
        // H(α) = H̄ + k (log α - log α*). Gradient descent on log α then
        // follows x ← x - η e^x k (x - x*), a contraction near x* with ratio
        // 1 - η α* k.
        let (target, k, x_star, eta) = (-1.0, 0.8, (0.2f64).ln(), 0.5);
        let mut x = 0.0f64;
        let mut oracle = 0.0f64;
        let mut errs = Vec::new();
        for _ in 0..400 {
            let entropy = target + k * (x - x_star);
            let (_, g) = alpha_loss(x, &[-entropy], target).unwrap();
            x -= eta * g;
            oracle -= eta * oracle.exp() * k * (oracle - x_star);
            assert!((x - oracle).abs() < 1e-12);
            errs.push((x - x_star).abs());
        }
        let ratio = errs[150] / errs[149];
        let predicted = 1.0 - eta * x_star.exp() * k;
        assert!((ratio - predicted).abs() < 1e-4, "{ratio} vs {predicted}");
        assert!(errs[399] < 1e-9);
    }

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize) -> (Tensor, Tensor) {
        use rand::Rng;
        let mut row = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let s: Vec<Vec<f64>> = (0..rows).map(|_| row(DIMS.obs)).collect();
        let c: Vec<Vec<f64>> = (0..rows).map(|_| row(DIMS.context)).collect();
        (Tensor::from_rows(&s).unwrap(), Tensor::from_rows(&c).unwrap())
    }

    #[test]
    fn huge_beta_collapses_encoder_mean() {
        let mut p = small_params(21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut opt = AdamState::new(AdamConfig::with_lr(3e-3), p.encoder.mlp.params());
        let probe: Vec<[f64; 2]> = vec![[0.5, -0.5], [-0.9, 0.1], [0.0, 1.0]];
        let start: f64 = probe.iter().map(|c| p.encoder.eval_mean(c)[0].abs()).sum();
        for _ in 0..1500 {
            let (s, c) = random_batch(&mut rng, 16);
            let noise = UpdateNoise::draw(&mut rng, 16, DIMS.latent, DIMS.action);
            let out = policy_encoder_loss(&p, &s, &c, 0.2, 1e6, &noise, true).unwrap();
            opt.step(&mut p.encoder.mlp.params_mut(), &out.encoder_grads).unwrap();
        }
        let end: f64 = probe.iter().map(|c| p.encoder.eval_mean(c)[0].abs()).sum();
        assert!(start > 0.05, "{start}");
        assert!(end < 1e-2, "{start} -> {end}");
    }

    /// Critic `k [tanh(b + a₀) + tanh(b - a₀)]` on the first action dim: even
    /// in `a₀`, maximal at `a₀ = 0` and locally `-k' a₀²`; zero weight on
    /// everything else.
    fn bowl_critic() -> QNet {
        let input = DIMS.obs + DIMS.action + DIMS.context;
        let mut w1 = vec![0.0; input * 2];
        w1[DIMS.obs * 2] = 1.0;
        w1[DIMS.obs * 2 + 1] = -1.0;
        QNet {
            mlp: crate::networks::Mlp {
                layers: vec![
                    crate::networks::Linear {
                        w: Tensor::new(vec![input, 2], w1).unwrap(),
                        b: Tensor::new(vec![2], vec![0.5, 0.5]).unwrap(),
                    },
                    crate::networks::Linear {
                        w: Tensor::new(vec![2, 1], vec![5.0, 5.0]).unwrap(),
                        b: Tensor::zeros(&[1]),
                    },
                ],
            },
        }
    }

    #[test]
    fn frozen_bowl_critic_pulls_mean_action_to_zero() {
        let mut p = small_params(31);
        p.q1 = bowl_critic();
        p.q2 = bowl_critic();
        // start well away from the optimum
        p.policy.mean_head.b.data_mut()[0] = 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (s0, _) = random_batch(&mut rng, 8);
        let z0 = Tensor::zeros(&[8, DIMS.latent]);
        let mean_abs = |p: &AgentParams| -> f64 {
            (0..8)
                .map(|i| p.policy.mean_action(s0.row_slice(i), z0.row_slice(i))[0].abs())
                .sum::<f64>()
                / 8.0
        };
        let before = mean_abs(&p);
        let mut opt = AdamState::new(AdamConfig::with_lr(3e-3), p.policy.params());
        for _ in 0..1500 {
            let (s, c) = random_batch(&mut rng, 32);
            let noise = UpdateNoise::draw(&mut rng, 32, DIMS.latent, DIMS.action);
            let out = policy_encoder_loss(&p, &s, &c, 0.01, 0.0, &noise, true).unwrap();
            opt.step(&mut p.policy.params_mut(), &out.policy_grads).unwrap();
        }
        let after = mean_abs(&p);
        assert!(before > 0.5, "{before}");
        assert!(after < 0.05, "{before} -> {after}");
    }
}
