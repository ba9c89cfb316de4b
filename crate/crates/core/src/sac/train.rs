use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bellman_targets, policy_encoder_loss, polyak_update, q_loss, v_bar, ReplayBuffer, SacError, Temperature,
    TrainConfig, Transition, UpdateNoise,
};
use crate::autodiff::{AdamConfig, AdamState, AutodiffError};
use crate::envs::{ContextSpec, ContextVector, Environment};
use crate::io::fmt_float;
use crate::networks::{AgentParams, Dims};

/// One step of an update iteration, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdatePhase {
    Policy,
    Encoder,
    Q,
    Alpha,
    Target,
}

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub env_steps: u64,
    /// Means over the epoch's update iterations.
    pub q_loss: f64,
    pub pi_loss: f64,
    /// Temperature after the epoch.
    pub alpha: f64,
    /// Mean undiscounted return of the episodes finished during collection;
    /// the unfinished episode counts only when none finished.
    pub mean_return: f64,
    /// Mean `-log π` of the reparametrized actions seen by the actor loss.
    pub mean_entropy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: AgentParams,
    pub log: Vec<EpochLog>,
}

struct Optimizers {
    policy: AdamState,
    encoder: AdamState,
    q1: AdamState,
    q2: AdamState,
}

/// A single training run: networks, buffer, optimizers, and one RNG.
pub struct Trainer<E: Environment> {
    cfg: TrainConfig,
    env: E,
    spec: ContextSpec,
    params: AgentParams,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    opt: Optimizers,
    temperature: Temperature,
    target_entropy: f64,
    env_steps: u64,
    epoch: usize,
    trace: Option<Vec<UpdatePhase>>,
}

impl<E: Environment> Trainer<E> {
    /// `spec` is the training context distribution; it may be narrower than
    /// the environment's own space.
    pub fn new(env: E, spec: ContextSpec, cfg: TrainConfig) -> Result<Self, SacError> {
        cfg.validate()?;
        spec.validate().map_err(crate::envs::EnvError::from)?;
        if spec.len() != env.context_dim() {
            return Err(SacError::Config(format!(
                "context spec has {} dims, environment expects {}",
                spec.len(),
                env.context_dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dims = Dims {
            obs: env.obs_dim(),
            action: env.action_dim(),
            context: env.context_dim(),
            latent: cfg.net.latent_dim,
        };
        let params = AgentParams::new(dims, &cfg.net, &mut rng);
        let adam = |lr: f64, p: Vec<&crate::autodiff::Tensor>| AdamState::new(AdamConfig::with_lr(lr), p);
        let opt = Optimizers {
            policy: adam(cfg.policy_lr, params.policy.params()),
            encoder: adam(cfg.encoder_lr, params.encoder.mlp.params()),
            q1: adam(cfg.q_lr, params.q1.mlp.params()),
            q2: adam(cfg.q_lr, params.q2.mlp.params()),
        };
        let temperature = match cfg.fixed_alpha {
            Some(a) => Temperature::fixed(a),
            None => Temperature::learned(cfg.initial_alpha, cfg.alpha_lr),
        };
        let target_entropy = cfg.target_entropy.unwrap_or(-(dims.action as f64));
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg,
            env,
            spec,
            params,
            rng,
            opt,
            temperature,
            target_entropy,
            env_steps: 0,
            epoch: 0,
            trace: None,
        })
    }

    /// Starts recording the phase sequence of every update iteration.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[UpdatePhase] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut AgentParams {
        &mut self.params
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn alpha(&self) -> f64 {
        self.temperature.alpha()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn mark(&mut self, phase: UpdatePhase) {
        if let Some(t) = &mut self.trace {
            t.push(phase);
        }
    }

    fn diverged(&self, loss: &'static str) -> impl Fn(AutodiffError) -> SacError + '_ {
        let epoch = self.epoch;
        move |source| SacError::Diverged { epoch, loss, source }
    }

    fn begin_episode(&mut self) -> Result<(ContextVector, Vec<f64>, Vec<f64>), SacError> {
        let c = self.spec.sample(&mut self.rng);
        let z = self.params.encoder.draw(&c.0, &mut self.rng);
        let seed = self.rng.random();
        let obs = self.env.reset(&c, seed)?;
        Ok((c, z, obs))
    }

    /// Runs `collect_steps` environment steps with stochastic actions. A new
    /// `(c, z)` is drawn at the start and after every finished episode.
    pub fn collect(&mut self) -> Result<f64, SacError> {
        let mut finished = Vec::new();
        let mut ret = 0.0;
        let (mut c, mut z, mut obs) = self.begin_episode()?;
        for _ in 0..self.cfg.collect_steps {
            let (a, _) = self.params.policy.act_random(&obs, &z, &mut self.rng);
            let step = self.env.step(&a)?;
            self.env_steps += 1;
            ret += step.reward;
            let done = step.done();
            self.buffer.push(Transition {
                s: std::mem::take(&mut obs),
                a,
                r: step.reward,
                s_next: step.obs.clone(),
                c: c.0.clone(),
                done: step.terminal,
            });
            obs = step.obs;
            if done {
                finished.push(ret);
                ret = 0.0;
                (c, z, obs) = self.begin_episode()?;
            }
        }
        Ok(if finished.is_empty() {
            ret
        } else {
            finished.iter().sum::<f64>() / finished.len() as f64
        })
    }

    /// One update iteration; returns `(q_loss, pi_loss, mean -log π)`.
    pub fn update(&mut self) -> Result<(f64, f64, f64), SacError> {
        let dims = self.params.dims;
        let rows = self.cfg.batch_size;
        let batch = self
            .buffer
            .sample(rows, &mut self.rng)
            .ok_or_else(|| SacError::Config("update before any data was collected".into()))?;
        let twin = self.cfg.twin_q;
        let alpha = self.temperature.alpha();

        let noise = UpdateNoise::draw(&mut self.rng, rows, dims.latent, dims.action);
        let pl = policy_encoder_loss(&self.params, &batch.s, &batch.c, alpha, self.cfg.beta, &noise, twin)
            .map_err(self.diverged("pi_loss"))?;
        self.opt
            .policy
            .step(&mut self.params.policy.params_mut(), &pl.policy_grads)
            .map_err(self.diverged("pi_loss"))?;
        self.mark(UpdatePhase::Policy);
        self.opt
            .encoder
            .step(&mut self.params.encoder.mlp.params_mut(), &pl.encoder_grads)
            .map_err(self.diverged("pi_loss"))?;
        self.mark(UpdatePhase::Encoder);

        let noise = UpdateNoise::draw(&mut self.rng, rows, dims.latent, dims.action);
        let v = v_bar(&self.params, &batch.s_next, &batch.c, alpha, &noise, twin).map_err(self.diverged("q_loss"))?;
        let y = bellman_targets(&batch, &v, self.cfg.gamma);
        let ql = q_loss(&self.params, &batch, &y, twin).map_err(self.diverged("q_loss"))?;
        self.opt
            .q1
            .step(&mut self.params.q1.mlp.params_mut(), &ql.q1_grads)
            .map_err(self.diverged("q_loss"))?;
        if let Some(g2) = &ql.q2_grads {
            self.opt
                .q2
                .step(&mut self.params.q2.mlp.params_mut(), g2)
                .map_err(self.diverged("q_loss"))?;
        }
        self.mark(UpdatePhase::Q);

        self.temperature
            .update(&pl.log_probs, self.target_entropy)
            .map_err(self.diverged("alpha_loss"))?;
        self.params.log_alpha = self.temperature.log_alpha();
        self.mark(UpdatePhase::Alpha);

        let tau = self.cfg.tau;
        let p = &mut self.params;
        polyak_update(&p.q1.mlp.params(), &mut p.q1_target.mlp.params_mut(), tau)?;
        if twin {
            polyak_update(&p.q2.mlp.params(), &mut p.q2_target.mlp.params_mut(), tau)?;
        }
        self.mark(UpdatePhase::Target);

        for (name, v) in [("q_loss", ql.loss), ("pi_loss", pl.loss)] {
            if !v.is_finite() {
                return Err(SacError::Diverged {
                    epoch: self.epoch,
                    loss: name,
                    source: AutodiffError::NonFinite { op: "loss" },
                });
            }
        }
        let entropy = -pl.log_probs.iter().sum::<f64>() / rows as f64;
        Ok((ql.loss, pl.loss, entropy))
    }

    /// Collection followed by `update_iterations` updates.
    pub fn run_epoch(&mut self) -> Result<EpochLog, SacError> {
        let mean_return = self.collect()?;
        let n = self.cfg.update_iterations;
        let (mut q, mut pi, mut ent) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b, c) = self.update()?;
            q += a;
            pi += b;
            ent += c;
        }
        let k = n.max(1) as f64;
        let log = EpochLog {
            epoch: self.epoch,
            env_steps: self.env_steps,
            q_loss: q / k,
            pi_loss: pi / k,
            alpha: self.temperature.alpha(),
            mean_return,
            mean_entropy: ent / k,
        };
        self.epoch += 1;
        Ok(log)
    }

    pub fn into_params(self) -> AgentParams {
        self.params
    }
}

/// Runs the full epoch loop and returns the trained parameters with the
/// training curve.
pub fn train_foundation<E: Environment>(
    env: E,
    spec: &ContextSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, SacError> {
    train_foundation_with(env, spec, cfg, |_, _| Ok(()))
}

/// [`train_foundation`] with a hook called after every epoch (checkpoints,
/// progress logging).
pub fn train_foundation_with<E, F>(
    env: E,
    spec: &ContextSpec,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, SacError>
where
    E: Environment,
    F: FnMut(&Trainer<E>, &EpochLog) -> Result<(), SacError>,
{
    let mut trainer = Trainer::new(env, spec.clone(), cfg.clone())?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let entry = trainer.run_epoch()?;
        log::debug!(
            "epoch {} steps {} q_loss {:.4} pi_loss {:.4} alpha {:.4} return {:.3}",
            entry.epoch,
            entry.env_steps,
            entry.q_loss,
            entry.pi_loss,
            entry.alpha,
            entry.mean_return
        );
        on_epoch(&trainer, &entry)?;
        log.push(entry);
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        log,
    })
}

/// CSV with header `epoch,env_steps,q_loss,pi_loss,alpha,mean_return,mean_entropy`.
pub fn write_train_log_csv<W: Write>(w: &mut W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "epoch,env_steps,q_loss,pi_loss,alpha,mean_return,mean_entropy")?;
    for e in log {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.epoch,
            e.env_steps,
            fmt_float(e.q_loss),
            fmt_float(e.pi_loss),
            fmt_float(e.alpha),
            fmt_float(e.mean_return),
            fmt_float(e.mean_entropy)
        )?;
    }
    Ok(())
}
