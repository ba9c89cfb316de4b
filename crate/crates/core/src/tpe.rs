//! Skill generation: a one-dimensional tree-structured Parzen estimator
//! searching the latent input of a frozen policy.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::envs::{ContextVector, EnvError, Environment};
use crate::io::fmt_float;
use crate::networks::PolicyNet;

#[derive(Debug, thiserror::Error)]
pub enum TpeError {
    #[error("search bounds [{0}, {1}] are not a finite interval")]
    Bounds(f64, f64),
    #[error("objective value {0} is not finite")]
    NonFinite(f64),
    #[error("suggestion {0} lies outside the search bounds")]
    OutOfBounds(f64),
    #[error("all {} trials failed; last error: {last}", .attempts)]
    AllFailed {
        attempts: usize,
        last: EnvError,
        partial: Vec<Trial>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpeConfig {
    /// Fraction of trials forming the good-set density.
    pub gamma: f64,
    pub startup: usize,
    pub candidates: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            startup: 10,
            candidates: 24,
            low: -3.0,
            high: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub k: usize,
    pub z: f64,
    pub j: f64,
}

/// Mixture of bound-truncated Gaussians with equal weights.
#[derive(Clone, Debug)]
pub struct Parzen {
    kernels: Vec<(Normal, f64, f64)>,
    low: f64,
    high: f64,
}

impl Parzen {
    /// One kernel per point plus a broad prior kernel centred on the bounds.
    ///
    /// Each point's bandwidth is the larger gap to its sorted neighbours in
    /// the set (the single gap at either end), floored at
    /// `range / min(100, n + 1)` and capped at `range`.
    pub fn fit(points: &[f64], low: f64, high: f64) -> Self {
        let range = high - low;
        let mut sorted = points.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut kernels = Vec::with_capacity(n + 1);
        let floor = range / (n + 1).min(100) as f64;
        for i in 0..n {
            let left = if i > 0 { sorted[i] - sorted[i - 1] } else { 0.0 };
            let right = if i + 1 < n { sorted[i + 1] - sorted[i] } else { 0.0 };
            let spread = if n == 1 { range } else { left.max(right) };
            let sigma = spread.clamp(floor, range);
            kernels.push(truncated(sorted[i], sigma, low, high));
        }
        kernels.push(truncated(0.5 * (low + high), range, low, high));
        Self { kernels, low, high }
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.kernels.iter().map(|k| k.1).collect()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.low || x > self.high {
            return 0.0;
        }
        let w = 1.0 / self.kernels.len() as f64;
        self.kernels.iter().map(|(k, _, mass)| w * k.pdf(x) / mass).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (k, _, _) = &self.kernels[rng.random_range(0..self.kernels.len())];
        let (a, b) = (k.cdf(self.low), k.cdf(self.high));
        let u = a + (b - a) * rng.random::<f64>();
        k.inverse_cdf(u).clamp(self.low, self.high)
    }
}

fn truncated(mu: f64, sigma: f64, low: f64, high: f64) -> (Normal, f64, f64) {
    let n = Normal::new(mu, sigma).expect("positive finite bandwidth");
    let mass = (n.cdf(high) - n.cdf(low)).max(f64::MIN_POSITIVE);
    (n, sigma, mass)
}

/// Sequential optimizer state for maximizing a scalar objective.
#[derive(Clone, Debug)]
pub struct TpeState {
    cfg: TpeConfig,
    history: Vec<TrialRecord>,
    rng: ChaCha8Rng,
}

impl TpeState {
    pub fn new(cfg: TpeConfig, seed: u64) -> Result<Self, TpeError> {
        if !(cfg.low.is_finite() && cfg.high.is_finite() && cfg.low < cfg.high) {
            return Err(TpeError::Bounds(cfg.low, cfg.high));
        }
        Ok(Self {
            cfg,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn history(&self) -> &[TrialRecord] {
        &self.history
    }

    pub fn config(&self) -> &TpeConfig {
        &self.cfg
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random_range(self.cfg.low..=self.cfg.high)
    }

    /// Splits the history into good and bad latents; `None` when every
    /// objective value is equal.
    pub fn split(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let first = self.history.first()?.j;
        if self.history.iter().all(|t| t.j == first) {
            return None;
        }
        let mut order: Vec<&TrialRecord> = self.history.iter().collect();
        order.sort_by(|a, b| b.j.total_cmp(&a.j).then(a.k.cmp(&b.k)));
        let n_good = ((self.cfg.gamma * order.len() as f64).ceil() as usize).clamp(1, order.len() - 1);
        let good = order[..n_good].iter().map(|t| t.z).collect();
        let bad = order[n_good..].iter().map(|t| t.z).collect();
        Some((good, bad))
    }

    pub fn suggest(&mut self) -> f64 {
        if self.history.len() < self.cfg.startup.max(2) {
            return self.uniform();
        }
        let Some((good, bad)) = self.split() else {
            return self.uniform();
        };
        let (lo, hi) = (self.cfg.low, self.cfg.high);
        let l = Parzen::fit(&good, lo, hi);
        let g = Parzen::fit(&bad, lo, hi);
        let mut best = (f64::NEG_INFINITY, 0.5 * (lo + hi));
        for _ in 0..self.cfg.candidates.max(1) {
            let z = l.sample(&mut self.rng);
            let score = l.pdf(z).ln() - g.pdf(z).ln();
            if score > best.0 {
                best = (score, z);
            }
        }
        best.1
    }

    pub fn observe(&mut self, z: f64, j: f64) -> Result<(), TpeError> {
        if !j.is_finite() {
            return Err(TpeError::NonFinite(j));
        }
        if !(self.cfg.low..=self.cfg.high).contains(&z) {
            return Err(TpeError::OutOfBounds(z));
        }
        self.history.push(TrialRecord {
            k: self.history.len(),
            z,
            j,
        });
        Ok(())
    }

    /// Highest-J record; the earliest wins ties.
    pub fn best(&self) -> Option<TrialRecord> {
        self.history
            .iter()
            .copied()
            .reduce(|a, b| if b.j > a.j { b } else { a })
    }
}

/// Runs `trials` rounds of suggest/observe on a plain function and returns
/// the best value found.
pub fn maximize<F: FnMut(f64) -> f64>(
    cfg: &TpeConfig,
    trials: usize,
    seed: u64,
    mut f: F,
) -> Result<TrialRecord, TpeError> {
    let mut state = TpeState::new(cfg.clone(), seed)?;
    for _ in 0..trials {
        let z = state.suggest();
        state.observe(z, f(z))?;
    }
    state.best().ok_or(TpeError::Bounds(cfg.low, cfg.high))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub k_max: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Standard deviation of the latent prior ρ.
    pub prior_std: f64,
    pub tpe: TpeConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            k_max: 100,
            alpha: 0.01,
            beta: (-5.0f64).exp(),
            gamma: 1.0,
            prior_std: 1.0,
            tpe: TpeConfig::default(),
        }
    }
}

/// One evaluated latent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub k: usize,
    pub z: f64,
    pub j: f64,
    pub r: f64,
    pub kl_penalty: f64,
}

/// `KL(N(z, I) ‖ N(0, σ²I))`.
pub fn latent_kl(z: &[f64], prior_std: f64) -> f64 {
    let s2 = prior_std * prior_std;
    z.iter()
        .map(|zi| prior_std.ln() + (1.0 + zi * zi) / (2.0 * s2) - 0.5)
        .sum()
}

/// `J(z) = R(z) - β KL`, where `R` is the soft return of the deterministic
/// rollout `a = μ(s, z)` and `log π` is the stochastic policy's density at
/// that action.
pub fn evaluate_latent<E: Environment + ?Sized>(
    policy: &PolicyNet,
    env: &mut E,
    context: &ContextVector,
    z: &[f64],
    cfg: &GenerationConfig,
    env_seed: u64,
) -> Result<Trial, EnvError> {
    let mut obs = env.reset(context, env_seed)?;
    let mut r = 0.0;
    let mut discount = 1.0;
    for _ in 0..env.horizon() {
        let a = policy.mean_action(&obs, z);
        let lp = if cfg.alpha == 0.0 {
            0.0
        } else {
            policy.log_prob_of(&obs, z, &a)
        };
        let step = env.step(&a)?;
        r += discount * (step.reward - cfg.alpha * lp);
        discount *= cfg.gamma;
        if step.done() {
            break;
        }
        obs = step.obs;
    }
    let kl_penalty = cfg.beta * latent_kl(z, cfg.prior_std);
    Ok(Trial {
        k: 0,
        z: z.first().copied().unwrap_or(0.0),
        j: r - kl_penalty,
        r,
        kl_penalty,
    })
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub best: Trial,
    pub trials: Vec<Trial>,
    /// Environment seed shared by every trial.
    pub env_seed: u64,
}

/// Undiscounted task reward of the deterministic rollout `a = μ(s, z)`.
pub fn deterministic_return<E: Environment + ?Sized>(
    policy: &PolicyNet,
    env: &mut E,
    context: &ContextVector,
    z: &[f64],
    env_seed: u64,
) -> Result<f64, EnvError> {
    let rows = crate::envs::rollout(env, context, env_seed, |s| policy.mean_action(s, z))?;
    Ok(rows.iter().map(|r| r.reward).sum())
}

/// TPE search over a scalar latent for one context. Every trial uses the same
/// environment seed, so `J` is a deterministic function of `z`.
pub fn skill_generate<E: Environment + ?Sized>(
    policy: &PolicyNet,
    env: &mut E,
    context: &ContextVector,
    cfg: &GenerationConfig,
    seed: u64,
) -> Result<Generation, TpeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env_seed: u64 = rng.random();
    let mut state = TpeState::new(cfg.tpe.clone(), rng.random())?;
    let mut trials = Vec::with_capacity(cfg.k_max);
    let mut last_err = None;
    for k in 0..cfg.k_max {
        let z = state.suggest();
        match evaluate_latent(policy, env, context, &[z], cfg, env_seed) {
            Ok(t) if t.j.is_finite() => {
                state.observe(z, t.j)?;
                trials.push(Trial { k, ..t });
            }
            Ok(t) => {
                last_err = Some(EnvError::NonFinite {
                    env: "generation",
                    what: if t.r.is_finite() { "kl" } else { "return" },
                })
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = trials.iter().copied().reduce(|a, b| if b.j > a.j { b } else { a });
    match (best, last_err) {
        (Some(best), _) => Ok(Generation { best, trials, env_seed }),
        (None, Some(last)) => Err(TpeError::AllFailed {
            attempts: cfg.k_max,
            last,
            partial: trials,
        }),
        (None, None) => Err(TpeError::AllFailed {
            attempts: 0,
            last: EnvError::Unknown("no trials requested".into()),
            partial: trials,
        }),
    }
}

/// CSV `k,z,J,R,kl_penalty` followed by `best,z*,J*`.
pub fn write_history_csv<W: Write>(w: &mut W, g: &Generation) -> std::io::Result<()> {
    writeln!(w, "k,z,J,R,kl_penalty")?;
    for t in &g.trials {
        writeln!(
            w,
            "{},{},{},{},{}",
            t.k,
            fmt_float(t.z),
            fmt_float(t.j),
            fmt_float(t.r),
            fmt_float(t.kl_penalty)
        )?;
    }
    writeln!(w, "best,{},{}", fmt_float(g.best.z), fmt_float(g.best.j))
}

/// Standard one-dimensional maximization problems on `[-3, 3]`.
pub mod test_functions {
    use std::f64::consts::{E, PI};

    pub fn quadratic(z: f64) -> f64 {
        -(z - 0.3).powi(2)
    }

    /// Forrester function on `x = (z + 3) / 6 ∈ [0, 1]`, negated.
    pub fn forrester(z: f64) -> f64 {
        let x = (z + 3.0) / 6.0;
        -((6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin())
    }

    /// Gramacy-Lee function on `x = 0.5 + (z + 3) / 3 ∈ [0.5, 2.5]`, negated.
    pub fn gramacy_lee(z: f64) -> f64 {
        let x = 0.5 + (z + 3.0) / 3.0;
        -((10.0 * PI * x).sin() / (2.0 * x) + (x - 1.0).powi(4))
    }

    /// Rastrigin, optimum shifted to `z = 0.5`, negated.
    pub fn rastrigin(z: f64) -> f64 {
        let x = z - 0.5;
        -(10.0 + x * x - 10.0 * (2.0 * PI * x).cos())
    }

    /// Ackley, optimum shifted to `z = -1.1`, negated.
    pub fn ackley(z: f64) -> f64 {
        let x = z + 1.1;
        -(-20.0 * (-0.2 * x.abs()).exp() - (2.0 * PI * x).cos().exp() + 20.0 + E)
    }

    pub type Objective = fn(f64) -> f64;

    pub const ALL: [(&str, Objective); 5] = [
        ("quadratic", quadratic),
        ("forrester", forrester),
        ("gramacy_lee", gramacy_lee),
        ("rastrigin", rastrigin),
        ("ackley", ackley),
    ];
}

/// Best of `trials` uniform draws in the bounds.
pub fn random_search<F: Fn(f64) -> f64>(cfg: &TpeConfig, trials: usize, seed: u64, f: F) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| f(rng.random_range(cfg.low..=cfg.high)))
        .fold(f64::NEG_INFINITY, f64::max)
}
