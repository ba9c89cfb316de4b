//! Candidate scoring with the KL-regularized return index, argmax selection,
//! and bootstrap top-one regret.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{ContextVector, EnvError, Environment};
use crate::io::fmt_float;
use crate::networks::{AgentParams, EncoderNet, PolicyNet};
use crate::sac::EpochLog;

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("context set is empty")]
    EmptyContextSet,
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("pool size must be at least 1")]
    PoolSize,
    #[error("{0} index values but {1} held-out returns")]
    LengthMismatch(usize, usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Weights of the selection index. The same values are used for every
/// candidate and every environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Rollouts averaged per context.
    pub rollouts: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: (-5.0f64).exp(),
            gamma: 0.99,
            rollouts: 5,
        }
    }
}

/// Per-context evaluation terms, averaged over the rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextScore {
    /// Mean soft return `R(c)`.
    pub soft_return: f64,
    /// Mean `log q(z|c) - log ρ(z)` at the drawn latents.
    pub log_ratio: f64,
}

/// `R = Σ γᵗ (r_t - α log π(a_t|s_t, z))` for one stochastic rollout at a
/// fixed latent.
#[allow(clippy::too_many_arguments)]
pub fn soft_return<E, R>(
    policy: &PolicyNet,
    env: &mut E,
    context: &ContextVector,
    z: &[f64],
    alpha: f64,
    gamma: f64,
    env_seed: u64,
    rng: &mut R,
) -> Result<f64, EnvError>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    let mut obs = env.reset(context, env_seed)?;
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..env.horizon() {
        let (a, lp) = policy.act_random(&obs, z, rng);
        let step = env.step(&a)?;
        total += discount * (step.reward - alpha * lp);
        discount *= gamma;
        if step.done() {
            break;
        }
        obs = step.obs;
    }
    Ok(total)
}

/// Scores one context: `rollouts` draws of `z ~ q(z|c)`, each used for both
/// the log-ratio term and its rollout.
pub fn score_context<E: Environment + ?Sized>(
    policy: &PolicyNet,
    encoder: &EncoderNet,
    env: &mut E,
    context: &ContextVector,
    cfg: &IndexConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ContextScore, EnvError> {
    let m = cfg.rollouts.max(1);
    let (mut ret, mut ratio) = (0.0, 0.0);
    for _ in 0..m {
        let z = encoder.draw(&context.0, rng);
        ratio += encoder.log_ratio(&context.0, &z);
        let env_seed = rng.random();
        ret += soft_return(policy, env, context, &z, cfg.alpha, cfg.gamma, env_seed, rng)?;
    }
    Ok(ContextScore {
        soft_return: ret / m as f64,
        log_ratio: ratio / m as f64,
    })
}

/// `l = mean_c [β log(q(z|c)/ρ(z)) + R(c)]` from stored per-context terms.
pub fn index_from_scores(scores: &[ContextScore], beta: f64) -> Result<f64, SelectionError> {
    if scores.is_empty() {
        return Err(SelectionError::EmptyContextSet);
    }
    let l = scores.iter().map(|s| beta * s.log_ratio + s.soft_return).sum::<f64>() / scores.len() as f64;
    if !l.is_finite() {
        return Err(SelectionError::NonFinite("selection index"));
    }
    Ok(l)
}

/// Evaluates a candidate on the fixed context set and returns its index with
/// the per-context terms.
pub fn selection_index<E: Environment + ?Sized>(
    params: &AgentParams,
    env: &mut E,
    contexts: &[ContextVector],
    cfg: &IndexConfig,
    seed: u64,
) -> Result<(f64, Vec<ContextScore>), SelectionError> {
    if contexts.is_empty() {
        return Err(SelectionError::EmptyContextSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = contexts
        .iter()
        .map(|c| score_context(&params.policy, &params.encoder, env, c, cfg, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let l = index_from_scores(&scores, cfg.beta)?;
    Ok((l, scores))
}

/// A trained candidate with its selection record.
#[derive(Clone, Debug)]
pub struct CandidatePolicy {
    pub seed: u64,
    pub params: AgentParams,
    pub scores: Vec<ContextScore>,
    pub index: f64,
    pub curve: Vec<EpochLog>,
}

impl CandidatePolicy {
    pub fn mean_return(&self) -> f64 {
        self.scores.iter().map(|s| s.soft_return).sum::<f64>() / self.scores.len().max(1) as f64
    }
}

/// Position of the highest `(index, seed)` pair; equal indices go to the lower
/// seed.
pub fn argmax_index(indices: &[f64], seeds: &[u64]) -> Option<usize> {
    (0..indices.len()).reduce(|best, i| {
        let better = indices[i] > indices[best] || (indices[i] == indices[best] && seeds[i] < seeds[best]);
        if better {
            i
        } else {
            best
        }
    })
}

/// Argmax of the index over candidates.
pub fn select_policy(candidates: &[CandidatePolicy]) -> Result<usize, SelectionError> {
    let idx: Vec<f64> = candidates.iter().map(|c| c.index).collect();
    let seeds: Vec<u64> = candidates.iter().map(|c| c.seed).collect();
    argmax_index(&idx, &seeds).ok_or(SelectionError::NoCandidates)
}

/// Top-one regret of index-based versus uniform-random selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub pools: usize,
    pub pool_size: usize,
    pub index_regret: f64,
    pub random_regret: f64,
    pub seed: u64,
    /// Per-pool `(index regret, expected random regret)`.
    #[serde(skip)]
    pub per_pool: Vec<(f64, f64)>,
}

/// Draws `pools` pools of `pool_size` candidates with replacement and
/// measures `|R_best - R_selected|` in each.
///
/// The random baseline uses the exact expectation over a uniform pick within
/// each pool rather than a single draw.
pub fn top_one_regret(
    indices: &[f64],
    seeds: &[u64],
    heldout_returns: &[f64],
    pools: usize,
    pool_size: usize,
    seed: u64,
) -> Result<RegretReport, SelectionError> {
    if pool_size < 1 {
        return Err(SelectionError::PoolSize);
    }
    if indices.len() != heldout_returns.len() || seeds.len() != indices.len() {
        return Err(SelectionError::LengthMismatch(indices.len(), heldout_returns.len()));
    }
    if indices.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_pool = Vec::with_capacity(pools);
    for _ in 0..pools {
        let members: Vec<usize> = (0..pool_size).map(|_| rng.random_range(0..indices.len())).collect();
        per_pool.push(pool_regret(indices, seeds, heldout_returns, &members));
    }
    let n = pools.max(1) as f64;
    Ok(RegretReport {
        pools,
        pool_size,
        index_regret: per_pool.iter().map(|p| p.0).sum::<f64>() / n,
        random_regret: per_pool.iter().map(|p| p.1).sum::<f64>() / n,
        seed,
        per_pool,
    })
}

/// `(index regret, expected random regret)` for one pool of candidate
/// positions.
pub fn pool_regret(indices: &[f64], seeds: &[u64], returns: &[f64], members: &[usize]) -> (f64, f64) {
    let best = members.iter().map(|&m| returns[m]).fold(f64::NEG_INFINITY, f64::max);
    let idx: Vec<f64> = members.iter().map(|&m| indices[m]).collect();
    let sds: Vec<u64> = members.iter().map(|&m| seeds[m]).collect();
    let chosen = members[argmax_index(&idx, &sds).expect("pool is non-empty")];
    let random = members.iter().map(|&m| best - returns[m]).sum::<f64>() / members.len() as f64;
    (best - returns[chosen], random)
}

/// Lower `level` quantile of the bootstrap distribution of the mean of
/// `values`, from `resamples` resamples.
pub fn bootstrap_mean_quantile(values: &[f64], level: f64, resamples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let pos = ((resamples as f64 - 1.0) * level).round() as usize;
    means[pos.min(resamples - 1)]
}

/// CSV `candidate,seed,l_k,mean_R,selected`.
pub fn write_selection_csv<W: Write>(
    w: &mut W,
    candidates: &[CandidatePolicy],
    selected: usize,
) -> std::io::Result<()> {
    writeln!(w, "candidate,seed,l_k,mean_R,selected")?;
    for (k, c) in candidates.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            k,
            c.seed,
            fmt_float(c.index),
            fmt_float(c.mean_return()),
            u8::from(k == selected)
        )?;
    }
    Ok(())
}

/// CSV `method,N,pool_size,mean_regret` with rows `index` and `random`.
pub fn write_regret_csv<W: Write>(w: &mut W, r: &RegretReport) -> std::io::Result<()> {
    writeln!(w, "method,N,pool_size,mean_regret")?;
    writeln!(w, "index,{},{},{}", r.pools, r.pool_size, fmt_float(r.index_regret))?;
    writeln!(w, "random,{},{},{}", r.pools, r.pool_size, fmt_float(r.random_regret))?;
    Ok(())
}
