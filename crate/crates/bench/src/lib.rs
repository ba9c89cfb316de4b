//! Criterion benchmarks for the core hot paths (see `benches/`) and the
//! fixtures they share.

use mpf_core::networks::{AgentParams, Dims, NetConfig};
use mpf_core::sac::{Batch, Transition};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ball-bounce-sized agent: 4 observations, 2 actions, 5 context dims.
pub const DIMS: Dims = Dims {
    obs: 4,
    action: 2,
    context: 5,
    latent: 1,
};

pub fn net(hidden: usize) -> NetConfig {
    NetConfig {
        policy_hidden: vec![hidden, hidden],
        q_hidden: vec![hidden, hidden],
        encoder_hidden: vec![hidden / 2],
        ..NetConfig::default()
    }
}

pub fn params(hidden: usize, rng: &mut ChaCha8Rng) -> AgentParams {
    AgentParams::new(DIMS, &net(hidden), rng)
}

/// Uniform random transitions in `[-1, 1)`.
pub fn batch(rows: usize, rng: &mut ChaCha8Rng) -> Batch {
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let ts: Vec<Transition> = (0..rows)
        .map(|_| Transition {
            s: v(DIMS.obs),
            a: v(DIMS.action),
            r: v(1)[0],
            s_next: v(DIMS.obs),
            c: v(DIMS.context),
            done: false,
        })
        .collect();
    Batch::from_transitions(&ts.iter().collect::<Vec<_>>())
}
