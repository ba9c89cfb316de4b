use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, ContextSpec, ContextVector, EnvError, Environment, Step};

pub const DT: f64 = 0.05;
pub const DRAG: f64 = 0.1;
pub const HORIZON: usize = 200;
pub const CONTROL_COST: f64 = 0.05;
/// Observations are `[p, v]` multiplied by this factor.
pub const OBS_SCALE: f64 = 0.1;
const INIT_VELOCITY_JITTER: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineRunnerMode {
    /// Context `[dir]` with `dir ∈ {-1, +1}`: run that way as fast as possible.
    Direction,
    /// Context `[v_target]` with `v_target ∈ [0, 3]`: hold that velocity.
    Velocity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineRunnerState {
    pub p: f64,
    pub v: f64,
    pub t: usize,
}

/// 1-D double integrator with linear drag.
#[derive(Clone, Debug)]
pub struct LineRunner {
    mode: LineRunnerMode,
    spec: ContextSpec,
    state: LineRunnerState,
    context: f64,
    finished: bool,
}

impl LineRunner {
    pub fn new(mode: LineRunnerMode) -> Self {
        let spec = match mode {
            LineRunnerMode::Direction => ContextSpec::bundled("linerunner_dir"),
            LineRunnerMode::Velocity => ContextSpec::bundled("linerunner_vel"),
        }
        .expect("bundled spec is valid");
        Self {
            mode,
            spec,
            state: LineRunnerState { p: 0.0, v: 0.0, t: 0 },
            context: 0.0,
            finished: true,
        }
    }

    pub fn mode(&self) -> LineRunnerMode {
        self.mode
    }

    pub fn state(&self) -> LineRunnerState {
        self.state
    }

    pub fn observe(state: &LineRunnerState) -> Vec<f64> {
        vec![OBS_SCALE * state.p, OBS_SCALE * state.v]
    }

    /// Pure transition: `(s', r, done)` for a force clamped to `[-1, 1]`.
    pub fn transition(
        mode: LineRunnerMode,
        state: &LineRunnerState,
        force: f64,
        context: f64,
    ) -> Result<(LineRunnerState, f64, bool), EnvError> {
        let f = force.clamp(-1.0, 1.0);
        let v = state.v + (f - DRAG * state.v) * DT;
        let p = state.p + v * DT;
        let reward = match mode {
            LineRunnerMode::Direction => context * v - CONTROL_COST * f * f,
            LineRunnerMode::Velocity => -(v - context).abs() - CONTROL_COST * f * f,
        };
        if !(v.is_finite() && p.is_finite() && reward.is_finite()) {
            return Err(EnvError::NonFinite {
                env: "line_runner",
                what: "state",
            });
        }
        let next = LineRunnerState { p, v, t: state.t + 1 };
        Ok((next, reward, next.t >= HORIZON))
    }
}

impl Environment for LineRunner {
    fn name(&self) -> &'static str {
        match self.mode {
            LineRunnerMode::Direction => "linerunner_dir",
            LineRunnerMode::Velocity => "linerunner_vel",
        }
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn context_spec(&self) -> &ContextSpec {
        &self.spec
    }

    fn reset(&mut self, context: &ContextVector, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.spec.check(context)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = LineRunnerState {
            p: 0.0,
            v: rng.random_range(-INIT_VELOCITY_JITTER..INIT_VELOCITY_JITTER),
            t: 0,
        };
        self.context = context.0[0];
        self.finished = false;
        Ok(Self::observe(&self.state))
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        if self.finished {
            return Err(EnvError::Finished { env: "line_runner" });
        }
        check_action("line_runner", action, 1)?;
        let (next, reward, done) = Self::transition(self.mode, &self.state, action[0], self.context)?;
        self.state = next;
        self.finished = done;
        Ok(Step {
            obs: Self::observe(&next),
            reward,
            terminal: false,
            truncated: done,
        })
    }
}
