//! Contextual MDPs: context spaces, the environment interface, and two
//! deterministic desk-scale environments.

mod ball_bounce;
mod context;
mod line_runner;

use std::io::Write;

pub use ball_bounce::{BallBounce, BallBounceState};
pub use context::{ContextDim, ContextKind, ContextSpec, ContextVector, SpecError};
pub use line_runner::{LineRunner, LineRunnerMode, LineRunnerState};

use crate::io::fmt_float;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("{env}: non-finite {what}")]
    NonFinite { env: &'static str, what: &'static str },
    #[error("{env}: action has {found} entries, expected {expected}")]
    ActionDim {
        env: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{env}: step called on a finished episode")]
    Finished { env: &'static str },
    #[error("unknown environment `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Context(#[from] SpecError),
}

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Absorbing termination: no bootstrapping past this transition.
    pub terminal: bool,
    /// Horizon reached without termination.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A contextual MDP with a fixed horizon.
///
/// The context is set at [`reset`](Environment::reset) and held for the whole
/// episode. Observations never include the context.
pub trait Environment: Send {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn context_spec(&self) -> &ContextSpec;
    fn reset(&mut self, context: &ContextVector, seed: u64) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError>;

    fn context_dim(&self) -> usize {
        self.context_spec().len()
    }
}

/// Runtime-selected environment.
#[derive(Clone, Debug)]
pub enum EnvInstance {
    LineRunner(LineRunner),
    BallBounce(BallBounce),
}

impl EnvInstance {
    /// Builds an environment by bundled name: `linerunner_dir`,
    /// `linerunner_vel`, or `ballbounce32`.
    pub fn by_name(name: &str) -> Result<Self, EnvError> {
        match name {
            "linerunner_dir" => Ok(Self::LineRunner(LineRunner::new(LineRunnerMode::Direction))),
            "linerunner_vel" => Ok(Self::LineRunner(LineRunner::new(LineRunnerMode::Velocity))),
            "ballbounce32" => Ok(Self::BallBounce(BallBounce::new())),
            other => Err(EnvError::Unknown(other.to_string())),
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            Self::LineRunner(e) => e,
            Self::BallBounce(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            Self::LineRunner(e) => e,
            Self::BallBounce(e) => e,
        }
    }
}

impl Environment for EnvInstance {
    fn name(&self) -> &'static str {
        self.inner().name()
    }
    fn obs_dim(&self) -> usize {
        self.inner().obs_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner().action_dim()
    }
    fn horizon(&self) -> usize {
        self.inner().horizon()
    }
    fn context_spec(&self) -> &ContextSpec {
        self.inner().context_spec()
    }
    fn reset(&mut self, context: &ContextVector, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.inner_mut().reset(context, seed)
    }
    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        self.inner_mut().step(action)
    }
}

/// One row of a recorded trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Runs one episode under `policy`, which maps an observation to an action.
pub fn rollout<E, P>(env: &mut E, context: &ContextVector, seed: u64, mut policy: P) -> Result<Vec<TraceRow>, EnvError>
where
    E: Environment + ?Sized,
    P: FnMut(&[f64]) -> Vec<f64>,
{
    let mut obs = env.reset(context, seed)?;
    let mut rows = Vec::with_capacity(env.horizon());
    for t in 0..env.horizon() {
        let action = policy(&obs);
        let step = env.step(&action)?;
        let done = step.done();
        rows.push(TraceRow {
            t,
            obs: std::mem::replace(&mut obs, step.obs),
            action,
            reward: step.reward,
            done,
        });
        if done {
            break;
        }
    }
    Ok(rows)
}

/// Writes a trajectory as CSV with header `t,s0..,a0..,r,done`.
pub fn write_trace_csv<W: Write>(w: &mut W, rows: &[TraceRow]) -> std::io::Result<()> {
    let (ns, na) = rows.first().map_or((0, 0), |r| (r.obs.len(), r.action.len()));
    let mut header = vec!["t".to_string()];
    header.extend((0..ns).map(|i| format!("s{i}")));
    header.extend((0..na).map(|i| format!("a{i}")));
    header.push("r".into());
    header.push("done".into());
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.t.to_string()];
        fields.extend(r.obs.iter().map(|&v| fmt_float(v)));
        fields.extend(r.action.iter().map(|&v| fmt_float(v)));
        fields.push(fmt_float(r.reward));
        fields.push(u8::from(r.done).to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub(crate) fn check_action(env: &'static str, action: &[f64], expected: usize) -> Result<(), EnvError> {
    if action.len() != expected {
        return Err(EnvError::ActionDim {
            env,
            expected,
            found: action.len(),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(EnvError::NonFinite { env, what: "action" });
    }
    Ok(())
}
