//! Paddle-and-ball heading task.
//!
//! A ball is thrown from a context-dependent position so that it passes the
//! desired hit point `HIT_POINT` after `ARRIVAL` seconds. The paddle, driven
//! by 2-D acceleration commands, must return it along the ballistic path that
//! reaches a context-dependent goal `FLIGHT` seconds after the hit. The ball
//! moves under gravity only; contact with the paddle reflects the normal
//! velocity component relative to the paddle with the context restitution and
//! adds the paddle's tangential velocity to the ball's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, ContextSpec, ContextVector, EnvError, Environment, Step};

pub const DT: f64 = 0.025;
pub const HORIZON: usize = 100;
pub const GRAVITY: f64 = 9.8;
/// Paddle acceleration for a unit action, m/s².
pub const ACCEL_SCALE: f64 = 8.0;
pub const PADDLE_HALF_WIDTH: f64 = 0.25;
pub const PADDLE_START: [f64; 2] = [0.0, 0.0];
pub const HIT_POINT: [f64; 2] = [0.0, 0.2];
/// Time from throw to the desired hit, s.
pub const ARRIVAL: f64 = 1.0;
/// Time from the desired hit to the goal, s.
pub const FLIGHT: f64 = 1.0;
pub const BALL_DEVIATION_LIMIT: f64 = 0.5;
pub const PADDLE_DEVIATION_LIMIT: f64 = 1.0;
pub const LAMBDA_TRACK: f64 = 10.0;
pub const LAMBDA_EFFORT: f64 = 5e-3;
const PADDLE_JITTER: f64 = 0.02;

/// Context entries in bundled-spec order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallContext {
    pub restitution: f64,
    pub goal: [f64; 2],
    pub throw: [f64; 2],
}

impl BallContext {
    pub fn from_vector(c: &ContextVector) -> Self {
        let v = &c.0;
        Self {
            restitution: v[0],
            goal: [v[1], v[2]],
            throw: [v[3], v[4]],
        }
    }

    /// Initial ball velocity that reaches `HIT_POINT` at `ARRIVAL`.
    pub fn throw_velocity(&self) -> [f64; 2] {
        launch_velocity(self.throw, HIT_POINT, ARRIVAL)
    }

    /// Velocity leaving `HIT_POINT` that reaches the goal after `FLIGHT`.
    pub fn return_velocity(&self) -> [f64; 2] {
        launch_velocity(HIT_POINT, self.goal, FLIGHT)
    }

    /// Desired ball position at time `t` after the throw.
    pub fn target(&self, t: f64) -> [f64; 2] {
        if t <= ARRIVAL {
            ballistic_position(self.throw, self.throw_velocity(), t)
        } else {
            ballistic_position(HIT_POINT, self.return_velocity(), t - ARRIVAL)
        }
    }
}

fn launch_velocity(from: [f64; 2], to: [f64; 2], duration: f64) -> [f64; 2] {
    [
        (to[0] - from[0]) / duration,
        (to[1] - from[1] + 0.5 * GRAVITY * duration * duration) / duration,
    ]
}

fn ballistic_position(p: [f64; 2], v: [f64; 2], t: f64) -> [f64; 2] {
    [p[0] + v[0] * t, p[1] + v[1] * t - 0.5 * GRAVITY * t * t]
}

/// Exact constant-gravity update of a free ball over `dt`.
pub fn ballistic_advance(pos: [f64; 2], vel: [f64; 2], dt: f64) -> ([f64; 2], [f64; 2]) {
    (ballistic_position(pos, vel, dt), [vel[0], vel[1] - GRAVITY * dt])
}

/// Tracking reward for a ball position, target, and (clamped) action.
pub fn reward(ball: [f64; 2], target: [f64; 2], action: [f64; 2]) -> f64 {
    let d2 = (ball[0] - target[0]).powi(2) + (ball[1] - target[1]).powi(2);
    (-LAMBDA_TRACK * d2).exp() - LAMBDA_EFFORT * (action[0] * action[0] + action[1] * action[1])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallBounceState {
    pub paddle_pos: [f64; 2],
    pub paddle_vel: [f64; 2],
    pub ball_pos: [f64; 2],
    pub ball_vel: [f64; 2],
    pub t: usize,
    pub contacts: usize,
}

impl BallBounceState {
    pub fn observe(&self) -> Vec<f64> {
        let mut o = Vec::with_capacity(8);
        o.extend_from_slice(&self.paddle_pos);
        o.extend_from_slice(&self.paddle_vel);
        o.extend_from_slice(&self.ball_pos);
        o.extend_from_slice(&self.ball_vel);
        o
    }

    pub fn time(&self) -> f64 {
        self.t as f64 * DT
    }
}

#[derive(Clone, Debug)]
pub struct BallBounce {
    spec: ContextSpec,
    state: BallBounceState,
    context: BallContext,
    finished: bool,
}

impl Default for BallBounce {
    fn default() -> Self {
        Self::new()
    }
}

impl BallBounce {
    pub fn new() -> Self {
        Self {
            spec: ContextSpec::bundled("ballbounce32").expect("bundled spec is valid"),
            state: Self::initial_state(
                &BallContext {
                    restitution: 1.0,
                    goal: [0.0; 2],
                    throw: [0.0; 2],
                },
                PADDLE_START,
            ),
            context: BallContext {
                restitution: 1.0,
                goal: [0.0; 2],
                throw: [0.0; 2],
            },
            finished: true,
        }
    }

    pub fn state(&self) -> BallBounceState {
        self.state
    }

    pub fn context(&self) -> BallContext {
        self.context
    }

    pub fn initial_state(ctx: &BallContext, paddle: [f64; 2]) -> BallBounceState {
        BallBounceState {
            paddle_pos: paddle,
            paddle_vel: [0.0; 2],
            ball_pos: ctx.throw,
            ball_vel: ctx.throw_velocity(),
            t: 0,
            contacts: 0,
        }
    }

    /// Pure transition. Returns `(s', r, terminal)`; reaching the horizon is
    /// not terminal.
    pub fn transition(
        state: &BallBounceState,
        action: [f64; 2],
        ctx: &BallContext,
    ) -> Result<(BallBounceState, f64, bool), EnvError> {
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        // Paddle: semi-implicit Euler, so it moves linearly within the step.
        let pv = [
            state.paddle_vel[0] + ACCEL_SCALE * a[0] * DT,
            state.paddle_vel[1] + ACCEL_SCALE * a[1] * DT,
        ];
        let p0 = state.paddle_pos;
        let pp = [p0[0] + pv[0] * DT, p0[1] + pv[1] * DT];

        let (b0, v0) = (state.ball_pos, state.ball_vel);
        let mut contacts = state.contacts;
        let (ball_pos, ball_vel) = match contact_time(p0, pv, b0, v0) {
            Some(s) => {
                let (bc, vc) = ballistic_advance(b0, v0, s);
                let e = ctx.restitution;
                let out = [vc[0] + pv[0], pv[1] - e * (vc[1] - pv[1])];
                contacts += 1;
                ballistic_advance(bc, out, DT - s)
            }
            None => ballistic_advance(b0, v0, DT),
        };

        let next = BallBounceState {
            paddle_pos: pp,
            paddle_vel: pv,
            ball_pos,
            ball_vel,
            t: state.t + 1,
            contacts,
        };
        if next.observe().iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite {
                env: "ball_bounce",
                what: "state",
            });
        }
        let target = ctx.target(next.time());
        let r = reward(ball_pos, target, a);
        let ball_dev = (ball_pos[0] - target[0]).hypot(ball_pos[1] - target[1]);
        let paddle_dev = (pp[0] - HIT_POINT[0]).hypot(pp[1] - HIT_POINT[1]);
        let terminal = ball_dev > BALL_DEVIATION_LIMIT || paddle_dev > PADDLE_DEVIATION_LIMIT;
        Ok((next, r, terminal))
    }
}

/// Time within the step at which a descending ball crosses the paddle top.
fn contact_time(p0: [f64; 2], pv: [f64; 2], b0: [f64; 2], v0: [f64; 2]) -> Option<f64> {
    let d0 = b0[1] - p0[1];
    if d0 <= 0.0 {
        return None;
    }
    // d(s) = d0 + rel * s - g s² / 2 has exactly one positive root.
    let rel = v0[1] - pv[1];
    let s = (rel + (rel * rel + 2.0 * GRAVITY * d0).sqrt()) / GRAVITY;
    if s > DT {
        return None;
    }
    let bx = b0[0] + v0[0] * s;
    let px = p0[0] + pv[0] * s;
    ((bx - px).abs() <= PADDLE_HALF_WIDTH).then_some(s)
}

impl Environment for BallBounce {
    fn name(&self) -> &'static str {
        "ballbounce32"
    }

    fn obs_dim(&self) -> usize {
        8
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn context_spec(&self) -> &ContextSpec {
        &self.spec
    }

    fn reset(&mut self, context: &ContextVector, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.spec.check(context)?;
        self.context = BallContext::from_vector(context);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = [
            rng.random_range(-PADDLE_JITTER..PADDLE_JITTER),
            rng.random_range(-PADDLE_JITTER..PADDLE_JITTER),
        ];
        self.state = Self::initial_state(
            &self.context,
            [PADDLE_START[0] + jitter[0], PADDLE_START[1] + jitter[1]],
        );
        self.finished = false;
        Ok(self.state.observe())
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        if self.finished {
            return Err(EnvError::Finished { env: "ball_bounce" });
        }
        check_action("ball_bounce", action, 2)?;
        let (next, reward, terminal) = Self::transition(&self.state, [action[0], action[1]], &self.context)?;
        self.state = next;
        let truncated = !terminal && next.t >= HORIZON;
        self.finished = terminal || truncated;
        Ok(Step {
            obs: next.observe(),
            reward,
            terminal,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rollout;

    fn ctx(e: f64, goal: [f64; 2], throw: [f64; 2]) -> ContextVector {
        ContextVector(vec![e, goal[0], goal[1], throw[0], throw[1]])
    }

    fn nominal() -> ContextVector {
        ctx(0.9, [0.8, 0.6], [-0.8, 0.6])
    }

    #[test]
    fn ball_on_desired_path_with_zero_action_scores_one() {
        let c = BallContext::from_vector(&nominal());
        assert_eq!(reward(c.target(0.3), c.target(0.3), [0.0, 0.0]), 1.0);

        let mut env = BallBounce::new();
        env.reset(&nominal(), 0).unwrap();
        let s = env.step(&[0.0, 0.0]).unwrap();
        assert!((s.reward - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_offset_scores_exp_minus_ten() {
        assert_eq!(reward([1.0, 0.0], [0.0, 0.0], [0.0, 0.0]), (-10.0f64).exp());
        assert!((reward([0.3, 0.4], [0.3, 1.4], [0.0, 0.0]) - (-10.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn initial_ball_position_is_throw_in_context() {
        let mut env = BallBounce::new();
        for throw in [[-0.8, 0.6], [-1.2, 1.0], [-1.0, 0.8]] {
            let obs = env.reset(&ctx(0.6, [1.2, 0.2], throw), 7).unwrap();
            assert_eq!(&obs[4..6], &throw);
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let mut env = BallBounce::new();
        let a = env.reset(&nominal(), 11).unwrap();
        let b = env.reset(&nominal(), 11).unwrap();
        assert_eq!(a, b);
        let c = env.reset(&nominal(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn throw_apex_matches_closed_form() {
        let c = BallContext::from_vector(&ctx(0.9, [0.8, 0.6], [-1.2, 1.0]));
        let v0 = c.throw_velocity();
        let apex = c.throw[1] + v0[1] * v0[1] / (2.0 * GRAVITY);
        for dt in [DT, DT / 10.0] {
            let (mut p, mut v) = (c.throw, v0);
            let mut best: f64 = p[1];
            let steps = (ARRIVAL / dt).round() as usize;
            for _ in 0..steps {
                (p, v) = ballistic_advance(p, v, dt);
                best = best.max(p[1]);
                // apex implied by the integrated state
                let implied = p[1] + v[1] * v[1] / (2.0 * GRAVITY);
                assert!((implied - apex).abs() < 1e-6);
            }
            // sampled maximum approaches the apex from below at O(dt²)
            assert!(apex - best >= -1e-12);
            assert!(apex - best <= GRAVITY * dt * dt / 8.0 + 1e-12);
            // the ball passes the desired hit point on schedule
            assert!((p[0] - HIT_POINT[0]).abs() < 1e-9 && (p[1] - HIT_POINT[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn free_flight_conserves_energy() {
        let energy = |p: [f64; 2], v: [f64; 2]| 0.5 * (v[0] * v[0] + v[1] * v[1]) + GRAVITY * p[1];
        let (mut p, mut v) = ([0.0, 2.0], [1.0, 3.0]);
        let e0 = energy(p, v);
        for _ in 0..100 {
            (p, v) = ballistic_advance(p, v, DT);
        }
        assert!(((energy(p, v) - e0) / e0).abs() < 1e-3);

        // Through the environment with e = 1 while the paddle dives away.
        let c = BallContext::from_vector(&ctx(0.9, [0.8, 0.6], [-0.8, 1.0]));
        let mut s = BallBounce::initial_state(&c, PADDLE_START);
        let e0 = energy(s.ball_pos, s.ball_vel);
        let c1 = BallContext { restitution: 1.0, ..c };
        for _ in 0..HORIZON {
            (s, _, _) = BallBounce::transition(&s, [1.0, -1.0], &c1).unwrap();
        }
        assert_eq!(s.contacts, 0);
        assert!(((energy(s.ball_pos, s.ball_vel) - e0) / e0).abs() < 1e-3);
    }

    #[test]
    fn contact_reflects_with_restitution() {
        // Static paddle under a ball falling straight down.
        let c = BallContext::from_vector(&ctx(0.6, [0.8, 0.6], [-0.8, 0.6]));
        let s = BallBounceState {
            paddle_pos: [0.0, 0.0],
            paddle_vel: [0.0, 0.0],
            ball_pos: [0.0, 0.01],
            ball_vel: [0.3, -2.0],
            t: 40,
            contacts: 0,
        };
        let (n, _, _) = BallBounce::transition(&s, [0.0, 0.0], &c).unwrap();
        assert_eq!(n.contacts, 1);
        let s_hit = contact_time(s.paddle_pos, [0.0, 0.0], s.ball_pos, s.ball_vel).unwrap();
        let vy_hit = -2.0 - GRAVITY * s_hit;
        let expected_vy = -0.6 * vy_hit - GRAVITY * (DT - s_hit);
        assert!((n.ball_vel[1] - expected_vy).abs() < 1e-12);
        assert!((n.ball_vel[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn goal_context_never_changes_observations() {
        let actions: Vec<[f64; 2]> = (0..HORIZON)
            .map(|k| [((k as f64) * 0.37).sin(), ((k as f64) * 0.11).cos() * 0.5])
            .collect();
        let run = |c: ContextVector| {
            let mut env = BallBounce::new();
            let mut k = 0;
            rollout(&mut env, &c, 3, |_| {
                let a = actions[k];
                k += 1;
                a.to_vec()
            })
            .unwrap()
        };
        let a = run(ctx(0.9, [0.8, 0.2], [-1.2, 0.6]));
        let b = run(ctx(0.9, [1.2, 0.6], [-1.2, 0.6]));
        let n = a.len().min(b.len());
        assert!(n > 1);
        for k in 0..n {
            assert_eq!(a[k].obs, b[k].obs);
        }
    }

    #[test]
    fn reward_bounds_hold() {
        let mut env = BallBounce::new();
        let spec = env.context_spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for ep in 0..20 {
            let c = spec.sample(&mut rng);
            env.reset(&c, ep).unwrap();
            loop {
                let a = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
                let s = env.step(&a).unwrap();
                assert!(s.reward <= 1.0 && s.reward > -2.0 * LAMBDA_EFFORT);
                if s.done() {
                    break;
                }
            }
        }
    }

    #[test]
    fn straying_paddle_terminates() {
        let mut env = BallBounce::new();
        env.reset(&nominal(), 0).unwrap();
        let mut terminal = false;
        for _ in 0..HORIZON {
            let s = env.step(&[1.0, 0.0]).unwrap();
            if s.terminal {
                terminal = true;
                assert!((env.state().paddle_pos[0] - HIT_POINT[0]).abs() > PADDLE_DEVIATION_LIMIT * 0.9);
                break;
            }
        }
        assert!(terminal);
    }
}
