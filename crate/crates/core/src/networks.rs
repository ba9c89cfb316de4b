//! Policy, context encoder, and action-value networks.
//!
//! Every network has two forward paths: a tape path used for training and
//! gradient checks, and a tape-free path (`eval_*`, `act`, `mean_action`)
//! used in rollouts. Tests pin the two to the same values.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, ContainerError, ParamBundle, Tape, Tensor, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Guard inside `log(1 - a² + SQUASH_EPS)`.
pub const SQUASH_EPS: f64 = 1e-6;
const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub policy_hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Encoder standard deviation δ.
    pub encoder_std: f64,
    /// Prior standard deviation σ of ρ(z) = N(0, σ²I).
    pub prior_std: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            policy_hidden: vec![256, 256],
            q_hidden: vec![256, 256],
            encoder_hidden: vec![64, 64],
            latent_dim: 1,
            encoder_std: 0.01,
            prior_std: 1.0,
        }
    }
}

/// Dimensions of the spaces a network stack connects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub obs: usize,
    pub action: usize,
    pub context: usize,
    pub latent: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Uniform fan-in init with variance `1 / fan_in`; zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (3.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            w: Tensor::from_parts(vec![fan_in, fan_out], w),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Tensor::zeros(&[fan_in, fan_out]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    fn eval_into(&self, x: &[f64], out: &mut Vec<f64>) {
        let n = self.out_dim();
        out.clear();
        out.extend_from_slice(self.b.data());
        let w = self.w.data();
        for (i, &xv) in x.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                *o += xv * wv;
            }
        }
    }
}

/// Layer parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Fully connected stack; tanh after every layer except (optionally) the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self {
            layers: sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").out_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    /// Records the parameters as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.params().into_iter().map(|p| tape.param(p.clone())).collect(),
        }
    }

    /// Records the parameters as constants (frozen networks, targets).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.params().into_iter().map(|p| tape.constant(p.clone())).collect(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        activate_last: bool,
    ) -> Result<Var, AutodiffError> {
        let n = self.layers.len();
        let mut h = x;
        for (i, pair) in bound.vars.chunks(2).enumerate() {
            h = tape.affine(h, pair[0], pair[1])?;
            if i + 1 < n || activate_last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    pub fn eval(&self, x: &[f64], activate_last: bool) -> Vec<f64> {
        let n = self.layers.len();
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.eval_into(&cur, &mut next);
            if i + 1 < n || activate_last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn write(&self, bundle: &mut ParamBundle, prefix: &str) -> Result<(), ContainerError> {
        for (i, l) in self.layers.iter().enumerate() {
            bundle.insert(format!("{prefix}.{i}.w"), l.w.clone())?;
            bundle.insert(format!("{prefix}.{i}.b"), l.b.clone())?;
        }
        Ok(())
    }

    fn read(bundle: &ParamBundle, prefix: &str) -> Result<Self, ContainerError> {
        let mut layers = Vec::new();
        while let Some(w) = bundle.get(&format!("{prefix}.{}.w", layers.len())) {
            if w.shape().len() != 2 {
                return Err(ContainerError::ShapeMismatch {
                    name: format!("{prefix}.{}.w", layers.len()),
                    expected: vec![0, 0],
                    found: w.shape().to_vec(),
                });
            }
            let b = bundle.take_shaped(&format!("{prefix}.{}.b", layers.len()), &[w.shape()[1]])?;
            layers.push(Linear { w: w.clone(), b });
        }
        if layers.is_empty() {
            return Err(ContainerError::Missing(format!("{prefix}.0.w")));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(ContainerError::ShapeMismatch {
                    name: prefix.to_string(),
                    expected: vec![pair[0].out_dim()],
                    found: vec![pair[1].in_dim()],
                });
            }
        }
        Ok(Self { layers })
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Standard-normal noise tensor of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), normal_vec(rng, n))
}

fn row_sum(tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
    let cols = tape.value(x).last_dim();
    let ones = tape.constant(Tensor::filled(&[cols, 1], 1.0));
    let zero = tape.constant(Tensor::zeros(&[1]));
    tape.affine(x, ones, zero)
}

fn clamp(tape: &mut Tape, x: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
    let shape = tape.value(x).shape().to_vec();
    let hi_t = tape.constant(Tensor::filled(&shape, hi));
    let neg_lo = tape.constant(Tensor::filled(&shape, -lo));
    let upper = tape.minimum(x, hi_t)?;
    let flipped = tape.neg(upper)?;
    let lower = tape.minimum(flipped, neg_lo)?;
    tape.neg(lower)
}

/// Tape outputs of a reparametrized policy draw.
#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    /// `[rows, action]`, squashed into (-1, 1).
    pub action: Var,
    /// `[rows, 1]`.
    pub log_prob: Var,
    /// Pre-squash mean `f(s, z)`.
    pub mean: Var,
    /// Clamped log standard deviation.
    pub log_std: Var,
}

/// Gaussian policy squashed through tanh: `a = tanh(f(s,z) + σ(s,z) ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub trunk: Mlp,
    pub mean_head: Linear,
    pub log_std_head: Linear,
}

#[derive(Clone, Debug)]
pub struct BoundPolicy {
    trunk: BoundParams,
    mean: (Var, Var),
    log_std: (Var, Var),
}

impl BoundPolicy {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.trunk.vars.clone();
        v.extend([self.mean.0, self.mean.1, self.log_std.0, self.log_std.1]);
        v
    }
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(obs: usize, latent: usize, hidden: &[usize], action: usize, rng: &mut R) -> Self {
        assert!(!hidden.is_empty(), "policy needs at least one hidden layer");
        let mut sizes = vec![obs + latent];
        sizes.extend_from_slice(hidden);
        let last = *hidden.last().unwrap();
        Self {
            trunk: Mlp {
                layers: sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
            },
            mean_head: Linear::init(last, action, rng),
            log_std_head: Linear::init(last, action, rng),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.mean_head.out_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.params();
        p.extend([
            &self.mean_head.w,
            &self.mean_head.b,
            &self.log_std_head.w,
            &self.log_std_head.b,
        ]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.params_mut();
        p.extend([
            &mut self.mean_head.w,
            &mut self.mean_head.b,
            &mut self.log_std_head.w,
            &mut self.log_std_head.b,
        ]);
        p
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundPolicy {
        BoundPolicy {
            trunk: self.trunk.bind(tape),
            mean: (
                tape.param(self.mean_head.w.clone()),
                tape.param(self.mean_head.b.clone()),
            ),
            log_std: (
                tape.param(self.log_std_head.w.clone()),
                tape.param(self.log_std_head.b.clone()),
            ),
        }
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundPolicy {
        BoundPolicy {
            trunk: self.trunk.bind_frozen(tape),
            mean: (
                tape.constant(self.mean_head.w.clone()),
                tape.constant(self.mean_head.b.clone()),
            ),
            log_std: (
                tape.constant(self.log_std_head.w.clone()),
                tape.constant(self.log_std_head.b.clone()),
            ),
        }
    }

    /// Reparametrized sample for a batch: `s: [rows, obs]`, `z: [rows, latent]`,
    /// `eps: [rows, action]`.
    pub fn sample(
        &self,
        tape: &mut Tape,
        bound: &BoundPolicy,
        s: Var,
        z: Var,
        eps: &Tensor,
    ) -> Result<PolicySample, AutodiffError> {
        let x = tape.concat(s, z)?;
        let h = self.trunk.forward(tape, &bound.trunk, x, true)?;
        let mean = tape.affine(h, bound.mean.0, bound.mean.1)?;
        let raw = tape.affine(h, bound.log_std.0, bound.log_std.1)?;
        let log_std = clamp(tape, raw, LOG_STD_MIN, LOG_STD_MAX)?;
        if tape.value(mean).shape() != eps.shape() {
            return Err(AutodiffError::Shape {
                op: "policy_sample",
                shapes: vec![tape.value(mean).shape().to_vec(), eps.shape().to_vec()],
            });
        }
        let std = tape.exp(log_std)?;
        let eps_v = tape.constant(eps.clone());
        let noise = tape.mul(std, eps_v)?;
        let pre = tape.add(mean, noise)?;
        let action = tape.tanh(pre)?;

        // log N(pre | f, σ) = -ε²/2 - log σ - log(2π)/2, elementwise
        let gauss_const = Tensor::from_parts(
            eps.shape().to_vec(),
            eps.data().iter().map(|e| -0.5 * e * e - HALF_LOG_TWO_PI).collect(),
        );
        let gc = tape.constant(gauss_const);
        let gauss = tape.sub(gc, log_std)?;
        let one = tape.constant(Tensor::filled(eps.shape(), 1.0 + SQUASH_EPS));
        let a2 = tape.square(action)?;
        let inner = tape.sub(one, a2)?;
        let corr = tape.log(inner)?;
        let elem = tape.sub(gauss, corr)?;
        let log_prob = row_sum(tape, elem)?;
        Ok(PolicySample {
            action,
            log_prob,
            mean,
            log_std,
        })
    }

    fn heads(&self, s: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(s.len() + z.len());
        x.extend_from_slice(s);
        x.extend_from_slice(z);
        let h = self.trunk.eval(&x, true);
        let mut mean = Vec::new();
        let mut log_std = Vec::new();
        self.mean_head.eval_into(&h, &mut mean);
        self.log_std_head.eval_into(&h, &mut log_std);
        log_std.iter_mut().for_each(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mean, log_std)
    }

    /// Single-state reparametrized draw; returns `(a, log π(a|s,z))`.
    pub fn act(&self, s: &[f64], z: &[f64], eps: &[f64]) -> (Vec<f64>, f64) {
        let (mean, log_std) = self.heads(s, z);
        let mut lp = 0.0;
        let a = mean
            .iter()
            .zip(&log_std)
            .zip(eps)
            .map(|((&m, &ls), &e)| {
                let a = (m + ls.exp() * e).tanh();
                lp += -0.5 * e * e - ls - HALF_LOG_TWO_PI - (1.0 - a * a + SQUASH_EPS).ln();
                a
            })
            .collect();
        (a, lp)
    }

    pub fn act_random<R: Rng + ?Sized>(&self, s: &[f64], z: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let eps = normal_vec(rng, self.action_dim());
        self.act(s, z, &eps)
    }

    /// Deterministic action `tanh(f(s, z))`, the pre-noise output.
    pub fn mean_action(&self, s: &[f64], z: &[f64]) -> Vec<f64> {
        let (mean, _) = self.heads(s, z);
        mean.into_iter().map(f64::tanh).collect()
    }

    /// `log π(a|s,z)` of a given squashed action under the stochastic policy.
    pub fn log_prob_of(&self, s: &[f64], z: &[f64], action: &[f64]) -> f64 {
        let (mean, log_std) = self.heads(s, z);
        mean.iter()
            .zip(&log_std)
            .zip(action)
            .map(|((&m, &ls), &a)| {
                let a = a.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
                let u = a.atanh();
                let e = (u - m) / ls.exp();
                -0.5 * e * e - ls - HALF_LOG_TWO_PI - (1.0 - a * a + SQUASH_EPS).ln()
            })
            .sum()
    }

    /// Pre-squash mean and clamped log-std for one state.
    pub fn distribution(&self, s: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.heads(s, z)
    }

    fn write(&self, bundle: &mut ParamBundle) -> Result<(), ContainerError> {
        self.trunk.write(bundle, "policy.trunk")?;
        bundle.insert("policy.mean.w", self.mean_head.w.clone())?;
        bundle.insert("policy.mean.b", self.mean_head.b.clone())?;
        bundle.insert("policy.log_std.w", self.log_std_head.w.clone())?;
        bundle.insert("policy.log_std.b", self.log_std_head.b.clone())?;
        Ok(())
    }

    fn read(bundle: &ParamBundle) -> Result<Self, ContainerError> {
        let trunk = Mlp::read(bundle, "policy.trunk")?;
        let h = trunk.out_dim();
        let mw = bundle
            .get("policy.mean.w")
            .ok_or_else(|| ContainerError::Missing("policy.mean.w".into()))?;
        let a = mw.shape().get(1).copied().unwrap_or(0);
        Ok(Self {
            trunk,
            mean_head: Linear {
                w: bundle.take_shaped("policy.mean.w", &[h, a])?,
                b: bundle.take_shaped("policy.mean.b", &[a])?,
            },
            log_std_head: Linear {
                w: bundle.take_shaped("policy.log_std.w", &[h, a])?,
                b: bundle.take_shaped("policy.log_std.b", &[a])?,
            },
        })
    }
}

/// Context encoder `q(z|c) = N(g(c), δ²I)` with prior `ρ(z) = N(0, σ²I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    pub mlp: Mlp,
    pub std: f64,
    pub prior_std: f64,
}

impl EncoderNet {
    pub fn new<R: Rng + ?Sized>(
        context: usize,
        hidden: &[usize],
        latent: usize,
        std: f64,
        prior_std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            mlp: Mlp::new(context, hidden, latent, rng),
            std,
            prior_std,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    /// Mean `g(c)` on the tape, `[rows, latent]`.
    pub fn mean(&self, tape: &mut Tape, bound: &BoundParams, c: Var) -> Result<Var, AutodiffError> {
        self.mlp.forward(tape, bound, c, false)
    }

    /// `z = g(c) + δ ω`.
    pub fn sample(&self, tape: &mut Tape, g: Var, omega: &Tensor) -> Result<Var, AutodiffError> {
        let scaled = Tensor::from_parts(
            omega.shape().to_vec(),
            omega.data().iter().map(|w| self.std * w).collect(),
        );
        let noise = tape.constant(scaled);
        tape.add(g, noise)
    }

    /// Closed-form `KL(N(g, δ²I) ‖ N(0, σ²I))` per row, `[rows, 1]`.
    pub fn kl(&self, tape: &mut Tape, g: Var) -> Result<Var, AutodiffError> {
        let shape = tape.value(g).shape().to_vec();
        let rows = shape[0];
        let d = shape[1] as f64;
        let sq = tape.square(g)?;
        let scaled = tape.scale(sq, 1.0 / (2.0 * self.prior_std * self.prior_std))?;
        let quad = row_sum(tape, scaled)?;
        let c = tape.constant(Tensor::filled(&[rows, 1], d * self.kl_constant()));
        tape.add(quad, c)
    }

    fn kl_constant(&self) -> f64 {
        let (d, s) = (self.std, self.prior_std);
        (s / d).ln() + d * d / (2.0 * s * s) - 0.5
    }

    pub fn eval_mean(&self, c: &[f64]) -> Vec<f64> {
        self.mlp.eval(c, false)
    }

    pub fn eval_kl(&self, c: &[f64]) -> f64 {
        let g = self.eval_mean(c);
        g.iter()
            .map(|gi| gi * gi / (2.0 * self.prior_std * self.prior_std) + self.kl_constant())
            .sum()
    }

    pub fn draw<R: Rng + ?Sized>(&self, c: &[f64], rng: &mut R) -> Vec<f64> {
        let g = self.eval_mean(c);
        g.iter()
            .map(|&gi| gi + self.std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>()
    }

    /// `log q(z|c) - log ρ(z)`.
    pub fn log_ratio(&self, c: &[f64], z: &[f64]) -> f64 {
        let g = self.eval_mean(c);
        g.iter()
            .zip(z)
            .map(|(&gi, &zi)| {
                let lq = -0.5 * ((zi - gi) / self.std).powi(2) - self.std.ln();
                let lp = -0.5 * (zi / self.prior_std).powi(2) - self.prior_std.ln();
                lq - lp
            })
            .sum()
    }
}

/// Action-value network `Q(s, a, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet {
    pub mlp: Mlp,
}

impl QNet {
    pub fn new<R: Rng + ?Sized>(dims: Dims, hidden: &[usize], rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(dims.obs + dims.action + dims.context, hidden, 1, rng),
        }
    }

    pub fn zeros(dims: Dims, hidden: &[usize]) -> Self {
        let mut sizes = vec![dims.obs + dims.action + dims.context];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            mlp: Mlp {
                layers: sizes.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            },
        }
    }

    /// `[rows, 1]` values for `s ⊕ a ⊕ c`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, s: Var, a: Var, c: Var) -> Result<Var, AutodiffError> {
        let sa = tape.concat(s, a)?;
        let x = tape.concat(sa, c)?;
        self.mlp.forward(tape, bound, x, false)
    }

    pub fn eval(&self, s: &[f64], a: &[f64], c: &[f64]) -> f64 {
        let x: Vec<f64> = s.iter().chain(a).chain(c).copied().collect();
        self.mlp.eval(&x, false)[0]
    }
}

/// Every trained quantity of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub dims: Dims,
    pub policy: PolicyNet,
    pub encoder: EncoderNet,
    pub q1: QNet,
    pub q2: QNet,
    pub q1_target: QNet,
    pub q2_target: QNet,
    pub log_alpha: f64,
}

impl AgentParams {
    pub fn new<R: Rng + ?Sized>(dims: Dims, cfg: &NetConfig, rng: &mut R) -> Self {
        let policy = PolicyNet::new(dims.obs, dims.latent, &cfg.policy_hidden, dims.action, rng);
        let encoder = EncoderNet::new(
            dims.context,
            &cfg.encoder_hidden,
            dims.latent,
            cfg.encoder_std,
            cfg.prior_std,
            rng,
        );
        let q1 = QNet::new(dims, &cfg.q_hidden, rng);
        let q2 = QNet::new(dims, &cfg.q_hidden, rng);
        Self {
            dims,
            policy,
            encoder,
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            log_alpha: 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn to_bundle(&self) -> ParamBundle {
        let mut b = ParamBundle::new();
        let res: Result<(), ContainerError> = (|| {
            self.policy.write(&mut b)?;
            self.encoder.mlp.write(&mut b, "encoder")?;
            b.insert("encoder.std", Tensor::scalar(self.encoder.std))?;
            b.insert("encoder.prior_std", Tensor::scalar(self.encoder.prior_std))?;
            self.q1.mlp.write(&mut b, "q1")?;
            self.q2.mlp.write(&mut b, "q2")?;
            self.q1_target.mlp.write(&mut b, "q1t")?;
            self.q2_target.mlp.write(&mut b, "q2t")?;
            b.insert("alpha_log", Tensor::scalar(self.log_alpha))?;
            Ok(())
        })();
        res.expect("parameter names are unique");
        b
    }

    pub fn from_bundle(bundle: &ParamBundle) -> Result<Self, ContainerError> {
        let policy = PolicyNet::read(bundle)?;
        let enc_mlp = Mlp::read(bundle, "encoder")?;
        let scalar = |name: &str| bundle.take_shaped(name, &[]).map(|t| t.item());
        let encoder = EncoderNet {
            std: scalar("encoder.std")?,
            prior_std: scalar("encoder.prior_std")?,
            mlp: enc_mlp,
        };
        let q = |p: &str| Mlp::read(bundle, p).map(|mlp| QNet { mlp });
        let (q1, q2, q1_target, q2_target) = (q("q1")?, q("q2")?, q("q1t")?, q("q2t")?);
        let latent = encoder.latent_dim();
        let action = policy.action_dim();
        let obs = policy.input_dim() - latent;
        let context = encoder.mlp.in_dim();
        let dims = Dims {
            obs,
            action,
            context,
            latent,
        };
        if q1.mlp.in_dim() != obs + action + context {
            return Err(ContainerError::ShapeMismatch {
                name: "q1.0.w".into(),
                expected: vec![obs + action + context],
                found: vec![q1.mlp.in_dim()],
            });
        }
        Ok(Self {
            dims,
            policy,
            encoder,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha: scalar("alpha_log")?,
        })
    }
}
