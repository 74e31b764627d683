//! Entropy-regularized actor-critic for both hierarchy levels.
//!
//! Each agent owns a tanh-squashed Gaussian actor, twin critics with
//! slowly tracking target copies, and a learned temperature pulled toward
//! a target entropy of −|A|. The critic target applies the 0.1 reward
//! scaling: `y = 0.1·r + γ(1−done)(min Qᵗ − α log π)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{adam_step, clear_grads, Parameter, SharedParam, Tape, Tensor, Var};
use crate::{CoreError, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7; // 0.5*ln(2π)
const LN_2: f64 = std::f64::consts::LN_2;

/// Three fully-connected layers with ReLU and a two-headed Gaussian
/// output, tanh-squashed and scaled to the action bounds.
#[derive(Clone)]
pub struct GaussianActor {
    pub w1: SharedParam,
    pub b1: SharedParam,
    pub w2: SharedParam,
    pub b2: SharedParam,
    pub w_mu: SharedParam,
    pub b_mu: SharedParam,
    pub w_ls: SharedParam,
    pub b_ls: SharedParam,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Per-dimension |bound|; actions live in the symmetric box ±scale.
    pub scale: Vec<f64>,
}

impl GaussianActor {
    fn new(prefix: &str, obs_dim: usize, act_dim: usize, hidden: usize, scale: Vec<f64>, rng: &mut impl Rng) -> Self {
        assert_eq!(scale.len(), act_dim);
        GaussianActor {
            w1: Parameter::shared_init(format!("{prefix}.w1"), hidden, obs_dim, obs_dim, rng),
            b1: Parameter::shared_init(format!("{prefix}.b1"), hidden, 1, obs_dim, rng),
            w2: Parameter::shared_init(format!("{prefix}.w2"), hidden, hidden, hidden, rng),
            b2: Parameter::shared_init(format!("{prefix}.b2"), hidden, 1, hidden, rng),
            w_mu: Parameter::shared_init(format!("{prefix}.w_mu"), act_dim, hidden, hidden, rng),
            b_mu: Parameter::shared_init(format!("{prefix}.b_mu"), act_dim, 1, hidden, rng),
            w_ls: Parameter::shared_init(format!("{prefix}.w_ls"), act_dim, hidden, hidden, rng),
            b_ls: Parameter::shared_init(format!("{prefix}.b_ls"), act_dim, 1, hidden, rng),
            obs_dim,
            act_dim,
            scale,
        }
    }

    pub fn params(&self) -> Vec<SharedParam> {
        vec![
            self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone(),
            self.w_mu.clone(), self.b_mu.clone(), self.w_ls.clone(), self.b_ls.clone(),
        ]
    }

    /// Raw forward pass: (mean, clamped log-std), each `(act_dim, batch)`.
    pub fn forward_raw(&self, obs: &Tensor) -> (Tensor, Tensor) {
        assert_eq!(obs.rows(), self.obs_dim, "actor observation dimension mismatch");
        let h = self.w1.borrow().value.matmul(obs).add_col_broadcast(&self.b1.borrow().value);
        let h = h.map(|v| v.max(0.0));
        let h = self.w2.borrow().value.matmul(&h).add_col_broadcast(&self.b2.borrow().value);
        let h = h.map(|v| v.max(0.0));
        let mu = self.w_mu.borrow().value.matmul(&h).add_col_broadcast(&self.b_mu.borrow().value);
        let ls = self.w_ls.borrow().value.matmul(&h).add_col_broadcast(&self.b_ls.borrow().value);
        (mu, ls.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)))
    }

    fn forward_tape(&self, tape: &Tape, obs: &Var) -> (Var, Var) {
        let h = tape.param(&self.w1).matmul(obs).add_col(&tape.param(&self.b1)).relu();
        let h = tape.param(&self.w2).matmul(&h).add_col(&tape.param(&self.b2)).relu();
        let mu = tape.param(&self.w_mu).matmul(&h).add_col(&tape.param(&self.b_mu));
        let ls = tape
            .param(&self.w_ls)
            .matmul(&h)
            .add_col(&tape.param(&self.b_ls))
            .clamp(LOG_STD_MIN, LOG_STD_MAX);
        (mu, ls)
    }

    fn scale_tensor(&self, cols: usize) -> Tensor {
        Tensor::from_fn(self.act_dim, cols, |i, _| self.scale[i])
    }

    /// Squashed sample and its log-probability on a tape, reparameterized
    /// through the given standard-normal noise `(act_dim, batch)`.
    fn sample_tape(&self, tape: &Tape, obs: &Var, noise: &Tensor) -> (Var, Var) {
        let cols = noise.cols();
        let (mu, ls) = self.forward_tape(tape, obs);
        let xi = tape.constant(noise.clone());
        let pre = mu.add(&ls.exp().mul(&xi));
        let scale = tape.constant(self.scale_tensor(cols));
        let action = pre.tanh().mul(&scale);
        // log N(pre; mu, std) = -0.5 ξ² - log_std - 0.5 ln 2π
        let half_sq = xi.mul(&xi).scale(0.5);
        let gauss = half_sq.add(&ls).add_scalar(HALF_LN_TAU).neg();
        // log(1 - tanh²(x)) = 2(ln2 - x - softplus(-2x))
        let squash = pre
            .neg()
            .sub(&pre.scale(-2.0).softplus())
            .add_scalar(LN_2)
            .scale(2.0);
        let ln_scale: f64 = self.scale.iter().map(|s| s.ln()).sum();
        let logp = gauss.sub(&squash).col_sum().add_scalar(-ln_scale);
        (action, logp)
    }

    /// Log-probability of the squashing-corrected Gaussian at pre-squash
    /// values `pre` given `(mu, log_std)`; all `(act_dim, batch)`.
    fn log_prob_raw(&self, pre: &Tensor, mu: &Tensor, ls: &Tensor) -> Tensor {
        let cols = pre.cols();
        let mut out = Tensor::zeros(1, cols);
        for j in 0..cols {
            let mut lp = 0.0;
            for i in 0..self.act_dim {
                let std = ls.get(i, j).exp();
                let z = (pre.get(i, j) - mu.get(i, j)) / std;
                lp += -0.5 * z * z - ls.get(i, j) - HALF_LN_TAU;
                let x = pre.get(i, j);
                lp -= 2.0 * (LN_2 - x - crate::autodiff::softplus(-2.0 * x));
                lp -= self.scale[i].ln();
            }
            out.set(0, j, lp);
        }
        out
    }
}

/// Critic: Q(s, a) through three fully-connected layers.
#[derive(Clone)]
pub struct Critic {
    pub w1: SharedParam,
    pub b1: SharedParam,
    pub w2: SharedParam,
    pub b2: SharedParam,
    pub w3: SharedParam,
    pub b3: SharedParam,
}

impl Critic {
    fn new(prefix: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Critic {
            w1: Parameter::shared_init(format!("{prefix}.w1"), hidden, in_dim, in_dim, rng),
            b1: Parameter::shared_init(format!("{prefix}.b1"), hidden, 1, in_dim, rng),
            w2: Parameter::shared_init(format!("{prefix}.w2"), hidden, hidden, hidden, rng),
            b2: Parameter::shared_init(format!("{prefix}.b2"), hidden, 1, hidden, rng),
            w3: Parameter::shared_init(format!("{prefix}.w3"), 1, hidden, hidden, rng),
            b3: Parameter::shared_init(format!("{prefix}.b3"), 1, 1, hidden, rng),
        }
    }

    pub fn params(&self) -> Vec<SharedParam> {
        vec![
            self.w1.clone(), self.b1.clone(), self.w2.clone(),
            self.b2.clone(), self.w3.clone(), self.b3.clone(),
        ]
    }

    /// Q-values `(1, batch)` for stacked `(obs; act)` columns.
    pub fn forward_raw(&self, obs: &Tensor, act: &Tensor) -> Tensor {
        let x = obs.vcat(act);
        let h = self.w1.borrow().value.matmul(&x).add_col_broadcast(&self.b1.borrow().value);
        let h = h.map(|v| v.max(0.0));
        let h = self.w2.borrow().value.matmul(&h).add_col_broadcast(&self.b2.borrow().value);
        let h = h.map(|v| v.max(0.0));
        self.w3.borrow().value.matmul(&h).add_col_broadcast(&self.b3.borrow().value)
    }

    fn forward_tape(&self, tape: &Tape, obs: &Var, act: &Var) -> Var {
        let x = obs.vcat(act);
        let h = tape.param(&self.w1).matmul(&x).add_col(&tape.param(&self.b1)).relu();
        let h = tape.param(&self.w2).matmul(&h).add_col(&tape.param(&self.b2)).relu();
        tape.param(&self.w3).matmul(&h).add_col(&tape.param(&self.b3))
    }

    fn copy_values_from(&self, other: &Critic) {
        for (dst, src) in self.params().iter().zip(other.params()) {
            dst.borrow_mut().value = src.borrow().value.clone();
        }
    }
}

/// A minibatch of transitions in column layout.
#[derive(Clone, Debug)]
pub struct SacBatch {
    pub obs: Tensor,
    pub act: Tensor,
    pub reward: Vec<f64>,
    pub next_obs: Tensor,
    pub done: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

pub struct SacAgent {
    pub actor: GaussianActor,
    pub critic1: Critic,
    pub critic2: Critic,
    pub target1: Critic,
    pub target2: Critic,
    pub log_alpha: SharedParam,
    pub target_entropy: f64,
    pub discount: f64,
    pub tau: f64,
    pub reward_scale: f64,
    pub lr: f64,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl SacAgent {
    pub fn new(
        prefix: &str,
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        scale: Vec<f64>,
        rng: &mut impl Rng,
    ) -> Self {
        let critic1 = Critic::new(&format!("{prefix}.q1"), obs_dim + act_dim, hidden, rng);
        let critic2 = Critic::new(&format!("{prefix}.q2"), obs_dim + act_dim, hidden, rng);
        let target1 = Critic::new(&format!("{prefix}.tq1"), obs_dim + act_dim, hidden, rng);
        let target2 = Critic::new(&format!("{prefix}.tq2"), obs_dim + act_dim, hidden, rng);
        target1.copy_values_from(&critic1);
        target2.copy_values_from(&critic2);
        SacAgent {
            actor: GaussianActor::new(&format!("{prefix}.pi"), obs_dim, act_dim, hidden, scale, rng),
            critic1,
            critic2,
            target1,
            target2,
            log_alpha: Parameter::shared(format!("{prefix}.log_alpha"), Tensor::scalar(0.2f64.ln())),
            target_entropy: -(act_dim as f64),
            discount: 0.99,
            tau: 0.005,
            reward_scale: 0.1,
            lr: 2e-4,
            obs_dim,
            act_dim,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.borrow().value.item().exp()
    }

    pub fn all_params(&self) -> Vec<SharedParam> {
        let mut out = self.actor.params();
        out.extend(self.critic1.params());
        out.extend(self.critic2.params());
        out.extend(self.target1.params());
        out.extend(self.target2.params());
        out.push(self.log_alpha.clone());
        out
    }

    /// Draws an action for one observation. Stochastic mode squashes a
    /// reparameterized Gaussian sample; deterministic mode squashes the mean.
    pub fn sample_action(&self, obs: &[f64], deterministic: bool, rng: &mut impl Rng) -> Vec<f64> {
        assert_eq!(obs.len(), self.obs_dim, "observation dimension mismatch");
        let (mu, ls) = self.actor.forward_raw(&Tensor::col(obs));
        (0..self.act_dim)
            .map(|i| {
                let pre = if deterministic {
                    mu.get(i, 0)
                } else {
                    let xi: f64 = rng.sample(StandardNormal);
                    mu.get(i, 0) + ls.get(i, 0).exp() * xi
                };
                pre.tanh() * self.actor.scale[i]
            })
            .collect()
    }

    /// Log-probability of a squashed action under the current policy, for
    /// one observation. Test instrumentation for the density oracle.
    pub fn action_log_prob(&self, obs: &[f64], action: &[f64]) -> f64 {
        let (mu, ls) = self.actor.forward_raw(&Tensor::col(obs));
        let pre = Tensor::from_fn(self.act_dim, 1, |i, _| {
            let unit = (action[i] / self.actor.scale[i]).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            unit.atanh()
        });
        self.actor.log_prob_raw(&pre, &mu, &ls).item()
    }

    /// Critic regression targets `0.1·r + γ(1−done)(min Qᵗ − α logπ)`,
    /// computed with the target networks and a fresh next-action sample.
    pub fn critic_targets(&self, batch: &SacBatch, rng: &mut impl Rng) -> Tensor {
        let n = batch.reward.len();
        let (mu, ls) = self.actor.forward_raw(&batch.next_obs);
        let noise = Tensor::from_fn(self.act_dim, n, |_, _| rng.sample(StandardNormal));
        let pre = Tensor::from_fn(self.act_dim, n, |i, j| {
            mu.get(i, j) + ls.get(i, j).exp() * noise.get(i, j)
        });
        let next_act = Tensor::from_fn(self.act_dim, n, |i, j| pre.get(i, j).tanh() * self.actor.scale[i]);
        let logp = self.actor.log_prob_raw(&pre, &mu, &ls);
        let q1 = self.target1.forward_raw(&batch.next_obs, &next_act);
        let q2 = self.target2.forward_raw(&batch.next_obs, &next_act);
        let alpha = self.alpha();
        Tensor::from_fn(1, n, |_, j| {
            let q = q1.get(0, j).min(q2.get(0, j)) - alpha * logp.get(0, j);
            self.reward_scale * batch.reward[j] + self.discount * (1.0 - batch.done[j]) * q
        })
    }

    pub fn critic_loss_tape(&self, tape: &Tape, batch: &SacBatch, targets: &Tensor) -> Var {
        let obs = tape.constant(batch.obs.clone());
        let act = tape.constant(batch.act.clone());
        let y = tape.constant(targets.clone());
        let q1 = self.critic1.forward_tape(tape, &obs, &act);
        let q2 = self.critic2.forward_tape(tape, &obs, &act);
        let d1 = q1.sub(&y);
        let d2 = q2.sub(&y);
        d1.mul(&d1).mean().add(&d2.mul(&d2).mean())
    }

    pub fn actor_loss_tape(&self, tape: &Tape, obs_t: &Tensor, noise: &Tensor) -> (Var, Var) {
        let obs = tape.constant(obs_t.clone());
        let (action, logp) = self.actor.sample_tape(tape, &obs, noise);
        let q1 = self.critic1.forward_tape(tape, &obs, &action);
        let q2 = self.critic2.forward_tape(tape, &obs, &action);
        let q = q1.min_elem(&q2);
        let loss = logp.scale(self.alpha()).sub(&q).mean();
        (loss, logp)
    }

    /// One full SAC update: critics toward the soft target, actor against
    /// the fresh min-Q, temperature toward the target entropy, then a
    /// Polyak step of both target critics.
    pub fn update(&mut self, batch: &SacBatch, rng: &mut impl Rng) -> Result<SacStats> {
        let n = batch.reward.len();
        assert!(n > 0, "sac update needs a nonempty batch");
        let targets = self.critic_targets(batch, rng);

        let tape = Tape::new();
        let critic_loss = self.critic_loss_tape(&tape, batch, &targets);
        let critic_loss_v = critic_loss.item();
        if !critic_loss_v.is_finite() {
            return Err(CoreError::NonFiniteLoss { context: "critic loss".into() });
        }
        critic_loss.backward();
        let mut critic_params = self.critic1.params();
        critic_params.extend(self.critic2.params());
        adam_step(&critic_params, self.lr)?;

        let noise = Tensor::from_fn(self.act_dim, n, |_, _| rng.sample(StandardNormal));
        let tape = Tape::new();
        let (actor_loss, logp) = self.actor_loss_tape(&tape, &batch.obs, &noise);
        let actor_loss_v = actor_loss.item();
        if !actor_loss_v.is_finite() {
            return Err(CoreError::NonFiniteLoss { context: "actor loss".into() });
        }
        let logp_values = logp.value();
        actor_loss.backward();
        adam_step(&self.actor.params(), self.lr)?;
        clear_grads(&critic_params); // grads that flowed through Q(s, π(s))

        let tape = Tape::new();
        let alpha_var = tape.param(&self.log_alpha).exp();
        let centered = tape.constant(logp_values.map(|v| v + self.target_entropy));
        let alpha_loss = centered.mul_scalar(&alpha_var).neg().mean();
        alpha_loss.backward();
        adam_step(&[self.log_alpha.clone()], self.lr)?;

        self.soft_update_targets();
        Ok(SacStats {
            critic_loss: critic_loss_v,
            actor_loss: actor_loss_v,
            alpha: self.alpha(),
        })
    }

    fn soft_update_targets(&self) {
        for (t, l) in self
            .target1
            .params()
            .iter()
            .zip(self.critic1.params())
            .chain(self.target2.params().iter().zip(self.critic2.params()))
        {
            let mut t = t.borrow_mut();
            let l = l.borrow();
            for i in 0..t.value.len() {
                let v = (1.0 - self.tau) * t.value.data()[i] + self.tau * l.value.data()[i];
                t.value.data_mut()[i] = v;
            }
        }
    }
}

/// Low-level intrinsic reward: negative Euclidean distance between the
/// subgoal representation of the reached state and the active subgoal.
pub fn intrinsic_reward(z_next: &[f64], g: &[f64]) -> f64 {
    -crate::state_distance(z_next, g)
}

/// High-level extrinsic reward: the plain sum of environment rewards over
/// a segment.
pub fn high_level_reward(env_rewards: &[f64]) -> f64 {
    env_rewards.iter().sum()
}
