//! The two-level training loop: every environment step updates the
//! low-level agent and the encoder, every k-th step the high-level agent,
//! and every m-th step the GP hyperparameters over windows of T
//! consecutive high-level segments. Evaluation, checkpointing and
//! transfer initialization live here too.
//!
//! All mutable state is owned by one `Trainer`; evaluation rollouts use a
//! separate environment and an RNG stream positioned by epoch so they
//! never perturb training.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use hlps_core::autodiff::Tensor;
use hlps_core::env::PointMaze;
use hlps_core::objective::{representation_update, SupportSet, UpdateTarget};
use hlps_core::replay::{ReplayBuffer, Transition};
use hlps_core::repr::{ReprKind, ReprModel};
use hlps_core::rng as streams;
use hlps_core::sac::{intrinsic_reward, SacAgent, SacBatch};
use hlps_core::statespace::Belief;

use crate::checkpoint::{rng_from_bytes, rng_to_bytes, Checkpoint};
use crate::config::{ReprVariant, TrainConfig};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::svg::{LatentPoint, LatentScatter};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub env_steps: u64,
    pub episodes: u64,
    /// Training episodes that ended in success (stochastic policy).
    pub train_successes: u64,
    pub low_updates: u64,
    pub encoder_updates: u64,
    pub high_updates: u64,
    pub hyper_updates: u64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub seed: u64,
    pub repr: ReprModel,
    pub low: SacAgent,
    pub high: SacAgent,
    pub buffer: ReplayBuffer,
    pub counters: Counters,
    env: PointMaze,
    rng_low: ChaCha8Rng,
    rng_high: ChaCha8Rng,
    rng_buffer: ChaCha8Rng,
    belief: Belief,
    obs: Vec<f64>,
    subgoal: Vec<f64>,
    episode: u64,
    ep_step: u32,
    /// Running max |z| component, for the subgoal box refresh.
    zmax: f64,
    repr_loss_sum: f64,
    repr_loss_count: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = streams::stream(seed, streams::STREAM_INIT);
        let env = PointMaze::new(cfg.env.maze_config(false)?, streams::stream(seed, streams::STREAM_ENV));
        let obs_dim = env.obs_dim();
        let d = cfg.latent_dim;
        let repr = match cfg.repr_variant {
            ReprVariant::Hlps | ReprVariant::Frozen => {
                let mut r = ReprModel::new(obs_dim, cfg.encoder_hidden, d, &mut init_rng);
                if cfg.latent_bound > 0.0 {
                    r.encoder.output_bound = Some(cfg.latent_bound);
                }
                r
            }
            ReprVariant::RandomProjection => {
                ReprModel::new_random_projection(obs_dim, d, &mut init_rng)
            }
        };
        let mut low = SacAgent::new("low", obs_dim + d, 2, cfg.hidden_dim, vec![1.0, 1.0], &mut init_rng);
        let mut high = SacAgent::new("high", obs_dim, d, cfg.hidden_dim, vec![cfg.subgoal_box; d], &mut init_rng);
        for agent in [&mut low, &mut high] {
            agent.discount = cfg.discount;
            agent.tau = cfg.tau;
            agent.reward_scale = cfg.reward_scale;
            agent.lr = cfg.lr_actor_critic;
        }
        let belief = repr.fresh_belief();
        let buffer = ReplayBuffer::new(cfg.replay_capacity, cfg.k);
        let mut trainer = Trainer {
            cfg,
            seed,
            repr,
            low,
            high,
            buffer,
            counters: Counters::default(),
            env,
            rng_low: streams::stream(seed, streams::STREAM_LOW),
            rng_high: streams::stream(seed, streams::STREAM_HIGH),
            rng_buffer: streams::stream(seed, streams::STREAM_BUFFER),
            belief,
            obs: Vec::new(),
            subgoal: Vec::new(),
            episode: 0,
            ep_step: 0,
            zmax: 0.0,
            repr_loss_sum: 0.0,
            repr_loss_count: 0,
        };
        trainer.begin_episode()?;
        Ok(trainer)
    }

    fn learned_repr(&self) -> bool {
        self.cfg.repr_variant == ReprVariant::Hlps
    }

    fn begin_episode(&mut self) -> Result<()> {
        self.obs = self.env.reset();
        if self.learned_repr() {
            self.repr.norm.update(&self.obs);
        }
        self.belief = self.repr.fresh_belief();
        let z = self.repr.phi_online(&mut self.belief, &self.obs)?;
        self.track_zmax(&z);
        self.subgoal = self.emit_subgoal_here();
        self.ep_step = 0;
        Ok(())
    }

    fn emit_subgoal_here(&mut self) -> Vec<f64> {
        let obs = self.obs.clone();
        self.emit_subgoal(&obs)
    }

    fn emit_subgoal(&mut self, s: &[f64]) -> Vec<f64> {
        if self.counters.env_steps < self.cfg.warmup_steps {
            self.high
                .actor
                .scale
                .iter()
                .map(|&b| self.rng_high.gen_range(-b..b))
                .collect()
        } else {
            self.high.sample_action(s, false, &mut self.rng_high)
        }
    }

    fn track_zmax(&mut self, z: &[f64]) {
        for v in z {
            let a = v.abs();
            if a.is_finite() && a > self.zmax {
                self.zmax = a;
            }
        }
    }

    fn low_obs(&self, s: &[f64], g: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(s.len() + g.len());
        out.extend_from_slice(s);
        out.extend_from_slice(g);
        out
    }

    /// One iteration of the training procedure: act, collect, then run
    /// whichever updates are due at this step count.
    pub fn env_step(&mut self) -> Result<()> {
        let action = if self.counters.env_steps < self.cfg.warmup_steps {
            vec![self.rng_low.gen_range(-1.0..1.0), self.rng_low.gen_range(-1.0..1.0)]
        } else {
            let lo = self.low_obs(&self.obs, &self.subgoal);
            self.low.sample_action(&lo, false, &mut self.rng_low)
        };
        let res = self.env.step([action[0], action[1]]);
        if self.learned_repr() {
            self.repr.norm.update(&res.obs);
        }
        let z = self.repr.phi_online(&mut self.belief, &res.obs)?;
        self.track_zmax(&z);
        self.counters.env_steps += 1;
        let t = self.counters.env_steps;

        let boundary = (self.ep_step + 1) % self.cfg.k == 0;
        let g_next = if res.done {
            self.subgoal.clone()
        } else if boundary {
            self.emit_subgoal(&res.obs.clone())
        } else {
            self.subgoal.clone()
        };
        self.buffer.push(Transition {
            s: std::mem::take(&mut self.obs),
            g: self.subgoal.clone(),
            a: action,
            r_env: res.reward,
            s_next: res.obs.clone(),
            g_next: g_next.clone(),
            done: res.done,
            episode: self.episode,
            step: self.ep_step,
        });
        self.obs = res.obs;
        self.subgoal = g_next;
        self.ep_step += 1;

        if t > self.cfg.warmup_steps {
            self.low_update()?;
            if t % self.cfg.k as u64 == 0 {
                self.high_update()?;
            }
            if t % self.cfg.m as u64 == 0 && self.learned_repr() {
                self.hyper_update()?;
            }
        }

        if res.done {
            self.episode += 1;
            self.counters.episodes += 1;
            if res.success {
                self.counters.train_successes += 1;
            }
            self.begin_episode()?;
        }
        Ok(())
    }

    /// Low-level SAC step on relabeled intrinsic rewards plus one encoder
    /// step of the representation loss.
    fn low_update(&mut self) -> Result<()> {
        let n = self.cfg.batch_low;
        let trans = self.buffer.sample_uniform(n, &mut self.rng_buffer)?;
        let pairs: Vec<(&[f64], &[f64])> =
            trans.iter().map(|t| (t.s.as_slice(), t.s_next.as_slice())).collect();
        let z_next = self.repr.phi_next_of_pairs(&pairs)?;
        let obs_dim = self.env.obs_dim() + self.cfg.latent_dim;
        let mut obs = Tensor::zeros(obs_dim, n);
        let mut next_obs = Tensor::zeros(obs_dim, n);
        let mut act = Tensor::zeros(2, n);
        let mut reward = Vec::with_capacity(n);
        let mut done = Vec::with_capacity(n);
        for (j, tr) in trans.iter().enumerate() {
            for (i, v) in tr.s.iter().chain(tr.g.iter()).enumerate() {
                obs.set(i, j, *v);
            }
            for (i, v) in tr.s_next.iter().chain(tr.g_next.iter()).enumerate() {
                next_obs.set(i, j, *v);
            }
            act.set(0, j, tr.a[0]);
            act.set(1, j, tr.a[1]);
            reward.push(intrinsic_reward(&z_next[j], &tr.g));
            done.push(tr.done as u8 as f64);
        }
        let batch = SacBatch { obs, act, reward, next_obs, done };
        self.low.update(&batch, &mut self.rng_low)?;
        self.counters.low_updates += 1;

        if self.learned_repr() {
            let triplets =
                self.buffer
                    .sample_triplets(self.cfg.batch_triplets, self.cfg.k, &mut self.rng_buffer)?;
            let sets: Vec<SupportSet> = triplets
                .into_iter()
                .map(|t| SupportSet {
                    states: vec![t.s_i, t.s_next, t.s_k],
                    anchors: vec![[0, 1, 2]],
                })
                .collect();
            let loss = representation_update(
                &self.repr,
                &sets,
                UpdateTarget::Encoder,
                &self.cfg.loss_config().expect("validated"),
                self.cfg.lr_encoder,
                self.cfg.encoder_weight_decay,
            )?;
            self.repr_loss_sum += loss;
            self.repr_loss_count += 1;
            self.counters.encoder_updates += 1;
        }
        Ok(())
    }

    fn high_update(&mut self) -> Result<()> {
        for _ in 0..self.cfg.high_grad_steps.max(1) {
            self.high_gradient_step()?;
        }
        self.counters.high_updates += 1;
        Ok(())
    }

    fn high_gradient_step(&mut self) -> Result<()> {
        let n = self.cfg.batch_high;
        let segs = self.buffer.sample_segments(n, &mut self.rng_buffer)?;
        let obs_dim = self.env.obs_dim();
        let d = self.cfg.latent_dim;
        let mut obs = Tensor::zeros(obs_dim, n);
        let mut next_obs = Tensor::zeros(obs_dim, n);
        let mut act = Tensor::zeros(d, n);
        let mut reward = Vec::with_capacity(n);
        let mut done = Vec::with_capacity(n);
        for (j, seg) in segs.iter().enumerate() {
            for (i, v) in seg.s_start.iter().enumerate() {
                obs.set(i, j, *v);
            }
            for (i, v) in seg.s_end.iter().enumerate() {
                next_obs.set(i, j, *v);
            }
            for (i, v) in seg.g.iter().enumerate() {
                act.set(i, j, *v);
            }
            reward.push(seg.r_sum);
            done.push(seg.done as u8 as f64);
        }
        let batch = SacBatch { obs, act, reward, next_obs, done };
        self.high.update(&batch, &mut self.rng_high)?;
        Ok(())
    }

    /// GP hyperparameter step over windows of T consecutive segments.
    /// Early in training fewer than T segments may exist; the window
    /// truncates to what the buffer holds.
    fn hyper_update(&mut self) -> Result<()> {
        let mut windows = Vec::with_capacity(self.cfg.batch_windows);
        for _ in 0..self.cfg.batch_windows {
            if let Some((states, lens)) =
                self.buffer.sample_window(self.cfg.window_segments, &mut self.rng_buffer)
            {
                let mut anchors = Vec::with_capacity(lens.len());
                let mut offset = 0usize;
                for len in &lens {
                    let len = *len as usize;
                    if len >= 1 {
                        anchors.push([offset, (offset + 1).min(offset + len), offset + len]);
                    }
                    offset += len;
                }
                windows.push(SupportSet { states, anchors });
            }
        }
        if windows.is_empty() {
            return Ok(());
        }
        let loss = representation_update(
            &self.repr,
            &windows,
            UpdateTarget::Hyperparams,
            &self.cfg.loss_config().expect("validated"),
            self.cfg.lr_gp,
            0.0,
        )?;
        self.repr_loss_sum += loss;
        self.repr_loss_count += 1;
        self.counters.hyper_updates += 1;
        Ok(())
    }

    /// Refreshes the high-level action box from the observed latent range.
    pub fn refresh_subgoal_box(&mut self) {
        let bound = (2.0 * self.zmax).max(10.0);
        self.high.actor.scale = vec![bound; self.cfg.latent_dim];
    }

    fn eval_rng(&self, epoch: u64) -> ChaCha8Rng {
        let mut rng = streams::stream(self.seed, streams::STREAM_EVAL);
        rng.set_word_pos((epoch as u128) << 40);
        rng
    }

    /// Deterministic-policy evaluation on the fixed-goal variant of the
    /// task. Returns (success rate, mean undiscounted episode return).
    pub fn evaluate(&self, episodes: u32, epoch: u64) -> Result<(f64, f64)> {
        let mut env = PointMaze::new(self.cfg.env.maze_config(true)?, self.eval_rng(epoch));
        let mut successes = 0u32;
        let mut returns = 0.0;
        let mut dummy = self.eval_rng(u64::MAX >> 8);
        for _ in 0..episodes {
            let mut obs = env.reset();
            let mut g = self.high.sample_action(&obs, true, &mut dummy);
            let mut ep_return = 0.0;
            let mut step = 0u32;
            loop {
                if step > 0 && step % self.cfg.k == 0 {
                    g = self.high.sample_action(&obs, true, &mut dummy);
                }
                let lo = self.low_obs(&obs, &g);
                let a = self.low.sample_action(&lo, true, &mut dummy);
                let res = env.step([a[0], a[1]]);
                ep_return += res.reward;
                obs = res.obs;
                step += 1;
                if res.done {
                    if res.success {
                        successes += 1;
                    }
                    break;
                }
            }
            returns += ep_return;
        }
        Ok((successes as f64 / episodes as f64, returns / episodes as f64))
    }

    fn drain_repr_loss(&mut self) -> f64 {
        let mean = if self.repr_loss_count == 0 {
            0.0
        } else {
            self.repr_loss_sum / self.repr_loss_count as f64
        };
        self.repr_loss_sum = 0.0;
        self.repr_loss_count = 0;
        mean
    }

    fn metrics_row(&mut self, success: f64, mean_return: f64) -> MetricsRow {
        MetricsRow {
            step: self.counters.env_steps,
            eval_success: success,
            mean_episode_return: mean_return,
            repr_loss: self.drain_repr_loss(),
            gamma2: self.repr.hp.gamma2(),
            ell: self.repr.hp.ell(),
            sigma2: self.repr.hp.sigma2(),
        }
    }

    /// Rolls out the deterministic policy and dumps one JSON line per step
    /// with the state, its online subgoal representation, and the active
    /// subgoal. Optionally renders the latent scatter SVG.
    pub fn dump_latent_trajectories(
        &self,
        episodes: u32,
        jsonl_path: &Path,
        svg_path: Option<&Path>,
    ) -> Result<u64> {
        use std::io::Write;
        if let Some(dir) = jsonl_path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = std::fs::File::create(jsonl_path)?;
        let mut env = PointMaze::new(self.cfg.env.maze_config(true)?, self.eval_rng(u64::MAX >> 9));
        let mut dummy = self.eval_rng(u64::MAX >> 10);
        let mut rows = 0u64;
        let mut scatter = LatentScatter { points: Vec::new(), subgoals: Vec::new() };
        for episode in 0..episodes {
            let mut obs = env.reset();
            let mut belief = self.repr.fresh_belief();
            let mut g = self.high.sample_action(&obs, true, &mut dummy);
            scatter.subgoals.push([g[0], g.get(1).copied().unwrap_or(0.0)]);
            let mut step = 0u32;
            loop {
                if step > 0 && step % self.cfg.k == 0 {
                    g = self.high.sample_action(&obs, true, &mut dummy);
                    scatter.subgoals.push([g[0], g.get(1).copied().unwrap_or(0.0)]);
                }
                let z = self.repr.phi_online(&mut belief, &obs)?;
                let line = serde_json::json!({
                    "episode": episode,
                    "step": step,
                    "s": obs,
                    "z": z,
                    "g": g,
                });
                writeln!(out, "{line}")?;
                rows += 1;
                scatter.points.push(LatentPoint {
                    z: [z[0], z.get(1).copied().unwrap_or(0.0)],
                    t: step as f64 / self.cfg.env.horizon as f64,
                });
                let lo = self.low_obs(&obs, &g);
                let a = self.low.sample_action(&lo, true, &mut dummy);
                let res = env.step([a[0], a[1]]);
                obs = res.obs;
                step += 1;
                if res.done {
                    break;
                }
            }
        }
        if let Some(svg) = svg_path {
            scatter.write(svg)?;
        }
        Ok(rows)
    }
}

/// Outcome of a full training run.
pub struct RunOutcome {
    pub metrics: Vec<MetricsRow>,
    /// First step at which evaluation success reached the early-stop
    /// threshold, if one was set and reached.
    pub reached_at: Option<u64>,
    pub wall_seconds: f64,
}

/// Drives a trainer to `total_steps`, evaluating every `eval_every`
/// steps. When `run_dir` is given, writes metrics.csv, summary.json and
/// a final checkpoint. `early_stop_success` ends the run once reached.
pub fn run_training(
    trainer: &mut Trainer,
    run_dir: Option<&Path>,
    early_stop_success: Option<f64>,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut writer = match run_dir {
        Some(dir) => Some(MetricsWriter::create(&dir.join("metrics.csv"))?),
        None => None,
    };
    let mut metrics = Vec::new();
    let mut reached_at = None;
    while trainer.counters.env_steps < trainer.cfg.total_steps {
        trainer.env_step().with_context(|| {
            format!("training aborted at step {}", trainer.counters.env_steps)
        })?;
        if trainer.counters.env_steps % trainer.cfg.eval_every == 0 {
            // epoch derives from the global step so resumed runs keep
            // using the same evaluation rng positions
            let epoch = trainer.counters.env_steps / trainer.cfg.eval_every;
            trainer.refresh_subgoal_box();
            let (success, mean_return) = trainer.evaluate(trainer.cfg.eval_episodes, epoch)?;
            let row = trainer.metrics_row(success, mean_return);
            if let Some(w) = writer.as_mut() {
                w.append(&row)?;
            }
            metrics.push(row);
            if let Some(th) = early_stop_success {
                if success >= th && reached_at.is_none() {
                    reached_at = Some(trainer.counters.env_steps);
                    break;
                }
            }
        }
    }
    let wall_seconds = started.elapsed().as_secs_f64();
    if let Some(dir) = run_dir {
        trainer.save_checkpoint(&dir.join("checkpoints").join("final.hlps"))?;
        let summary = serde_json::json!({
            "steps": trainer.counters.env_steps,
            "episodes": trainer.counters.episodes,
            "train_successes": trainer.counters.train_successes,
            "low_updates": trainer.counters.low_updates,
            "encoder_updates": trainer.counters.encoder_updates,
            "high_updates": trainer.counters.high_updates,
            "hyper_updates": trainer.counters.hyper_updates,
            "final_eval_success": metrics.last().map(|r| r.eval_success),
            "wall_seconds": wall_seconds,
        });
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(RunOutcome { metrics, reached_at, wall_seconds })
}

// --- checkpointing ---------------------------------------------------------

impl Trainer {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut cp = Checkpoint::new();
        cp.add_bytes("config", self.cfg.to_toml().into_bytes());
        cp.add_bytes("seed", self.seed.to_le_bytes().to_vec());

        for p in self.repr.encoder.params() {
            let name = p.borrow().name.clone();
            cp.add_param(&format!("param.{name}"), &p);
        }
        for p in self.repr.hp.params() {
            let name = p.borrow().name.clone();
            cp.add_param(&format!("param.{name}"), &p);
        }
        if let ReprKind::RandomProjection(p) = &self.repr.kind {
            cp.add_matrix("repr.projection", p.clone());
        }
        cp.add_scalar("repr.norm.count", self.repr.norm.count);
        cp.add_vec("repr.norm.mean", &self.repr.norm.mean);
        cp.add_vec("repr.norm.m2", &self.repr.norm.m2);

        for p in self.low.all_params().into_iter().chain(self.high.all_params()) {
            let name = p.borrow().name.clone();
            cp.add_param(&format!("param.{name}"), &p);
        }
        cp.add_vec("low.scale", &self.low.actor.scale);
        cp.add_vec("high.scale", &self.high.actor.scale);

        cp.add_bytes("rng.env", rng_to_bytes(&self.env.rng));
        cp.add_bytes("rng.low", rng_to_bytes(&self.rng_low));
        cp.add_bytes("rng.high", rng_to_bytes(&self.rng_high));
        cp.add_bytes("rng.buffer", rng_to_bytes(&self.rng_buffer));

        cp.add_vec("state.obs", &self.obs);
        cp.add_vec("state.subgoal", &self.subgoal);
        cp.add_bytes("state.episode", self.episode.to_le_bytes().to_vec());
        cp.add_bytes("state.ep_step", (self.ep_step as u64).to_le_bytes().to_vec());
        cp.add_scalar("state.zmax", self.zmax);
        cp.add_scalar("state.repr_loss_sum", self.repr_loss_sum);
        cp.add_bytes("state.repr_loss_count", self.repr_loss_count.to_le_bytes().to_vec());
        let c = &self.counters;
        for (name, v) in [
            ("counters.env_steps", c.env_steps),
            ("counters.episodes", c.episodes),
            ("counters.train_successes", c.train_successes),
            ("counters.low_updates", c.low_updates),
            ("counters.encoder_updates", c.encoder_updates),
            ("counters.high_updates", c.high_updates),
            ("counters.hyper_updates", c.hyper_updates),
        ] {
            cp.add_bytes(name, v.to_le_bytes().to_vec());
        }

        cp.add_vec("env.pos", &self.env.state.pos);
        cp.add_vec("env.vel", &self.env.state.vel);
        cp.add_vec("env.goal", &self.env.state.goal);
        cp.add_bytes("env.t", (self.env.state.t as u64).to_le_bytes().to_vec());
        cp.add_bytes("env.clamp_warnings", self.env.clamp_warnings.to_le_bytes().to_vec());

        let d = self.cfg.latent_dim;
        cp.add_matrix(
            "belief.mu",
            Tensor::from_fn(d, 2, |i, j| self.belief.mu[i][j]),
        );
        cp.add_matrix(
            "belief.sigma",
            Tensor::from_fn(2, 2, |i, j| self.belief.sigma[i][j]),
        );
        match &self.belief.last_state {
            Some(s) => {
                cp.add_bytes("belief.has_last", 1u64.to_le_bytes().to_vec());
                cp.add_vec("belief.last_state", s);
            }
            None => cp.add_bytes("belief.has_last", 0u64.to_le_bytes().to_vec()),
        }

        self.save_buffer(&mut cp);
        cp.save(path)
    }

    fn save_buffer(&self, cp: &mut Checkpoint) {
        let n = self.buffer.len();
        cp.add_bytes("buffer.total", self.buffer.total_pushed().to_le_bytes().to_vec());
        cp.add_bytes("buffer.len", (n as u64).to_le_bytes().to_vec());
        if n == 0 {
            return;
        }
        let ordered: Vec<&Transition> = self.buffer.iter_ordered().collect();
        let ds = ordered[0].s.len();
        let d = ordered[0].g.len();
        let grab = |f: &dyn Fn(&Transition) -> &[f64], w: usize| {
            Tensor::from_fn(n, w, |i, j| f(ordered[i])[j])
        };
        cp.add_matrix("buffer.s", grab(&|t| &t.s, ds));
        cp.add_matrix("buffer.g", grab(&|t| &t.g, d));
        cp.add_matrix("buffer.a", grab(&|t| &t.a, 2));
        cp.add_matrix("buffer.s2", grab(&|t| &t.s_next, ds));
        cp.add_matrix("buffer.g2", grab(&|t| &t.g_next, d));
        cp.add_matrix("buffer.r", Tensor::from_fn(n, 1, |i, _| ordered[i].r_env));
        cp.add_matrix(
            "buffer.done",
            Tensor::from_fn(n, 1, |i, _| ordered[i].done as u8 as f64),
        );
        cp.add_matrix(
            "buffer.episode",
            Tensor::from_fn(n, 1, |i, _| ordered[i].episode as f64),
        );
        cp.add_matrix(
            "buffer.step",
            Tensor::from_fn(n, 1, |i, _| ordered[i].step as f64),
        );
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let cp = Checkpoint::load(path)?;
        let cfg_text = String::from_utf8(cp.bytes("config")?.to_vec()).context("config segment not utf8")?;
        let cfg: TrainConfig = toml::from_str(&cfg_text)?;
        let seed = cp.u64_of("seed")?;
        let mut trainer = Trainer::new(cfg, seed)?;
        trainer.restore_from(&cp)?;
        Ok(trainer)
    }

    fn restore_from(&mut self, cp: &Checkpoint) -> Result<()> {
        for p in self.repr.encoder.params().into_iter().chain(self.repr.hp.params()) {
            let name = p.borrow().name.clone();
            cp.load_param(&format!("param.{name}"), &p)?;
        }
        if let ReprKind::RandomProjection(proj) = &mut self.repr.kind {
            *proj = cp.matrix("repr.projection")?.clone();
        }
        self.repr.norm.count = cp.scalar("repr.norm.count")?;
        self.repr.norm.mean = cp.matrix("repr.norm.mean")?.data().to_vec();
        self.repr.norm.m2 = cp.matrix("repr.norm.m2")?.data().to_vec();

        for p in self.low.all_params().into_iter().chain(self.high.all_params()) {
            let name = p.borrow().name.clone();
            cp.load_param(&format!("param.{name}"), &p)?;
        }
        self.low.actor.scale = cp.matrix("low.scale")?.data().to_vec();
        self.high.actor.scale = cp.matrix("high.scale")?.data().to_vec();

        self.env.rng = rng_from_bytes(cp.bytes("rng.env")?)?;
        self.rng_low = rng_from_bytes(cp.bytes("rng.low")?)?;
        self.rng_high = rng_from_bytes(cp.bytes("rng.high")?)?;
        self.rng_buffer = rng_from_bytes(cp.bytes("rng.buffer")?)?;

        self.obs = cp.matrix("state.obs")?.data().to_vec();
        self.subgoal = cp.matrix("state.subgoal")?.data().to_vec();
        self.episode = cp.u64_of("state.episode")?;
        self.ep_step = cp.u64_of("state.ep_step")? as u32;
        self.zmax = cp.scalar("state.zmax")?;
        self.repr_loss_sum = cp.scalar("state.repr_loss_sum")?;
        self.repr_loss_count = cp.u64_of("state.repr_loss_count")?;
        self.counters = Counters {
            env_steps: cp.u64_of("counters.env_steps")?,
            episodes: cp.u64_of("counters.episodes")?,
            train_successes: cp.u64_of("counters.train_successes")?,
            low_updates: cp.u64_of("counters.low_updates")?,
            encoder_updates: cp.u64_of("counters.encoder_updates")?,
            high_updates: cp.u64_of("counters.high_updates")?,
            hyper_updates: cp.u64_of("counters.hyper_updates")?,
        };

        let pos = cp.matrix("env.pos")?.data().to_vec();
        let vel = cp.matrix("env.vel")?.data().to_vec();
        let goal = cp.matrix("env.goal")?.data().to_vec();
        self.env.state.pos = [pos[0], pos[1]];
        self.env.state.vel = [vel[0], vel[1]];
        self.env.state.goal = [goal[0], goal[1]];
        self.env.state.t = cp.u64_of("env.t")? as u32;
        self.env.clamp_warnings = cp.u64_of("env.clamp_warnings")?;

        let mu = cp.matrix("belief.mu")?;
        let sigma = cp.matrix("belief.sigma")?;
        self.belief = self.repr.fresh_belief();
        for i in 0..self.cfg.latent_dim {
            self.belief.mu[i] = [mu.get(i, 0), mu.get(i, 1)];
        }
        for i in 0..2 {
            for j in 0..2 {
                self.belief.sigma[i][j] = sigma.get(i, j);
            }
        }
        self.belief.last_state = if cp.u64_of("belief.has_last")? == 1 {
            Some(cp.matrix("belief.last_state")?.data().to_vec())
        } else {
            None
        };

        self.restore_buffer(cp)?;
        Ok(())
    }

    fn restore_buffer(&mut self, cp: &Checkpoint) -> Result<()> {
        let total = cp.u64_of("buffer.total")?;
        let n = cp.u64_of("buffer.len")? as usize;
        if n == 0 {
            self.buffer = ReplayBuffer::new(self.cfg.replay_capacity, self.cfg.k);
            return Ok(());
        }
        let s = cp.matrix("buffer.s")?;
        let g = cp.matrix("buffer.g")?;
        let a = cp.matrix("buffer.a")?;
        let s2 = cp.matrix("buffer.s2")?;
        let g2 = cp.matrix("buffer.g2")?;
        let r = cp.matrix("buffer.r")?;
        let done = cp.matrix("buffer.done")?;
        let episode = cp.matrix("buffer.episode")?;
        let step = cp.matrix("buffer.step")?;
        let ordered: Vec<Transition> = (0..n)
            .map(|i| Transition {
                s: s.row_slice(i).to_vec(),
                g: g.row_slice(i).to_vec(),
                a: a.row_slice(i).to_vec(),
                r_env: r.get(i, 0),
                s_next: s2.row_slice(i).to_vec(),
                g_next: g2.row_slice(i).to_vec(),
                done: done.get(i, 0) != 0.0,
                episode: episode.get(i, 0) as u64,
                step: step.get(i, 0) as u32,
            })
            .collect();
        self.buffer = ReplayBuffer::rebuild(self.cfg.replay_capacity, self.cfg.k, ordered, total);
        Ok(())
    }
}

/// Initializes a trainer for a target task from a source checkpoint: the
/// encoder, GP hyperparameters, input normalizer and the whole low-level
/// agent are copied (weights only, fresh optimizer state); the high-level
/// agent and the replay buffer start fresh.
pub fn transfer_init(cfg: TrainConfig, seed: u64, source: &Path) -> Result<Trainer> {
    let cp = Checkpoint::load(source)?;
    let src_cfg: TrainConfig =
        toml::from_str(&String::from_utf8(cp.bytes("config")?.to_vec())?)?;
    if src_cfg.latent_dim != cfg.latent_dim {
        bail!(
            "latent dimension mismatch: source {} vs target {}",
            src_cfg.latent_dim,
            cfg.latent_dim
        );
    }
    if src_cfg.encoder_hidden != cfg.encoder_hidden || src_cfg.hidden_dim != cfg.hidden_dim {
        bail!("network width mismatch between source and target configs");
    }
    if src_cfg.repr_variant != cfg.repr_variant {
        bail!("representation variant mismatch between source and target configs");
    }
    let mut trainer = Trainer::new(cfg, seed)?;
    for p in trainer
        .repr
        .encoder
        .params()
        .into_iter()
        .chain(trainer.repr.hp.params())
        .chain(trainer.low.all_params())
    {
        let name = p.borrow().name.clone();
        let value = cp.matrix(&format!("param.{name}.value"))?.clone();
        if value.shape() != p.borrow().value.shape() {
            bail!("source checkpoint parameter `{name}` has incompatible shape");
        }
        p.borrow_mut().value = value;
    }
    if let ReprKind::RandomProjection(proj) = &mut trainer.repr.kind {
        *proj = cp.matrix("repr.projection")?.clone();
    }
    trainer.repr.norm.count = cp.scalar("repr.norm.count")?;
    trainer.repr.norm.mean = cp.matrix("repr.norm.mean")?.data().to_vec();
    trainer.repr.norm.m2 = cp.matrix("repr.norm.m2")?.data().to_vec();
    trainer.low.actor.scale = cp.matrix("low.scale")?.data().to_vec();
    trainer.high.actor.scale = cp.matrix("high.scale")?.data().to_vec();
    trainer.zmax = cp.scalar("state.zmax")?;
    // the subgoal emitted during construction predates the transfer; redo it
    trainer.subgoal = trainer.emit_subgoal_here();
    Ok(trainer)
}
