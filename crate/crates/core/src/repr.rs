//! The subgoal representation φ(s): a one-hidden-layer encoder producing
//! the intermediate latent f, composed with the GP layer. Training uses
//! the batch posterior over a support window; rollouts use the
//! state-space recursion so the representation carries the whole episode
//! with constant memory.

use rand::Rng;

use crate::autodiff::{Parameter, SharedParam, Tape, Tensor, Var};
use crate::gp::{batch_posterior, batch_posterior_mean_tape_with, GpHyperparams, SupportWindow};
use crate::statespace::{initial_belief, Belief};
use crate::{CoreError, Result};

/// Streaming mean/variance normalization (Welford). Starts as identity
/// (zero mean, unit variance) and is frozen simply by not updating it.
#[derive(Clone, Debug)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len());
        self.count += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2[i] / self.count + 1e-8).sqrt()
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i]) / self.std(i))
            .collect()
    }
}

/// MLP with one hidden ReLU layer mapping states to the intermediate
/// latent f. `output_bound`, when set, soft-clips the output through
/// `B·tanh(u/B)`: near-identity inside ±B/2 and saturating at ±B. The
/// representation loss rewards ever-growing k-step latent distances, so
/// an unbounded head inflates its scale without limit and drags the
/// subgoal action box along with it.
#[derive(Clone)]
pub struct Encoder {
    pub w1: SharedParam,
    pub b1: SharedParam,
    pub w2: SharedParam,
    pub b2: SharedParam,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub output_bound: Option<f64>,
}

impl Encoder {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Encoder {
            w1: Parameter::shared_init("enc.w1", hidden, in_dim, in_dim, rng),
            b1: Parameter::shared_init("enc.b1", hidden, 1, in_dim, rng),
            w2: Parameter::shared_init("enc.w2", out_dim, hidden, hidden, rng),
            b2: Parameter::shared_init("enc.b2", out_dim, 1, hidden, rng),
            in_dim,
            hidden,
            out_dim,
            output_bound: None,
        }
    }

    pub fn params(&self) -> Vec<SharedParam> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }

    /// Forward pass on a `(in_dim, batch)` matrix of column samples.
    pub fn forward_raw(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.in_dim, "encoder input dimension mismatch");
        let h = self.w1.borrow().value.matmul(x).add_col_broadcast(&self.b1.borrow().value);
        let h = h.map(|v| v.max(0.0));
        let out = self.w2.borrow().value.matmul(&h).add_col_broadcast(&self.b2.borrow().value);
        match self.output_bound {
            Some(b) => out.map(|v| b * (v / b).tanh()),
            None => out,
        }
    }

    pub fn forward_tape(&self, tape: &Tape, x: &Var) -> Var {
        let w1 = tape.param(&self.w1);
        let b1 = tape.param(&self.b1);
        let w2 = tape.param(&self.w2);
        let b2 = tape.param(&self.b2);
        let h = w1.matmul(x).add_col(&b1).relu();
        let out = w2.matmul(&h).add_col(&b2);
        match self.output_bound {
            Some(b) => out.scale(1.0 / b).tanh().scale(b),
            None => out,
        }
    }
}

/// How φ(s) is computed. The fixed random projection is the ablation
/// baseline with no probabilistic layer at all.
#[derive(Clone)]
pub enum ReprKind {
    Learned,
    /// Fixed `d×ds` projection applied to the raw state.
    RandomProjection(Tensor),
}

/// Encoder + GP hyperparameters + input normalizer: everything φ needs.
#[derive(Clone)]
pub struct ReprModel {
    pub encoder: Encoder,
    pub hp: GpHyperparams,
    pub norm: RunningNorm,
    pub kind: ReprKind,
}

impl ReprModel {
    pub fn new(state_dim: usize, hidden: usize, latent_dim: usize, rng: &mut impl Rng) -> Self {
        ReprModel {
            encoder: Encoder::new(state_dim, hidden, latent_dim, rng),
            hp: GpHyperparams::default_init(),
            norm: RunningNorm::new(state_dim),
            kind: ReprKind::Learned,
        }
    }

    /// Ablation variant: φ(s) = P s with orthonormal rows, frozen.
    pub fn new_random_projection(
        state_dim: usize,
        latent_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut rows: Vec<Vec<f64>> = (0..latent_dim)
            .map(|_| {
                (0..state_dim)
                    .map(|_| {
                        // Box-Muller keeps this independent of distribution crates
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                        (-2.0 * u1.ln()).sqrt() * u2.cos()
                    })
                    .collect()
            })
            .collect();
        // Gram-Schmidt: orthonormal rows preserve state geometry on average
        for i in 0..rows.len() {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                for k in 0..state_dim {
                    rows[i][k] -= dot * rows[j][k];
                }
            }
            let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            rows[i].iter_mut().for_each(|v| *v /= norm);
        }
        let p = Tensor::from_fn(latent_dim, state_dim, |i, j| rows[i][j]);
        let mut model = ReprModel::new(state_dim, 1, latent_dim, rng);
        model.kind = ReprKind::RandomProjection(p);
        model
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.in_dim
    }

    pub fn latent_dim(&self) -> usize {
        match &self.kind {
            ReprKind::Learned => self.encoder.out_dim,
            ReprKind::RandomProjection(p) => p.rows(),
        }
    }

    /// Intermediate latent f for one state.
    pub fn encode(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.state_dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.state_dim(),
                got: s.len(),
            });
        }
        match &self.kind {
            ReprKind::Learned => {
                let x = Tensor::col(&self.norm.normalize(s));
                Ok(self.encoder.forward_raw(&x).data().to_vec())
            }
            ReprKind::RandomProjection(p) => Ok(p.matmul(&Tensor::col(s)).data().to_vec()),
        }
    }

    /// Encoder applied to a list of states, as an N×d matrix.
    pub fn encode_batch(&self, states: &[Vec<f64>]) -> Result<Tensor> {
        match &self.kind {
            ReprKind::Learned => {
                let x = self.normalized_input(states)?;
                Ok(self.encoder.forward_raw(&x).transpose())
            }
            ReprKind::RandomProjection(_) => {
                let d = self.latent_dim();
                let mut out = Tensor::zeros(states.len(), d);
                for (i, s) in states.iter().enumerate() {
                    let z = self.encode(s)?;
                    for (j, v) in z.iter().enumerate() {
                        out.set(i, j, *v);
                    }
                }
                Ok(out)
            }
        }
    }

    fn normalized_input(&self, states: &[Vec<f64>]) -> Result<Tensor> {
        let ds = self.state_dim();
        for s in states {
            if s.len() != ds {
                return Err(CoreError::DimensionMismatch { expected: ds, got: s.len() });
            }
        }
        let mut x = Tensor::zeros(ds, states.len());
        for (j, s) in states.iter().enumerate() {
            for (i, v) in self.norm.normalize(s).iter().enumerate() {
                x.set(i, j, *v);
            }
        }
        Ok(x)
    }

    /// Fresh per-episode filter state.
    pub fn fresh_belief(&self) -> Belief {
        initial_belief(&self.hp, self.latent_dim())
    }

    /// Online subgoal representation: advances the belief by the current
    /// state and returns z. The belief persists across subgoal changes
    /// within an episode and is reset at episode start.
    pub fn phi_online(&self, belief: &mut Belief, s: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            ReprKind::Learned => {
                let f = self.encode(s)?;
                belief.step(s, &f, &self.hp)
            }
            ReprKind::RandomProjection(_) => self.encode(s),
        }
    }

    /// Batch subgoal representation over a support window (posterior mean).
    pub fn phi_batch(&self, states: &[Vec<f64>]) -> Result<Tensor> {
        match &self.kind {
            ReprKind::Learned => {
                let f = self.encode_batch(states)?;
                let window = SupportWindow::new(states.to_vec(), f);
                Ok(batch_posterior(&window, &self.hp)?.z_mean)
            }
            ReprKind::RandomProjection(_) => self.encode_batch(states),
        }
    }

    /// Subgoal representation of `s_next` under the two-point posterior
    /// over each stored (s, s_next) pair, for relabeling intrinsic rewards
    /// at sampling time. The 2×2 solve is closed-form; encoding is batched
    /// across all pairs.
    pub fn phi_next_of_pairs(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<Vec<f64>>> {
        let d = self.latent_dim();
        let states: Vec<Vec<f64>> = pairs
            .iter()
            .flat_map(|(a, b)| [a.to_vec(), b.to_vec()])
            .collect();
        let f = self.encode_batch(&states)?;
        if matches!(self.kind, ReprKind::RandomProjection(_)) {
            return Ok(pairs
                .iter()
                .enumerate()
                .map(|(i, _)| (0..d).map(|j| f.get(2 * i + 1, j)).collect())
                .collect());
        }
        let gamma2 = self.hp.gamma2();
        let ell = self.hp.ell();
        let sigma2 = self.hp.sigma2();
        let mut out = Vec::with_capacity(pairs.len());
        for (i, (a, b)) in pairs.iter().enumerate() {
            let c = crate::gp::matern32_of_dist(crate::state_distance(a, b), gamma2, ell);
            let diag = gamma2 + sigma2;
            let det = diag * diag - c * c;
            // row of C(C+σ²I)^{-1} selecting the second point
            let w0 = c * sigma2 / det;
            let w1 = (gamma2 * diag - c * c) / det;
            out.push(
                (0..d)
                    .map(|j| w0 * f.get(2 * i, j) + w1 * f.get(2 * i + 1, j))
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Tape pipeline used by the representation losses: returns the
    /// intermediate latents F and posterior means Z, both N×d, sharing
    /// hyperparameter vars created once per tape.
    pub fn phi_batch_tape(
        &self,
        tape: &Tape,
        states: &[Vec<f64>],
        hp_vars: &(Var, Var, Var),
    ) -> Result<(Var, Var)> {
        let x = tape.constant(self.normalized_input(states)?);
        let f = self.encoder.forward_tape(tape, &x).t();
        let (g2, ell, s2) = hp_vars;
        let z = batch_posterior_mean_tape_with(tape, states, &f, g2, ell, s2)?;
        Ok((f, z))
    }
}
