//! Exact constant-memory online inference of the subgoal representation.
//!
//! The Matérn-3/2 prior over a chain of states is equivalent to a linear
//! SDE in the two-dimensional state (value, derivative). Advancing the
//! belief by the distance between consecutive raw states and conditioning
//! on each intermediate latent is a Kalman recursion whose filtered mean
//! reproduces the batch posterior over the visited chain exactly.
//!
//! One 2×2 covariance is shared across all latent dimensions: the kernel
//! depends only on states, so every dimension sees the same gain.

use crate::autodiff::Tensor;
use crate::gp::GpHyperparams;
use crate::{state_distance, CoreError, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

type Mat2 = [[f64; 2]; 2];

fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat2_transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Which covariance initializes the belief. `Derived` is the steady state
/// of the Matérn-3/2 SDE, `diag(γ², 3γ²/ℓ²)`; `PaperPrinted` is the
/// `diag(γ², 3γ²/ℓ)` form and exists so the self-test can demonstrate
/// that it breaks the filter/batch equivalence for ℓ ≠ 1. The process
/// noise Ω always comes from the derived steady state: it is a property
/// of the SDE itself, not of the belief initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Sigma0Variant {
    #[default]
    Derived,
    PaperPrinted,
}

/// Stationary covariance Σ₀ of the (value, derivative) state.
pub fn stationary_cov(hp: &GpHyperparams) -> Mat2 {
    let gamma2 = hp.gamma2();
    let ell = hp.ell();
    [[gamma2, 0.0], [0.0, 3.0 * gamma2 / (ell * ell)]]
}

fn initial_cov(hp: &GpHyperparams, variant: Sigma0Variant) -> Mat2 {
    match variant {
        Sigma0Variant::Derived => stationary_cov(hp),
        Sigma0Variant::PaperPrinted => {
            let gamma2 = hp.gamma2();
            [[gamma2, 0.0], [0.0, 3.0 * gamma2 / hp.ell()]]
        }
    }
}

/// Transition of the SDE belief over a state-distance increment.
#[derive(Clone, Debug)]
pub struct EvolutionOperator {
    pub psi: Mat2,
    pub omega: Mat2,
}

/// `Ψ = exp(A·ΔS)` for the Matérn-3/2 companion matrix, in closed form
/// (repeated eigenvalue −√3/ℓ), and `Ω = Σ₀ − Ψ Σ₀ Ψᵀ` with Σ₀ the SDE
/// steady state.
pub fn evolution(hp: &GpHyperparams, delta_s: f64) -> Result<EvolutionOperator> {
    if !delta_s.is_finite() || delta_s < 0.0 {
        return Err(CoreError::NegativeDistance(delta_s));
    }
    let ell = hp.ell();
    let lambda = SQRT3 / ell;
    let e = (-lambda * delta_s).exp();
    let psi: Mat2 = [
        [e * (1.0 + lambda * delta_s), e * delta_s],
        [-e * lambda * lambda * delta_s, e * (1.0 - lambda * delta_s)],
    ];
    let sigma0 = stationary_cov(hp);
    let p = mat2_mul(&mat2_mul(&psi, &sigma0), &mat2_transpose(&psi));
    let omega: Mat2 = [
        [sigma0[0][0] - p[0][0], sigma0[0][1] - p[0][1]],
        [sigma0[1][0] - p[1][0], sigma0[1][1] - p[1][1]],
    ];
    Ok(EvolutionOperator { psi, omega })
}

/// Per-episode filter state: one (value, derivative) mean per latent
/// dimension, a shared 2×2 covariance, and the previous raw state.
#[derive(Clone, Debug)]
pub struct Belief {
    /// One `[value, derivative]` pair per latent dimension.
    pub mu: Vec<[f64; 2]>,
    pub sigma: Mat2,
    pub last_state: Option<Vec<f64>>,
}

impl Belief {
    pub fn latent_dim(&self) -> usize {
        self.mu.len()
    }

    /// Filtered subgoal representation `hᵀμ` per dimension.
    pub fn mean(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m[0]).collect()
    }

    pub fn predict(&mut self, op: &EvolutionOperator) {
        for m in &mut self.mu {
            let v = [
                op.psi[0][0] * m[0] + op.psi[0][1] * m[1],
                op.psi[1][0] * m[0] + op.psi[1][1] * m[1],
            ];
            *m = v;
        }
        let p = mat2_mul(&mat2_mul(&op.psi, &self.sigma), &mat2_transpose(&op.psi));
        for i in 0..2 {
            for j in 0..2 {
                self.sigma[i][j] = p[i][j] + op.omega[i][j];
            }
        }
    }

    /// Kalman update conditioning on the intermediate latent `f`, with
    /// observation model `h = (1 0)ᵀ`. Re-symmetrizes the covariance.
    pub fn update(&mut self, f: &[f64], hp: &GpHyperparams) -> Result<()> {
        assert_eq!(f.len(), self.mu.len(), "latent dimension mismatch");
        let s = self.sigma[0][0] + hp.sigma2();
        if !(s > 0.0) {
            return Err(CoreError::DegenerateInnovation(s));
        }
        let k = [self.sigma[0][0] / s, self.sigma[1][0] / s];
        for (m, &obs) in self.mu.iter_mut().zip(f.iter()) {
            let innovation = obs - m[0];
            m[0] += k[0] * innovation;
            m[1] += k[1] * innovation;
        }
        // Σ ← Σ̃ − k (row 0 of Σ̃), then (Σ+Σᵀ)/2
        let row0 = [self.sigma[0][0], self.sigma[0][1]];
        for i in 0..2 {
            for j in 0..2 {
                self.sigma[i][j] -= k[i] * row0[j];
            }
        }
        let off = 0.5 * (self.sigma[0][1] + self.sigma[1][0]);
        self.sigma[0][1] = off;
        self.sigma[1][0] = off;
        Ok(())
    }

    /// Advances the belief by one raw state and its intermediate latent,
    /// returning the filtered subgoal representation.
    pub fn step(&mut self, state: &[f64], f: &[f64], hp: &GpHyperparams) -> Result<Vec<f64>> {
        if let Some(last) = &self.last_state {
            let op = evolution(hp, state_distance(state, last))?;
            self.predict(&op);
        }
        self.update(f, hp)?;
        self.last_state = Some(state.to_vec());
        Ok(self.mean())
    }
}

/// Fresh belief at episode start: zero mean at the stationary covariance.
pub fn initial_belief_with(hp: &GpHyperparams, latent_dim: usize, variant: Sigma0Variant) -> Belief {
    Belief {
        mu: vec![[0.0; 2]; latent_dim],
        sigma: initial_cov(hp, variant),
        last_state: None,
    }
}

pub fn initial_belief(hp: &GpHyperparams, latent_dim: usize) -> Belief {
    initial_belief_with(hp, latent_dim, Sigma0Variant::Derived)
}

/// Runs the full recursion over an ordered trajectory, returning the N×d
/// filtered means. Memory use is constant in N beyond the output.
pub fn filter_trajectory(states: &[Vec<f64>], f: &Tensor, hp: &GpHyperparams) -> Result<Tensor> {
    filter_trajectory_with(states, f, hp, Sigma0Variant::Derived)
}

pub fn filter_trajectory_with(
    states: &[Vec<f64>],
    f: &Tensor,
    hp: &GpHyperparams,
    variant: Sigma0Variant,
) -> Result<Tensor> {
    assert_eq!(states.len(), f.rows(), "states and F must be aligned");
    let d = f.cols();
    let mut belief = initial_belief_with(hp, d, variant);
    let mut out = Tensor::zeros(states.len(), d);
    for (i, s) in states.iter().enumerate() {
        let z = belief.step(s, f.row_slice(i), hp)?;
        for (j, v) in z.iter().enumerate() {
            out.set(i, j, *v);
        }
    }
    Ok(out)
}
