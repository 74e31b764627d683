//! Matérn-3/2 kernel over raw state distances and the batch GP posterior
//! that restores subgoal representations from the encoder's intermediate
//! latents. Each latent dimension is an independent GP sharing one kernel,
//! so the covariance matrix is computed once per support window.

use crate::autodiff::{
    chol_solve as tape_chol_solve, cholesky_jittered, chol_solve_raw, matern32_cov, SharedParam,
    Parameter, Tape, Tensor, Var,
};
use crate::{state_distance, CoreError, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Length-scale floor applied after exponentiation.
pub const ELL_FLOOR: f64 = 1e-4;

/// The three learnable kernel/likelihood parameters, stored in log-space so
/// unconstrained gradient steps keep them positive.
#[derive(Clone)]
pub struct GpHyperparams {
    pub log_gamma2: SharedParam,
    pub log_ell: SharedParam,
    pub log_sigma2: SharedParam,
}

impl GpHyperparams {
    pub fn new(gamma2: f64, ell: f64, sigma2: f64) -> Self {
        assert!(gamma2 > 0.0 && ell > 0.0 && sigma2 > 0.0, "hyperparameters must be positive");
        GpHyperparams {
            log_gamma2: Parameter::shared("gp.log_gamma2", Tensor::scalar(gamma2.ln())),
            log_ell: Parameter::shared("gp.log_ell", Tensor::scalar(ell.ln())),
            log_sigma2: Parameter::shared("gp.log_sigma2", Tensor::scalar(sigma2.ln())),
        }
    }

    /// Paper defaults: unit magnitude and length-scale, moderate noise.
    pub fn default_init() -> Self {
        GpHyperparams::new(1.0, 1.0, 0.1)
    }

    pub fn gamma2(&self) -> f64 {
        self.log_gamma2.borrow().value.item().exp()
    }

    pub fn ell(&self) -> f64 {
        self.log_ell.borrow().value.item().exp().max(ELL_FLOOR)
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.borrow().value.item().exp()
    }

    pub fn params(&self) -> Vec<SharedParam> {
        vec![self.log_gamma2.clone(), self.log_ell.clone(), self.log_sigma2.clone()]
    }

    /// Positive-space values `(gamma2, ell, sigma2)` on a tape, with the
    /// length-scale floor applied.
    pub fn tape_values(&self, tape: &Tape) -> (Var, Var, Var) {
        let g2 = tape.param(&self.log_gamma2).exp();
        let ell = tape.param(&self.log_ell).exp().clamp(ELL_FLOOR, f64::INFINITY);
        let s2 = tape.param(&self.log_sigma2).exp();
        (g2, ell, s2)
    }
}

/// Matérn-3/2 kernel value for a nonnegative distance.
pub fn matern32_of_dist(d: f64, gamma2: f64, ell: f64) -> f64 {
    let u = SQRT3 * d / ell;
    gamma2 * (1.0 + u) * (-u).exp()
}

/// Kernel between two raw states; errors on non-finite components.
pub fn matern32(s_i: &[f64], s_j: &[f64], hp: &GpHyperparams) -> Result<f64> {
    if !s_i.iter().chain(s_j.iter()).all(|v| v.is_finite()) {
        return Err(CoreError::NonFiniteState);
    }
    Ok(matern32_of_dist(state_distance(s_i, s_j), hp.gamma2(), hp.ell()))
}

/// Pairwise Euclidean distance matrix of a state list.
pub fn distance_matrix(states: &[Vec<f64>]) -> Tensor {
    let n = states.len();
    let mut d = Tensor::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = state_distance(&states[i], &states[j]);
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// N×N covariance matrix `C[i][j] = κ(s_i, s_j)`.
pub fn covariance_matrix(states: &[Vec<f64>], hp: &GpHyperparams) -> Result<Tensor> {
    for s in states {
        if !s.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFiniteState);
        }
    }
    let (g2, ell) = (hp.gamma2(), hp.ell());
    Ok(distance_matrix(states).map(|d| matern32_of_dist(d, g2, ell)))
}

/// A window of support states with their intermediate latents.
#[derive(Clone, Debug)]
pub struct SupportWindow {
    pub states: Vec<Vec<f64>>,
    /// N×d intermediate latent representations.
    pub f: Tensor,
}

impl SupportWindow {
    pub fn new(states: Vec<Vec<f64>>, f: Tensor) -> Self {
        assert!(!states.is_empty(), "support window needs at least one point");
        assert_eq!(states.len(), f.rows(), "states and F must have equal length");
        assert!(f.is_finite(), "support window latents must be finite");
        SupportWindow { states, f }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Posterior means and per-point marginal variances over a support window.
#[derive(Clone, Debug)]
pub struct BatchPosterior {
    /// N×d posterior means.
    pub z_mean: Tensor,
    /// N×d marginal variances; identical across latent dimensions because
    /// the kernel sees only states.
    pub z_var: Tensor,
}

/// Batch GP posterior: `Z = C (C + σ²I)^{-1} F` columnwise and
/// `var = diag(C − C (C + σ²I)^{-1} C)`, solved by jittered Cholesky.
pub fn batch_posterior(window: &SupportWindow, hp: &GpHyperparams) -> Result<BatchPosterior> {
    let n = window.len();
    let d = window.f.cols();
    let c = covariance_matrix(&window.states, hp)?;
    let sigma2 = hp.sigma2();
    let gamma2 = hp.gamma2();

    let mut a = c.clone();
    for i in 0..n {
        a.set(i, i, a.get(i, i) + sigma2);
    }
    let (l, _) = cholesky_jittered(&a)?;
    let x = chol_solve_raw(&l, &window.f); // (C+σ²I)^{-1} F
    let z_mean = c.matmul(&x);

    let v = chol_solve_raw(&l, &c); // (C+σ²I)^{-1} C
    let mut z_var = Tensor::zeros(n, d);
    for i in 0..n {
        let mut var_i = c.get(i, i);
        for k in 0..n {
            var_i -= c.get(i, k) * v.get(k, i);
        }
        debug_assert!(var_i > -1e-6, "posterior variance {var_i} below numeric tolerance");
        let var_i = var_i.clamp(0.0, gamma2 + 1e-9);
        for j in 0..d {
            z_var.set(i, j, var_i);
        }
    }
    Ok(BatchPosterior { z_mean, z_var })
}

/// Tape version of the posterior mean, differentiable w.r.t. the latent
/// matrix `f` (N×d) and the GP hyperparameters.
pub fn batch_posterior_mean_tape(
    tape: &Tape,
    states: &[Vec<f64>],
    f: &Var,
    hp: &GpHyperparams,
) -> Result<Var> {
    let (g2, ell, s2) = hp.tape_values(tape);
    batch_posterior_mean_tape_with(tape, states, f, &g2, &ell, &s2)
}

/// As [`batch_posterior_mean_tape`] but over already-created hyperparameter
/// vars, so one tape can share them across many windows.
pub fn batch_posterior_mean_tape_with(
    tape: &Tape,
    states: &[Vec<f64>],
    f: &Var,
    gamma2: &Var,
    ell: &Var,
    sigma2: &Var,
) -> Result<Var> {
    let c = matern32_cov(tape, distance_matrix(states), gamma2, ell);
    let a = c.add_diag_scalar(sigma2);
    let x = tape_chol_solve(&a, f)?;
    Ok(c.matmul(&x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn kernel_at_zero_distance_is_gamma2() {
        let hp = GpHyperparams::new(2.5, 1.3, 0.1);
        let k = matern32(&[1.0, 2.0], &[1.0, 2.0], &hp).unwrap();
        assert!((k - 2.5).abs() < 1e-12);
    }

    #[test]
    fn kernel_unit_distance_value() {
        // γ²=1, ℓ=1, D=1 -> (1+√3) e^{-√3}
        let hp = GpHyperparams::new(1.0, 1.0, 0.1);
        let k = matern32(&[0.0], &[1.0], &hp).unwrap();
        let expected = (1.0 + SQRT3) * (-SQRT3).exp();
        assert!((k - expected).abs() < 1e-12);
        assert!((k - 0.48336).abs() < 1e-5);
    }

    #[test]
    fn kernel_symmetry() {
        let hp = GpHyperparams::new(1.7, 0.6, 0.2);
        let mut rng = crate::rng::stream(7, 1);
        use rand::Rng;
        for _ in 0..100 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let kab = matern32(&a, &b, &hp).unwrap();
            let kba = matern32(&b, &a, &hp).unwrap();
            assert_eq!(kab, kba);
            assert!(kab <= hp.gamma2() + 1e-12);
        }
    }

    #[test]
    fn kernel_rejects_non_finite() {
        let hp = GpHyperparams::default_init();
        assert!(matern32(&[f64::NAN], &[0.0], &hp).is_err());
    }

    #[test]
    fn covariance_single_point() {
        let hp = GpHyperparams::new(3.0, 1.0, 0.1);
        let c = covariance_matrix(&pts(&[0.4]), &hp).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert!((c.get(0, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_duplicate_states() {
        let hp = GpHyperparams::new(2.0, 1.0, 0.1);
        let c = covariance_matrix(&pts(&[1.0, 1.0]), &hp).unwrap();
        for v in c.data() {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_shrinkage_is_exact() {
        // N=1: Z = f γ²/(γ²+σ²)
        let hp = GpHyperparams::new(1.5, 1.0, 0.5);
        let w = SupportWindow::new(pts(&[0.0]), Tensor::from_vec(1, 2, vec![2.0, -4.0]));
        let post = batch_posterior(&w, &hp).unwrap();
        let shrink = 1.5 / (1.5 + 0.5);
        assert!((post.z_mean.get(0, 0) - 2.0 * shrink).abs() < 1e-10);
        assert!((post.z_mean.get(0, 1) + 4.0 * shrink).abs() < 1e-10);
    }

    #[test]
    fn tiny_noise_recovers_latent_and_large_noise_reverts_to_prior() {
        let w = SupportWindow::new(pts(&[0.0]), Tensor::from_vec(1, 1, vec![3.0]));
        let tight = GpHyperparams::new(1.0, 1.0, 1e-12);
        let post = batch_posterior(&w, &tight).unwrap();
        assert!((post.z_mean.get(0, 0) - 3.0).abs() < 1e-6);

        let loose = GpHyperparams::new(1.0, 1.0, 1e12);
        let post = batch_posterior(&w, &loose).unwrap();
        assert!(post.z_mean.get(0, 0).abs() < 1e-6);
        assert!((post.z_var.get(0, 0) - 1.0).abs() < 1e-6);
    }

    /// Independent dense oracle: builds the 3×3 system and inverts it
    /// explicitly with nalgebra, transcribing the posterior formula verbatim.
    #[test]
    fn three_point_chain_matches_dense_oracle() {
        let gamma2 = 1.0;
        let ell = 2.0;
        let sigma2 = 0.1;
        let hp = GpHyperparams::new(gamma2, ell, sigma2);
        let states = pts(&[0.0, 1.0, 2.0]);
        let f_col = [1.0, 0.0, -1.0];
        let w = SupportWindow::new(states.clone(), Tensor::from_vec(3, 1, f_col.to_vec()));
        let post = batch_posterior(&w, &hp).unwrap();

        let mut c = nalgebra::DMatrix::<f64>::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let d = (states[i][0] - states[j][0]).abs();
                let u = SQRT3 * d / ell;
                c[(i, j)] = gamma2 * (1.0 + u) * (-u).exp();
            }
        }
        let a = &c + nalgebra::DMatrix::identity(3, 3) * sigma2;
        let a_inv = a.try_inverse().unwrap();
        let f = nalgebra::DVector::from_row_slice(&f_col);
        let z = &c * &a_inv * &f;
        let cov = &c - &c * &a_inv * &c;
        for i in 0..3 {
            assert!((post.z_mean.get(i, 0) - z[i]).abs() < 1e-8, "mean row {i}");
            assert!((post.z_var.get(i, 0) - cov[(i, i)]).abs() < 1e-8, "var row {i}");
        }
    }

    #[test]
    fn posterior_variance_bounded_and_noise_monotone() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, 1);
        for _ in 0..50 {
            let n = rng.gen_range(1..8);
            let states: Vec<Vec<f64>> =
                (0..n).map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
            let f = Tensor::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
            let gamma2 = rng.gen_range(0.1..5.0);
            let ell = rng.gen_range(0.2..4.0);
            let s_lo = rng.gen_range(0.01..1.0);
            let s_hi = s_lo * rng.gen_range(1.5..10.0);
            let w = SupportWindow::new(states, f);
            let lo = batch_posterior(&w, &GpHyperparams::new(gamma2, ell, s_lo)).unwrap();
            let hi = batch_posterior(&w, &GpHyperparams::new(gamma2, ell, s_hi)).unwrap();
            for i in 0..n {
                for j in 0..2 {
                    assert!(lo.z_var.get(i, j) >= 0.0);
                    assert!(lo.z_var.get(i, j) <= gamma2 + 1e-9);
                    // more noise never decreases posterior variance
                    assert!(hi.z_var.get(i, j) >= lo.z_var.get(i, j) - 1e-9);
                }
            }
        }
    }

    #[test]
    fn n1_mean_magnitude_monotone_in_noise() {
        let w = SupportWindow::new(pts(&[0.0]), Tensor::from_vec(1, 1, vec![2.0]));
        let mut prev = f64::INFINITY;
        for s2 in [0.01, 0.1, 1.0, 10.0] {
            let post = batch_posterior(&w, &GpHyperparams::new(1.0, 1.0, s2)).unwrap();
            let m = post.z_mean.get(0, 0).abs();
            assert!(m <= prev + 1e-12);
            prev = m;
        }
    }

    #[test]
    fn tape_posterior_matches_raw() {
        let hp = GpHyperparams::new(1.3, 0.8, 0.2);
        let states = pts(&[0.0, 0.7, 2.1, 2.1]);
        let f = Tensor::from_fn(4, 2, |i, j| (i as f64 * 0.3 - j as f64).sin());
        let w = SupportWindow::new(states.clone(), f.clone());
        let raw = batch_posterior(&w, &hp).unwrap();

        let tape = Tape::new();
        let f_var = tape.constant(f);
        let z = batch_posterior_mean_tape(&tape, &states, &f_var, &hp).unwrap();
        let zv = z.value();
        for i in 0..4 {
            for j in 0..2 {
                // raw path uses the same 1e-8 base jitter inside cholesky_jittered
                assert!((zv.get(i, j) - raw.z_mean.get(i, j)).abs() < 1e-9);
            }
        }
    }

    /// Gradients of a scalar functional of the posterior mean w.r.t. F and
    /// all three log hyperparameters, against central finite differences.
    #[test]
    fn tape_posterior_gradients_match_finite_differences() {
        use rand::Rng;
        let mut rng = crate::rng::stream(13, 1);
        for case in 0..10 {
            let n = rng.gen_range(2..6);
            let states: Vec<Vec<f64>> =
                (0..n).map(|_| (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let f0 = Tensor::from_fn(n, 2, |_, _| rng.gen_range(-1.5..1.5));
            let hp = GpHyperparams::new(
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.05..1.0),
            );
            let weights = Tensor::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));

            let loss_value = |f_t: &Tensor, hp: &GpHyperparams| -> f64 {
                let w = SupportWindow::new(states.clone(), f_t.clone());
                batch_posterior(&w, hp).unwrap().z_mean.dot(&weights)
            };

            let f_param = Parameter::shared("f", f0.clone());
            let tape = Tape::new();
            let f_var = tape.param(&f_param);
            let z = batch_posterior_mean_tape(&tape, &states, &f_var, &hp).unwrap();
            let loss = z.mul(&tape.constant(weights.clone())).sum();
            loss.backward();

            let h = 1e-5;
            // F entries (a few spot checks per case)
            for probe in 0..3 {
                let i = probe % n;
                let j = probe % 2;
                let mut fp = f0.clone();
                fp.set(i, j, f0.get(i, j) + h);
                let mut fm = f0.clone();
                fm.set(i, j, f0.get(i, j) - h);
                let fd = (loss_value(&fp, &hp) - loss_value(&fm, &hp)) / (2.0 * h);
                let ad = f_param.borrow().grad.get(i, j);
                let denom = fd.abs().max(ad.abs()).max(1e-6);
                assert!((fd - ad).abs() / denom < 1e-4, "case {case} dF[{i},{j}]: {ad} vs {fd}");
            }
            // log hyperparameters
            let hp_params = [&hp.log_gamma2, &hp.log_ell, &hp.log_sigma2];
            for p in hp_params {
                let base = p.borrow().value.item();
                p.borrow_mut().value = Tensor::scalar(base + h);
                let up = loss_value(&f0, &hp);
                p.borrow_mut().value = Tensor::scalar(base - h);
                let down = loss_value(&f0, &hp);
                p.borrow_mut().value = Tensor::scalar(base);
                let fd = (up - down) / (2.0 * h);
                let ad = p.borrow().grad.item();
                let denom = fd.abs().max(ad.abs()).max(1e-6);
                assert!(
                    (fd - ad).abs() / denom < 1e-4,
                    "case {case} {}: {ad} vs {fd}",
                    p.borrow().name
                );
            }
        }
    }
}
