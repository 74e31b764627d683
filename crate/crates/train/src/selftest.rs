//! Exact-math verification suites behind `hlps selftest` and the
//! acceptance tests: the filter/batch equivalence fuzz, kernel and
//! posterior properties, and finite-difference gradient checks.

use hlps_core::autodiff::{clear_grads, softplus, Tape, Tensor};
use hlps_core::gp::{batch_posterior, covariance_matrix, GpHyperparams, SupportWindow};
use hlps_core::objective::{hlps_loss, LossConfig, LossVariant, Triplet, RATIO_EPS};
use hlps_core::repr::ReprModel;
use hlps_core::sac::{SacAgent, SacBatch};
use hlps_core::statespace::{filter_trajectory_with, Sigma0Variant};
use rand::Rng;
use rand_distr::StandardNormal;

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EquivalenceReport {
    pub cases: usize,
    /// Largest |filter − batch| over every prefix step of every case.
    pub max_err: f64,
    /// Cases whose own max error exceeded 1e-3.
    pub cases_over_1e3: usize,
    pub seconds: f64,
}

impl EquivalenceReport {
    pub fn passes_1e8(&self) -> bool {
        self.max_err < 1e-8
    }
}

/// Random chains: N ≤ 50 one-dimensional increasing states (so pairwise
/// distances equal summed increments), random latents, hyperparameters
/// log-uniform in [0.1, 10]. Compares the filtered mean at every step i
/// against the batch posterior over the prefix `states[0..=i]`.
pub fn equivalence_suite(cases: usize, variant: Sigma0Variant, seed: u64) -> EquivalenceReport {
    let started = std::time::Instant::now();
    let mut rng = hlps_core::rng::stream(seed, 0xE0);
    let mut report = EquivalenceReport { cases, ..Default::default() };
    for _ in 0..cases {
        let n = rng.gen_range(2..=50usize);
        let mut x = 0.0;
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            x += rng.gen_range(0.01..3.0);
            states.push(vec![x]);
        }
        let f = Tensor::from_fn(n, 2, |_, _| rng.gen_range(-3.0..3.0));
        let hp = GpHyperparams::new(
            log_uniform(&mut rng, 0.1, 10.0),
            log_uniform(&mut rng, 0.1, 10.0),
            log_uniform(&mut rng, 0.1, 10.0),
        );
        let filtered = filter_trajectory_with(&states, &f, &hp, variant).expect("filter runs");
        let mut case_err = 0.0f64;
        for i in 0..n {
            let window = SupportWindow::new(
                states[..=i].to_vec(),
                Tensor::from_fn(i + 1, 2, |r, c| f.get(r, c)),
            );
            let batch = batch_posterior(&window, &hp).expect("posterior solves");
            for j in 0..2 {
                case_err = case_err.max((filtered.get(i, j) - batch.z_mean.get(i, j)).abs());
            }
        }
        report.max_err = report.max_err.max(case_err);
        if case_err > 1e-3 {
            report.cases_over_1e3 += 1;
        }
    }
    report.seconds = started.elapsed().as_secs_f64();
    report
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KernelReport {
    pub cases: usize,
    pub min_eigenvalue: f64,
    pub max_shrinkage_err: f64,
    pub var_bound_violations: usize,
    pub seconds: f64,
}

impl KernelReport {
    pub fn passes(&self) -> bool {
        self.min_eigenvalue >= 0.0
            && self.max_shrinkage_err < 1e-10
            && self.var_bound_violations == 0
    }
}

/// Jacobi eigenvalue iteration for a symmetric matrix; the independent
/// PSD oracle (no Cholesky involved).
fn symmetric_eigenvalues(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
            }
        }
    }
    (0..n).map(|i| m.get(i, i)).collect()
}

/// Covariance PSD (with the 1e-8 shift), exact N=1 shrinkage, and the
/// posterior variance band 0 ≤ var ≤ γ².
pub fn kernel_suite(cases: usize, seed: u64) -> KernelReport {
    let started = std::time::Instant::now();
    let mut rng = hlps_core::rng::stream(seed, 0xE1);
    let mut report = KernelReport {
        cases,
        min_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    for case in 0..cases {
        let n = rng.gen_range(1..=12usize);
        let dim = rng.gen_range(1..=7usize);
        let mut states: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-6.0..6.0)).collect())
            .collect();
        if case % 5 == 0 && n >= 2 {
            // duplicated support states must stay harmless
            states[1] = states[0].clone();
        }
        let gamma2 = log_uniform(&mut rng, 0.1, 10.0);
        let ell = log_uniform(&mut rng, 0.1, 10.0);
        let sigma2 = log_uniform(&mut rng, 0.1, 10.0);
        let hp = GpHyperparams::new(gamma2, ell, sigma2);
        let mut c = covariance_matrix(&states, &hp).expect("finite states");
        for i in 0..n {
            c.set(i, i, c.get(i, i) + 1e-8);
        }
        for eig in symmetric_eigenvalues(&c) {
            report.min_eigenvalue = report.min_eigenvalue.min(eig);
        }

        let f = Tensor::from_fn(n, 2, |_, _| rng.gen_range(-4.0..4.0));
        let post = batch_posterior(&SupportWindow::new(states, f), &hp).expect("solves");
        for i in 0..n {
            for j in 0..2 {
                let v = post.z_var.get(i, j);
                if !(0.0..=gamma2 + 1e-9).contains(&v) {
                    report.var_bound_violations += 1;
                }
            }
        }

        // N=1 exact shrinkage
        let single = SupportWindow::new(
            vec![(0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()],
            Tensor::from_vec(1, 2, vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]),
        );
        let post = batch_posterior(&single, &hp).expect("solves");
        let shrink = gamma2 / (gamma2 + sigma2);
        for j in 0..2 {
            let expect = single.f.get(0, j) * shrink;
            report.max_shrinkage_err =
                report.max_shrinkage_err.max((post.z_mean.get(0, j) - expect).abs());
        }
    }
    report.seconds = started.elapsed().as_secs_f64();
    report
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradientReport {
    pub repr_cases: usize,
    pub repr_max_rel_err: f64,
    pub sac_cases: usize,
    pub sac_max_rel_err: f64,
    pub seconds: f64,
}

impl GradientReport {
    pub fn passes(&self) -> bool {
        self.repr_max_rel_err < 1e-4 && self.sac_max_rel_err < 1e-3
    }
}

fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / fd.abs().max(ad.abs()).max(1e-6)
}

/// Central finite differences (step 1e-5) against the analytic gradients
/// of the representation loss (encoder + hyperparameters, with the
/// stop-gradient ratio frozen in the oracle) and of the SAC losses on
/// width-4 networks.
pub fn gradient_suite(cases: usize, seed: u64) -> GradientReport {
    let started = std::time::Instant::now();
    let mut report = GradientReport {
        repr_cases: cases,
        sac_cases: cases,
        ..Default::default()
    };
    let h = 1e-5;

    // representation loss
    let mut rng = hlps_core::rng::stream(seed, 0xE2);
    for case in 0..cases {
        let mut init = hlps_core::rng::stream(seed ^ 0x5eed, case as u64 + 1);
        let m = ReprModel::new(3, 8, 2, &mut init);
        let batch: Vec<Triplet> = (0..3)
            .map(|_| {
                let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let near: Vec<f64> = s.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
                let far: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                Triplet::same_episode(s, near, far, 0)
            })
            .collect();
        let cfg = LossConfig { variant: LossVariant::Softplus, ratio_grad: false };
        let ratios: Vec<f64> = batch
            .iter()
            .map(|t| {
                let f = m
                    .encode_batch(&[t.s_i.clone(), t.s_next.clone(), t.s_k.clone()])
                    .expect("encode");
                let df1 = f.row(0).sub(&f.row(1)).norm2();
                let dfk = f.row(0).sub(&f.row(2)).norm2();
                df1 / (dfk + RATIO_EPS)
            })
            .collect();
        let frozen_loss = |m: &ReprModel| -> f64 {
            let mut sum = 0.0;
            for (t, ratio) in batch.iter().zip(&ratios) {
                let states = vec![t.s_i.clone(), t.s_next.clone(), t.s_k.clone()];
                let z = m.phi_batch(&states).expect("posterior");
                let dz1 = z.row(0).sub(&z.row(1)).norm2();
                let dzk = z.row(0).sub(&z.row(2)).norm2();
                sum += ratio * softplus(dz1 - dzk);
            }
            sum / batch.len() as f64
        };
        let tape = Tape::new();
        hlps_loss(&tape, &m, &batch, &cfg).expect("loss builds").backward();
        let mut params = m.encoder.params();
        params.extend(m.hp.params());
        for p in &params {
            let (rows, cols) = p.borrow().value.shape();
            for (i, j) in [(0, 0), (rows - 1, cols - 1)] {
                let base = p.borrow().value.get(i, j);
                p.borrow_mut().value.set(i, j, base + h);
                let up = frozen_loss(&m);
                p.borrow_mut().value.set(i, j, base - h);
                let down = frozen_loss(&m);
                p.borrow_mut().value.set(i, j, base);
                let fd = (up - down) / (2.0 * h);
                let ad = p.borrow().grad.get(i, j);
                if fd.abs().max(ad.abs()) > 1e-9 {
                    report.repr_max_rel_err = report.repr_max_rel_err.max(rel_err(ad, fd));
                }
            }
        }
        let _ = case;
        clear_grads(&params);
    }

    // SAC losses on width-4 networks
    let mut rng = hlps_core::rng::stream(seed, 0xE3);
    for case in 0..cases {
        let mut init = hlps_core::rng::stream(seed ^ 0xacac, case as u64 + 1);
        let agent = SacAgent::new("g", 2, 1, 4, vec![1.0], &mut init);
        let n = 3;
        let batch = SacBatch {
            obs: Tensor::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0)),
            act: Tensor::from_fn(1, n, |_, _| rng.gen_range(-0.9..0.9)),
            reward: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            next_obs: Tensor::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0)),
            done: (0..n).map(|i| (i % 2) as f64).collect(),
        };
        let targets = agent.critic_targets(&batch, &mut rng);
        let noise = Tensor::from_fn(1, n, |_, _| rng.sample(StandardNormal));

        let tape = Tape::new();
        agent.critic_loss_tape(&tape, &batch, &targets).backward();
        let critic_value = |a: &SacAgent| {
            let t = Tape::new();
            a.critic_loss_tape(&t, &batch, &targets).item()
        };
        let mut critic_params = agent.critic1.params();
        critic_params.extend(agent.critic2.params());
        for p in &critic_params {
            let (rows, cols) = p.borrow().value.shape();
            for (i, j) in [(0, 0), (rows - 1, cols - 1)] {
                let base = p.borrow().value.get(i, j);
                p.borrow_mut().value.set(i, j, base + h);
                let up = critic_value(&agent);
                p.borrow_mut().value.set(i, j, base - h);
                let down = critic_value(&agent);
                p.borrow_mut().value.set(i, j, base);
                let fd = (up - down) / (2.0 * h);
                let ad = p.borrow().grad.get(i, j);
                if fd.abs().max(ad.abs()) > 1e-9 {
                    report.sac_max_rel_err = report.sac_max_rel_err.max(rel_err(ad, fd));
                }
            }
        }
        clear_grads(&agent.all_params());

        let tape = Tape::new();
        let (actor_loss, logp) = agent.actor_loss_tape(&tape, &batch.obs, &noise);
        let logp_values = logp.value();
        actor_loss.backward();
        let actor_value = |a: &SacAgent| {
            let t = Tape::new();
            a.actor_loss_tape(&t, &batch.obs, &noise).0.item()
        };
        for p in &agent.actor.params() {
            let (rows, cols) = p.borrow().value.shape();
            for (i, j) in [(0, 0), (rows - 1, cols - 1)] {
                let base = p.borrow().value.get(i, j);
                p.borrow_mut().value.set(i, j, base + h);
                let up = actor_value(&agent);
                p.borrow_mut().value.set(i, j, base - h);
                let down = actor_value(&agent);
                p.borrow_mut().value.set(i, j, base);
                let fd = (up - down) / (2.0 * h);
                let ad = p.borrow().grad.get(i, j);
                if fd.abs().max(ad.abs()) > 1e-9 {
                    report.sac_max_rel_err = report.sac_max_rel_err.max(rel_err(ad, fd));
                }
            }
        }
        clear_grads(&agent.all_params());

        // temperature path
        let tape = Tape::new();
        let alpha_var = tape.param(&agent.log_alpha).exp();
        let centered = tape.constant(logp_values.map(|v| v + agent.target_entropy));
        centered.mul_scalar(&alpha_var).neg().mean().backward();
        let alpha_value = |a: &SacAgent| -> f64 {
            let alpha = a.alpha();
            let s: f64 = (0..logp_values.cols())
                .map(|j| -alpha * (logp_values.get(0, j) + a.target_entropy))
                .sum();
            s / logp_values.cols() as f64
        };
        let base = agent.log_alpha.borrow().value.item();
        agent.log_alpha.borrow_mut().value = Tensor::scalar(base + h);
        let up = alpha_value(&agent);
        agent.log_alpha.borrow_mut().value = Tensor::scalar(base - h);
        let down = alpha_value(&agent);
        agent.log_alpha.borrow_mut().value = Tensor::scalar(base);
        let fd = (up - down) / (2.0 * h);
        let ad = agent.log_alpha.borrow().grad.item();
        if fd.abs().max(ad.abs()) > 1e-9 {
            report.sac_max_rel_err = report.sac_max_rel_err.max(rel_err(ad, fd));
        }
        clear_grads(&[agent.log_alpha.clone()]);
        let _ = case;
    }
    report.seconds = started.elapsed().as_secs_f64();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_equivalence_suite_is_exact() {
        let report = equivalence_suite(50, Sigma0Variant::Derived, 7);
        assert!(report.passes_1e8(), "max err {}", report.max_err);
        assert_eq!(report.cases_over_1e3, 0);
    }

    #[test]
    fn printed_sigma0_fails_most_cases() {
        let report = equivalence_suite(100, Sigma0Variant::PaperPrinted, 7);
        assert!(
            report.cases_over_1e3 * 2 > report.cases,
            "only {}/{} cases broke tolerance",
            report.cases_over_1e3,
            report.cases
        );
    }

    #[test]
    fn kernel_suite_holds_on_small_run() {
        let report = kernel_suite(100, 11);
        assert!(report.passes(), "{report:?}");
    }

    #[test]
    fn gradient_suite_holds_on_small_run() {
        let report = gradient_suite(5, 13);
        assert!(report.passes(), "{report:?}");
    }

    #[test]
    fn jacobi_eigenvalues_match_known_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let m = Tensor::from_vec(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let mut eigs = symmetric_eigenvalues(&m);
        eigs.sort_by(f64::total_cmp);
        assert!((eigs[0] - 1.0).abs() < 1e-10);
        assert!((eigs[1] - 3.0).abs() < 1e-10);
    }
}
