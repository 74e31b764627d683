//! The representation loss over (s_i, s_{i+1}, s_{i+k}) triplets:
//!
//! ```text
//! L = (Δf¹ / (Δf^k + ε)) · log(1 + exp(Δz¹ − Δz^k))
//! ```
//!
//! pulling one-step transitions together and pushing k-step transitions
//! apart in the GP latent space, weighted by the relative distance of the
//! intermediate latents. The ratio is a stop-gradient coefficient by
//! default (`ratio_grad` reverses that); a hinge-with-margin variant backs
//! the ablation baseline.

use crate::autodiff::{adam_step, clear_grads, Tape, Var};
use crate::repr::{ReprKind, ReprModel};
use crate::{CoreError, Result};

pub const RATIO_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossVariant {
    Softplus,
    Hinge { margin: f64 },
}

impl Default for LossVariant {
    fn default() -> Self {
        LossVariant::Softplus
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Backpropagate through the Δf ratio instead of treating it as a
    /// constant weight.
    pub ratio_grad: bool,
}

/// Three support states from one trajectory.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub s_i: Vec<f64>,
    pub s_next: Vec<f64>,
    pub s_k: Vec<f64>,
    /// Episode ids of the three states; they must match.
    pub episodes: [u64; 3],
}

impl Triplet {
    pub fn same_episode(s_i: Vec<f64>, s_next: Vec<f64>, s_k: Vec<f64>, episode: u64) -> Self {
        Triplet {
            s_i,
            s_next,
            s_k,
            episodes: [episode; 3],
        }
    }
}

/// A support window with triplet anchors `(i, i+1, i+k)` indexing into it.
/// Hyperparameter updates use windows spanning several high-level segments;
/// encoder updates use the minimal three-point window.
#[derive(Clone, Debug)]
pub struct SupportSet {
    pub states: Vec<Vec<f64>>,
    pub anchors: Vec<[usize; 3]>,
}

/// Scalar form of one loss term, used directly by the identity tests.
pub fn eq4_term(ratio: f64, dz1: f64, dzk: f64) -> f64 {
    ratio * crate::autodiff::softplus(dz1 - dzk)
}

fn loss_terms(
    tape: &Tape,
    model: &ReprModel,
    set: &SupportSet,
    cfg: &LossConfig,
    hp_vars: &(Var, Var, Var),
    terms: &mut Vec<Var>,
) -> Result<()> {
    let (f, z) = model.phi_batch_tape(tape, &set.states, hp_vars)?;
    let fv = f.value();
    for &[a, b, c] in &set.anchors {
        let dz1 = z.row(a).sub(&z.row(b)).l2_norm();
        let dzk = z.row(a).sub(&z.row(c)).l2_norm();
        let term = match cfg.variant {
            LossVariant::Softplus => {
                let gap = dz1.sub(&dzk).softplus();
                if cfg.ratio_grad {
                    let df1 = f.row(a).sub(&f.row(b)).l2_norm();
                    let dfk = f.row(a).sub(&f.row(c)).l2_norm().add_scalar(RATIO_EPS);
                    df1.div(&dfk).mul(&gap)
                } else {
                    let df1 = fv.row(a).sub(&fv.row(b)).norm2();
                    let dfk = fv.row(a).sub(&fv.row(c)).norm2();
                    gap.scale(df1 / (dfk + RATIO_EPS))
                }
            }
            LossVariant::Hinge { margin } => dz1.sub(&dzk).add_scalar(margin).relu(),
        };
        terms.push(term);
    }
    Ok(())
}

fn mean_of(tape: &Tape, terms: Vec<Var>) -> Var {
    let n = terms.len();
    let mut acc = tape.scalar(0.0);
    for t in terms {
        acc = acc.add(&t);
    }
    acc.scale(1.0 / n as f64)
}

/// Mean loss of a triplet batch on a fresh subgraph of `tape`. Each
/// triplet's support window is exactly its three states. Errors if any
/// triplet mixes episodes.
pub fn hlps_loss(
    tape: &Tape,
    model: &ReprModel,
    batch: &[Triplet],
    cfg: &LossConfig,
) -> Result<Var> {
    assert!(!batch.is_empty(), "hlps_loss needs a nonempty batch");
    let hp_vars = model.hp.tape_values(tape);
    let mut terms = Vec::with_capacity(batch.len());
    for t in batch {
        if t.episodes[0] != t.episodes[1] || t.episodes[0] != t.episodes[2] {
            return Err(CoreError::CrossEpisodeTriplet);
        }
        let set = SupportSet {
            states: vec![t.s_i.clone(), t.s_next.clone(), t.s_k.clone()],
            anchors: vec![[0, 1, 2]],
        };
        loss_terms(tape, model, &set, cfg, &hp_vars, &mut terms)?;
    }
    Ok(mean_of(tape, terms))
}

/// Mean loss over wider support windows, for hyperparameter training.
pub fn hlps_loss_windowed(
    tape: &Tape,
    model: &ReprModel,
    windows: &[SupportSet],
    cfg: &LossConfig,
) -> Result<Var> {
    assert!(!windows.is_empty(), "hlps_loss_windowed needs a nonempty batch");
    let hp_vars = model.hp.tape_values(tape);
    let mut terms = Vec::new();
    for w in windows {
        loss_terms(tape, model, w, cfg, &hp_vars, &mut terms)?;
    }
    Ok(mean_of(tape, terms))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateTarget {
    Encoder,
    Hyperparams,
}

/// One gradient step of the representation loss on the selected parameter
/// group only; the other group's gradients are discarded. Returns the loss.
///
/// `weight_decay` applies decoupled L2 shrinkage to the encoder weights
/// after the step. The objective pushes k-step latent distances apart
/// with a gradient that decays but never vanishes, so without decay the
/// encoder inflates its output scale without bound and every downstream
/// value function chases a moving scale.
pub fn representation_update(
    model: &ReprModel,
    windows: &[SupportSet],
    target: UpdateTarget,
    cfg: &LossConfig,
    lr: f64,
    weight_decay: f64,
) -> Result<f64> {
    if matches!(model.kind, ReprKind::RandomProjection(_)) {
        return Ok(0.0); // nothing to train
    }
    let tape = Tape::new();
    let loss = hlps_loss_windowed(&tape, model, windows, cfg)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(CoreError::NonFiniteLoss {
            context: "representation loss".into(),
        });
    }
    loss.backward();
    let encoder = model.encoder.params();
    let hyper = model.hp.params();
    match target {
        UpdateTarget::Encoder => {
            adam_step(&encoder, lr)?;
            if weight_decay > 0.0 {
                let shrink = 1.0 - lr * weight_decay;
                for p in &encoder {
                    let mut p = p.borrow_mut();
                    for v in p.value.data_mut() {
                        *v *= shrink;
                    }
                }
            }
            clear_grads(&hyper);
        }
        UpdateTarget::Hyperparams => {
            adam_step(&hyper, lr)?;
            clear_grads(&encoder);
        }
    }
    Ok(value)
}
