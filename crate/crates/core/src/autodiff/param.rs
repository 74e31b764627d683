//! Learnable parameters and the Adam update.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;

use super::tensor::Tensor;
use crate::{CoreError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// A trainable tensor with accumulated gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Adam first moment.
    pub m: Tensor,
    /// Adam second moment.
    pub v: Tensor,
    /// Number of Adam steps taken.
    pub steps: u64,
}

pub type SharedParam = Rc<RefCell<Parameter>>;

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            steps: 0,
        }
    }

    pub fn shared(name: impl Into<String>, value: Tensor) -> SharedParam {
        Rc::new(RefCell::new(Parameter::new(name, value)))
    }

    /// He-style uniform init in `[-limit, limit]` with `limit = sqrt(1/fan_in)`,
    /// the usual default for ReLU MLP stacks.
    pub fn shared_init(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> SharedParam {
        let limit = (1.0 / fan_in as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit));
        Parameter::shared(name, t)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// One Adam step over a parameter group; clears gradients afterwards.
/// Errors on any non-finite gradient, naming the parameter.
pub fn adam_step(params: &[SharedParam], lr: f64) -> Result<()> {
    for p in params {
        let p = p.borrow();
        if !p.grad.is_finite() {
            return Err(CoreError::NonFiniteGradient { param: p.name.clone() });
        }
    }
    for p in params {
        let mut p = p.borrow_mut();
        p.steps += 1;
        let t = p.steps;
        let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for i in 0..p.value.len() {
            let g = p.grad.data()[i];
            let m = ADAM_BETA1 * p.m.data()[i] + (1.0 - ADAM_BETA1) * g;
            let v = ADAM_BETA2 * p.v.data()[i] + (1.0 - ADAM_BETA2) * g * g;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
            p.value.data_mut()[i] -= update;
        }
        p.zero_grad();
    }
    Ok(())
}

/// Clears accumulated gradients without stepping.
pub fn clear_grads(params: &[SharedParam]) {
    for p in params {
        p.borrow_mut().zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let p = Parameter::shared("p", Tensor::col(&[1.0, -2.0]));
        adam_step(&[p.clone()], 0.1).unwrap();
        assert_eq!(p.borrow().value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let p = Parameter::shared("p", Tensor::col(&[0.0, 0.0]));
        p.borrow_mut().grad = Tensor::col(&[3.0, -0.5]);
        adam_step(&[p.clone()], 0.01).unwrap();
        let v = p.borrow().value.clone();
        // Adam's first step is ~lr * sign(g) regardless of magnitude.
        assert!((v.get(0, 0) + 0.01).abs() < 1e-6);
        assert!((v.get(1, 0) - 0.01).abs() < 1e-6);
        assert_eq!(p.borrow().grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        let p = Parameter::shared("x", Tensor::scalar(0.0));
        for _ in 0..100 {
            let x = p.borrow().value.item();
            p.borrow_mut().grad = Tensor::scalar(2.0 * (x - 2.0));
            adam_step(&[p.clone()], 0.1).unwrap();
        }
        assert!((p.borrow().value.item() - 2.0).abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let p = Parameter::shared("enc.w1", Tensor::scalar(1.0));
        p.borrow_mut().grad = Tensor::scalar(f64::NAN);
        let err = adam_step(&[p], 0.1).unwrap_err();
        assert!(err.to_string().contains("enc.w1"));
    }
}
