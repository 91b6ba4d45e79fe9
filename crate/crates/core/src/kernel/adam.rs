//! Adam optimizer over named parameter sets.

use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::scalar::Real;
use super::tape::Gradients;
use super::{KernelError, ParamSet};

/// Per-parameter moment estimates plus the shared step counter. Buffers are
/// created lazily on first update and always match their parameter's shape.
pub struct AdamState<S: Real> {
    first_moment: BTreeMap<&'static str, Matrix<S>>,
    second_moment: BTreeMap<&'static str, Matrix<S>>,
    step: u64,
    beta1: S,
    beta2: S,
    epsilon: S,
}

impl<S: Real> AdamState<S> {
    /// Standard published defaults: beta1=0.9, beta2=0.999, epsilon=1e-8.
    pub fn new() -> Self {
        Self::with_hyperparams(0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step: 0,
            beta1: S::from_f64(beta1),
            beta2: S::from_f64(beta2),
            epsilon: S::from_f64(epsilon),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl<S: Real> Default for AdamState<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// One Adam update with bias correction. Rejects non-finite gradients before
/// touching any parameter, naming the offending one.
pub fn adam_step<S: Real>(
    params: &mut ParamSet<S>,
    grads: &Gradients<S>,
    state: &mut AdamState<S>,
    lr: S,
) -> Result<(), KernelError> {
    if let Some((name, r, c)) = grads.find_non_finite() {
        return Err(KernelError::NonFiniteGradient {
            param: name,
            row: r,
            col: c,
        });
    }
    state.step += 1;
    let t = state.step;
    let one = S::one();
    let bias1 = one - pow(state.beta1, t);
    let bias2 = one - pow(state.beta2, t);

    for (name, grad) in grads.iter() {
        let param = params
            .get_mut(name)
            .ok_or(KernelError::UnknownParam { param: name })?;
        if param.shape() != grad.shape() {
            return Err(KernelError::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape(),
                rhs: grad.shape(),
            });
        }
        let m = state
            .first_moment
            .entry(name)
            .or_insert_with(|| Matrix::zeros(param.rows(), param.cols()));
        let v = state
            .second_moment
            .entry(name)
            .or_insert_with(|| Matrix::zeros(param.rows(), param.cols()));
        for ((p, g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            let g = *g;
            *m = state.beta1 * *m + (one - state.beta1) * g;
            *v = state.beta2 * *v + (one - state.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

fn pow<S: Real>(base: S, exp: u64) -> S {
    let mut out = S::one();
    let mut base = base;
    let mut exp = exp;
    while exp > 0 {
        if exp & 1 == 1 {
            out *= base;
        }
        base *= base;
        exp >>= 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Tape;

    fn grad_of(value: Matrix<f64>, param: &Matrix<f64>) -> Gradients<f64> {
        // Build a gradient object carrying `value` for parameter "p".
        let mut tape = Tape::new();
        let p = tape.param("p", param);
        let g = tape.input(value);
        let prod = tape.mul(p, g).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = ParamSet::new();
        params.insert("p", Matrix::from_rows(&[vec![1.5, -2.5]]).unwrap());
        let grads = grad_of(Matrix::zeros(1, 2), params.get("p").unwrap());
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        assert_eq!(params.get("p").unwrap().data(), &[1.5, -2.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn single_step_unit_gradient_moves_by_lr() {
        // m_hat = v_hat = 1 after one step, so the update is lr / (1 + eps).
        let mut params = ParamSet::new();
        params.insert("p", Matrix::scalar(0.0));
        let grads = grad_of(Matrix::scalar(1.0), params.get("p").unwrap());
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        let got = params.get("p").unwrap().get(0, 0);
        assert!((got - (-0.01)).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn constant_gradient_approaches_signed_lr_steps() {
        // With g constant, m_hat -> g and v_hat -> g^2, so each update tends
        // to -lr * sign(g).
        let mut params = ParamSet::new();
        params.insert("p", Matrix::scalar(0.0));
        let mut state = AdamState::new();
        let lr = 0.01;
        let mut prev = 0.0f64;
        let mut last_delta = 0.0;
        for _ in 0..200 {
            let grads = grad_of(Matrix::scalar(-3.0), params.get("p").unwrap());
            adam_step(&mut params, &grads, &mut state, lr).unwrap();
            let cur = params.get("p").unwrap().get(0, 0);
            last_delta = cur - prev;
            prev = cur;
        }
        assert!(
            (last_delta - lr).abs() < 1e-4,
            "steady-state step {last_delta} should approach +lr for negative gradient"
        );
    }

    #[test]
    fn non_finite_gradient_aborts_naming_param() {
        let mut params = ParamSet::new();
        params.insert("p", Matrix::scalar(0.0));
        let grads = grad_of(Matrix::scalar(f64::NAN), params.get("p").unwrap());
        let mut state = AdamState::new();
        let err = adam_step(&mut params, &grads, &mut state, 0.01).unwrap_err();
        assert!(err.to_string().contains('p'), "{err}");
        // aborted step must not advance the counter
        assert_eq!(state.step_count(), 0);
    }
}
