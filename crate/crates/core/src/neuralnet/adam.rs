use super::tensor::Tensor;
use super::{NnError, ParamSet};

/// Bias-corrected Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &ParamSet<f32>, lr: f32) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self { step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros.clone(), v: zeros }
    }
}

/// One Adam update of every parameter. `grads[i]` pairs with the `i`-th parameter.
pub fn adam_step(params: &mut ParamSet<f32>, grads: &[Vec<f32>], state: &mut AdamState) -> Result<(), NnError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(NnError::Shape(format!("{} parameters, {} gradients, {} moments", params.len(), grads.len(), state.m.len())));
    }
    state.step += 1;
    let step = state.step as i32;
    let c1 = 1.0 - f64::from(state.beta1).powi(step);
    let c2 = 1.0 - f64::from(state.beta2).powi(step);
    let (b1, b2) = (state.beta1, state.beta2);
    for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
            return Err(NnError::Shape(format!("parameter of {} values, gradient of {}", p.len(), g.len())));
        }
        update(p, g, m, v, b1, b2, state.lr, state.eps, c1, c2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update(p: &mut Tensor<f32>, g: &[f32], m: &mut [f32], v: &mut [f32], b1: f32, b2: f32, lr: f32, eps: f32, c1: f64, c2: f64) {
    for i in 0..g.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = f64::from(m[i]) / c1;
        let v_hat = f64::from(v[i]) / c2;
        let w = &mut p.data_mut()[i];
        *w -= (f64::from(lr) * m_hat / (v_hat.sqrt() + f64::from(eps))) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f32) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::new(vec![1], vec![w]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = single(1.5);
        let mut s = AdamState::new(&p, 1e-4);
        for _ in 0..10 {
            adam_step(&mut p, &[vec![0.0]], &mut s).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &[1.5]);
        assert_eq!(s.step, 10);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3f32, -7.0, 1e-3] {
            let mut p = single(0.0);
            let mut s = AdamState::new(&p, 1e-4);
            adam_step(&mut p, &[vec![g]], &mut s).unwrap();
            let moved = p.get("w").unwrap().data()[0];
            // m_hat = g and v_hat = g^2, so the step is lr * |g| / (|g| + eps).
            let expected = -1e-4 * g.signum() * (g.abs() / (g.abs() + 1e-8));
            assert!((moved - expected).abs() < 1e-6, "{moved} vs {expected}");
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, 0.1);
        for _ in 0..500 {
            let w = p.get("w").unwrap().data()[0];
            adam_step(&mut p, &[vec![2.0 * (w - 3.0)]], &mut s).unwrap();
        }
        let w = p.get("w").unwrap().data()[0];
        assert!((w - 3.0).abs() < 1e-2, "{w}");
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, 0.1);
        assert!(adam_step(&mut p, &[vec![1.0, 2.0]], &mut s).is_err());
        assert!(adam_step(&mut p, &[], &mut s).is_err());
    }
}
