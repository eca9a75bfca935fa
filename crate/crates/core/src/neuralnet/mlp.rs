//! Dense tanh velocity field over flat `[B, D]` states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use super::{NnError, ParamSet, VelocityModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: usize,
    hidden: Vec<usize>,
    params: ParamSet<f32>,
}

impl Mlp {
    /// `dims` inputs plus a time input, `hidden` tanh layers, and a
    /// zero-initialized linear output of width `dims`.
    pub fn new(dims: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut fan_in = dims + 1;
        for (i, &width) in hidden.iter().enumerate() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..width * fan_in).map(|_| rng.random_range(-bound..bound) as f32).collect();
            params.push(format!("fc{i}.weight"), Tensor::new(vec![width, fan_in], w).expect("shape"));
            params.push(format!("fc{i}.bias"), Tensor::zeros(&[width]));
            fan_in = width;
        }
        params.push("out.weight", Tensor::zeros(&[dims, fan_in]));
        params.push("out.bias", Tensor::zeros(&[dims]));
        Self { dims, hidden: hidden.to_vec(), params }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
}

impl VelocityModel for Mlp {
    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    fn build<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var, t: &[T]) -> Result<Var, NnError> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dims || shape[0] != t.len() || p.len() != self.params.len() {
            return Err(NnError::Shape(format!("mlp input {shape:?} with {} times", t.len())));
        }
        let tc = g.leaf(Tensor::new(vec![t.len(), 1], t.to_vec())?, false);
        let mut h = g.concat(x, tc)?;
        for i in 0..self.hidden.len() {
            let z = g.linear(h, p[2 * i], p[2 * i + 1])?;
            h = g.tanh(z)?;
        }
        let n = self.hidden.len();
        g.linear(h, p[2 * n], p[2 * n + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_zero_with_expected_shape() {
        let net = Mlp::new(2, &[16, 16], 0);
        let x = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = net.predict(&x, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(net.params().numel(), 16 * 3 + 16 + 16 * 16 + 16 + 2 * 16 + 2);
    }
}
