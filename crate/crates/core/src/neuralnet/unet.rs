//! Four-level 1-D UNet velocity field over latent frame sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use super::{NnError, ParamSet, VelocityModel};

const LEVELS: usize = 4;

/// Frame counts fed to the network must be multiples of this (one halving per level).
pub const FRAME_MULTIPLE: usize = 1 << LEVELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Latent channels `D`.
    pub dims: usize,
    /// Width of the first level `C`; levels use `[C, 2C, 4C, 8C]`.
    pub base_channels: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl UNetConfig {
    pub fn new(dims: usize, seed: u64) -> Self {
        Self { dims, base_channels: 32, kernel: 3, seed }
    }

    pub fn widths(&self) -> [usize; LEVELS] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    config: UNetConfig,
    params: ParamSet<f32>,
}

fn kaiming(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

impl UNet {
    pub fn new(config: UNetConfig) -> Self {
        assert!(config.dims > 0 && config.base_channels > 0 && config.kernel % 2 == 1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w = config.widths();
        let k = config.kernel;
        let mut params = ParamSet::new();
        let mut cin = config.dims + 1;
        for (l, &cout) in w.iter().enumerate() {
            params.push(format!("enc{l}.weight"), kaiming(&[cout, cin, k], cin * k, &mut rng));
            params.push(format!("enc{l}.bias"), Tensor::zeros(&[cout]));
            cin = cout;
        }
        for l in (0..LEVELS).rev() {
            let (cin, cout) = Self::decoder_channels(&w, l);
            params.push(format!("dec{l}.weight"), kaiming(&[cout, cin, k], cin * k, &mut rng));
            params.push(format!("dec{l}.bias"), Tensor::zeros(&[cout]));
        }
        params.push("out.weight", Tensor::zeros(&[config.dims, w[0], 1]));
        params.push("out.bias", Tensor::zeros(&[config.dims]));
        Self { config, params }
    }

    /// Decoder level `l` sees the upsampled deeper features concatenated with
    /// skip `l` (both `widths[l]` wide) and narrows to the next level up.
    fn decoder_channels(w: &[usize; LEVELS], l: usize) -> (usize, usize) {
        (2 * w[l], w[l.max(1) - 1])
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Network input: the flowing state with a constant `t` channel appended.
    fn condition<T: Real>(&self, g: &mut Graph<T>, x: Var, t: &[T]) -> Result<Var, NnError> {
        let &[b, _, f] = g.value(x).shape() else { unreachable!("checked by build") };
        let data = t.iter().flat_map(|&tv| std::iter::repeat_n(tv, f)).collect();
        let tc = g.leaf(Tensor::new(vec![b, 1, f], data)?, false);
        g.concat(x, tc)
    }
}

impl VelocityModel for UNet {
    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    fn build<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var, t: &[T]) -> Result<Var, NnError> {
        let shape = g.value(x).shape().to_vec();
        let [b, d, f] = shape[..] else {
            return Err(NnError::Shape(format!("unet input must be [B, D, F], got {shape:?}")));
        };
        if d != self.config.dims || f == 0 || f % FRAME_MULTIPLE != 0 || t.len() != b {
            return Err(NnError::Shape(format!(
                "unet input {shape:?} with {} times; needs D = {} and F a positive multiple of {FRAME_MULTIPLE}",
                t.len(),
                self.config.dims
            )));
        }
        if p.len() != self.params.len() {
            return Err(NnError::Shape(format!("expected {} parameter leaves, got {}", self.params.len(), p.len())));
        }
        let mut h = self.condition(g, x, t)?;
        let mut skips = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            let c = g.conv1d(h, p[2 * l], p[2 * l + 1])?;
            let a = g.relu(c)?;
            skips.push(a);
            h = g.avg_pool2(a)?;
        }
        for (i, l) in (0..LEVELS).rev().enumerate() {
            let up = g.upsample2(h)?;
            let cat = g.concat(up, skips[l])?;
            let base = 2 * LEVELS + 2 * i;
            let c = g.conv1d(cat, p[base], p[base + 1])?;
            h = g.relu(c)?;
        }
        g.conv1d(h, p[4 * LEVELS], p[4 * LEVELS + 1])
    }
}
