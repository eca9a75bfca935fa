//! Rectified-flow training and ODE transport over learned velocity fields.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::latentcodec::{ChunkPair, CodecError, LatentSeq, CHUNK_SECONDS, TRUNCATED_DIMS};
use crate::neuralnet::{adam_step, AdamState, Graph, NnError, Tensor, UNet, UNetConfig, VelocityModel, FRAME_MULTIPLE};
use crate::odesolve::{try_integrate, OdeError, SolverKind};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("t = {0} outside [0, 1]")]
    TimeRange(f64),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}, batch {batch}: {detail}")]
    NonFiniteLoss { step: usize, batch: usize, detail: String },
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// One regression example: interpolant `x_t` and its target velocity `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub x0: Vec<f32>,
    pub x1: Vec<f32>,
    pub t: f32,
    pub x_t: Vec<f32>,
    pub u: Vec<f32>,
}

/// Builds the straight-line sample at time `t`, or at a uniform draw from
/// `rng` when `t` is `None`.
pub fn make_sample(x0: &[f32], x1: &[f32], t: Option<f32>, rng: &mut impl Rng) -> Result<FlowSample, FlowError> {
    if x0.len() != x1.len() {
        return Err(FlowError::Shape(format!("x0 has {} values, x1 {}", x0.len(), x1.len())));
    }
    let t = match t {
        Some(t) if (0.0..=1.0).contains(&t) => t,
        Some(t) => return Err(FlowError::TimeRange(f64::from(t))),
        None => rng.random::<f32>(),
    };
    let x_t = x0.iter().zip(x1).map(|(&a, &b)| (1.0 - t) * a + t * b).collect();
    let u = x0.iter().zip(x1).map(|(&a, &b)| b - a).collect();
    Ok(FlowSample { x0: x0.to_vec(), x1: x1.to_vec(), t, x_t, u })
}

/// Stacks per-sample vectors into a `[B, item_shape..]` tensor.
fn stack<'a>(rows: impl Iterator<Item = &'a [f32]>, item_shape: &[usize]) -> Result<Tensor<f32>, FlowError> {
    let mut data = Vec::new();
    let mut b = 0;
    for r in rows {
        data.extend_from_slice(r);
        b += 1;
    }
    let mut shape = vec![b];
    shape.extend_from_slice(item_shape);
    Ok(Tensor::new(shape, data)?)
}

/// Records `mean((v(t, x_t) - u)^2)` on a fresh graph with tracked parameters.
fn loss_graph<M: VelocityModel>(
    model: &M,
    batch: &[FlowSample],
    item_shape: &[usize],
) -> Result<(Graph<f32>, Vec<crate::neuralnet::Var>, crate::neuralnet::Var), FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    let n: usize = item_shape.iter().product();
    if let Some(s) = batch.iter().find(|s| s.x_t.len() != n) {
        return Err(FlowError::Shape(format!("sample of {} values for item shape {item_shape:?}", s.x_t.len())));
    }
    let mut g = Graph::new();
    let params = model.params().bind(&mut g, true);
    let x = g.leaf(stack(batch.iter().map(|s| s.x_t.as_slice()), item_shape)?, false);
    let u = g.leaf(stack(batch.iter().map(|s| s.u.as_slice()), item_shape)?, false);
    let t: Vec<f32> = batch.iter().map(|s| s.t).collect();
    let v = model.build(&mut g, &params, x, &t)?;
    let loss = g.mse(v, u)?;
    Ok((g, params, loss))
}

/// Mean over batch and elements of the squared velocity error.
pub fn cfm_loss<M: VelocityModel>(model: &M, batch: &[FlowSample], item_shape: &[usize]) -> Result<f32, FlowError> {
    let (g, _, loss) = loss_graph(model, batch, item_shape)?;
    Ok(g.value(loss).item())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f32,
    pub epochs: usize,
    pub seed: u64,
    pub dims: usize,
    pub chunk_seconds: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 64, lr: 1e-4, epochs: 50, seed: 0, dims: TRUNCATED_DIMS, chunk_seconds: CHUNK_SECONDS }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.lr > 0.0) || !(self.chunk_seconds > 0.0) || self.dims == 0 {
            return Err(FlowError::Config(format!("{self:?}")));
        }
        Ok(())
    }

    /// Adam steps for `n` training items: the batch is clamped to the dataset size.
    pub fn total_steps(&self, n: usize) -> usize {
        let batch = self.batch_size.min(n).max(1);
        self.epochs * n.div_ceil(batch)
    }
}

/// Paired source and target items of a common shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDataset {
    item_shape: Vec<usize>,
    x0: Vec<Vec<f32>>,
    x1: Vec<Vec<f32>>,
}

impl FlowDataset {
    pub fn new(item_shape: Vec<usize>, x0: Vec<Vec<f32>>, x1: Vec<Vec<f32>>) -> Result<Self, FlowError> {
        let n: usize = item_shape.iter().product();
        if x0.len() != x1.len() {
            return Err(FlowError::Shape(format!("{} sources, {} targets", x0.len(), x1.len())));
        }
        if x0.is_empty() {
            return Err(FlowError::EmptyDataset);
        }
        if let Some(i) = (0..x0.len()).find(|&i| x0[i].len() != n || x1[i].len() != n) {
            return Err(FlowError::Shape(format!("pair {i} does not have item shape {item_shape:?}")));
        }
        Ok(Self { item_shape, x0, x1 })
    }

    /// Latent chunk pairs, channels-first and zero-padded to the UNet frame multiple.
    pub fn from_chunk_pairs(pairs: &[ChunkPair]) -> Result<Self, FlowError> {
        let first = pairs.first().ok_or(FlowError::EmptyDataset)?;
        let (d, f) = (first.source().dims(), first.source().n_frames());
        let f_pad = f.div_ceil(FRAME_MULTIPLE) * FRAME_MULTIPLE;
        let mut x0 = Vec::with_capacity(pairs.len());
        let mut x1 = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if p.source().dims() != d || p.source().n_frames() != f {
                return Err(FlowError::Shape(format!(
                    "pair {i} is {}x{}, expected {f}x{d}",
                    p.source().n_frames(),
                    p.source().dims()
                )));
            }
            x0.push(padded_channels_first(p.source(), f_pad).iter().map(|&v| v as f32).collect());
            x1.push(padded_channels_first(p.target(), f_pad).iter().map(|&v| v as f32).collect());
        }
        Self::new(vec![d, f_pad], x0, x1)
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn item_shape(&self) -> &[usize] {
        &self.item_shape
    }

    pub fn source(&self, i: usize) -> &[f32] {
        &self.x0[i]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        &self.x1[i]
    }
}

/// `[D, F_pad]` copy of a latent in `f64`, zero beyond its own frames.
fn padded_channels_first(x: &LatentSeq, f_pad: usize) -> Vec<f64> {
    let (d, f) = (x.dims(), x.n_frames());
    let mut out = vec![0.0; d * f_pad];
    for fr in 0..f {
        for (c, &v) in x.frame(fr).iter().enumerate() {
            out[c * f_pad + fr] = v;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    pub adam: AdamState,
}

pub fn train<M: VelocityModel>(model: &mut M, data: &FlowDataset, cfg: &TrainConfig) -> Result<TrainReport, FlowError> {
    train_with(model, data, cfg, AdamState::new(model.params(), cfg.lr), |_| {})
}

/// Runs `cfg.epochs` shuffled passes over `data`, continuing from `adam`.
/// `on_step` sees every loss record as it is produced.
pub fn train_with<M: VelocityModel>(
    model: &mut M,
    data: &FlowDataset,
    cfg: &TrainConfig,
    mut adam: AdamState,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainReport, FlowError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    let batch_size = cfg.batch_size.min(data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.total_steps(data.len()));
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let step = history.len();
            let batch = idx
                .iter()
                .map(|&i| make_sample(data.source(i), data.target(i), None, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let non_finite = |e: NnError| FlowError::NonFiniteLoss { step, batch: b, detail: e.to_string() };
            let (g, params, loss) = match loss_graph(model, &batch, data.item_shape()) {
                Err(FlowError::Net(e @ NnError::NonFinite { .. })) => return Err(non_finite(e)),
                other => other?,
            };
            let mut grads = g.backward(loss).map_err(non_finite)?;
            let grads: Vec<Vec<f32>> = params.iter().map(|&p| grads.take(p)).collect();
            adam_step(model.params_mut(), &grads, &mut adam)?;
            let record = LossRecord { step, epoch, loss: g.value(loss).item() };
            on_step(&record);
            history.push(record);
        }
    }
    Ok(TrainReport { history, adam })
}

/// Trains a default-width UNet on latent chunk pairs.
pub fn train_pairs(pairs: &[ChunkPair], cfg: &TrainConfig) -> Result<(UNet, TrainReport), FlowError> {
    let data = FlowDataset::from_chunk_pairs(pairs)?;
    if data.item_shape()[0] != cfg.dims {
        return Err(FlowError::Shape(format!("pairs have D = {}, config D = {}", data.item_shape()[0], cfg.dims)));
    }
    let mut net = UNet::new(UNetConfig::new(cfg.dims, cfg.seed));
    let report = train(&mut net, &data, cfg)?;
    Ok((net, report))
}

/// Loss history as `step,epoch,loss` CSV.
pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,epoch,loss\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.step, r.epoch, r.loss));
    }
    out
}

/// Mean loss of the first and last `window` records.
pub fn smoothed_endpoints(history: &[LossRecord], window: usize) -> Option<(f64, f64)> {
    let w = window.min(history.len());
    if w == 0 {
        return None;
    }
    let mean = |r: &[LossRecord]| r.iter().map(|x| f64::from(x.loss)).sum::<f64>() / r.len() as f64;
    Some((mean(&history[..w]), mean(&history[history.len() - w..])))
}

/// Integrates `dx/dt = v(t, x)` from `t = 0` to `1` for a batch of states laid
/// out as `shape = [B, ..]`.
pub fn transfer<M: VelocityModel>(model: &M, x0: &[f64], shape: &[usize], solver: SolverKind) -> Result<Vec<f64>, FlowError> {
    let n: usize = shape.iter().product();
    if shape.is_empty() || n != x0.len() {
        return Err(FlowError::Shape(format!("{} values for shape {shape:?}", x0.len())));
    }
    let b = shape[0];
    let field = |t: f64, x: &[f64]| -> Result<Vec<f64>, NnError> {
        let xt = Tensor::new(shape.to_vec(), x.iter().map(|&v| v as f32).collect())?;
        let v = model.predict(&xt, &vec![t as f32; b])?;
        Ok(v.data().iter().map(|&v| f64::from(v)).collect())
    };
    Ok(try_integrate(field, x0, (0.0, 1.0), solver)?.final_state)
}

/// Transports one latent sequence through a UNet velocity field.
pub fn transfer_latent(net: &UNet, x0: &LatentSeq, solver: SolverKind) -> Result<LatentSeq, FlowError> {
    let (d, f) = (x0.dims(), x0.n_frames());
    let f_pad = f.div_ceil(FRAME_MULTIPLE) * FRAME_MULTIPLE;
    let state = transfer(net, &padded_channels_first(x0, f_pad), &[1, d, f_pad], solver)?;
    let mut data = vec![0.0; d * f];
    for fr in 0..f {
        for c in 0..d {
            data[fr * d + c] = state[c * f_pad + fr];
        }
    }
    Ok(LatentSeq::new(data, f, d, x0.sample_rate())?)
}
