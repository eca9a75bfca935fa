//! Minimal tensor engine, velocity networks and the Adam optimizer.

mod adam;
mod checkpoint;
mod graph;
mod mlp;
mod tensor;
mod unet;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Gradients, Graph, Var};
pub use mlp::Mlp;
pub use tensor::{crop_frames, pad_frames, Real, Tensor};
pub use unet::{UNet, UNetConfig, FRAME_MULTIPLE};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {op} output at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("backward called on a loss that depends on no tracked tensor")]
    Untracked,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(self.get(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    /// Registers every parameter as a leaf of `g`, in order.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors().map(|t| g.leaf(t.clone(), requires_grad)).collect()
    }

    /// Replaces values with those of `other`, which must have identical names
    /// and shapes.
    pub fn assign(&mut self, other: ParamSet<T>) -> Result<(), NnError> {
        if self.entries.len() != other.entries.len()
            || self.entries.iter().zip(&other.entries).any(|(a, b)| a.0 != b.0 || a.1.shape() != b.1.shape())
        {
            return Err(NnError::Shape("parameter sets differ in names or shapes".into()));
        }
        self.entries = other.entries;
        Ok(())
    }
}

/// A time-conditioned velocity field v(t, x) built from differentiable ops.
///
/// `x` is `[B, ...]` and `t` holds one time per batch row. The output has the
/// shape of `x`.
pub trait VelocityModel {
    fn params(&self) -> &ParamSet<f32>;

    fn params_mut(&mut self) -> &mut ParamSet<f32>;

    /// Records the forward pass on `g`. `params` are the leaves returned by
    /// [`ParamSet::bind`] for a set of the same layout as [`Self::params`].
    fn build<T: Real>(&self, g: &mut Graph<T>, params: &[Var], x: Var, t: &[T]) -> Result<Var, NnError>;

    /// Untracked forward pass with the model's own parameters.
    fn predict(&self, x: &Tensor<f32>, t: &[f32]) -> Result<Tensor<f32>, NnError> {
        let mut g = Graph::new();
        let p = self.params().bind(&mut g, false);
        let xv = g.leaf(x.clone(), false);
        let out = self.build(&mut g, &p, xv, t)?;
        Ok(g.value(out).clone())
    }
}
