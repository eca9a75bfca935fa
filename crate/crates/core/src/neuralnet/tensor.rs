use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::NnError;

/// Scalar type of the tensor engine: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Zero-pads the frame (last) axis of a `[B, C, F]` tensor to the next
/// multiple of `multiple`. Returns the padded tensor and the original `F`.
pub fn pad_frames<T: Real>(x: &Tensor<T>, multiple: usize) -> (Tensor<T>, usize) {
    let &[b, c, f] = x.shape() else { panic!("pad_frames expects [B, C, F], got {:?}", x.shape()) };
    let f_pad = f.div_ceil(multiple) * multiple;
    if f_pad == f {
        return (x.clone(), f);
    }
    let mut out = vec![T::zero(); b * c * f_pad];
    for row in 0..b * c {
        out[row * f_pad..row * f_pad + f].copy_from_slice(&x.data[row * f..(row + 1) * f]);
    }
    (Tensor { shape: vec![b, c, f_pad], data: out }, f)
}

/// Keeps the first `f` frames of a `[B, C, F_pad]` tensor.
pub fn crop_frames<T: Real>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let &[b, c, f_pad] = x.shape() else { panic!("crop_frames expects [B, C, F], got {:?}", x.shape()) };
    assert!(f <= f_pad);
    let mut out = Vec::with_capacity(b * c * f);
    for row in 0..b * c {
        out.extend_from_slice(&x.data[row * f_pad..row * f_pad + f]);
    }
    Tensor { shape: vec![b, c, f], data: out }
}
