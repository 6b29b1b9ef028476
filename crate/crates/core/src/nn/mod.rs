//! Minimal layers with explicit forward/backward passes in double precision.
//!
//! Each layer's `forward` optionally returns a cache; `backward` consumes it,
//! accumulates parameter gradients in place and returns the input gradient.
//! Convolutions run frame by frame, so a frame's output never depends on
//! its position in the batch.

mod conv;
mod linear;
mod norm;

pub use conv::{Conv2d, ConvCache, LabelConv, LabelConvCache};
pub use linear::{Linear, LinearCache};
pub use norm::{BatchNorm2d, BnCache};

use ndarray::{Array, Dimension};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A named tensor of parameters or buffers with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub shape: Vec<usize>,
    /// Buffers (running statistics) and frozen scalars are not trainable.
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: &[usize], value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            grad: vec![0.0; value.len()],
            value,
            shape: shape.to_vec(),
            trainable: true,
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn buffer(shape: &[usize], v: f64) -> Self {
        Self {
            trainable: false,
            ..Self::filled(shape, v)
        }
    }

    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        Self::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns parameters.
pub trait Module {
    /// Appends `(prefix.name, param)` for every parameter and buffer.
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);

    fn named_params(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn relu<D: Dimension>(x: &mut Array<f64, D>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Gradient of ReLU given its output.
pub fn relu_backward<D: Dimension>(dy: &mut Array<f64, D>, y: &Array<f64, D>) {
    ndarray::Zip::from(dy).and(y).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0
        }
    });
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
