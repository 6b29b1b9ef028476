use ndarray::{linalg::general_mat_mul, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::{join, Module, Param};

/// `y = x W^T + b` on row-major batches.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    input: Array2<f64>,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` init for weight and bias.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: Param::uniform(&[out_features, in_features], bound, rng),
            bias: bias.then(|| Param::uniform(&[out_features], bound, rng)),
            in_features,
            out_features,
        }
    }

    /// Xavier-uniform weight, zero bias.
    pub fn xavier<R: Rng + ?Sized>(in_features: usize, out_features: usize, bias: bool, rng: &mut R) -> Self {
        let bound = (6.0 / (in_features + out_features) as f64).sqrt();
        Self {
            weight: Param::uniform(&[out_features, in_features], bound, rng),
            bias: bias.then(|| Param::filled(&[out_features], 0.0)),
            in_features,
            out_features,
        }
    }

    pub fn weight_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.out_features, self.in_features), &self.weight.value)
            .expect("weight shape")
    }

    pub fn forward(&self, x: &Array2<f64>, keep: bool) -> (Array2<f64>, Option<LinearCache>) {
        let mut y = x.dot(&self.weight_view().t());
        if let Some(b) = &self.bias {
            y += &ArrayView1::from(&b.value);
        }
        (y, keep.then(|| LinearCache { input: x.clone() }))
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Array2<f64>) -> Array2<f64> {
        {
            let mut gw = ArrayViewMut2::from_shape(
                (self.out_features, self.in_features),
                &mut self.weight.grad,
            )
            .expect("grad shape");
            general_mat_mul(1.0, &dy.t(), &cache.input, 1.0, &mut gw);
        }
        if let Some(b) = &mut self.bias {
            for (g, s) in b.grad.iter_mut().zip(dy.sum_axis(Axis(0))) {
                *g += s;
            }
        }
        dy.dot(&self.weight_view())
    }
}

impl Module for Linear {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}
