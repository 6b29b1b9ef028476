use ndarray::Array4;

use super::{join, Module, Param};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(N, C, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Array4<f64>,
    inv_std: Vec<f64>,
    training: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::filled(&[channels], 0.0),
            running_mean: Param::buffer(&[channels], 0.0),
            running_var: Param::buffer(&[channels], 1.0),
            channels,
        }
    }

    /// Training mode normalizes with batch statistics and updates the running
    /// averages; eval mode uses the running averages.
    pub fn forward(&mut self, x: &Array4<f64>, training: bool, keep: bool) -> (Array4<f64>, Option<BnCache>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "batch norm channels");
        let plane = h * w;
        let m = (n * plane) as f64;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("contiguous");
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if training {
            for (k, chunk) in xs.chunks_exact(plane).enumerate() {
                mean[k % c] += chunk.iter().sum::<f64>();
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for (k, chunk) in xs.chunks_exact(plane).enumerate() {
                let mu = mean[k % c];
                var[k % c] += chunk.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            var.iter_mut().for_each(|v| *v /= m);
            for ch in 0..c {
                let unbiased = if m > 1.0 { var[ch] * m / (m - 1.0) } else { var[ch] };
                self.running_mean.value[ch] =
                    (1.0 - BN_MOMENTUM) * self.running_mean.value[ch] + BN_MOMENTUM * mean[ch];
                self.running_var.value[ch] =
                    (1.0 - BN_MOMENTUM) * self.running_var.value[ch] + BN_MOMENTUM * unbiased;
            }
        } else {
            mean.copy_from_slice(&self.running_mean.value);
            var.copy_from_slice(&self.running_var.value);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut x_hat = keep.then(|| vec![0.0; xs.len()]);
        let mut y = vec![0.0; xs.len()];
        for (k, (src, dst)) in xs.chunks_exact(plane).zip(y.chunks_exact_mut(plane)).enumerate() {
            let ch = k % c;
            let (mu, is, g, b) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
            match &mut x_hat {
                Some(xh) => {
                    for ((d, h), &v) in dst.iter_mut().zip(&mut xh[k * plane..(k + 1) * plane]).zip(src) {
                        *h = (v - mu) * is;
                        *d = g * *h + b;
                    }
                }
                None => {
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = g * (v - mu) * is + b;
                    }
                }
            }
        }
        let y = Array4::from_shape_vec((n, c, h, w), y).expect("shape");
        let cache = x_hat.map(|xh| BnCache {
            x_hat: Array4::from_shape_vec((n, c, h, w), xh).expect("shape"),
            inv_std,
            training,
        });
        (y, cache)
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = dy.dim();
        let plane = h * w;
        let m = (n * plane) as f64;
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("contiguous");
        let xh = cache.x_hat.as_slice().expect("contiguous");
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xh = vec![0.0; c];
        for (k, (g, x)) in dys.chunks_exact(plane).zip(xh.chunks_exact(plane)).enumerate() {
            sum_dy[k % c] += g.iter().sum::<f64>();
            sum_dy_xh[k % c] += g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_dy_xh[ch];
            self.beta.grad[ch] += sum_dy[ch];
        }
        let mut dx = vec![0.0; dys.len()];
        for (k, ((d, g), x)) in dx
            .chunks_exact_mut(plane)
            .zip(dys.chunks_exact(plane))
            .zip(xh.chunks_exact(plane))
            .enumerate()
        {
            let ch = k % c;
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            if cache.training {
                let (mdy, mdyx) = (sum_dy[ch] / m, sum_dy_xh[ch] / m);
                for ((o, &gv), &xv) in d.iter_mut().zip(g).zip(x) {
                    *o = scale * (gv - mdy - xv * mdyx);
                }
            } else {
                for (o, &gv) in d.iter_mut().zip(g) {
                    *o = scale * gv;
                }
            }
        }
        Array4::from_shape_vec((n, c, h, w), dx).expect("shape")
    }
}

impl Module for BatchNorm2d {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}
