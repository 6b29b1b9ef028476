use ndarray::{linalg::general_mat_mul, s, Array2, Array3, Array4, ArrayView2};
use rand::Rng;

use super::{join, Module, Param};

fn out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Square-kernel 2D convolution without bias (always followed by batch norm).
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `(out, in * k * k)`, input-channel major.
    pub weight: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    /// Unfolded columns are recomputed from the input in the backward pass;
    /// storing them costs more than rebuilding them.
    input: Array4<f64>,
}

impl Conv2d {
    /// Kaiming-normal init (fan-in, ReLU gain).
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::normal(&[out_channels, fan_in], (2.0 / fan_in as f64).sqrt(), rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            out_size(h, self.kernel, self.stride, self.pad),
            out_size(w, self.kernel, self.stride, self.pad),
        )
    }

    fn weight_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (self.out_channels, self.in_channels * self.kernel * self.kernel),
            &self.weight.value,
        )
        .expect("weight shape")
    }

    /// Output columns `[lo, hi)` whose input column `ox * stride + kx - pad` is in bounds.
    fn valid_cols(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        let hi = if w + self.pad > kx {
            ((w + self.pad - kx - 1) / self.stride + 1).min(wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, cols: &mut [f64]) {
        let (ho, wo) = self.output_hw(h, w);
        let k = self.kernel;
        let p = ho * wo;
        let stride = self.stride;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                    let (lo, hi) = self.valid_cols(kx, w, wo);
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy as usize >= h || lo >= hi {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        let first = lo * stride + kx - self.pad;
                        if stride == 1 {
                            dst[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (d, s) in dst[lo..hi].iter_mut().zip(src[first..].iter().step_by(stride)) {
                                *d = *s;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, dx: &mut [f64]) {
        let (ho, wo) = self.output_hw(h, w);
        let k = self.kernel;
        let p = ho * wo;
        let stride = self.stride;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                    let (lo, hi) = self.valid_cols(kx, w, wo);
                    if lo >= hi {
                        continue;
                    }
                    let first = lo * stride + kx - self.pad;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[oy * wo + lo..oy * wo + hi];
                        if stride == 1 {
                            for (d, s) in dst[first..first + hi - lo].iter_mut().zip(src) {
                                *d += s;
                            }
                        } else {
                            for (d, s) in dst[first..].iter_mut().step_by(stride).zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Array4<f64>, keep: bool) -> (Array4<f64>, Option<ConvCache>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("contiguous input");
        let (ho, wo) = self.output_hw(h, w);
        let kdim = self.in_channels * self.kernel * self.kernel;
        let p = ho * wo;
        let mut out = Array4::zeros((n, self.out_channels, ho, wo));
        let mut cols = Array2::zeros((kdim, p));
        let weight = self.weight_view();
        for i in 0..n {
            let frame = &xs[i * c * h * w..(i + 1) * c * h * w];
            self.im2col(frame, h, w, cols.as_slice_mut().expect("contiguous cols"));
            let mut y = out
                .slice_mut(s![i, .., .., ..])
                .into_shape_with_order((self.out_channels, p))
                .expect("output view");
            general_mat_mul(1.0, &weight, &cols, 0.0, &mut y);
        }
        let cache = keep.then(|| ConvCache { input: x.into_owned() });
        (out, cache)
    }

    /// Accumulates the weight gradient; returns the input gradient when asked.
    pub fn backward(&mut self, cache: &ConvCache, dy: &Array4<f64>, input_grad: bool) -> Option<Array4<f64>> {
        let (n, co, ho, wo) = dy.dim();
        let (_, c, h, w) = cache.input.dim();
        let xs = cache.input.as_slice().expect("contiguous input");
        let p = ho * wo;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let dy = dy.as_standard_layout();
        let mut dx = input_grad.then(|| Array4::zeros((n, self.in_channels, h, w)));
        let mut cols = Array2::zeros((kdim, p));
        let mut dcols = Array2::zeros((kdim, p));
        let mut gw = Array2::zeros((co, kdim));
        for i in 0..n {
            let dyi = dy
                .slice(s![i, .., .., ..])
                .into_shape_with_order((co, p))
                .expect("dy view");
            self.im2col(&xs[i * c * h * w..(i + 1) * c * h * w], h, w, cols.as_slice_mut().expect("contiguous"));
            general_mat_mul(1.0, &dyi, &cols.t(), 1.0, &mut gw);
            if let Some(dx) = &mut dx {
                general_mat_mul(1.0, &self.weight_view().t(), &dyi, 0.0, &mut dcols);
                let mut frame = dx.slice_mut(s![i, .., .., ..]);
                let frame = frame.as_slice_mut().expect("contiguous dx");
                self.col2im(dcols.as_slice().expect("contiguous"), h, w, frame);
            }
        }
        for (g, v) in self.weight.grad.iter_mut().zip(gw.iter()) {
            *g += v;
        }
        dx
    }
}

impl Module for Conv2d {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
    }
}

/// Convolution over a one-hot expansion of an integer label map, computed by
/// gathering weight columns instead of multiplying zeros.
///
/// Weights use the same layout as a [`Conv2d`] with `classes` input channels,
/// so the two are interchangeable.
#[derive(Debug, Clone)]
pub struct LabelConv {
    pub conv: Conv2d,
}

#[derive(Debug, Clone)]
pub struct LabelConvCache {
    labels: Array3<u8>,
}

impl LabelConv {
    pub fn new<R: Rng + ?Sized>(classes: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(classes, out_channels, kernel, stride, rng),
        }
    }

    /// Visits `(output pixel, weight column)` pairs for one frame.
    fn taps(&self, labels: ndarray::ArrayView2<'_, u8>, mut visit: impl FnMut(usize, usize)) {
        let (h, w) = labels.dim();
        let conv = &self.conv;
        let (ho, wo) = conv.output_hw(h, w);
        let k = conv.kernel;
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..k {
                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let label = labels[[iy as usize, ix as usize]] as usize;
                        visit(oy * wo + ox, (label * k + ky) * k + kx);
                    }
                }
            }
        }
    }

    pub fn forward(&self, labels: &Array3<u8>, keep: bool) -> (Array4<f64>, Option<LabelConvCache>) {
        let (n, h, w) = labels.dim();
        let conv = &self.conv;
        let (ho, wo) = conv.output_hw(h, w);
        let kdim = conv.in_channels * conv.kernel * conv.kernel;
        let co = conv.out_channels;
        let p = ho * wo;
        debug_assert!(labels.iter().all(|&l| (l as usize) < conv.in_channels));
        // Transposed weights: one contiguous row of `co` values per column.
        let wt: Vec<f64> = (0..kdim)
            .flat_map(|col| (0..co).map(move |o| (o, col)))
            .map(|(o, col)| conv.weight.value[o * kdim + col])
            .collect();
        let mut out = Array4::zeros((n, co, ho, wo));
        let mut acc = vec![0.0; p * co];
        for i in 0..n {
            acc.fill(0.0);
            self.taps(labels.index_axis(ndarray::Axis(0), i), |pix, col| {
                let dst = &mut acc[pix * co..(pix + 1) * co];
                for (d, &v) in dst.iter_mut().zip(&wt[col * co..(col + 1) * co]) {
                    *d += v;
                }
            });
            let mut frame = out.slice_mut(s![i, .., .., ..]);
            let frame = frame.as_slice_mut().expect("contiguous output");
            for pix in 0..p {
                for o in 0..co {
                    frame[o * p + pix] = acc[pix * co + o];
                }
            }
        }
        (out, keep.then(|| LabelConvCache { labels: labels.clone() }))
    }

    pub fn backward(&mut self, cache: &LabelConvCache, dy: &Array4<f64>) {
        let (n, co, ho, wo) = dy.dim();
        let p = ho * wo;
        let kdim = self.conv.in_channels * self.conv.kernel * self.conv.kernel;
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("contiguous");
        let mut grad_t = vec![0.0; kdim * co];
        for i in 0..n {
            let frame = &dys[i * co * p..(i + 1) * co * p];
            self.taps(cache.labels.index_axis(ndarray::Axis(0), i), |pix, col| {
                for o in 0..co {
                    grad_t[col * co + o] += frame[o * p + pix];
                }
            });
        }
        for o in 0..co {
            for col in 0..kdim {
                self.conv.weight.grad[o * kdim + col] += grad_t[col * co + o];
            }
        }
    }
}

impl Module for LabelConv {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv.collect_params(prefix, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Expands labels to `(N, classes, H, W)` one-hot planes.
    fn one_hot(labels: &Array3<u8>, classes: usize) -> Array4<f64> {
        let (n, h, w) = labels.dim();
        let mut out = Array4::zeros((n, classes, h, w));
        for ((i, y, x), &l) in labels.indexed_iter() {
            out[[i, l as usize, y, x]] = 1.0;
        }
        out
    }

    /// Direct nested-loop convolution.
    fn naive_conv(conv: &Conv2d, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = conv.output_hw(h, w);
        let k = conv.kernel;
        let mut out = Array4::zeros((n, conv.out_channels, ho, wo));
        for i in 0..n {
            for o in 0..conv.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += conv.weight.value[o * c * k * k + (ci * k + ky) * k + kx]
                                            * x[[i, ci, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        out[[i, o, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for stride in [1, 2] {
            let conv = Conv2d::new(3, 5, 3, stride, &mut rng);
            let x = Array4::from_shape_fn((2, 3, 9, 7), |(a, b, c, d)| ((a * 31 + b * 7 + c * 3 + d) % 11) as f64 - 5.0);
            let (y, _) = conv.forward(&x, false);
            let expect = naive_conv(&conv, &x);
            assert!(y.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn label_conv_equals_conv_on_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lc = LabelConv::new(12, 4, 3, 2, &mut rng);
        let labels = Array3::from_shape_fn((3, 11, 8), |(a, b, c)| ((a + 3 * b + 5 * c) % 12) as u8);
        let (y, cache) = lc.forward(&labels, true);
        let oh = one_hot(&labels, 12);
        let (y_ref, cache_ref) = lc.conv.forward(&oh, true);
        assert!(y.iter().zip(&y_ref).all(|(a, b)| (a - b).abs() < 1e-12));

        let dy = y.mapv(|v| v.sin());
        let mut a = lc.clone();
        let mut b = lc.clone();
        a.backward(&cache.unwrap(), &dy);
        b.conv.backward(&cache_ref.unwrap(), &dy, false);
        assert!(a
            .conv
            .weight
            .grad
            .iter()
            .zip(&b.conv.weight.grad)
            .all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 3, 3, 2, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 7, 6), |(a, b, c, d)| ((a + 2 * b + 3 * c + 5 * d) as f64 * 0.37).sin());
        let r = Array4::from_shape_fn((2, 3, 4, 3), |(a, b, c, d)| ((a + b + c * 2 + d * 3) as f64 * 0.71).cos());
        let loss = |conv: &Conv2d, x: &Array4<f64>| (conv.forward(x, false).0 * &r).sum();
        let (_, cache) = conv.forward(&x, true);
        let dx = conv.backward(&cache.unwrap(), &r, true).unwrap();
        let h = 1e-6;
        for idx in [0usize, 5, 17, 40] {
            let mut p = conv.clone();
            p.weight.value[idx] += h;
            let mut m = conv.clone();
            m.weight.value[idx] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - conv.weight.grad[idx]).abs() < 1e-7);
        }
        for idx in [(0, 0, 0, 0), (1, 1, 3, 2), (0, 1, 6, 5)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-7);
        }
    }
}
