//! Feature mapping heads: temporal max pooling followed by horizontal
//! pyramid mapping with one linear map per strip.

use ndarray::{linalg::general_mat_mul, s, Array2, Array3, Array4, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{join, Module, Param};

/// Elementwise max over each sequence's frames.
///
/// Frames are grouped by `lengths`; returns `(B, c, h, w)` and the winning
/// frame index (into the `N` axis) of every output element.
pub fn set_pool(f: &Array4<f64>, lengths: &[usize]) -> Result<(Array4<f64>, Array4<usize>)> {
    let (n, c, h, w) = f.dim();
    if lengths.iter().sum::<usize>() != n || lengths.contains(&0) {
        return Err(Error::ShapeMismatch(format!("sequence lengths {lengths:?} vs {n} frames")));
    }
    let b = lengths.len();
    let mut out = Array4::from_elem((b, c, h, w), f64::NEG_INFINITY);
    let mut arg = Array4::zeros((b, c, h, w));
    let mut start = 0;
    for (seq, &len) in lengths.iter().enumerate() {
        let mut dst = out.index_axis_mut(Axis(0), seq);
        let mut dst_arg = arg.index_axis_mut(Axis(0), seq);
        for t in start..start + len {
            ndarray::Zip::from(&mut dst)
                .and(&mut dst_arg)
                .and(f.index_axis(Axis(0), t))
                .for_each(|o, a, &v| {
                    if v > *o {
                        *o = v;
                        *a = t;
                    }
                });
        }
        start += len;
    }
    Ok((out, arg))
}

/// Horizontal pyramid mapping.
#[derive(Debug, Clone)]
pub struct Hpm {
    pub scales: Vec<usize>,
    /// `(strips, c, d)`: one `c -> d` map per strip.
    pub weight: Param,
    pub channels: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct HpmCache {
    pooled: Array3<f64>,
    /// Flat argmax offset within each strip's `rows x w` block.
    argmax: Array3<usize>,
    input_dims: (usize, usize, usize, usize),
}

impl Hpm {
    pub fn new<R: Rng + ?Sized>(scales: &[usize], channels: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if scales.is_empty() || scales.contains(&0) {
            return Err(Error::Config("pyramid scales must be positive and non-empty".into()));
        }
        let strips: usize = scales.iter().sum();
        let bound = (6.0 / (channels + dim) as f64).sqrt();
        Ok(Self {
            scales: scales.to_vec(),
            weight: Param::uniform(&[strips, channels, dim], bound, rng),
            channels,
            dim,
        })
    }

    pub fn num_strips(&self) -> usize {
        self.scales.iter().sum()
    }

    pub fn check_height(&self, h: usize) -> Result<()> {
        match self.scales.iter().find(|&&s| h % s != 0 || s > h) {
            Some(&scale) => Err(Error::ScaleError { scale, height: h }),
            None => Ok(()),
        }
    }

    /// Row ranges of every strip in (scale, strip) order.
    fn strip_ranges(&self, h: usize) -> Vec<(usize, usize)> {
        self.scales
            .iter()
            .flat_map(|&s| (0..s).map(move |j| (j * h / s, (j + 1) * h / s)))
            .collect()
    }

    fn strip_weight(&self, s: usize) -> ArrayView2<'_, f64> {
        let size = self.channels * self.dim;
        ArrayView2::from_shape((self.channels, self.dim), &self.weight.value[s * size..(s + 1) * size])
            .expect("strip weight")
    }

    /// Max + mean pooled strips of `(B, c, h, w)` maps, each through its own map.
    pub fn forward(&self, m: &Array4<f64>, keep: bool) -> Result<(Array3<f64>, Option<HpmCache>)> {
        let (b, c, h, w) = m.dim();
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!("hpm expects {} channels, got {c}", self.channels)));
        }
        self.check_height(h)?;
        let ranges = self.strip_ranges(h);
        let n_strips = ranges.len();
        let mut pooled = Array3::zeros((b, n_strips, c));
        let mut argmax = Array3::zeros((b, n_strips, c));
        for i in 0..b {
            for (s, &(r0, r1)) in ranges.iter().enumerate() {
                for ch in 0..c {
                    let block = m.slice(s![i, ch, r0..r1, ..]);
                    let mut best = (0usize, f64::NEG_INFINITY);
                    let mut sum = 0.0;
                    for (k, &v) in block.iter().enumerate() {
                        sum += v;
                        if v > best.1 {
                            best = (k, v);
                        }
                    }
                    pooled[[i, s, ch]] = best.1 + sum / ((r1 - r0) * w) as f64;
                    argmax[[i, s, ch]] = best.0;
                }
            }
        }
        let mut out = Array3::zeros((b, n_strips, self.dim));
        for s in 0..n_strips {
            let x = pooled.slice(s![.., s, ..]);
            let mut y = out.slice_mut(s![.., s, ..]);
            general_mat_mul(1.0, &x, &self.strip_weight(s), 0.0, &mut y);
        }
        let cache = keep.then(|| HpmCache {
            pooled,
            argmax,
            input_dims: (b, c, h, w),
        });
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &HpmCache, dy: &Array3<f64>) -> Array4<f64> {
        let (b, c, h, w) = cache.input_dims;
        let ranges = self.strip_ranges(h);
        let size = self.channels * self.dim;
        let mut dpooled = Array3::zeros((b, ranges.len(), c));
        for s in 0..ranges.len() {
            let dys = dy.slice(s![.., s, ..]);
            {
                let mut gw = ArrayViewMut2::from_shape(
                    (self.channels, self.dim),
                    &mut self.weight.grad[s * size..(s + 1) * size],
                )
                .expect("strip grad");
                general_mat_mul(1.0, &cache.pooled.slice(s![.., s, ..]).t(), &dys, 1.0, &mut gw);
            }
            let mut dp = dpooled.slice_mut(s![.., s, ..]);
            general_mat_mul(1.0, &dys, &self.strip_weight(s).t(), 0.0, &mut dp);
        }
        let mut dm = Array4::zeros((b, c, h, w));
        for i in 0..b {
            for (s, &(r0, r1)) in ranges.iter().enumerate() {
                let area = ((r1 - r0) * w) as f64;
                for ch in 0..c {
                    let g = dpooled[[i, s, ch]];
                    let k = cache.argmax[[i, s, ch]];
                    let mut block = dm.slice_mut(s![i, ch, r0..r1, ..]);
                    block.mapv_inplace(|v| v + g / area);
                    block[[k / w, k % w]] += g;
                }
            }
        }
        dm
    }
}

impl Module for Hpm {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
    }
}

/// Set pooling followed by pyramid mapping.
#[derive(Debug, Clone)]
pub struct Fmh {
    pub hpm: Hpm,
}

#[derive(Debug, Clone)]
pub struct FmhCache {
    argmax: Array4<usize>,
    frames: usize,
    hpm: HpmCache,
}

impl Fmh {
    pub fn new<R: Rng + ?Sized>(scales: &[usize], channels: usize, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            hpm: Hpm::new(scales, channels, dim, rng)?,
        })
    }

    /// `(N, c, h, w)` frame maps to `(B, strips, d)` embeddings.
    pub fn forward(&self, f: &Array4<f64>, lengths: &[usize], keep: bool) -> Result<(Array3<f64>, Option<FmhCache>)> {
        let (pooled, argmax) = set_pool(f, lengths)?;
        let (out, hc) = self.hpm.forward(&pooled, keep)?;
        let cache = hc.map(|hpm| FmhCache {
            argmax,
            frames: f.dim().0,
            hpm,
        });
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &FmhCache, dy: &Array3<f64>) -> Array4<f64> {
        let dm = self.hpm.backward(&cache.hpm, dy);
        let (_, c, h, w) = dm.dim();
        let mut df = Array4::zeros((cache.frames, c, h, w));
        for ((b, ch, y, x), &g) in dm.indexed_iter() {
            df[[cache.argmax[[b, ch, y, x]], ch, y, x]] += g;
        }
        df
    }
}

impl Module for Fmh {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.hpm.collect_params(&join(prefix, "hpm"), out);
    }
}

/// Row-stacks per-head embeddings `(B, strips, d)` in the given order.
pub fn assemble_output(parts: &[&Array3<f64>]) -> Result<Array3<f64>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no embeddings to assemble".into()))?;
    if let Some(bad) = parts.iter().find(|p| p.dim() != first.dim()) {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", bad.dim(), first.dim())));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(Axis(1), &views).expect("checked shapes"))
}

/// Flattens `(strips, d)` rows of one embedding for matching.
pub fn flatten_embedding(e: &Array2<f64>) -> Vec<f64> {
    e.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn set_pool_is_max_over_frames() {
        let f = random_map(0, (5, 2, 3, 2));
        let (single, _) = set_pool(&f.slice(s![0..1, .., .., ..]).to_owned(), &[1]).unwrap();
        assert_eq!(single.index_axis(Axis(0), 0), f.index_axis(Axis(0), 0));
        let (pooled, _) = set_pool(&f, &[5]).unwrap();
        let dup = ndarray::concatenate![Axis(0), f, f.slice(s![2..3, .., .., ..])];
        assert_eq!(set_pool(&dup, &[6]).unwrap().0, pooled);
        let perm = f.select(Axis(0), &[4, 2, 0, 1, 3]);
        assert_eq!(set_pool(&perm, &[5]).unwrap().0, pooled);
        assert!(set_pool(&f, &[2, 2]).is_err());
    }

    #[test]
    fn hpm_identity_map_and_strip_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hpm = Hpm::new(&[1], 3, 3, &mut rng).unwrap();
        hpm.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let m = random_map(2, (2, 3, 4, 5));
        let (out, _) = hpm.forward(&m, false).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                let plane = m.slice(s![b, c, .., ..]);
                let expect = plane.fold(f64::NEG_INFINITY, |a, &v| a.max(v)) + plane.mean().unwrap();
                assert!((out[[b, 0, c]] - expect).abs() < 1e-12);
            }
        }
        let full = Hpm::new(&[1, 2, 4, 8, 16], 4, 2, &mut rng).unwrap();
        assert_eq!(full.num_strips(), 31);
        let (out, _) = full.forward(&random_map(3, (1, 4, 16, 3)), false).unwrap();
        assert_eq!(out.dim(), (1, 31, 2));
        assert!(matches!(
            full.forward(&random_map(3, (1, 4, 12, 3)), false),
            Err(Error::ScaleError { scale: 8, height: 12 })
        ));
    }

    #[test]
    fn constant_map_pools_to_twice_the_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hpm = Hpm::new(&[1, 2, 4], 2, 2, &mut rng).unwrap();
        let strips = hpm.num_strips();
        let mut w = Vec::new();
        for _ in 0..strips {
            w.extend([1.0, 0.0, 0.0, 1.0]);
        }
        hpm.weight.value = w;
        let (out, _) = hpm.forward(&Array4::from_elem((1, 2, 8, 3), 1.5), false).unwrap();
        assert!(out.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn fmh_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut fmh = Fmh::new(&[1, 2], 3, 4, &mut rng).unwrap();
        let f = random_map(6, (5, 3, 4, 3));
        let lengths = [3, 2];
        let r = Array3::from_shape_fn((2, 3, 4), |(a, b, c)| ((a * 12 + b * 4 + c) as f64 * 0.7).sin());
        let loss = |fmh: &Fmh, f: &Array4<f64>| (fmh.forward(f, &lengths, false).unwrap().0 * &r).sum();
        let (_, cache) = fmh.forward(&f, &lengths, true).unwrap();
        let df = fmh.backward(&cache.unwrap(), &r);
        let h = 1e-6;
        for idx in [0usize, 7, 20, 35] {
            let mut p = fmh.clone();
            p.hpm.weight.value[idx] += h;
            let mut m = fmh.clone();
            m.hpm.weight.value[idx] -= h;
            let fd = (loss(&p, &f) - loss(&m, &f)) / (2.0 * h);
            assert!((fd - fmh.hpm.weight.grad[idx]).abs() < 1e-7);
        }
        for idx in [(0, 0, 0, 0), (4, 2, 3, 2), (2, 1, 1, 1)] {
            let mut fp = f.clone();
            fp[idx] += h;
            let mut fm = f.clone();
            fm[idx] -= h;
            let fd = (loss(&fmh, &fp) - loss(&fmh, &fm)) / (2.0 * h);
            assert!((fd - df[idx]).abs() < 1e-6, "{fd} vs {}", df[idx]);
        }
    }

    #[test]
    fn assembly_stacks_rows_in_order() {
        let a = Array3::from_elem((2, 3, 4), 1.0);
        let b = Array3::from_elem((2, 3, 4), 2.0);
        let z = Array3::<f64>::zeros((2, 3, 4));
        let out = assemble_output(&[&a, &b, &z, &z]).unwrap();
        assert_eq!(out.dim(), (2, 12, 4));
        assert_eq!(out[[0, 4, 0]], 2.0);
        assert_eq!(assemble_output(&[&z, &z, &z, &z]).unwrap(), Array3::<f64>::zeros((2, 12, 4)));
        assert!(assemble_output(&[&a, &Array3::<f64>::zeros((2, 2, 4))]).is_err());
    }
}
