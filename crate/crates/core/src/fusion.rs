//! Channel-gated fusion of silhouette and parsing feature maps: the alignment
//! gate, the global module, the learnable division and the part module.

use std::ops::Range;

use ndarray::{s, Array2, Array3, Array4, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, relu, relu_backward, sigmoid, Linear, LinearCache, Module, Param};
use crate::representations::{downsample_mask, region_masks, ParsingFrame};

/// Whether gates are computed per frame or once per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GateScope {
    #[default]
    Frame,
    Sequence,
}

/// Two-layer bottleneck producing mixing weights for two `c`-channel inputs.
#[derive(Debug, Clone)]
pub struct CaGate {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
    pub ratio: usize,
}

#[derive(Debug, Clone)]
pub struct CaCache {
    l1: LinearCache,
    hidden: Array2<f64>,
    l2: LinearCache,
    gate: Array2<f64>,
}

impl CaGate {
    /// Hidden width is `ceil(c / r)`, at least one unit.
    pub fn hidden_width(channels: usize, ratio: usize) -> usize {
        channels.div_ceil(ratio.max(1)).max(1)
    }

    pub fn new<R: Rng + ?Sized>(channels: usize, ratio: usize, rng: &mut R) -> Result<Self> {
        if ratio == 0 || channels == 0 {
            return Err(Error::Config("reduction ratio and channels must be positive".into()));
        }
        let hidden = Self::hidden_width(channels, ratio);
        Ok(Self {
            fc1: Linear::new(2 * channels, hidden, true, rng),
            fc2: Linear::new(hidden, 2 * channels, true, rng),
            channels,
            ratio,
        })
    }

    /// Zeroes the second layer so every gate starts at exactly 0.5.
    pub fn zero_second_layer(&mut self) {
        self.fc2.weight.value.fill(0.0);
        if let Some(b) = &mut self.fc2.bias {
            b.value.fill(0.0);
        }
    }

    /// Maps `(n, 2c)` descriptors to `(n, 2c)` gates in (0, 1).
    pub fn forward(&self, x: &Array2<f64>, keep: bool) -> (Array2<f64>, Option<CaCache>) {
        let (mut h, l1) = self.fc1.forward(x, keep);
        relu(&mut h);
        let (mut g, l2) = self.fc2.forward(&h, keep);
        g.mapv_inplace(sigmoid);
        let cache = keep.then(|| CaCache {
            l1: l1.expect("kept"),
            hidden: h,
            l2: l2.expect("kept"),
            gate: g.clone(),
        });
        (g, cache)
    }

    pub fn backward(&mut self, cache: &CaCache, dg: &Array2<f64>) -> Array2<f64> {
        let dz = dg * &cache.gate.mapv(|g| g * (1.0 - g));
        let mut dh = self.fc2.backward(&cache.l2, &dz);
        relu_backward(&mut dh, &cache.hidden);
        self.fc1.backward(&cache.l1, &dh)
    }
}

impl Module for CaGate {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.fc1.collect_params(&join(prefix, "fc1"), out);
        self.fc2.collect_params(&join(prefix, "fc2"), out);
    }
}

/// Gate evaluation with an optional per-sequence pooling of descriptors.
#[derive(Debug, Clone)]
struct ScopedGateCache {
    ca: CaCache,
    lengths: Option<Vec<usize>>,
}

fn scoped_gate(
    ca: &CaGate,
    desc: &Array2<f64>,
    scope: GateScope,
    lengths: &[usize],
    keep: bool,
) -> (Array2<f64>, Option<ScopedGateCache>) {
    match scope {
        GateScope::Frame => {
            let (g, c) = ca.forward(desc, keep);
            (g, c.map(|ca| ScopedGateCache { ca, lengths: None }))
        }
        GateScope::Sequence => {
            let pooled = mean_per_sequence(desc, lengths);
            let (g, c) = ca.forward(&pooled, keep);
            let mut full = Array2::zeros(desc.raw_dim());
            let mut row = 0;
            for (b, &len) in lengths.iter().enumerate() {
                for _ in 0..len {
                    full.row_mut(row).assign(&g.row(b));
                    row += 1;
                }
            }
            let cache = c.map(|ca| ScopedGateCache {
                ca,
                lengths: Some(lengths.to_vec()),
            });
            (full, cache)
        }
    }
}

fn scoped_gate_backward(ca: &mut CaGate, cache: &ScopedGateCache, dg: &Array2<f64>) -> Array2<f64> {
    match &cache.lengths {
        None => ca.backward(&cache.ca, dg),
        Some(lengths) => {
            let dg_seq = sum_per_sequence(dg, lengths);
            let dpooled = ca.backward(&cache.ca, &dg_seq);
            let mut dx = Array2::zeros(dg.raw_dim());
            let mut row = 0;
            for (b, &len) in lengths.iter().enumerate() {
                for _ in 0..len {
                    dx.row_mut(row).assign(&(&dpooled.row(b) / len as f64));
                    row += 1;
                }
            }
            dx
        }
    }
}

fn sum_per_sequence(x: &Array2<f64>, lengths: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((lengths.len(), x.ncols()));
    let mut row = 0;
    for (b, &len) in lengths.iter().enumerate() {
        out.row_mut(b).assign(&x.slice(s![row..row + len, ..]).sum_axis(Axis(0)));
        row += len;
    }
    out
}

fn mean_per_sequence(x: &Array2<f64>, lengths: &[usize]) -> Array2<f64> {
    let mut out = sum_per_sequence(x, lengths);
    for (mut r, &len) in out.rows_mut().into_iter().zip(lengths) {
        r /= len as f64;
    }
    out
}

fn check_lengths(n: usize, lengths: &[usize]) -> Result<()> {
    if lengths.iter().sum::<usize>() != n || lengths.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "sequence lengths {lengths:?} do not cover {n} frames"
        )));
    }
    Ok(())
}

fn same_shape(a: &Array4<f64>, b: &Array4<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Per-frame, per-channel spatial mean: `(N, C, h, w) -> (N, C)`.
pub fn global_average_pool(x: ArrayView4<'_, f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let area = (h * w) as f64;
    Array2::from_shape_fn((n, c), |(i, ch)| x.slice(s![i, ch, .., ..]).sum() / area)
}

/// `out[n,c,..] = g1[n,c] * a[n,c,..] + g2[n,c] * b[n,c,..]`.
fn mix(a: ArrayView4<'_, f64>, b: ArrayView4<'_, f64>, gates: &Array2<f64>) -> Array4<f64> {
    let (n, c, _, _) = a.dim();
    let mut out = Array4::zeros(a.raw_dim());
    for i in 0..n {
        for ch in 0..c {
            let (g1, g2) = (gates[[i, ch]], gates[[i, c + ch]]);
            let dst = out.slice_mut(s![i, ch, .., ..]);
            ndarray::Zip::from(dst)
                .and(a.slice(s![i, ch, .., ..]))
                .and(b.slice(s![i, ch, .., ..]))
                .for_each(|o, &x, &y| *o = g1 * x + g2 * y);
        }
    }
    out
}

/// Gradients of [`mix`]: returns `(da, db, dgates)`.
fn mix_backward(
    a: ArrayView4<'_, f64>,
    b: ArrayView4<'_, f64>,
    gates: &Array2<f64>,
    dy: ArrayView4<'_, f64>,
) -> (Array4<f64>, Array4<f64>, Array2<f64>) {
    let (n, c, _, _) = a.dim();
    let mut da = Array4::zeros(a.raw_dim());
    let mut db = Array4::zeros(a.raw_dim());
    let mut dg = Array2::zeros((n, 2 * c));
    for i in 0..n {
        for ch in 0..c {
            let (g1, g2) = (gates[[i, ch]], gates[[i, c + ch]]);
            let d = dy.slice(s![i, ch, .., ..]);
            da.slice_mut(s![i, ch, .., ..]).assign(&(&d * g1));
            db.slice_mut(s![i, ch, .., ..]).assign(&(&d * g2));
            dg[[i, ch]] = (&d * &a.slice(s![i, ch, .., ..])).sum();
            dg[[i, c + ch]] = (&d * &b.slice(s![i, ch, .., ..])).sum();
        }
    }
    (da, db, dg)
}

/// Global cross-granularity module: one gate from the concatenated global
/// descriptors of both maps.
#[derive(Debug, Clone)]
pub struct Gcm {
    pub ca: CaGate,
    pub scope: GateScope,
}

#[derive(Debug, Clone)]
pub struct GcmCache {
    gate: ScopedGateCache,
    gates: Array2<f64>,
    fs: Array4<f64>,
    fp: Array4<f64>,
}

impl Gcm {
    pub fn forward(
        &self,
        fs: &Array4<f64>,
        fp: &Array4<f64>,
        lengths: &[usize],
        keep: bool,
    ) -> Result<(Array4<f64>, Option<GcmCache>)> {
        same_shape(fs, fp)?;
        check_lengths(fs.dim().0, lengths)?;
        let ds = global_average_pool(fs.view());
        let dp = global_average_pool(fp.view());
        let desc = ndarray::concatenate![Axis(1), ds, dp];
        let (gates, gc) = scoped_gate(&self.ca, &desc, self.scope, lengths, keep);
        let out = mix(fs.view(), fp.view(), &gates);
        let cache = gc.map(|gate| GcmCache {
            gate,
            gates,
            fs: fs.clone(),
            fp: fp.clone(),
        });
        Ok((out, cache))
    }

    /// Returns gradients wrt both inputs.
    pub fn backward(&mut self, cache: &GcmCache, dy: &Array4<f64>) -> (Array4<f64>, Array4<f64>) {
        let (mut dfs, mut dfp, dg) = mix_backward(cache.fs.view(), cache.fp.view(), &cache.gates, dy.view());
        let ddesc = scoped_gate_backward(&mut self.ca, &cache.gate, &dg);
        let (_, c, h, w) = dy.dim();
        let area = (h * w) as f64;
        for (i, ch) in ndarray::indices((dy.dim().0, c)) {
            let gs = ddesc[[i, ch]] / area;
            let gp = ddesc[[i, c + ch]] / area;
            dfs.slice_mut(s![i, ch, .., ..]).mapv_inplace(|v| v + gs);
            dfp.slice_mut(s![i, ch, .., ..]).mapv_inplace(|v| v + gp);
        }
        (dfs, dfp)
    }
}

impl Module for Gcm {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.ca.collect_params(&join(prefix, "ca"), out);
    }
}

/// Soft part masking: `gamma * F * M + (1 - gamma) * F * (1 - M)`.
///
/// `masks` is `(N, h, w)` with values in {0, 1}, broadcast over channels.
pub fn learnable_division(fp: &Array4<f64>, masks: &Array3<f64>, gamma: f64) -> Result<Array4<f64>> {
    let (n, c, h, w) = fp.dim();
    if masks.dim() != (n, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs feature {:?}",
            masks.dim(),
            fp.dim()
        )));
    }
    let mut out = fp.clone();
    for i in 0..n {
        let m = masks.index_axis(Axis(0), i);
        for ch in 0..c {
            ndarray::Zip::from(out.slice_mut(s![i, ch, .., ..]))
                .and(&m)
                .for_each(|v, &mv| *v = gamma * *v * mv + (1.0 - gamma) * *v * (1.0 - mv));
        }
    }
    Ok(out)
}

/// Row ranges of the upper quarter, middle half and lower quarter.
pub fn strip_rows(h: usize) -> Result<[Range<usize>; 3]> {
    if h < 4 {
        return Err(Error::HeightTooSmall(h));
    }
    let q = h / 4;
    Ok([0..q, q..h - q, h - q..h])
}

/// Splits a map into upper, middle and lower horizontal strips.
pub fn split_silhouette_strips(fs: &Array4<f64>) -> Result<[Array4<f64>; 3]> {
    let rows = strip_rows(fs.dim().2)?;
    Ok(rows.map(|r| fs.slice(s![.., .., r, ..]).to_owned()))
}

/// Stacks strips back along the height axis.
pub fn concat_strips(strips: &[Array4<f64>]) -> Array4<f64> {
    let views: Vec<_> = strips.iter().map(|s| s.view()).collect();
    ndarray::concatenate(Axis(2), &views).expect("strips share N, C, W")
}

/// Region masks for each frame, max-pooled to feature resolution:
/// `[upper, middle, lower]`, each `(N, h, w)`.
pub fn feature_masks(labels: &Array3<u8>, target: (usize, usize)) -> Result<[Array3<f64>; 3]> {
    let n = labels.dim().0;
    let mut out = [(); 3].map(|_| Array3::zeros((n, target.0, target.1)));
    for i in 0..n {
        let frame = ParsingFrame::new(labels.index_axis(Axis(0), i).to_owned())?;
        let masks = region_masks(&frame);
        for (dst, m) in out.iter_mut().zip(masks.as_array()) {
            let small = downsample_mask(m, target)?;
            dst.index_axis_mut(Axis(0), i).assign(&small.mapv(f64::from));
        }
    }
    Ok(out)
}

/// How the three division scalars behave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DivisionMode {
    /// Hard masking: gamma fixed at 1.
    Simple,
    /// Gamma fixed at 0.75.
    Fixed,
    /// Gamma trained, starting from `gamma_init`.
    #[default]
    Learnable,
}

impl DivisionMode {
    pub fn initial_gamma(self, learnable_init: f64) -> f64 {
        match self {
            DivisionMode::Simple => 1.0,
            DivisionMode::Fixed => 0.75,
            DivisionMode::Learnable => learnable_init,
        }
    }
}

/// Part cross-granularity module: three independent gates over the upper,
/// middle and lower strips.
#[derive(Debug, Clone)]
pub struct Pcm {
    pub gates: [CaGate; 3],
    /// One scalar per region.
    pub gamma: Param,
    pub scope: GateScope,
}

#[derive(Debug, Clone)]
struct RegionCache {
    gate: ScopedGateCache,
    gates: Array2<f64>,
    strip: Array4<f64>,
    part: Array4<f64>,
    /// Flat argmax offsets within each `(frame, channel)` plane.
    argmax_s: Array2<usize>,
    argmax_p: Array2<usize>,
}

#[derive(Debug, Clone)]
pub struct PcmCache {
    regions: Vec<RegionCache>,
    fp: Array4<f64>,
    masks: [Array3<f64>; 3],
}

/// Per-plane mean + max, with the argmax of each plane.
fn avg_max_pool(x: &Array4<f64>) -> (Array2<f64>, Array2<usize>) {
    let (n, c, _, _) = x.dim();
    let mut desc = Array2::zeros((n, c));
    let mut arg = Array2::zeros((n, c));
    for i in 0..n {
        for ch in 0..c {
            let plane = x.slice(s![i, ch, .., ..]);
            let mut best = (0usize, f64::NEG_INFINITY);
            let mut sum = 0.0;
            for (k, &v) in plane.iter().enumerate() {
                sum += v;
                if v > best.1 {
                    best = (k, v);
                }
            }
            desc[[i, ch]] = sum / plane.len() as f64 + best.1;
            arg[[i, ch]] = best.0;
        }
    }
    (desc, arg)
}

fn avg_max_pool_backward(dx: &mut Array4<f64>, ddesc: ndarray::ArrayView2<'_, f64>, arg: &Array2<usize>) {
    let (n, c, h, w) = dx.dim();
    let area = (h * w) as f64;
    for i in 0..n {
        for ch in 0..c {
            let g = ddesc[[i, ch]];
            let k = arg[[i, ch]];
            let mut plane = dx.slice_mut(s![i, ch, .., ..]);
            plane.mapv_inplace(|v| v + g / area);
            plane[[k / w, k % w]] += g;
        }
    }
}

impl Pcm {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        ratio: usize,
        division: DivisionMode,
        gamma_init: f64,
        scope: GateScope,
        rng: &mut R,
    ) -> Result<Self> {
        let gates = [
            CaGate::new(channels, ratio, rng)?,
            CaGate::new(channels, ratio, rng)?,
            CaGate::new(channels, ratio, rng)?,
        ];
        let mut gamma = Param::filled(&[3], division.initial_gamma(gamma_init));
        gamma.trainable = division == DivisionMode::Learnable;
        Ok(Self { gates, gamma, scope })
    }

    /// `masks` are the region masks at feature resolution, see [`feature_masks`].
    pub fn forward(
        &self,
        fs: &Array4<f64>,
        fp: &Array4<f64>,
        masks: &[Array3<f64>; 3],
        lengths: &[usize],
        keep: bool,
    ) -> Result<(Array4<f64>, Option<PcmCache>)> {
        same_shape(fs, fp)?;
        check_lengths(fs.dim().0, lengths)?;
        let rows = strip_rows(fs.dim().2)?;
        let mut outs = Vec::with_capacity(3);
        let mut regions = Vec::with_capacity(3);
        for (i, r) in rows.into_iter().enumerate() {
            let divided = learnable_division(fp, &masks[i], self.gamma.value[i])?;
            let part = divided.slice(s![.., .., r.clone(), ..]).to_owned();
            let strip = fs.slice(s![.., .., r, ..]).to_owned();
            let (ds, argmax_s) = avg_max_pool(&strip);
            let (dp, argmax_p) = avg_max_pool(&part);
            let desc = ndarray::concatenate![Axis(1), ds, dp];
            let (gates, gc) = scoped_gate(&self.gates[i], &desc, self.scope, lengths, keep);
            outs.push(mix(strip.view(), part.view(), &gates));
            if let Some(gate) = gc {
                regions.push(RegionCache {
                    gate,
                    gates,
                    strip,
                    part,
                    argmax_s,
                    argmax_p,
                });
            }
        }
        let cache = keep.then(|| PcmCache {
            regions,
            fp: fp.clone(),
            masks: masks.clone(),
        });
        Ok((concat_strips(&outs), cache))
    }

    /// Returns gradients wrt both inputs and accumulates gate and gamma gradients.
    pub fn backward(&mut self, cache: &PcmCache, dy: &Array4<f64>) -> (Array4<f64>, Array4<f64>) {
        let rows = strip_rows(dy.dim().2).expect("validated in forward");
        let c = dy.dim().1;
        let mut dfs = Array4::zeros(dy.raw_dim());
        let mut dfp = Array4::zeros(dy.raw_dim());
        for (i, r) in rows.into_iter().enumerate() {
            let rc = &cache.regions[i];
            let dyr = dy.slice(s![.., .., r.clone(), ..]);
            let (mut dstrip, mut dpart, dg) = mix_backward(rc.strip.view(), rc.part.view(), &rc.gates, dyr);
            let ddesc = scoped_gate_backward(&mut self.gates[i], &rc.gate, &dg);
            avg_max_pool_backward(&mut dstrip, ddesc.slice(s![.., ..c]), &rc.argmax_s);
            avg_max_pool_backward(&mut dpart, ddesc.slice(s![.., c..]), &rc.argmax_p);
            dfs.slice_mut(s![.., .., r.clone(), ..]).assign(&dstrip);

            // d/dF of gamma*F*M + (1-gamma)*F*(1-M) is (1-gamma) + (2 gamma - 1) M.
            let gamma = self.gamma.value[i];
            let mut dgamma = 0.0;
            let n = dy.dim().0;
            for f in 0..n {
                let m = cache.masks[i].slice(s![f, r.clone(), ..]);
                for ch in 0..c {
                    let src = cache.fp.slice(s![f, ch, r.clone(), ..]);
                    let dp = dpart.slice(s![f, ch, .., ..]);
                    let mut dst = dfp.slice_mut(s![f, ch, r.clone(), ..]);
                    ndarray::Zip::from(&mut dst)
                        .and(&dp)
                        .and(&src)
                        .and(&m)
                        .for_each(|o, &g, &x, &mv| {
                            *o += g * ((1.0 - gamma) + (2.0 * gamma - 1.0) * mv);
                            dgamma += g * x * (2.0 * mv - 1.0);
                        });
                }
            }
            self.gamma.grad[i] += dgamma;
        }
        (dfs, dfp)
    }
}

impl Module for Pcm {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        let [u, m, l] = &mut self.gates;
        u.collect_params(&join(prefix, "ca_upper"), out);
        m.collect_params(&join(prefix, "ca_middle"), out);
        l.collect_params(&join(prefix, "ca_lower"), out);
        out.push((join(prefix, "gamma"), &mut self.gamma));
    }
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
    fn gate_matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ca = CaGate::new(5, 2, &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 10), |(i, j)| ((i * 10 + j) as f64 * 0.37).sin());
        let (g, _) = ca.forward(&x, false);
        let hidden = CaGate::hidden_width(5, 2);
        for n in 0..3 {
            let mut h = vec![0.0; hidden];
            for (k, hk) in h.iter_mut().enumerate() {
                let mut acc = ca.fc1.bias.as_ref().unwrap().value[k];
                for j in 0..10 {
                    acc += ca.fc1.weight.value[k * 10 + j] * x[[n, j]];
                }
                *hk = acc.max(0.0);
            }
            for o in 0..10 {
                let mut acc = ca.fc2.bias.as_ref().unwrap().value[o];
                for (k, hk) in h.iter().enumerate() {
                    acc += ca.fc2.weight.value[o * hidden + k] * hk;
                }
                let expect = 1.0 / (1.0 + (-acc).exp());
                assert!((g[[n, o]] - expect).abs() <= 1e-12);
                assert!(g[[n, o]] > 0.0 && g[[n, o]] < 1.0);
            }
        }
    }

    #[test]
    fn hidden_width_rounds_up() {
        assert_eq!(CaGate::hidden_width(64, 16), 4);
        assert_eq!(CaGate::hidden_width(5, 16), 1);
        assert_eq!(CaGate::hidden_width(33, 16), 3);
    }

    #[test]
    fn zero_second_layer_averages_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gcm = Gcm {
            ca: CaGate::new(4, 2, &mut rng).unwrap(),
            scope: GateScope::Frame,
        };
        gcm.ca.zero_second_layer();
        let fs = random_map(2, (3, 4, 8, 6));
        let fp = random_map(3, (3, 4, 8, 6));
        let (out, _) = gcm.forward(&fs, &fp, &[3], false).unwrap();
        assert_eq!(out, (&fs + &fp) / 2.0);
    }

    #[test]
    fn division_special_values() {
        let fp = random_map(4, (2, 3, 8, 6));
        let masks = Array3::from_shape_fn((2, 8, 6), |(i, y, x)| ((i + y + x) % 2) as f64);
        assert_eq!(learnable_division(&fp, &masks, 0.5).unwrap(), &fp * 0.5);
        let hard = learnable_division(&fp, &masks, 1.0).unwrap();
        let comp = learnable_division(&fp, &masks, 0.0).unwrap();
        for ((i, c, y, x), &v) in fp.indexed_iter() {
            let m = masks[[i, y, x]];
            assert_eq!(hard[[i, c, y, x]], v * m);
            assert_eq!(comp[[i, c, y, x]], v * (1.0 - m));
        }
        assert!(learnable_division(&fp, &Array3::zeros((2, 4, 6)), 1.0).is_err());
    }

    #[test]
    fn strips_reconstruct_and_follow_quarters() {
        let fs = random_map(5, (2, 3, 16, 5));
        let strips = split_silhouette_strips(&fs).unwrap();
        assert_eq!(strips.iter().map(|s| s.dim().2).collect::<Vec<_>>(), vec![4, 8, 4]);
        assert_eq!(concat_strips(&strips), fs);
        let small = split_silhouette_strips(&random_map(6, (1, 1, 4, 2))).unwrap();
        assert_eq!(small.iter().map(|s| s.dim().2).collect::<Vec<_>>(), vec![1, 2, 1]);
        assert!(matches!(strip_rows(3), Err(Error::HeightTooSmall(3))));
    }

    #[test]
    fn pcm_with_zero_gates_averages_prepared_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pcm = Pcm::new(3, 2, DivisionMode::Fixed, 1.0, GateScope::Frame, &mut rng).unwrap();
        for g in &mut pcm.gates {
            g.zero_second_layer();
        }
        let fs = random_map(8, (2, 3, 8, 6));
        let fp = random_map(9, (2, 3, 8, 6));
        let masks = [10, 11, 12].map(|seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            Array3::from_shape_fn((2, 8, 6), |_| f64::from(r.random_bool(0.5)))
        });
        let (out, _) = pcm.forward(&fs, &fp, &masks, &[1, 1], false).unwrap();
        let rows = strip_rows(8).unwrap();
        for (i, r) in rows.into_iter().enumerate() {
            let prepared = learnable_division(&fp, &masks[i], 0.75).unwrap();
            let expect = (&fs.slice(s![.., .., r.clone(), ..]) + &prepared.slice(s![.., .., r.clone(), ..])) / 2.0;
            assert_eq!(out.slice(s![.., .., r, ..]), expect);
        }
    }

    #[test]
    fn sequence_scope_shares_gates_within_a_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let gcm = Gcm {
            ca: CaGate::new(2, 1, &mut rng).unwrap(),
            scope: GateScope::Sequence,
        };
        let fs = random_map(14, (4, 2, 4, 3));
        let fp = random_map(15, (4, 2, 4, 3));
        let (_, cache) = gcm.forward(&fs, &fp, &[3, 1], true).unwrap();
        let g = cache.unwrap().gates;
        assert_eq!(g.row(0), g.row(1));
        assert_eq!(g.row(1), g.row(2));
        assert!(gcm.forward(&fs, &fp, &[2, 1], false).is_err());
    }
}
