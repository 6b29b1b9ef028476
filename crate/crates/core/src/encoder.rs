//! Per-frame residual backbones for the silhouette and parsing branches.

use ndarray::{Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    join, relu, relu_backward, BatchNorm2d, BnCache, Conv2d, ConvCache, LabelConv, LabelConvCache, Module,
    Param,
};
use crate::representations::{FRAME_HEIGHT, FRAME_WIDTH, NUM_LABELS};

/// How parsing labels are presented to a backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ParsingInput {
    /// One plane per label.
    #[default]
    OneHot,
    /// A single plane holding `label / 11`.
    Index,
}

impl ParsingInput {
    pub fn channels(self) -> usize {
        match self {
            ParsingInput::OneHot => NUM_LABELS,
            ParsingInput::Index => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Stem width followed by one width per stage.
    pub stage_channels: Vec<usize>,
    /// Residual blocks per stage.
    pub blocks_per_stage: Vec<usize>,
    /// Stem stride followed by one stride per stage.
    pub strides: Vec<usize>,
}

impl EncoderConfig {
    /// Desk-scale backbone: 64×44 frames down to 8×6 maps.
    pub fn tiny() -> Self {
        Self {
            stage_channels: vec![8, 8, 16, 32],
            blocks_per_stage: vec![1, 1, 1],
            strides: vec![2, 2, 1, 2],
        }
    }

    /// Full-width backbone: 64×44 frames down to 16×11 maps.
    pub fn full() -> Self {
        Self {
            stage_channels: vec![64, 64, 128, 256],
            blocks_per_stage: vec![1, 1, 1],
            strides: vec![1, 1, 2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.blocks_per_stage.len();
        if stages == 0
            || self.stage_channels.len() != stages + 1
            || self.strides.len() != stages + 1
        {
            return Err(Error::Config(
                "encoder needs stage_channels and strides with one entry more than blocks_per_stage".into(),
            ));
        }
        if self.stage_channels.contains(&0) || self.strides.contains(&0) || self.blocks_per_stage.contains(&0) {
            return Err(Error::Config("encoder widths, strides and block counts must be positive".into()));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_channels.last().expect("validated")
    }

    /// Spatial size of the output maps for 64×44 input.
    pub fn output_hw(&self) -> (usize, usize) {
        let (mut h, mut w) = (FRAME_HEIGHT, FRAME_WIDTH);
        for &s in &self.strides {
            h = (h - 1) / s + 1;
            w = (w - 1) / s + 1;
        }
        (h, w)
    }
}

/// Input to one backbone call.
#[derive(Debug, Clone)]
pub enum EncoderInput<'a> {
    /// Real-valued planes `(N, C, 64, 44)`.
    Dense(&'a Array4<f64>),
    /// Label maps `(N, 64, 44)`, expanded to one-hot planes on the fly.
    Labels(&'a Array3<u8>),
}

impl EncoderInput<'_> {
    fn frames(&self) -> usize {
        match self {
            EncoderInput::Dense(x) => x.dim().0,
            EncoderInput::Labels(l) => l.dim().0,
        }
    }
}

/// Builds the single-plane index image for parsing labels.
pub fn index_image(labels: &Array3<u8>) -> Array4<f64> {
    let (n, h, w) = labels.dim();
    let scale = (NUM_LABELS - 1) as f64;
    Array4::from_shape_fn((n, 1, h, w), |(i, _, y, x)| labels[[i, y, x]] as f64 / scale)
}

#[derive(Debug, Clone)]
enum Stem {
    Dense(Conv2d),
    Label(LabelConv),
}

#[derive(Debug, Clone)]
enum StemCache {
    Dense(ConvCache),
    Label(LabelConvCache),
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    c1: ConvCache,
    b1: BnCache,
    a1: Array4<f64>,
    c2: ConvCache,
    b2: BnCache,
    shortcut: Option<(ConvCache, BnCache)>,
    out: Array4<f64>,
}

impl BasicBlock {
    fn new<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let shortcut = (cin != cout || stride != 1)
            .then(|| (Conv2d::new(cin, cout, 1, stride, rng), BatchNorm2d::new(cout)));
        Self {
            conv1: Conv2d::new(cin, cout, 3, stride, rng),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(cout, cout, 3, 1, rng),
            bn2: BatchNorm2d::new(cout),
            shortcut,
        }
    }

    fn forward(&mut self, x: &Array4<f64>, training: bool, keep: bool) -> (Array4<f64>, Option<BlockCache>) {
        let (h, c1) = self.conv1.forward(x, keep);
        let (mut a1, b1) = self.bn1.forward(&h, training, keep);
        relu(&mut a1);
        let (h, c2) = self.conv2.forward(&a1, keep);
        let (mut out, b2) = self.bn2.forward(&h, training, keep);
        let sc = match &mut self.shortcut {
            Some((conv, bn)) => {
                let (s, cc) = conv.forward(x, keep);
                let (s, bc) = bn.forward(&s, training, keep);
                out += &s;
                cc.zip(bc)
            }
            None => {
                out += x;
                None
            }
        };
        relu(&mut out);
        let cache = keep.then(|| BlockCache {
            c1: c1.expect("kept"),
            b1: b1.expect("kept"),
            a1,
            c2: c2.expect("kept"),
            b2: b2.expect("kept"),
            shortcut: sc,
            out: out.clone(),
        });
        (out, cache)
    }

    fn backward(&mut self, cache: &BlockCache, dy: &Array4<f64>) -> Array4<f64> {
        let mut dy = dy.clone();
        relu_backward(&mut dy, &cache.out);
        let dh = self.bn2.backward(&cache.b2, &dy);
        let mut da1 = self.conv2.backward(&cache.c2, &dh, true).expect("input grad");
        relu_backward(&mut da1, &cache.a1);
        let dh = self.bn1.backward(&cache.b1, &da1);
        let mut dx = self.conv1.backward(&cache.c1, &dh, true).expect("input grad");
        match (&mut self.shortcut, &cache.shortcut) {
            (Some((conv, bn)), Some((cc, bc))) => {
                let ds = bn.backward(bc, &dy);
                dx += &conv.backward(cc, &ds, true).expect("input grad");
            }
            _ => dx += &dy,
        }
        dx
    }
}

impl Module for BasicBlock {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv1.collect_params(&join(prefix, "conv1"), out);
        self.bn1.collect_params(&join(prefix, "bn1"), out);
        self.conv2.collect_params(&join(prefix, "conv2"), out);
        self.bn2.collect_params(&join(prefix, "bn2"), out);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.collect_params(&join(prefix, "shortcut.conv"), out);
            bn.collect_params(&join(prefix, "shortcut.bn"), out);
        }
    }
}

/// A ResNet-like per-frame backbone. Only 2D convolutions are used, so frames
/// never interact except through batch-norm statistics during training.
#[derive(Debug, Clone)]
pub struct Encoder {
    stem: Stem,
    stem_bn: BatchNorm2d,
    blocks: Vec<BasicBlock>,
    pub config: EncoderConfig,
    pub input_channels: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    stem: StemCache,
    stem_bn: BnCache,
    stem_out: Array4<f64>,
    blocks: Vec<BlockCache>,
}

impl Encoder {
    /// `label_input` selects a one-hot label stem instead of a dense stem.
    pub fn new<R: Rng + ?Sized>(config: &EncoderConfig, input_channels: usize, label_input: bool, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c0 = config.stage_channels[0];
        let stem = if label_input {
            Stem::Label(LabelConv::new(input_channels, c0, 3, config.strides[0], rng))
        } else {
            Stem::Dense(Conv2d::new(input_channels, c0, 3, config.strides[0], rng))
        };
        let mut blocks = Vec::new();
        let mut cin = c0;
        for (stage, &n) in config.blocks_per_stage.iter().enumerate() {
            let cout = config.stage_channels[stage + 1];
            for b in 0..n {
                let stride = if b == 0 { config.strides[stage + 1] } else { 1 };
                blocks.push(BasicBlock::new(cin, cout, stride, rng));
                cin = cout;
            }
        }
        Ok(Self {
            stem,
            stem_bn: BatchNorm2d::new(c0),
            blocks,
            config: config.clone(),
            input_channels,
        })
    }

    pub fn accepts_labels(&self) -> bool {
        matches!(self.stem, Stem::Label(_))
    }

    pub fn forward(
        &mut self,
        input: EncoderInput<'_>,
        training: bool,
        keep: bool,
    ) -> Result<(Array4<f64>, Option<EncoderCache>)> {
        if input.frames() == 0 {
            return Err(Error::ShapeMismatch("encoder input has no frames".into()));
        }
        let (h, stem_cache) = match (&self.stem, input) {
            (Stem::Dense(conv), EncoderInput::Dense(x)) => {
                let (_, c, hh, ww) = x.dim();
                if c != self.input_channels || hh != FRAME_HEIGHT || ww != FRAME_WIDTH {
                    return Err(Error::ShapeMismatch(format!(
                        "encoder expects (N, {}, {FRAME_HEIGHT}, {FRAME_WIDTH}), got {:?}",
                        self.input_channels,
                        x.dim()
                    )));
                }
                let (h, c) = conv.forward(x, keep);
                (h, c.map(StemCache::Dense))
            }
            (Stem::Label(conv), EncoderInput::Labels(l)) => {
                let (_, hh, ww) = l.dim();
                if hh != FRAME_HEIGHT || ww != FRAME_WIDTH {
                    return Err(Error::ShapeMismatch(format!("label input {:?}", l.dim())));
                }
                if let Some(&bad) = l.iter().find(|&&v| v as usize >= self.input_channels) {
                    return Err(Error::InvalidLabel(bad));
                }
                let (h, c) = conv.forward(l, keep);
                (h, c.map(StemCache::Label))
            }
            _ => return Err(Error::ShapeMismatch("encoder input kind does not match its stem".into())),
        };
        let (mut x, stem_bn) = self.stem_bn.forward(&h, training, keep);
        relu(&mut x);
        let stem_out = keep.then(|| x.clone());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (y, c) = block.forward(&x, training, keep);
            if let Some(c) = c {
                caches.push(c);
            }
            x = y;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: 0,
                detail: "encoder produced a non-finite activation".into(),
            });
        }
        let cache = stem_cache.map(|stem| EncoderCache {
            stem,
            stem_bn: stem_bn.expect("kept"),
            stem_out: stem_out.expect("kept"),
            blocks: caches,
        });
        Ok((x, cache))
    }

    /// Accumulates parameter gradients; the raw input receives no gradient.
    pub fn backward(&mut self, cache: &EncoderCache, dy: &Array4<f64>) {
        let mut d = dy.clone();
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = block.backward(c, &d);
        }
        relu_backward(&mut d, &cache.stem_out);
        let d = self.stem_bn.backward(&cache.stem_bn, &d);
        match (&mut self.stem, &cache.stem) {
            (Stem::Dense(conv), StemCache::Dense(c)) => {
                conv.backward(c, &d, false);
            }
            (Stem::Label(conv), StemCache::Label(c)) => conv.backward(c, &d),
            _ => unreachable!("cache built by this encoder"),
        }
    }
}

impl Module for Encoder {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        match &mut self.stem {
            Stem::Dense(c) => c.collect_params(&join(prefix, "stem"), out),
            Stem::Label(c) => c.collect_params(&join(prefix, "stem"), out),
        }
        self.stem_bn.collect_params(&join(prefix, "stem_bn"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_params(&join(prefix, &format!("block{i}")), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sil_batch(n: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, 1, 64, 44), |(i, _, y, x)| (((i * 7 + y * 3 + x) % 5) == 0) as u8 as f64)
    }

    #[test]
    fn output_shapes_follow_the_schedule() {
        assert_eq!(EncoderConfig::tiny().output_hw(), (8, 6));
        assert_eq!(EncoderConfig::full().output_hw(), (16, 11));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Encoder::new(&EncoderConfig::tiny(), 1, false, &mut rng).unwrap();
        let (y, _) = enc.forward(EncoderInput::Dense(&sil_batch(2)), false, false).unwrap();
        assert_eq!(y.dim(), (2, 32, 8, 6));
    }

    #[test]
    fn zero_and_background_frames_are_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = Encoder::new(&EncoderConfig::tiny(), 1, false, &mut rng).unwrap();
        let mut p = Encoder::new(&EncoderConfig::tiny(), 12, true, &mut rng).unwrap();
        let (a, _) = s.forward(EncoderInput::Dense(&Array4::zeros((1, 1, 64, 44))), true, false).unwrap();
        let (b, _) = p.forward(EncoderInput::Labels(&Array3::zeros((1, 64, 44))), false, false).unwrap();
        assert!(a.iter().chain(b.iter()).all(|v| v.is_finite()));
        assert_eq!(a.dim(), b.dim());
    }

    #[test]
    fn eval_mode_is_frame_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc = Encoder::new(&EncoderConfig::tiny(), 1, false, &mut rng).unwrap();
        let x = sil_batch(4);
        let perm = [2, 0, 3, 1];
        let xp = x.select(Axis(0), &perm);
        let (y, _) = enc.forward(EncoderInput::Dense(&x), false, false).unwrap();
        let (yp, _) = enc.forward(EncoderInput::Dense(&xp), false, false).unwrap();
        assert_eq!(y.select(Axis(0), &perm), yp);
    }

    #[test]
    fn mismatched_input_kind_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut enc = Encoder::new(&EncoderConfig::tiny(), 1, false, &mut rng).unwrap();
        let labels = Array3::zeros((1, 64, 44));
        assert!(enc.forward(EncoderInput::Labels(&labels), false, false).is_err());
        assert!(enc.forward(EncoderInput::Dense(&Array4::zeros((1, 1, 32, 44))), false, false).is_err());
    }
}
