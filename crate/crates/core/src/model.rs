//! The full two-branch network: encoders, fusion modules, four heads and a
//! per-strip classifier.

use ndarray::{linalg::general_mat_mul, s, Array3, Array4, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{index_image, Encoder, EncoderCache, EncoderConfig, EncoderInput, ParsingInput};
use crate::error::{Error, Result};
use crate::fusion::{feature_masks, CaGate, DivisionMode, GateScope, Gcm, GcmCache, Pcm, PcmCache};
use crate::head::{assemble_output, Fmh, FmhCache};
use crate::nn::{join, Module, Param};

/// Which representations and fusion paths a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Both branches with global and part fusion.
    #[default]
    Xgait,
    SilOnly,
    ParOnly,
    /// Both branches, heads concatenated without any fusion module.
    FeatureFusion,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Xgait => "xgait",
            FusionMode::SilOnly => "sil-only",
            FusionMode::ParOnly => "par-only",
            FusionMode::FeatureFusion => "feature-fusion",
        }
    }
}

/// One of the four embedding heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Silhouette,
    Parsing,
    Global,
    Part,
}

impl HeadKind {
    pub fn tag(self) -> &'static str {
        match self {
            HeadKind::Silhouette => "s",
            HeadKind::Parsing => "p",
            HeadKind::Global => "ga",
            HeadKind::Part => "pa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub hpm_scales: Vec<usize>,
    pub embed_dim: usize,
    pub reduction_ratio: usize,
    pub division: DivisionMode,
    pub gamma_init: f64,
    pub gate_scope: GateScope,
    pub parsing_input: ParsingInput,
    pub fusion_mode: FusionMode,
    pub disable_gcm: bool,
    pub disable_pcm: bool,
    /// One backbone for both inputs; parsing is then fed as an index image.
    pub share_backbone: bool,
    /// One head for all four embeddings.
    pub share_fmh: bool,
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig::tiny(),
            hpm_scales: vec![1, 2, 4],
            embed_dim: 64,
            reduction_ratio: 16,
            division: DivisionMode::Learnable,
            gamma_init: 1.0,
            gate_scope: GateScope::Frame,
            parsing_input: ParsingInput::OneHot,
            fusion_mode: FusionMode::Xgait,
            disable_gcm: false,
            disable_pcm: false,
            share_backbone: false,
            share_fmh: false,
        }
    }

    pub fn full() -> Self {
        Self {
            encoder: EncoderConfig::full(),
            hpm_scales: vec![1, 2, 4, 8, 16],
            embed_dim: 256,
            ..Self::tiny()
        }
    }

    pub fn uses_silhouette(&self) -> bool {
        self.fusion_mode != FusionMode::ParOnly
    }

    pub fn uses_parsing(&self) -> bool {
        self.fusion_mode != FusionMode::SilOnly
    }

    pub fn uses_gcm(&self) -> bool {
        self.fusion_mode == FusionMode::Xgait && !self.disable_gcm
    }

    pub fn uses_pcm(&self) -> bool {
        self.fusion_mode == FusionMode::Xgait && !self.disable_pcm
    }

    /// Parsing input actually fed to the backbone.
    pub fn effective_parsing_input(&self) -> ParsingInput {
        if self.share_backbone {
            ParsingInput::Index
        } else {
            self.parsing_input
        }
    }

    /// Active heads in output order.
    pub fn heads(&self) -> Vec<HeadKind> {
        let mut heads = Vec::new();
        if self.uses_silhouette() {
            heads.push(HeadKind::Silhouette);
        }
        if self.uses_parsing() {
            heads.push(HeadKind::Parsing);
        }
        if self.uses_gcm() {
            heads.push(HeadKind::Global);
        }
        if self.uses_pcm() {
            heads.push(HeadKind::Part);
        }
        heads
    }

    pub fn strips_per_head(&self) -> usize {
        self.hpm_scales.iter().sum()
    }

    pub fn total_strips(&self) -> usize {
        self.heads().len() * self.strips_per_head()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.embed_dim == 0 || self.reduction_ratio == 0 {
            return Err(Error::Config("embed_dim and reduction_ratio must be positive".into()));
        }
        if !self.gamma_init.is_finite() {
            return Err(Error::Config("gamma_init must be finite".into()));
        }
        let (h, _) = self.encoder.output_hw();
        if let Some(&scale) = self.hpm_scales.iter().find(|&&s| s == 0 || h % s != 0) {
            return Err(Error::ScaleError { scale, height: h });
        }
        if self.uses_pcm() && h < 4 {
            return Err(Error::HeightTooSmall(h));
        }
        Ok(())
    }
}

/// Frames of a batch of sequences, grouped by `lengths`.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    /// `(N, 1, 64, 44)`.
    pub silhouettes: &'a Array4<f64>,
    /// `(N, 64, 44)`.
    pub parsings: &'a Array3<u8>,
    pub lengths: &'a [usize],
}

/// Intermediate maps kept for visualization.
#[derive(Debug, Clone, Default)]
pub struct FeatureMaps {
    pub fs: Option<Array4<f64>>,
    pub fp: Option<Array4<f64>>,
    pub fga: Option<Array4<f64>>,
    pub fpa: Option<Array4<f64>>,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `(B, total_strips, d)`.
    pub embedding: Array3<f64>,
    /// `(B, total_strips, classes)`; empty when the model has no classifier.
    pub logits: Array3<f64>,
    pub maps: Option<FeatureMaps>,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    sil: Option<EncoderCache>,
    par: Option<EncoderCache>,
    gcm: Option<GcmCache>,
    pcm: Option<PcmCache>,
    heads: Vec<FmhCache>,
    embedding: Array3<f64>,
    feature_dims: (usize, usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct XGait {
    pub config: ModelConfig,
    pub num_classes: usize,
    sil_encoder: Option<Encoder>,
    par_encoder: Option<Encoder>,
    pub gcm: Option<Gcm>,
    pub pcm: Option<Pcm>,
    pub fmhs: Vec<Fmh>,
    heads: Vec<HeadKind>,
    /// `(total_strips, d, classes)`, one bias-free map per strip.
    pub classifier: Param,
}

impl XGait {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, num_classes: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder;
        let parsing_input = config.effective_parsing_input();
        let sil_encoder = if config.uses_silhouette() || config.share_backbone {
            Some(Encoder::new(enc, 1, false, rng)?)
        } else {
            None
        };
        let par_encoder = if config.uses_parsing() && !config.share_backbone {
            Some(Encoder::new(
                enc,
                parsing_input.channels(),
                parsing_input == ParsingInput::OneHot,
                rng,
            )?)
        } else {
            None
        };
        let c = enc.out_channels();
        let gcm = if config.uses_gcm() {
            Some(Gcm {
                ca: CaGate::new(c, config.reduction_ratio, rng)?,
                scope: config.gate_scope,
            })
        } else {
            None
        };
        let pcm = if config.uses_pcm() {
            Some(Pcm::new(
                c,
                config.reduction_ratio,
                config.division,
                config.gamma_init,
                config.gate_scope,
                rng,
            )?)
        } else {
            None
        };
        let heads = config.heads();
        let n_fmh = if config.share_fmh { 1 } else { heads.len() };
        let fmhs = (0..n_fmh)
            .map(|_| Fmh::new(&config.hpm_scales, c, config.embed_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let strips = config.total_strips();
        let d = config.embed_dim;
        let classifier = if num_classes > 0 {
            let bound = (6.0 / (d + num_classes) as f64).sqrt();
            Param::uniform(&[strips, d, num_classes], bound, rng)
        } else {
            Param::new(&[strips, d, 0], Vec::new())
        };
        Ok(Self {
            config: config.clone(),
            num_classes,
            sil_encoder,
            par_encoder,
            gcm,
            pcm,
            fmhs,
            heads,
            classifier,
        })
    }

    pub fn heads(&self) -> &[HeadKind] {
        &self.heads
    }

    fn fmh_index(&self, head: usize) -> usize {
        if self.config.share_fmh {
            0
        } else {
            head
        }
    }

    /// Row range of `kind` in the final embedding.
    pub fn head_rows(&self, kind: HeadKind) -> Option<std::ops::Range<usize>> {
        let s = self.config.strips_per_head();
        self.heads.iter().position(|&h| h == kind).map(|i| i * s..(i + 1) * s)
    }

    pub fn forward(
        &mut self,
        input: ModelInput<'_>,
        training: bool,
        keep: bool,
        want_maps: bool,
    ) -> Result<(ModelOutput, Option<ModelCache>)> {
        let n = input.silhouettes.dim().0;
        if input.parsings.dim().0 != n || input.lengths.iter().sum::<usize>() != n || input.lengths.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "{} silhouettes, {} parsings, lengths {:?}",
                n,
                input.parsings.dim().0,
                input.lengths
            )));
        }
        let cfg = &self.config;
        let mut fs = None;
        let mut sil_cache = None;
        if cfg.uses_silhouette() {
            let enc = self.sil_encoder.as_mut().expect("built with silhouette branch");
            let (f, c) = enc.forward(EncoderInput::Dense(input.silhouettes), training, keep)?;
            fs = Some(f);
            sil_cache = c;
        }
        let mut fp = None;
        let mut par_cache = None;
        if cfg.uses_parsing() {
            let parsing_input = cfg.effective_parsing_input();
            let enc = if cfg.share_backbone {
                self.sil_encoder.as_mut()
            } else {
                self.par_encoder.as_mut()
            }
            .expect("built with parsing branch");
            let (f, c) = match parsing_input {
                ParsingInput::OneHot => enc.forward(EncoderInput::Labels(input.parsings), training, keep)?,
                ParsingInput::Index => {
                    let img = index_image(input.parsings);
                    enc.forward(EncoderInput::Dense(&img), training, keep)?
                }
            };
            fp = Some(f);
            par_cache = c;
        }
        let feature_dims = fs.as_ref().or(fp.as_ref()).expect("at least one branch").dim();

        let mut fga = None;
        let mut gcm_cache = None;
        if let Some(gcm) = &self.gcm {
            let (f, c) = gcm.forward(fs.as_ref().expect("xgait"), fp.as_ref().expect("xgait"), input.lengths, keep)?;
            fga = Some(f);
            gcm_cache = c;
        }
        let mut fpa = None;
        let mut pcm_cache = None;
        if let Some(pcm) = &self.pcm {
            let (_, _, h, w) = feature_dims;
            let masks = feature_masks(input.parsings, (h, w))?;
            let (f, c) = pcm.forward(
                fs.as_ref().expect("xgait"),
                fp.as_ref().expect("xgait"),
                &masks,
                input.lengths,
                keep,
            )?;
            fpa = Some(f);
            pcm_cache = c;
        }

        let mut embeddings = Vec::with_capacity(self.heads.len());
        let mut head_caches = Vec::new();
        for (i, kind) in self.heads.iter().enumerate() {
            let map = match kind {
                HeadKind::Silhouette => fs.as_ref(),
                HeadKind::Parsing => fp.as_ref(),
                HeadKind::Global => fga.as_ref(),
                HeadKind::Part => fpa.as_ref(),
            }
            .expect("head map computed");
            let (e, c) = self.fmhs[self.fmh_index(i)].forward(map, input.lengths, keep)?;
            embeddings.push(e);
            head_caches.extend(c);
        }
        let refs: Vec<&Array3<f64>> = embeddings.iter().collect();
        let embedding = assemble_output(&refs)?;
        let logits = self.classify(&embedding);
        let maps = want_maps.then(|| FeatureMaps {
            fs: fs.clone(),
            fp: fp.clone(),
            fga: fga.clone(),
            fpa: fpa.clone(),
        });
        let cache = keep.then(|| ModelCache {
            sil: sil_cache,
            par: par_cache,
            gcm: gcm_cache,
            pcm: pcm_cache,
            heads: head_caches,
            embedding: embedding.clone(),
            feature_dims,
        });
        Ok((
            ModelOutput {
                embedding,
                logits,
                maps,
            },
            cache,
        ))
    }

    fn classifier_strip(&self, s: usize) -> ArrayView2<'_, f64> {
        let (d, c) = (self.config.embed_dim, self.num_classes);
        ArrayView2::from_shape((d, c), &self.classifier.value[s * d * c..(s + 1) * d * c]).expect("classifier shape")
    }

    fn classify(&self, embedding: &Array3<f64>) -> Array3<f64> {
        let (b, strips, _) = embedding.dim();
        let mut logits = Array3::zeros((b, strips, self.num_classes));
        if self.num_classes == 0 {
            return logits;
        }
        for s in 0..strips {
            let mut y = logits.slice_mut(s![.., s, ..]);
            general_mat_mul(1.0, &embedding.slice(s![.., s, ..]), &self.classifier_strip(s), 0.0, &mut y);
        }
        logits
    }

    /// Accumulates gradients of a loss given its derivatives wrt the
    /// embedding and the logits.
    pub fn backward(&mut self, cache: &ModelCache, d_embedding: &Array3<f64>, d_logits: &Array3<f64>) {
        let mut de = d_embedding.clone();
        if self.num_classes > 0 {
            let (d, c) = (self.config.embed_dim, self.num_classes);
            for s in 0..de.dim().1 {
                let dl = d_logits.slice(s![.., s, ..]);
                {
                    let mut gw = ArrayViewMut2::from_shape(
                        (d, c),
                        &mut self.classifier.grad[s * d * c..(s + 1) * d * c],
                    )
                    .expect("classifier grad");
                    general_mat_mul(1.0, &cache.embedding.slice(s![.., s, ..]).t(), &dl, 1.0, &mut gw);
                }
                let w = ArrayView2::from_shape((d, c), &self.classifier.value[s * d * c..(s + 1) * d * c])
                    .expect("classifier shape");
                let mut dst = de.slice_mut(s![.., s, ..]);
                general_mat_mul(1.0, &dl, &w.t(), 1.0, &mut dst);
            }
        }

        let strips = self.config.strips_per_head();
        let zeros = || Array4::<f64>::zeros(cache.feature_dims);
        let mut dfs = self.config.uses_silhouette().then(zeros);
        let mut dfp = self.config.uses_parsing().then(zeros);
        let mut dfga = None;
        let mut dfpa = None;
        let heads = self.heads.clone();
        for (i, kind) in heads.iter().enumerate() {
            let block = de.slice(s![.., i * strips..(i + 1) * strips, ..]).to_owned();
            let fmh = self.fmh_index(i);
            let df = self.fmhs[fmh].backward(&cache.heads[i], &block);
            match kind {
                HeadKind::Silhouette => *dfs.as_mut().expect("branch") += &df,
                HeadKind::Parsing => *dfp.as_mut().expect("branch") += &df,
                HeadKind::Global => dfga = Some(df),
                HeadKind::Part => dfpa = Some(df),
            }
        }
        if let (Some(gcm), Some(gc), Some(d)) = (&mut self.gcm, &cache.gcm, &dfga) {
            let (a, b) = gcm.backward(gc, d);
            *dfs.as_mut().expect("branch") += &a;
            *dfp.as_mut().expect("branch") += &b;
        }
        if let (Some(pcm), Some(pc), Some(d)) = (&mut self.pcm, &cache.pcm, &dfpa) {
            let (a, b) = pcm.backward(pc, d);
            *dfs.as_mut().expect("branch") += &a;
            *dfp.as_mut().expect("branch") += &b;
        }
        if let (Some(d), Some(c)) = (&dfs, &cache.sil) {
            self.sil_encoder.as_mut().expect("branch").backward(c, d);
        }
        if let (Some(d), Some(c)) = (&dfp, &cache.par) {
            let enc = if self.config.share_backbone {
                self.sil_encoder.as_mut()
            } else {
                self.par_encoder.as_mut()
            };
            enc.expect("branch").backward(c, d);
        }
    }

    /// Inference embedding of one sequence, `(total_strips, d)`.
    pub fn embed_sequence(&mut self, silhouettes: &Array4<f64>, parsings: &Array3<u8>) -> Result<ndarray::Array2<f64>> {
        let lengths = [silhouettes.dim().0];
        let input = ModelInput {
            silhouettes,
            parsings,
            lengths: &lengths,
        };
        let (out, _) = self.forward(input, false, false, false)?;
        Ok(out.embedding.index_axis_move(Axis(0), 0))
    }

    pub fn num_parameters(&mut self) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.len())
            .sum()
    }
}

impl Module for XGait {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        if let Some(e) = &mut self.sil_encoder {
            e.collect_params(&join(prefix, "sil_encoder"), out);
        }
        if let Some(e) = &mut self.par_encoder {
            e.collect_params(&join(prefix, "par_encoder"), out);
        }
        if let Some(g) = &mut self.gcm {
            g.collect_params(&join(prefix, "gcm"), out);
        }
        if let Some(p) = &mut self.pcm {
            p.collect_params(&join(prefix, "pcm"), out);
        }
        let shared = self.config.share_fmh;
        for (i, f) in self.fmhs.iter_mut().enumerate() {
            let name = if shared {
                "fmh_shared".to_string()
            } else {
                format!("fmh_{}", self.heads[i].tag())
            };
            f.collect_params(&join(prefix, &name), out);
        }
        out.push((join(prefix, "classifier"), &mut self.classifier));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inputs(n: usize, seed: u64) -> (Array4<f64>, Array3<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let par = Array3::from_shape_fn((n, 64, 44), |(_, y, x)| {
            if (8..56).contains(&y) && (12..32).contains(&x) {
                rng.random_range(1..12u8)
            } else {
                0
            }
        });
        let sil = Array4::from_shape_fn((n, 1, 64, 44), |(i, _, y, x)| f64::from(par[[i, y, x]] > 0));
        (sil, par)
    }

    #[test]
    fn head_layout_per_mode() {
        let mut cfg = ModelConfig::tiny();
        assert_eq!(cfg.heads().len(), 4);
        cfg.fusion_mode = FusionMode::FeatureFusion;
        assert_eq!(cfg.heads(), vec![HeadKind::Silhouette, HeadKind::Parsing]);
        cfg.fusion_mode = FusionMode::ParOnly;
        assert_eq!(cfg.heads(), vec![HeadKind::Parsing]);
        cfg.fusion_mode = FusionMode::Xgait;
        cfg.disable_pcm = true;
        assert_eq!(cfg.total_strips(), 21);
    }

    #[test]
    fn embedding_shape_and_head_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = XGait::new(&ModelConfig::tiny(), 5, &mut rng).unwrap();
        let (sil, par) = inputs(6, 1);
        let input = ModelInput {
            silhouettes: &sil,
            parsings: &par,
            lengths: &[3, 3],
        };
        let (a, _) = model.forward(input, false, false, false).unwrap();
        assert_eq!(a.embedding.dim(), (2, 28, 64));
        assert_eq!(a.logits.dim(), (2, 28, 5));
        model.fmhs[1].hpm.weight.value.iter_mut().for_each(|v| *v += 0.5);
        let (b, _) = model.forward(input, false, false, false).unwrap();
        let rows = model.head_rows(HeadKind::Parsing).unwrap();
        for r in 0..28 {
            let same = a.embedding.slice(s![.., r, ..]) == b.embedding.slice(s![.., r, ..]);
            assert_eq!(same, !rows.contains(&r), "row {r}");
        }
    }

    #[test]
    fn shared_backbone_serves_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ModelConfig {
            share_backbone: true,
            share_fmh: true,
            ..ModelConfig::tiny()
        };
        let mut model = XGait::new(&cfg, 3, &mut rng).unwrap();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        assert!(!names.iter().any(|n| n.starts_with("par_encoder")));
        assert_eq!(names.iter().filter(|n| n.starts_with("fmh")).count(), 1);
        let (sil, par) = inputs(2, 3);
        let (out, _) = model
            .forward(
                ModelInput {
                    silhouettes: &sil,
                    parsings: &par,
                    lengths: &[2],
                },
                true,
                false,
                false,
            )
            .unwrap();
        assert!(out.embedding.iter().all(|v| v.is_finite()));
    }
}
