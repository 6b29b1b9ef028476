//! Procedural paired silhouette/parsing walker sequences.
//!
//! A 2D articulated walker is posed per frame by sinusoidal joint angles and
//! rasterised part by part as filled capsules. Every output byte is a pure
//! function of the identity and the render spec, and each sequence derives
//! its own seed from the master seed, so sequences can be produced in any
//! order without changing the result.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, DatasetIndex};
use crate::error::{Error, Result};
use crate::representations::{
    align_pair, io, label, LabelGrid, ParsingFrame, SilhouetteFrame, FRAME_HEIGHT, FRAME_WIDTH,
    NUM_LABELS,
};

const CANVAS_HEIGHT: usize = 128;
const CANVAS_WIDTH: usize = 96;
/// Horizontal squash applied per yaw bucket.
pub const VIEW_SQUASH: [f64; 5] = [1.0, 0.85, 0.7, 0.55, 0.4];

/// Garments that change the rendered outline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ClothingProfile {
    /// Wide upper garment.
    pub coat: bool,
    /// Skirt over the thighs, emitted with the dress label.
    pub dress: bool,
}

impl fmt::Display for ClothingProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.coat, self.dress) {
            (false, false) => write!(f, "tight"),
            (true, false) => write!(f, "coat"),
            (false, true) => write!(f, "dress"),
            (true, true) => write!(f, "coat+dress"),
        }
    }
}

/// Geometry and gait parameters of one synthetic subject.
///
/// Lengths are fractions of the body height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerIdentity {
    pub torso_width: f64,
    pub torso_height: f64,
    pub head_radius: f64,
    pub upper_arm: f64,
    pub lower_arm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub foot: f64,
    pub limb_width: f64,
    pub stride_amplitude: f64,
    pub arm_swing: f64,
    pub knee_flex: f64,
    /// Cycles per frame.
    pub gait_frequency: f64,
    pub phase_offset: f64,
    pub body_lean: f64,
    pub clothing: ClothingProfile,
}

impl WalkerIdentity {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("torso_width", self.torso_width),
            ("torso_height", self.torso_height),
            ("head_radius", self.head_radius),
            ("upper_arm", self.upper_arm),
            ("lower_arm", self.lower_arm),
            ("thigh", self.thigh),
            ("shin", self.shin),
            ("foot", self.foot),
            ("limb_width", self.limb_width),
        ];
        for (name, v) in fractions {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::DegenerateGeometry(format!("{name} = {v} not in (0, 1)")));
            }
        }
        if !(0.02..=0.2).contains(&self.gait_frequency) {
            return Err(Error::InvalidSpec(format!(
                "gait_frequency {} outside [0.02, 0.2]",
                self.gait_frequency
            )));
        }
        Ok(())
    }
}

/// Draws an identity from fixed uniform ranges; deterministic in `seed`.
pub fn sample_identity(seed: u64) -> WalkerIdentity {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x1d]));
    let stride_amplitude = rng.random_range(0.25..0.6);
    WalkerIdentity {
        torso_width: rng.random_range(0.085..0.15),
        torso_height: rng.random_range(0.26..0.34),
        head_radius: rng.random_range(0.05..0.075),
        upper_arm: rng.random_range(0.14..0.19),
        lower_arm: rng.random_range(0.12..0.17),
        thigh: rng.random_range(0.21..0.27),
        shin: rng.random_range(0.2..0.26),
        foot: rng.random_range(0.05..0.08),
        limb_width: rng.random_range(0.03..0.05),
        stride_amplitude,
        arm_swing: stride_amplitude * rng.random_range(0.4..1.1),
        knee_flex: rng.random_range(0.2..0.7),
        gait_frequency: rng.random_range(0.03..0.09),
        phase_offset: rng.random_range(0.0..TAU),
        body_lean: rng.random_range(-0.08..0.12),
        clothing: ClothingProfile {
            coat: rng.random_bool(0.3),
            dress: rng.random_bool(0.2),
        },
    }
}

/// Per-sequence rendering controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub n_frames: usize,
    /// Yaw bucket, an index into [`VIEW_SQUASH`].
    pub view: usize,
    /// Rows `[start, end)` of the aligned frame erased in both modalities.
    pub occlusion: Option<(usize, usize)>,
    /// Parsing-only boundary degradation in `[0, 1]`.
    pub noise: f64,
    pub rng_seed: u64,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            n_frames: 30,
            view: 0,
            occlusion: None,
            noise: 0.0,
            rng_seed: 0,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 8 {
            return Err(Error::InvalidSpec(format!(
                "n_frames = {} (need >= 8)",
                self.n_frames
            )));
        }
        if self.view >= VIEW_SQUASH.len() {
            return Err(Error::InvalidSpec(format!("view bucket {} unknown", self.view)));
        }
        if let Some((a, b)) = self.occlusion {
            if a >= b || b > FRAME_HEIGHT || 2 * (b - a) >= FRAME_HEIGHT {
                return Err(Error::InvalidSpec(format!(
                    "occlusion band {a}..{b} must be nonempty and cover < 50% of rows"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidSpec(format!("noise {} outside [0, 1]", self.noise)));
        }
        Ok(())
    }

    /// Starting gait phase of the sequence, in cycles.
    fn start_phase(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.rng_seed, &[0x9a]));
        rng.random_range(0.0..1.0)
    }
}

/// SplitMix64-style mixing of a master seed with a path of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
    label: u8,
}

/// Canvas-space capsules for the walker at gait phase `theta` (radians),
/// listed in draw order.
fn pose(id: &WalkerIdentity, theta: f64, squash: f64) -> Vec<Capsule> {
    // Body height in canvas pixels and the pivot column.
    let scale = CANVAS_HEIGHT as f64 * 0.85;
    let cx = CANVAS_WIDTH as f64 / 2.0;
    let bob = 0.01 * (2.0 * theta).cos();
    let hip_y = CANVAS_HEIGHT as f64 * 0.06
        + scale * (2.0 * id.head_radius + 0.02 + id.torso_height + bob);
    let hip = (cx, hip_y);

    // Angles are measured from the downward vertical, positive = forward (+x).
    let lean = id.body_lean;
    let shoulder = (
        hip.0 + scale * id.torso_height * lean.sin(),
        hip.1 - scale * id.torso_height * lean.cos(),
    );
    let at = |from: (f64, f64), len: f64, angle: f64| {
        (from.0 + scale * len * angle.sin(), from.1 + scale * len * angle.cos())
    };

    let swing = id.stride_amplitude * theta.sin();
    let knee_bend = |phase: f64| id.knee_flex * (0.5 + 0.5 * (phase + 1.2).sin());
    let leg = |thigh_angle: f64, phase: f64| {
        let knee = at(hip, id.thigh, thigh_angle);
        let ankle = at(knee, id.shin, thigh_angle - knee_bend(phase));
        let toe = (ankle.0 + scale * id.foot, ankle.1);
        (knee, ankle, toe)
    };
    let (lk, la, lt) = leg(swing, theta);
    let (rk, ra, rt) = leg(-swing, theta + PI);

    let arm_swing = id.arm_swing * theta.sin();
    let arm = |angle: f64| {
        let elbow = at(shoulder, id.upper_arm, angle);
        let wrist = at(elbow, id.lower_arm, angle + 0.25 + 0.3 * angle.max(0.0));
        (elbow, wrist)
    };
    let (le, lw) = arm(-arm_swing);
    let (re, rw) = arm(arm_swing);

    let limb = scale * id.limb_width / 2.0;
    let torso_r = scale * id.torso_width / 2.0 * if id.clothing.coat { 1.35 } else { 1.0 };
    let head_r = scale * id.head_radius;
    let head_c = (
        shoulder.0 + (0.02 * scale + head_r) * lean.sin(),
        shoulder.1 - (0.02 * scale + head_r) * lean.cos(),
    );
    let cap = |a, b, radius, label| Capsule { a, b, radius, label };

    let mut parts = vec![
        cap(hip, lk, limb * 1.25, label::LEFT_LEG),
        cap(lk, la, limb, label::LEFT_LEG),
        cap(hip, rk, limb * 1.25, label::RIGHT_LEG),
        cap(rk, ra, limb, label::RIGHT_LEG),
        cap(la, lt, limb * 0.7, label::LEFT_FOOT),
        cap(ra, rt, limb * 0.7, label::RIGHT_FOOT),
        cap(shoulder, hip, torso_r, label::TORSO),
    ];
    if id.clothing.dress {
        let hem = (hip.0, hip.1 + scale * id.thigh * 0.6);
        parts.push(cap(hip, hem, torso_r * 1.3, label::DRESS));
    }
    parts.extend([
        cap(shoulder, le, limb * 0.9, label::LEFT_ARM),
        cap(le, lw, limb * 0.8, label::LEFT_ARM),
        cap(shoulder, re, limb * 0.9, label::RIGHT_ARM),
        cap(re, rw, limb * 0.8, label::RIGHT_ARM),
        cap(lw, lw, limb * 1.1, label::LEFT_HAND),
        cap(rw, rw, limb * 1.1, label::RIGHT_HAND),
        cap(head_c, head_c, head_r, label::HEAD),
    ]);
    // Yaw: squash horizontal offsets around the body axis.
    for p in &mut parts {
        p.a.0 = cx + (p.a.0 - cx) * squash;
        p.b.0 = cx + (p.b.0 - cx) * squash;
    }
    parts
}

fn rasterize(parts: &[Capsule]) -> Result<Array2<u8>> {
    let mut canvas = Array2::<u8>::zeros((CANVAS_HEIGHT, CANVAS_WIDTH));
    for p in parts {
        if !(p.radius.is_finite() && p.radius >= 0.5) {
            return Err(Error::DegenerateGeometry(format!(
                "capsule for label {} has radius {:.3} px",
                p.label, p.radius
            )));
        }
        let (dx, dy) = (p.b.0 - p.a.0, p.b.1 - p.a.1);
        let len2 = dx * dx + dy * dy;
        let r0 = (p.a.1.min(p.b.1) - p.radius).floor().max(0.0) as usize;
        let r1 = ((p.a.1.max(p.b.1) + p.radius).ceil() as usize).min(CANVAS_HEIGHT - 1);
        let c0 = (p.a.0.min(p.b.0) - p.radius).floor().max(0.0) as usize;
        let c1 = ((p.a.0.max(p.b.0) + p.radius).ceil() as usize).min(CANVAS_WIDTH - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - p.a.0) * dx + (py - p.a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (p.a.0 + t * dx - px, p.a.1 + t * dy - py);
                if qx * qx + qy * qy <= p.radius * p.radius {
                    canvas[[r, c]] = p.label;
                }
            }
        }
    }
    Ok(canvas)
}

/// Erodes, dilates and relabels parsing boundaries with probability `noise`.
fn degrade_parsing(labels: &Array2<u8>, noise: f64, rng: &mut ChaCha8Rng) -> Array2<u8> {
    if noise <= 0.0 {
        return labels.clone();
    }
    let (h, w) = labels.dim();
    let mut out = labels.clone();
    for r in 0..h {
        for c in 0..w {
            let here = labels[[r, c]];
            let neighbours = [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ];
            let mut other = None;
            for (nr, nc) in neighbours {
                if nr < h && nc < w && labels[[nr, nc]] != here {
                    other = Some(labels[[nr, nc]]);
                    break;
                }
            }
            let Some(other) = other else { continue };
            // one draw per boundary pixel keeps the rng stream layout fixed
            let u: f64 = rng.random();
            let flip: u8 = rng.random_range(1..NUM_LABELS as u8);
            if u >= noise {
                continue;
            }
            out[[r, c]] = if here == 0 {
                other
            } else if other == 0 {
                if u < noise * 0.6 { 0 } else { flip }
            } else if u < noise * 0.5 {
                other
            } else {
                flip
            };
        }
    }
    out
}

/// Renders one frame at an absolute gait phase given in cycles.
pub fn render_phase(
    id: &WalkerIdentity,
    spec: &RenderSpec,
    cycles: f64,
    frame_seed: u64,
) -> Result<(SilhouetteFrame, ParsingFrame)> {
    let squash = *VIEW_SQUASH
        .get(spec.view)
        .ok_or_else(|| Error::InvalidSpec(format!("view bucket {} unknown", spec.view)))?;
    let theta = TAU * cycles.rem_euclid(1.0) + id.phase_offset;
    let canvas = rasterize(&pose(id, theta, squash))?;
    let par = ParsingFrame::new(canvas)?;
    let sil = par.support();
    let (sil, par) = align_pair(&sil, &par, (FRAME_HEIGHT, FRAME_WIDTH))?;

    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
    let mut par_grid = degrade_parsing(par.labels(), spec.noise, &mut rng);
    let mut sil_grid = sil.pixels().clone();
    if let Some((a, b)) = spec.occlusion {
        for r in a..b.min(FRAME_HEIGHT) {
            par_grid.row_mut(r).fill(0);
            sil_grid.row_mut(r).fill(0);
        }
    }
    Ok((sil.with_grid(sil_grid), par.with_grid(par_grid)))
}

/// Renders a full aligned sequence pair.
pub fn render_sequence(
    id: &WalkerIdentity,
    spec: &RenderSpec,
) -> Result<(Vec<SilhouetteFrame>, Vec<ParsingFrame>)> {
    id.validate()?;
    spec.validate()?;
    let start = spec.start_phase();
    let mut sils = Vec::with_capacity(spec.n_frames);
    let mut pars = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let cycles = start + id.gait_frequency * t as f64;
        let (s, p) = render_phase(id, spec, cycles, derive_seed(spec.rng_seed, &[0xf4, t as u64]))?;
        sils.push(s);
        pars.push(p);
    }
    Ok((sils, pars))
}

/// Capture conditions assigned to generated sequences.
pub mod condition {
    pub const NORMAL: &str = "nm";
    pub const OCCLUDED: &str = "oc";
    pub const CLOTH_UP: &str = "cl-up";
    pub const CLOTH_DOWN: &str = "cl-dn";
    pub const CLOTH_FULL: &str = "cl-full";
}

/// Generation-wide settings; per-sequence view, condition and seed are
/// derived from `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub subjects: usize,
    pub seqs_per_subject: usize,
    pub frames: usize,
    pub noise: f64,
    pub master_seed: u64,
    /// Allow non-frontal yaw buckets.
    pub vary_view: bool,
    /// Allow occluded and cloth-changed sequences (sequence 0 is always normal).
    pub vary_condition: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            subjects: 20,
            seqs_per_subject: 4,
            frames: 40,
            noise: 0.0,
            master_seed: 0,
            vary_view: true,
            vary_condition: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub identity_seed: u64,
    pub identity: WalkerIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub subject: String,
    pub seq: String,
    pub view: String,
    pub condition: String,
    pub clothing: String,
    pub seed: u64,
    pub frames: usize,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub generator: String,
    pub options: GenerateOptions,
    pub subjects: Vec<ManifestSubject>,
    pub sequences: Vec<ManifestSequence>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn sequence_plan(
    base: &WalkerIdentity,
    opts: &GenerateOptions,
    seed: u64,
    seq_index: usize,
) -> (WalkerIdentity, RenderSpec, &'static str) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xc0]));
    let view = if opts.vary_view {
        rng.random_range(0..VIEW_SQUASH.len())
    } else {
        0
    };
    let cond = if !opts.vary_condition || seq_index == 0 {
        condition::NORMAL
    } else {
        match rng.random_range(0..20) {
            0..=7 => condition::NORMAL,
            8..=11 => condition::OCCLUDED,
            12..=14 => condition::CLOTH_UP,
            15..=17 => condition::CLOTH_DOWN,
            _ => condition::CLOTH_FULL,
        }
    };
    let mut id = base.clone();
    match cond {
        condition::CLOTH_UP => id.clothing.coat = !id.clothing.coat,
        condition::CLOTH_DOWN => id.clothing.dress = !id.clothing.dress,
        condition::CLOTH_FULL => {
            id.clothing.coat = !id.clothing.coat;
            id.clothing.dress = !id.clothing.dress;
        }
        _ => {}
    }
    let occlusion = (cond == condition::OCCLUDED).then(|| {
        let height = rng.random_range(10..20);
        if rng.random_bool(0.5) {
            (0, height)
        } else {
            (FRAME_HEIGHT - height, FRAME_HEIGHT)
        }
    });
    let spec = RenderSpec {
        n_frames: opts.frames,
        view,
        occlusion,
        noise: opts.noise,
        rng_seed: seed,
    };
    (id, spec, cond)
}

/// Renders a whole dataset under `out_root` and returns its index.
pub fn generate_dataset(opts: &GenerateOptions, out_root: &Path) -> Result<DatasetIndex> {
    if opts.subjects == 0 || opts.seqs_per_subject == 0 {
        return Err(Error::InvalidSpec("need at least one subject and sequence".into()));
    }
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let mut manifest = Manifest {
        version: 1,
        generator: "synthgait".into(),
        options: opts.clone(),
        subjects: Vec::new(),
        sequences: Vec::new(),
    };
    for s in 0..opts.subjects {
        let subject = format!("{s:03}");
        let identity_seed = derive_seed(opts.master_seed, &[1, s as u64]);
        let base = sample_identity(identity_seed);
        for k in 0..opts.seqs_per_subject {
            let seq = format!("{k:02}");
            let seed = derive_seed(opts.master_seed, &[2, s as u64, k as u64]);
            let (id, spec, cond) = sequence_plan(&base, opts, seed, k);
            let (sils, pars) = render_sequence(&id, &spec)?;
            let dir = io::sequence_dir(out_root, &subject, &seq);
            for (t, (sil, par)) in sils.iter().zip(&pars).enumerate() {
                let name = io::frame_file_name(t);
                io::write_silhouette(&dir.join(io::SIL_DIR).join(&name), sil)?;
                io::write_parsing(&dir.join(io::PAR_DIR).join(&name), par)?;
            }
            manifest.sequences.push(ManifestSequence {
                subject: subject.clone(),
                seq,
                view: format!("v{}", spec.view),
                condition: cond.to_string(),
                clothing: id.clothing.to_string(),
                seed,
                frames: spec.n_frames,
            });
        }
        manifest.subjects.push(ManifestSubject {
            id: subject,
            identity_seed,
            identity: base,
        });
    }
    manifest.save(out_root)?;
    dataset::index_dataset(out_root)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iou(a: &SilhouetteFrame, b: &SilhouetteFrame) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
            inter += usize::from(x & y == 1);
            union += usize::from(x | y == 1);
        }
        inter as f64 / union.max(1) as f64
    }

    #[test]
    fn identity_sampling_is_deterministic_and_valid() {
        assert_eq!(sample_identity(17), sample_identity(17));
        let ids: Vec<_> = (0..100).map(sample_identity).collect();
        for (i, a) in ids.iter().enumerate() {
            a.validate().unwrap();
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn clean_render_has_equal_supports() {
        let id = sample_identity(3);
        let spec = RenderSpec {
            n_frames: 12,
            rng_seed: 5,
            ..RenderSpec::default()
        };
        let (sils, pars) = render_sequence(&id, &spec).unwrap();
        assert_eq!(sils.len(), 12);
        for (s, p) in sils.iter().zip(&pars) {
            assert_eq!(s.pixels().dim(), (FRAME_HEIGHT, FRAME_WIDTH));
            assert_eq!(s.pixels(), p.support().pixels());
        }
    }

    #[test]
    fn occlusion_band_is_empty_in_both_modalities() {
        let spec = RenderSpec {
            n_frames: 10,
            occlusion: Some((0, 16)),
            noise: 0.3,
            rng_seed: 9,
            ..RenderSpec::default()
        };
        let (sils, pars) = render_sequence(&sample_identity(4), &spec).unwrap();
        for (s, p) in sils.iter().zip(&pars) {
            for r in 0..16 {
                assert!(s.pixels().row(r).iter().all(|&v| v == 0));
                assert!(p.labels().row(r).iter().all(|&v| v == 0));
            }
            assert!(s.has_foreground());
        }
    }

    #[test]
    fn one_full_period_later_is_identical() {
        let mut id = sample_identity(8);
        id.gait_frequency = 0.0625; // exact period of 16 frames
        let spec = RenderSpec::default();
        for t in [0.0, 3.0, 7.5] {
            let a = render_phase(&id, &spec, id.gait_frequency * t, 1).unwrap();
            let b = render_phase(&id, &spec, id.gait_frequency * (t + 16.0), 1).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn noise_only_touches_parsing() {
        let id = sample_identity(11);
        let clean = RenderSpec {
            n_frames: 8,
            rng_seed: 2,
            ..RenderSpec::default()
        };
        let noisy = RenderSpec {
            noise: 0.5,
            ..clean.clone()
        };
        let (s0, p0) = render_sequence(&id, &clean).unwrap();
        let (s1, p1) = render_sequence(&id, &noisy).unwrap();
        assert_eq!(s0, s1);
        assert_ne!(p0, p1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let id = sample_identity(0);
        let short = RenderSpec {
            n_frames: 4,
            ..RenderSpec::default()
        };
        assert!(matches!(render_sequence(&id, &short), Err(Error::InvalidSpec(_))));
        let wide = RenderSpec {
            occlusion: Some((0, 40)),
            ..RenderSpec::default()
        };
        assert!(matches!(render_sequence(&id, &wide), Err(Error::InvalidSpec(_))));
        let mut thin = id.clone();
        thin.limb_width = 0.001;
        assert!(matches!(
            render_sequence(&thin, &RenderSpec::default()),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn same_subject_overlaps_more_than_different_subjects() {
        let spec = RenderSpec::default();
        let (mut same, mut diff) = (0.0, 0.0);
        let pairs = 60;
        for k in 0..pairs {
            let a = sample_identity(1000 + k);
            let b = sample_identity(2000 + k);
            let phase = k as f64 * 0.037;
            let (sa, _) = render_phase(&a, &spec, phase, 1).unwrap();
            let (sa2, _) = render_phase(&a, &spec, phase, 2).unwrap();
            let (sb, _) = render_phase(&b, &spec, phase, 1).unwrap();
            same += iou(&sa, &sa2);
            diff += iou(&sa, &sb);
        }
        assert!(same / pairs as f64 > diff / pairs as f64);
    }
}
