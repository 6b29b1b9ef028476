use ndarray::{Array2, Zip};

use super::frames::{LabelGrid, ParsingFrame, SilhouetteFrame};
use super::label;
use crate::error::{Error, Result};

/// Upper/middle/lower body masks derived from a parsing frame.
///
/// Dress belongs to both the middle and the lower region, so the masks
/// are not a partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMasks {
    pub upper: Array2<u8>,
    pub middle: Array2<u8>,
    pub lower: Array2<u8>,
}

impl RegionMasks {
    pub fn as_array(&self) -> [&Array2<u8>; 3] {
        [&self.upper, &self.middle, &self.lower]
    }

    pub fn downsample(&self, target: (usize, usize)) -> Result<Self> {
        Ok(Self {
            upper: downsample_mask(&self.upper, target)?,
            middle: downsample_mask(&self.middle, target)?,
            lower: downsample_mask(&self.lower, target)?,
        })
    }
}

pub fn region_masks(par: &ParsingFrame) -> RegionMasks {
    let member = |set: &'static [u8]| par.labels().mapv(|v| u8::from(set.contains(&v)));
    RegionMasks {
        upper: member(label::UPPER),
        middle: member(label::MIDDLE),
        lower: member(label::LOWER),
    }
}

/// Restricts both modalities to their common support.
pub fn intersect(
    sil: &SilhouetteFrame,
    par: &ParsingFrame,
) -> Result<(SilhouetteFrame, ParsingFrame)> {
    if sil.dims() != par.dims() {
        return Err(Error::ShapeMismatch(format!(
            "silhouette {:?} vs parsing {:?}",
            sil.dims(),
            par.dims()
        )));
    }
    let mut sil_star = Array2::zeros(sil.dims());
    let mut par_star = Array2::zeros(par.dims());
    Zip::from(&mut sil_star)
        .and(&mut par_star)
        .and(sil.pixels())
        .and(par.labels())
        .for_each(|s_out, p_out, &s, &p| {
            if s != 0 && p != 0 {
                *s_out = 1;
                *p_out = p;
            }
        });
    Ok((sil.with_grid(sil_star), par.with_grid(par_star)))
}

/// Half-open preimage of output cell `i` when `src` cells map onto `dst` cells.
fn preimage(i: usize, src: usize, dst: usize) -> std::ops::Range<usize> {
    let start = i * src / dst;
    let end = ((i + 1) * src).div_ceil(dst);
    start..end.max(start + 1)
}

/// Max-pools a binary mask down to `target`; a cell is set when any pixel of
/// its preimage is set.
pub fn downsample_mask(mask: &Array2<u8>, target: (usize, usize)) -> Result<Array2<u8>> {
    let (h, w) = mask.dim();
    let (th, tw) = target;
    if th == 0 || tw == 0 || th > h || tw > w {
        return Err(Error::InvalidTarget {
            target,
            source_dims: (h, w),
        });
    }
    let mut out = Array2::zeros(target);
    for i in 0..th {
        let rows = preimage(i, h, th);
        for j in 0..tw {
            let cols = preimage(j, w, tw);
            let hit = rows
                .clone()
                .any(|r| cols.clone().any(|c| mask[[r, c]] != 0));
            out[[i, j]] = u8::from(hit);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representations::NUM_LABELS;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_parsing(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ParsingFrame {
        let labels = Array2::from_shape_fn((h, w), |_| {
            if rng.random_bool(0.4) {
                0
            } else {
                rng.random_range(1..NUM_LABELS as u8)
            }
        });
        ParsingFrame::new(labels).unwrap()
    }

    fn random_silhouette(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SilhouetteFrame {
        SilhouetteFrame::from_mask(Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(0.6))))
    }

    #[test]
    fn all_ones_silhouette_keeps_parsing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let par = random_parsing(&mut rng, 64, 44);
        let sil = SilhouetteFrame::from_mask(Array2::ones((64, 44)));
        let (s, p) = intersect(&sil, &par).unwrap();
        assert_eq!(p, par);
        assert_eq!(s.pixels(), par.support().pixels());
    }

    #[test]
    fn empty_parsing_empties_both() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sil = random_silhouette(&mut rng, 64, 44);
        let (s, p) = intersect(&sil, &ParsingFrame::zeros(64, 44)).unwrap();
        assert!(!s.has_foreground());
        assert!(!p.has_foreground());
    }

    #[test]
    fn intersect_is_idempotent_on_random_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let sil = random_silhouette(&mut rng, 64, 44);
            let par = random_parsing(&mut rng, 64, 44);
            let once = intersect(&sil, &par).unwrap();
            let twice = intersect(&once.0, &once.1).unwrap();
            assert_eq!(once, twice);
            // both supports equal the support intersection
            let expected = Zip::from(sil.pixels())
                .and(par.labels())
                .map_collect(|&s, &p| u8::from(s != 0 && p != 0));
            assert_eq!(once.0.pixels(), &expected);
            assert_eq!(once.1.support().pixels(), &expected);
        }
    }

    #[test]
    fn intersect_rejects_shape_mismatch() {
        let err = intersect(&SilhouetteFrame::zeros(64, 44), &ParsingFrame::zeros(32, 22));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn head_only_frame() {
        let mut m = Array2::zeros((8, 8));
        m[[1, 1]] = label::HEAD;
        m[[1, 2]] = label::HEAD;
        let masks = region_masks(&ParsingFrame::new(m.clone()).unwrap());
        assert_eq!(masks.upper, m.mapv(|v| u8::from(v != 0)));
        assert!(masks.middle.iter().all(|&v| v == 0));
        assert!(masks.lower.iter().all(|&v| v == 0));
    }

    #[test]
    fn dress_is_middle_and_lower() {
        let mut m = Array2::zeros((8, 8));
        m[[4, 3]] = label::DRESS;
        m[[5, 3]] = label::DRESS;
        let support = m.mapv(|v| u8::from(v != 0));
        let masks = region_masks(&ParsingFrame::new(m).unwrap());
        assert!(masks.upper.iter().all(|&v| v == 0));
        assert_eq!(masks.middle, support);
        assert_eq!(masks.lower, support);
    }

    #[test]
    fn region_union_matches_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let par = random_parsing(&mut rng, 64, 44);
            let masks = region_masks(&par);
            for ((r, c), &l) in par.labels().indexed_iter() {
                let (u, m, lo) = (masks.upper[[r, c]], masks.middle[[r, c]], masks.lower[[r, c]]);
                assert_eq!(u | m | lo, u8::from(l > 0));
                assert_eq!(u & m, 0);
                if m & lo == 1 {
                    assert_eq!(l, label::DRESS);
                }
            }
        }
    }

    #[test]
    fn downsample_all_ones_and_corner() {
        let ones = Array2::ones((64, 44));
        assert!(downsample_mask(&ones, (16, 11)).unwrap().iter().all(|&v| v == 1));
        let mut corner = Array2::zeros((64, 44));
        corner[[0, 0]] = 1;
        let out = downsample_mask(&corner, (32, 22)).unwrap();
        assert_eq!(out[[0, 0]], 1);
        assert_eq!(out.iter().filter(|&&v| v == 1).count(), 1);
    }

    #[test]
    fn downsample_rejects_upsampling() {
        let m = Array2::<u8>::zeros((8, 6));
        assert!(matches!(
            downsample_mask(&m, (16, 6)),
            Err(Error::InvalidTarget { .. })
        ));
    }

    #[test]
    fn downsample_cells_have_a_source_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Array2::from_shape_fn((64, 44), |_| u8::from(rng.random_bool(0.02)));
        let out = downsample_mask(&m, (16, 11)).unwrap();
        // 64/16 and 44/11 divide evenly, so each cell covers a 4x4 block.
        for ((i, j), &v) in out.indexed_iter() {
            let any = (0..4).any(|dr| (0..4).any(|dc| m[[i * 4 + dr, j * 4 + dc]] == 1));
            assert_eq!(v == 1, any);
        }
    }

    proptest! {
        #[test]
        fn downsample_zero_iff_zero(
            bits in proptest::collection::vec(0u8..2, 64 * 44),
            keep in 0usize..3,
            th in 1usize..=64,
            tw in 1usize..=44,
        ) {
            // sparsify so that all-zero masks are common
            let m = Array2::from_shape_vec((64, 44), bits).unwrap()
                .mapv(|b| if keep == 0 { 0 } else { b });
            let out = downsample_mask(&m, (th, tw)).unwrap();
            prop_assert_eq!(out.iter().all(|&v| v == 0), m.iter().all(|&v| v == 0));
            prop_assert_eq!(out.iter().filter(|&&v| v == 1).count() > 0, m.iter().any(|&v| v == 1));
        }
    }
}
