use ndarray::Array2;

use super::frames::LabelGrid;
use crate::error::{Error, Result};

/// Crop-scale-center mapping from a source grid onto a fixed output grid.
///
/// The foreground is cropped to its bounding rows, scaled isotropically so
/// those rows fill the output height, and centered horizontally on the mean
/// foreground column of the top half of the body. Sampling is
/// nearest-neighbor, so label values are carried over unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignTransform {
    source: (usize, usize),
    target: (usize, usize),
    top_row: usize,
    crop_rows: usize,
    scaled_width: usize,
    left_col: isize,
}

impl AlignTransform {
    /// Derives the transform from the foreground of `grid`.
    pub fn fit(grid: &Array2<u8>, target: (usize, usize)) -> Result<Self> {
        let (height, width) = grid.dim();
        let fg_rows: Vec<usize> = (0..height)
            .filter(|&r| grid.row(r).iter().any(|&v| v != 0))
            .collect();
        let (Some(&top_row), Some(&bottom_row)) = (fg_rows.first(), fg_rows.last()) else {
            return Err(Error::EmptyForeground);
        };
        let crop_rows = bottom_row - top_row + 1;
        let scale = target.0 as f64 / crop_rows as f64;
        let scaled_width = ((width as f64 * scale).round() as usize).max(1);

        // Top half of the body stabilises the center against leg spread.
        let half_end = top_row + crop_rows.div_ceil(2);
        let (mut sum, mut count) = (0.0f64, 0usize);
        for r in top_row..half_end {
            for (c, &v) in grid.row(r).iter().enumerate() {
                if v != 0 {
                    sum += c as f64;
                    count += 1;
                }
            }
        }
        let mean_col = sum / count as f64;
        let center = (mean_col + 0.5) * scaled_width as f64 / width as f64 - 0.5;
        let left_col = (center - (target.1 / 2) as f64 + 0.5).floor() as isize;

        Ok(Self {
            source: (height, width),
            target,
            top_row,
            crop_rows,
            scaled_width,
            left_col,
        })
    }

    pub fn apply(&self, grid: &Array2<u8>) -> Result<Array2<u8>> {
        if grid.dim() != self.source {
            return Err(Error::ShapeMismatch(format!(
                "transform fitted on {:?}, applied to {:?}",
                self.source,
                grid.dim()
            )));
        }
        let (out_h, out_w) = self.target;
        let (_, src_w) = self.source;
        let mut out = Array2::zeros(self.target);
        for i in 0..out_h {
            let src_r = self.top_row + ((i as f64 + 0.5) * self.crop_rows as f64 / out_h as f64) as usize;
            let src_r = src_r.min(self.top_row + self.crop_rows - 1);
            for j in 0..out_w {
                let scaled_c = j as isize + self.left_col;
                if scaled_c < 0 || scaled_c as usize >= self.scaled_width {
                    continue;
                }
                let src_c = ((scaled_c as f64 + 0.5) * src_w as f64 / self.scaled_width as f64) as usize;
                out[[i, j]] = grid[[src_r, src_c.min(src_w - 1)]];
            }
        }
        Ok(out)
    }
}

/// Aligns one frame onto a `target` grid using its own foreground.
pub fn align_and_resize<F: LabelGrid>(frame: &F, target: (usize, usize)) -> Result<F> {
    let transform = AlignTransform::fit(frame.grid(), target)?;
    Ok(frame.with_grid(transform.apply(frame.grid())?))
}

/// Aligns a registered pair with the transform fitted on the first member,
/// so both outputs stay pixel-registered.
pub fn align_pair<A: LabelGrid, B: LabelGrid>(
    reference: &A,
    other: &B,
    target: (usize, usize),
) -> Result<(A, B)> {
    if reference.dims() != other.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            reference.dims(),
            other.dims()
        )));
    }
    let transform = AlignTransform::fit(reference.grid(), target)?;
    Ok((
        reference.with_grid(transform.apply(reference.grid())?),
        other.with_grid(transform.apply(other.grid())?),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representations::{ParsingFrame, SilhouetteFrame, FRAME_HEIGHT, FRAME_WIDTH};

    const TARGET: (usize, usize) = (FRAME_HEIGHT, FRAME_WIDTH);

    fn bbox(grid: &Array2<u8>) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for ((r, c), &v) in grid.indexed_iter() {
            if v != 0 {
                b = Some(match b {
                    None => (r, r, c, c),
                    Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                });
            }
        }
        b
    }

    #[test]
    fn already_aligned_frame_is_unchanged() {
        let mut m = Array2::zeros(TARGET);
        for r in 0..64 {
            for c in 18..=26 {
                m[[r, c]] = 1;
            }
        }
        let frame = SilhouetteFrame::from_mask(m.clone());
        let out = align_and_resize(&frame, TARGET).unwrap();
        assert_eq!(out.pixels(), &m);
    }

    #[test]
    fn large_frame_fills_full_height() {
        let mut m = Array2::zeros((128, 88));
        for r in 10..=117 {
            for c in 30..=55 {
                m[[r, c]] = 1;
            }
        }
        let out = align_and_resize(&SilhouetteFrame::from_mask(m), TARGET).unwrap();
        assert_eq!(out.pixels().dim(), TARGET);
        let (r0, r1, _, _) = bbox(out.pixels()).unwrap();
        assert_eq!((r0, r1), (0, 63));
    }

    #[test]
    fn nearest_neighbor_keeps_label_set() {
        let mut m = Array2::zeros((100, 70));
        for r in 5..60 {
            for c in 20..40 {
                m[[r, c]] = 2;
            }
        }
        for r in 60..95 {
            for c in 22..38 {
                m[[r, c]] = 8;
            }
        }
        let out = align_and_resize(&ParsingFrame::new(m).unwrap(), TARGET).unwrap();
        assert!(out.labels().iter().all(|v| [0u8, 2, 8].contains(v)));
        assert!(out.labels().iter().any(|&v| v == 2));
        assert!(out.labels().iter().any(|&v| v == 8));
    }

    #[test]
    fn empty_frame_is_rejected() {
        let frame = SilhouetteFrame::zeros(64, 44);
        assert!(matches!(
            align_and_resize(&frame, TARGET),
            Err(Error::EmptyForeground)
        ));
    }

    #[test]
    fn pair_alignment_keeps_registration() {
        let mut par = Array2::zeros((90, 60));
        for r in 3..80 {
            for c in 10..25 {
                par[[r, c]] = if r < 20 { 1 } else { 9 };
            }
        }
        let par = ParsingFrame::new(par).unwrap();
        let sil = par.support();
        let (s, p) = align_pair(&sil, &par, TARGET).unwrap();
        assert_eq!(s.pixels(), p.support().pixels());
    }
}
