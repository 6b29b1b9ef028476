//! Channel-energy heatmaps of intermediate feature maps.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, ArrayView3};

use crate::error::{Error, Result};
use crate::model::{ModelInput, XGait};
use crate::representations::{io, FRAME_HEIGHT, FRAME_WIDTH};

/// L2 norm over channels at every spatial position of one frame `(c, h, w)`.
pub fn channel_energy(frame: ArrayView3<'_, f64>) -> Array2<f64> {
    let (_, h, w) = frame.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        frame.slice(ndarray::s![.., y, x]).iter().map(|v| v * v).sum::<f64>().sqrt()
    })
}

/// Min-max scales to 0..=255; a constant map becomes all zeros.
pub fn normalize_u8(map: &Array2<f64>) -> Array2<u8> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    map.mapv(|v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    })
}

/// Nearest-neighbour resize.
pub fn upscale(map: &Array2<u8>, height: usize, width: usize) -> Array2<u8> {
    let (h, w) = map.dim();
    Array2::from_shape_fn((height, width), |(y, x)| map[[y * h / height, x * w / width]])
}

/// Writes `frame{t:03}_{name}.png` for every available map of the selected
/// frames and returns the written paths.
pub fn write_heatmaps(
    model: &mut XGait,
    silhouettes: &Array4<f64>,
    parsings: &ndarray::Array3<u8>,
    frames: &[usize],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let t = silhouettes.dim().0;
    if let Some(&bad) = frames.iter().find(|&&f| f >= t) {
        return Err(Error::ShapeMismatch(format!("frame {bad} of a {t}-frame sequence")));
    }
    let lengths = [t];
    let input = ModelInput {
        silhouettes,
        parsings,
        lengths: &lengths,
    };
    let (out, _) = model.forward(input, false, false, true)?;
    let maps = out.maps.expect("maps requested");
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for &f in frames {
        for (name, map) in [("fs", &maps.fs), ("fp", &maps.fp), ("fga", &maps.fga), ("fpa", &maps.fpa)] {
            let Some(map) = map else { continue };
            let energy = channel_energy(map.index_axis(ndarray::Axis(0), f));
            let img = upscale(&normalize_u8(&energy), FRAME_HEIGHT, FRAME_WIDTH);
            let path = out_dir.join(format!("frame{f:03}_{name}.png"));
            io::write_gray_png(&path, &img)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};

    #[test]
    fn energy_is_channel_l2() {
        let mut f = Array3::zeros((2, 1, 2));
        f[[0, 0, 0]] = 3.0;
        f[[1, 0, 0]] = 4.0;
        f[[1, 0, 1]] = -2.0;
        assert_eq!(channel_energy(f.view()), arr2(&[[5.0, 2.0]]));
    }

    #[test]
    fn normalization_spans_full_range() {
        let m = arr2(&[[1.0, 2.0], [3.0, 5.0]]);
        assert_eq!(normalize_u8(&m), arr2(&[[0, 64], [128, 255]]));
        assert_eq!(normalize_u8(&arr2(&[[2.0, 2.0]])), arr2(&[[0, 0]]));
    }

    #[test]
    fn upscale_repeats_cells() {
        let m = arr2(&[[1u8, 2], [3, 4]]);
        assert_eq!(upscale(&m, 4, 2), arr2(&[[1, 2], [1, 2], [3, 4], [3, 4]]));
    }
}
