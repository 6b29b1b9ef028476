//! PNG frame files and the on-disk sequence layout
//! `<root>/<subject>/<seq>/<sil|par>/frame_%04d.png`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::frames::{ParsingFrame, SilhouetteFrame, NUM_LABELS};
use crate::error::{Error, Result};

pub const SIL_DIR: &str = "sil";
pub const PAR_DIR: &str = "par";

/// Display colours for the parsing palette; the palette index is the label.
const PALETTE: [[u8; 3]; NUM_LABELS] = [
    [0, 0, 0],
    [255, 0, 0],
    [255, 85, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [85, 255, 170],
    [170, 85, 255],
    [255, 170, 85],
    [85, 170, 255],
];

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

pub fn sequence_dir(root: &Path, subject: &str, seq: &str) -> PathBuf {
    root.join(subject).join(seq)
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_png(
    path: &Path,
    grid: &Array2<u8>,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let (h, w) = grid.dim();
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        encoder.set_palette(p);
    }
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    let data: Vec<u8> = grid.iter().copied().collect();
    writer
        .write_image_data(&data)
        .map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Writes an 8-bit grayscale image as-is (used for silhouettes and heatmaps).
pub fn write_gray_png(path: &Path, grid: &Array2<u8>) -> Result<()> {
    write_png(path, grid, png::ColorType::Grayscale, None)
}

fn read_png(path: &Path) -> Result<(Array2<u8>, png::ColorType)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(path, "expected 8-bit samples"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::Indexed => 1,
        other => return Err(png_err(path, format!("unsupported color type {other:?}"))),
    };
    buf.truncate(info.line_size * h);
    let grid = Array2::from_shape_fn((h, w), |(r, c)| buf[r * info.line_size + c * channels]);
    Ok((grid, info.color_type))
}

/// Writes a silhouette as 0/255 grayscale.
pub fn write_silhouette(path: &Path, frame: &SilhouetteFrame) -> Result<()> {
    write_gray_png(path, &frame.pixels().mapv(|v| if v != 0 { 255 } else { 0 }))
}

pub fn read_silhouette(path: &Path) -> Result<SilhouetteFrame> {
    let (grid, _) = read_png(path)?;
    Ok(SilhouetteFrame::from_mask(grid.mapv(|v| u8::from(v >= 128))))
}

/// Writes a parsing frame as a palette PNG whose indices are the labels.
pub fn write_parsing(path: &Path, frame: &ParsingFrame) -> Result<()> {
    let palette = PALETTE.iter().flatten().copied().collect();
    write_png(path, frame.labels(), png::ColorType::Indexed, Some(palette))
}

pub fn read_parsing(path: &Path) -> Result<ParsingFrame> {
    let (grid, _) = read_png(path)?;
    ParsingFrame::new(grid).map_err(|e| png_err(path, e))
}

/// Sorted `frame_*.png` files in a modality directory.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "png")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("frame_"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_both_modalities() {
        let dir = tempfile::tempdir().unwrap();
        let labels = Array2::from_shape_fn((64, 44), |(r, c)| ((r * 7 + c) % NUM_LABELS) as u8);
        let par = ParsingFrame::new(labels).unwrap();
        let sil = par.support();
        let sp = dir.path().join("s/frame_0000.png");
        let pp = dir.path().join("p/frame_0000.png");
        write_silhouette(&sp, &sil).unwrap();
        write_parsing(&pp, &par).unwrap();
        assert_eq!(read_silhouette(&sp).unwrap().pixels(), sil.pixels());
        assert_eq!(read_parsing(&pp).unwrap().labels(), par.labels());
        assert_eq!(list_frames(&dir.path().join("p")).unwrap(), vec![pp]);
    }
}
