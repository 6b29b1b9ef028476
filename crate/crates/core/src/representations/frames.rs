use ndarray::Array2;

use crate::error::{Error, Result};

pub const FRAME_HEIGHT: usize = 64;
pub const FRAME_WIDTH: usize = 44;
/// Background plus the eleven part classes.
pub const NUM_LABELS: usize = 12;

/// A 2D grid of small integer codes (binary for silhouettes, part labels for parsing).
pub trait LabelGrid: Sized {
    fn grid(&self) -> &Array2<u8>;
    fn source_size(&self) -> (usize, usize);
    /// Rebuilds a frame of the same kind from a grid whose values came from `self`.
    fn with_grid(&self, grid: Array2<u8>) -> Self;

    fn dims(&self) -> (usize, usize) {
        self.grid().dim()
    }

    fn has_foreground(&self) -> bool {
        self.grid().iter().any(|&v| v != 0)
    }
}

/// Binary person mask, 1 = foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteFrame {
    pixels: Array2<u8>,
    source_size: (usize, usize),
}

impl SilhouetteFrame {
    /// Builds a frame, mapping every nonzero input value to 1.
    pub fn from_mask(mask: Array2<u8>) -> Self {
        let source_size = mask.dim();
        let pixels = mask.mapv(|v| u8::from(v != 0));
        Self {
            pixels,
            source_size,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_mask(Array2::zeros((height, width)))
    }

    pub fn pixels(&self) -> &Array2<u8> {
        &self.pixels
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v != 0).count()
    }
}

impl LabelGrid for SilhouetteFrame {
    fn grid(&self) -> &Array2<u8> {
        &self.pixels
    }

    fn source_size(&self) -> (usize, usize) {
        self.source_size
    }

    fn with_grid(&self, grid: Array2<u8>) -> Self {
        Self {
            pixels: grid.mapv(|v| u8::from(v != 0)),
            source_size: self.source_size,
        }
    }
}

/// Per-pixel part labels in `0..NUM_LABELS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsingFrame {
    labels: Array2<u8>,
    source_size: (usize, usize),
}

impl ParsingFrame {
    pub fn new(labels: Array2<u8>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&v| v as usize >= NUM_LABELS) {
            return Err(Error::InvalidLabel(bad));
        }
        let source_size = labels.dim();
        Ok(Self {
            labels,
            source_size,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            labels: Array2::zeros((height, width)),
            source_size: (height, width),
        }
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    /// Binary support (label > 0) as a silhouette.
    pub fn support(&self) -> SilhouetteFrame {
        SilhouetteFrame::from_mask(self.labels.clone())
    }
}

impl LabelGrid for ParsingFrame {
    fn grid(&self) -> &Array2<u8> {
        &self.labels
    }

    fn source_size(&self) -> (usize, usize) {
        self.source_size
    }

    fn with_grid(&self, grid: Array2<u8>) -> Self {
        debug_assert!(grid.iter().all(|&v| (v as usize) < NUM_LABELS));
        Self {
            labels: grid,
            source_size: self.source_size,
        }
    }
}

/// An ordered run of frames from one walk, tagged with identity and capture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSequence<F> {
    pub frames: Vec<F>,
    pub subject_id: String,
    pub view_id: String,
    pub condition: String,
}

impl<F: LabelGrid> GaitSequence<F> {
    pub fn new(
        frames: Vec<F>,
        subject_id: impl Into<String>,
        view_id: impl Into<String>,
        condition: impl Into<String>,
    ) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::ShapeMismatch("a sequence needs at least one frame".into()));
        };
        let dims = first.dims();
        if let Some(pos) = frames.iter().position(|f| f.dims() != dims) {
            return Err(Error::ShapeMismatch(format!(
                "frame {pos} is {:?}, expected {dims:?}",
                frames[pos].dims()
            )));
        }
        Ok(Self {
            frames,
            subject_id: subject_id.into(),
            view_id: view_id.into(),
            condition: condition.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
