//! Silhouette and parsing frames, alignment, part-region masks and the
//! silhouette/parsing intersection.

mod align;
mod frames;
pub mod io;
mod masks;

pub use align::{align_and_resize, align_pair, AlignTransform};
pub use frames::{
    GaitSequence, LabelGrid, ParsingFrame, SilhouetteFrame, FRAME_HEIGHT, FRAME_WIDTH, NUM_LABELS,
};
pub use masks::{downsample_mask, intersect, region_masks, RegionMasks};

/// Part labels of the parsing palette.
pub mod label {
    pub const BACKGROUND: u8 = 0;
    pub const HEAD: u8 = 1;
    pub const TORSO: u8 = 2;
    pub const LEFT_ARM: u8 = 3;
    pub const RIGHT_ARM: u8 = 4;
    pub const LEFT_HAND: u8 = 5;
    pub const RIGHT_HAND: u8 = 6;
    pub const DRESS: u8 = 7;
    pub const LEFT_LEG: u8 = 8;
    pub const RIGHT_LEG: u8 = 9;
    pub const LEFT_FOOT: u8 = 10;
    pub const RIGHT_FOOT: u8 = 11;

    pub const UPPER: &[u8] = &[HEAD];
    pub const MIDDLE: &[u8] = &[TORSO, LEFT_ARM, RIGHT_ARM, LEFT_HAND, RIGHT_HAND, DRESS];
    pub const LOWER: &[u8] = &[DRESS, LEFT_LEG, RIGHT_LEG, LEFT_FOOT, RIGHT_FOOT];
}
