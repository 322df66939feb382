use crate::image::ImageKind;

/// Errors raised by the optics core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("reference amplitude is not strictly positive at pixel ({x}, {y})")]
    NonPositiveReference { x: usize, y: usize },
    #[error("image list is empty")]
    EmptyList,
    #[error("image kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch { expected: ImageKind, found: ImageKind },
    #[error("invalid image: {0}")]
    InvalidImage(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("scattering coefficient must be positive, got {0}")]
    NonPositiveScattering(f64),
    #[error("optical properties ({mua}, {musp}) lie outside the lookup table grid")]
    OutOfGrid { mua: f64, musp: f64 },
    #[error("invalid lookup table: {0}")]
    InvalidLut(&'static str),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("reference values sum to zero over the mask")]
    ZeroReference,
    #[error("region of interest lies outside the image")]
    OutOfBounds,
    #[error("frame is {width}x{height}, smaller than the {patch}x{patch} patch size")]
    FrameTooSmall { width: usize, height: usize, patch: usize },
    #[error("packing mode {mode} requires {expected} illumination input")]
    ModeMismatch { mode: &'static str, expected: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;
