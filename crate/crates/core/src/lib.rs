//! Spatial-frequency-domain optics core.
//!
//! Builds white Monte Carlo diffuse-reflectance lookup tables, demodulates and
//! calibrates structured-illumination frames, inverts reflectance pairs to
//! absorption and reduced-scattering maps, renders ground-truth-paired frames
//! and scores recovered maps. Everything here is `no_std` + `alloc`; file IO,
//! FFT filtering and threading live in the `sfdoptics` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod calibration;
pub mod diffusion;
pub mod error;
pub mod evalkit;
pub mod image;
pub mod lut;
pub mod rng;
pub mod sfdi;
pub mod synth;
pub mod transport;

pub use calibration::{compute_diffuse_reflectance, CalibrationSet, OpticalPropertyMap};
pub use error::{Error, Result};
pub use image::{mean_of_images, ImageKind, Mask, ScalarImage};
pub use lut::{build_lut, Inversion, LookupTable, LutProvenance};
pub use sfdi::{calibrate_from_phantom, process_sfdi, FrameSet};
pub use transport::{simulate_white_mc, RadialReflectance, TransportConfig};
