//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    ReadImage {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("cannot write {path}: {source}")]
    WriteImage {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: unsupported pixel format ({detail}); expected 8-bit grayscale or RGB")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("downscaling a {width}x{height} image by 2^-{exponent} leaves no pixels")]
    EmptyDownscale {
        width: usize,
        height: usize,
        exponent: u32,
    },

    #[error("color ({r},{g},{b}) at pixel ({x},{y}) is not in the palette")]
    ColorNotInPalette { r: u8, g: u8, b: u8, x: u32, y: u32 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("palette line {line}: {reason}")]
    PaletteParse { line: usize, reason: String },

    #[error("requested {requested} superpixels for an image of {pixels} pixels")]
    InvalidSuperpixelCount { requested: usize, pixels: usize },

    #[error("patch center ({x},{y}) outside {width}x{height} image")]
    CenterOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("{context}: dimensions {actual_width}x{actual_height} do not match {expected_width}x{expected_height}")]
    DimensionMismatch {
        context: String,
        expected_width: usize,
        expected_height: usize,
        actual_width: usize,
        actual_height: usize,
    },

    #[error("{labels} labels supplied for {superpixels} superpixels")]
    LabelCountMismatch { labels: usize, superpixels: usize },

    #[error("{context}: got {left} and {right} items")]
    ListLengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("malformed patch dump: {reason}")]
    PatchDump { reason: String },

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor holds non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid uniform range [{lo}, {hi})")]
    BadRange { lo: f64, hi: f64 },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },

    #[error("conv input spatial size {height}x{width} is smaller than the 3x3 kernel")]
    ConvInputTooSmall { height: usize, width: usize },

    #[error("max-pool input spatial size {height}x{width} is smaller than the 2x2 window")]
    PoolInputTooSmall { height: usize, width: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("patch set is empty")]
    EmptyPatchSet,

    #[error("patch {index} has no label")]
    UnlabeledPatch { index: usize },

    #[error("network expects {net} classes but data has {data}")]
    ClassCountMismatch { net: usize, data: usize },

    #[error("confusion matrix has no counts")]
    EmptyMatrix,
}
