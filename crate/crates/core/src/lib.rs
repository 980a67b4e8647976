//! Page segmentation of handwritten historical document images.
//!
//! Every pixel of a document page is labeled with a layout class (periphery,
//! page, text, decoration, comment). The pipeline:
//!
//! 1. **imageio**: load pages as grayscale rasters, box-filter downscale,
//!    read/write color-coded label maps.
//! 2. **superpixel**: SLIC partition of the page into compact superpixels;
//!    each superpixel centroid becomes one labeling site.
//! 3. **dataset**: cut a 28x28 intensity patch around every centroid; the
//!    patch label is the ground-truth class of the center pixel.
//! 4. **nn**: a small CNN (3x3 conv, optional 2x2 max pool, dense, softmax)
//!    trained from scratch with SGD and dropout.
//! 5. **metrics**: pixel accuracy, mean accuracy, mean IU, and
//!    frequency-weighted IU from an accumulated confusion matrix.
//!
//! Everything is deterministic given a seed; training runs are bit-for-bit
//! reproducible.

pub mod dataset;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod nn;
pub mod superpixel;
pub mod tensor;

pub use error::{Error, Result};
