//! Image and label-map I/O: grayscale loading, box-filter downscaling, and
//! color-coded label maps.
//!
//! Label maps are exact-color PNGs. A pixel whose color is not in the palette
//! is a data bug and is reported, never silently matched to the nearest color.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Grayscale raster with intensities normalized to `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<GrayImage> {
        if pixels.len() != width * height {
            return Err(Error::ShapeDataMismatch {
                shape: vec![height, width],
                len: pixels.len(),
            });
        }
        if let Some(index) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::NonFinite { index });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> GrayImage {
        GrayImage::new(width, height, vec![value; width * height]).unwrap()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Raster of class indices, same layout as the image it labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<LabelImage> {
        if labels.len() != width * height {
            return Err(Error::ShapeDataMismatch {
                shape: vec![height, width],
                len: labels.len(),
            });
        }
        Ok(LabelImage {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }
}

/// Ordered mapping of class names to distinct RGB colors; the entry order
/// defines the class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    entries: Vec<(String, [u8; 3])>,
}

impl Palette {
    pub fn new(entries: Vec<(String, [u8; 3])>) -> Result<Palette> {
        if entries.len() < 2 {
            return Err(Error::PaletteParse {
                line: 0,
                reason: format!("palette needs at least 2 classes, got {}", entries.len()),
            });
        }
        for (i, (name, color)) in entries.iter().enumerate() {
            for (name2, color2) in entries.iter().skip(i + 1) {
                if name == name2 {
                    return Err(Error::PaletteParse {
                        line: 0,
                        reason: format!("duplicate class name {name:?}"),
                    });
                }
                if color == color2 {
                    return Err(Error::PaletteParse {
                        line: 0,
                        reason: format!("duplicate color {color:?} ({name:?} and {name2:?})"),
                    });
                }
            }
        }
        Ok(Palette { entries })
    }

    /// Parses `name=R,G,B` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Palette> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::PaletteParse {
                line: idx + 1,
                reason,
            };
            let (name, rgb) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected name=R,G,B, got {line:?}")))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(bad("empty class name".into()));
            }
            let parts: Vec<&str> = rgb.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 color components, got {}", parts.len())));
            }
            let mut color = [0u8; 3];
            for (c, part) in color.iter_mut().zip(&parts) {
                *c = part
                    .parse()
                    .map_err(|_| bad(format!("invalid color component {part:?}")))?;
            }
            entries.push((name.to_string(), color));
        }
        Palette::new(entries)
    }

    pub fn from_file(path: &Path) -> Result<Palette> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        Palette::parse(&text)
    }

    /// The five document layout classes and their conventional colors:
    /// black periphery, white page, blue text, red decoration, pink comment.
    pub fn document_default() -> Palette {
        Palette::new(vec![
            ("periphery".into(), [0, 0, 0]),
            ("page".into(), [255, 255, 255]),
            ("text".into(), [0, 0, 255]),
            ("decoration".into(), [255, 0, 0]),
            ("comment".into(), [255, 192, 203]),
        ])
        .unwrap()
    }

    /// Class count M.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.entries[class].0
    }

    pub fn color(&self, class: usize) -> [u8; 3] {
        self.entries[class].1
    }

    pub fn entries(&self) -> &[(String, [u8; 3])] {
        &self.entries
    }

    fn color_index(&self) -> HashMap<[u8; 3], u8> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (_, c))| (*c, i as u8))
            .collect()
    }
}

fn luminance(r: u8, g: u8, b: u8) -> f64 {
    // ITU-R BT.601 weights
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

/// Loads an 8-bit grayscale or RGB PNG as normalized intensities.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path).map_err(|source| Error::ReadImage {
        path: path.into(),
        source,
    })?;
    let (width, height) = (dynimg.width() as usize, dynimg.height() as usize);
    let pixels = match &dynimg {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageLumaA8(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
        image::DynamicImage::ImageRgba8(buf) => buf
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                detail: format!("{:?}", other.color()),
            })
        }
    };
    GrayImage::new(width, height, pixels)
}

/// Output dimensions of `downscale` for a scaling factor of `2^-exponent`.
pub fn downscaled_dims(width: usize, height: usize, exponent: u32) -> (usize, usize) {
    let block = 1usize << exponent;
    (width / block, height / block)
}

/// Scales the image down by `2^-exponent` with a box filter: every output
/// pixel is the mean of its source block. Trailing rows/columns that do not
/// fill a whole block are dropped.
pub fn downscale(img: &GrayImage, exponent: u32) -> Result<GrayImage> {
    if exponent == 0 {
        return Ok(img.clone());
    }
    let block = 1usize << exponent;
    let (out_w, out_h) = downscaled_dims(img.width, img.height, exponent);
    if out_w == 0 || out_h == 0 {
        return Err(Error::EmptyDownscale {
            width: img.width,
            height: img.height,
            exponent,
        });
    }
    let norm = 1.0 / (block * block) as f64;
    let mut pixels = vec![0.0; out_w * out_h];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut sum = 0.0;
            for dy in 0..block {
                let row = (oy * block + dy) * img.width + ox * block;
                sum += img.pixels[row..row + block].iter().sum::<f64>();
            }
            pixels[oy * out_w + ox] = sum * norm;
        }
    }
    GrayImage::new(out_w, out_h, pixels)
}

/// Scales a label map down by `2^-exponent` with nearest-neighbor sampling:
/// every output pixel takes the label of its source block's top-left corner.
/// Averaging is meaningless for class indices, so this is the label-map
/// counterpart of [`downscale`], used to bring full-resolution ground truth
/// to the working scale.
pub fn downscale_labels(labels: &LabelImage, exponent: u32) -> Result<LabelImage> {
    if exponent == 0 {
        return Ok(labels.clone());
    }
    let block = 1usize << exponent;
    let (out_w, out_h) = downscaled_dims(labels.width, labels.height, exponent);
    if out_w == 0 || out_h == 0 {
        return Err(Error::EmptyDownscale {
            width: labels.width,
            height: labels.height,
            exponent,
        });
    }
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        for ox in 0..out_w {
            out.push(labels.labels[oy * block * labels.width + ox * block]);
        }
    }
    LabelImage::new(out_w, out_h, out)
}

/// Reads a color-coded label map; every pixel must match a palette color
/// exactly.
pub fn load_labels(path: &Path, palette: &Palette) -> Result<LabelImage> {
    let dynimg = image::open(path).map_err(|source| Error::ReadImage {
        path: path.into(),
        source,
    })?;
    use image::DynamicImage as D;
    if !matches!(
        dynimg,
        D::ImageLuma8(_) | D::ImageLumaA8(_) | D::ImageRgb8(_) | D::ImageRgba8(_)
    ) {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            detail: format!("{:?}", dynimg.color()),
        });
    }
    let rgb = dynimg.to_rgb8();
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    let index = palette.color_index();
    let mut labels = Vec::with_capacity(width * height);
    for (x, y, p) in rgb.enumerate_pixels() {
        let [r, g, b] = p.0;
        match index.get(&[r, g, b]) {
            Some(&class) => labels.push(class),
            None => return Err(Error::ColorNotInPalette { r, g, b, x, y }),
        }
    }
    LabelImage::new(width, height, labels)
}

/// Writes a label map as a color-coded RGB PNG;
/// `load_labels(write_labels(x)) == x`.
pub fn write_labels(labels: &LabelImage, palette: &Palette, path: &Path) -> Result<()> {
    let classes = palette.len();
    for &label in &labels.labels {
        if label as usize >= classes {
            return Err(Error::LabelOutOfRange {
                label: label as usize,
                classes,
            });
        }
    }
    let mut buf = image::RgbImage::new(labels.width as u32, labels.height as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        let class = labels.get(x as usize, y as usize);
        p.0 = palette.color(class);
    }
    buf.save(path).map_err(|source| Error::WriteImage {
        path: path.into(),
        source,
    })
}

/// Writes a grayscale image as an 8-bit PNG, rounding each intensity to
/// the nearest of the 256 representable levels.
pub fn write_gray(img: &GrayImage, path: &Path) -> Result<()> {
    let mut buf = image::GrayImage::new(img.width as u32, img.height as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        p.0 = [(img.get(x as usize, y as usize) * 255.0).round() as u8];
    }
    buf.save(path).map_err(|source| Error::WriteImage {
        path: path.into(),
        source,
    })
}
