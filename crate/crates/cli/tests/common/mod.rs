//! Shared test fixtures: synthetic three-class "documents" in the spirit of
//! a scanned manuscript page. A dark margin plays the periphery, a light
//! body the page, and a block of dark horizontal strokes the text region.
//! The ruling texture, not raw intensity, is what separates text from page,
//! so the patch classifier has to use spatial context.

use std::fs;
use std::path::{Path, PathBuf};

use pageseg_core::imageio::{self, GrayImage, LabelImage, Palette};
use pageseg_core::tensor::SplitMix64;

pub const PERIPHERY: u8 = 0;
pub const PAGE: u8 = 1;
pub const TEXT: u8 = 2;

pub fn synth_palette() -> Palette {
    Palette::new(vec![
        ("periphery".to_string(), [0, 0, 0]),
        ("page".to_string(), [255, 255, 255]),
        ("text".to_string(), [0, 0, 255]),
    ])
    .unwrap()
}

/// Writes the matching palette file and returns its path.
pub fn palette_file(dir: &Path) -> PathBuf {
    let path = dir.join("palette.txt");
    fs::write(&path, "periphery=0,0,0\npage=255,255,255\ntext=0,0,255\n").unwrap();
    path
}

/// Renders one synthetic page and its per-pixel ground truth.
pub fn synth_doc(seed: u64, side: usize) -> (GrayImage, LabelImage) {
    assert!(side >= 48, "synthetic pages need room for margin and text");
    let mut rng = SplitMix64::new(seed);
    let border = 10 + rng.below(5);
    // Text block position and size, kept clear of the margin.
    let gap = 6;
    let lo = border + gap;
    let hi = side - border - gap;
    let bx0 = lo + rng.below((hi - lo) / 4);
    let by0 = lo + rng.below((hi - lo) / 4);
    let bx1 = (bx0 + (hi - lo) / 3 + rng.below((hi - lo) / 3)).min(hi);
    let by1 = (by0 + (hi - lo) / 3 + rng.below((hi - lo) / 3)).min(hi);
    let pitch = 6 + rng.below(3);
    let phase = rng.below(pitch);

    let mut pixels = vec![0.0; side * side];
    let mut labels = vec![0u8; side * side];
    for y in 0..side {
        for x in 0..side {
            let in_border =
                x < border || y < border || x >= side - border || y >= side - border;
            let in_text = x >= bx0 && x < bx1 && y >= by0 && y < by1;
            let (value, label) = if in_border {
                (0.10, PERIPHERY)
            } else if in_text {
                let stroke = (y + phase) % pitch < 2;
                (if stroke { 0.20 } else { 0.82 }, TEXT)
            } else {
                (0.85, PAGE)
            };
            let noise = (rng.next_f64() - 0.5) * 0.06;
            let idx = y * side + x;
            pixels[idx] = (value + noise).clamp(0.0, 1.0);
            labels[idx] = label;
        }
    }
    (
        GrayImage::new(side, side, pixels).unwrap(),
        LabelImage::new(side, side, labels).unwrap(),
    )
}

/// Writes `count` synthetic pages under `root` as images/ and labels/
/// directories with matching stems; returns the two directory paths.
pub fn synth_dataset(root: &Path, count: usize, side: usize, seed: u64) -> (PathBuf, PathBuf) {
    let images = root.join("images");
    let labels = root.join("labels");
    fs::create_dir_all(&images).unwrap();
    fs::create_dir_all(&labels).unwrap();
    let palette = synth_palette();
    for i in 0..count {
        let doc_seed = seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (img, gt) = synth_doc(doc_seed, side);
        imageio::write_gray(&img, &images.join(format!("doc{i:02}.png"))).unwrap();
        imageio::write_labels(&gt, &palette, &labels.join(format!("doc{i:02}.png"))).unwrap();
    }
    (images, labels)
}
