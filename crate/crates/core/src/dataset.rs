//! Labeled 28x28 patches: the bridge between superpixel maps and the network.
//!
//! Each superpixel contributes one patch, centered on its rounded centroid.
//! For training, the patch label is the ground-truth class at that centroid;
//! at inference the predicted class is projected back onto every member
//! pixel of the superpixel.
//!
//! Windows reaching past the image edge are filled by mirror reflection
//! about the edge, so a border patch stays a plausible piece of document
//! texture instead of picking up a constant pad.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::{GrayImage, LabelImage};
use crate::superpixel::{centroids, SuperpixelMap};

pub const PATCH_SIDE: usize = 28;
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE;

/// Offset of the center pixel inside the window: the window spans
/// `[-14, +13]` around the center in both axes.
const CENTER_OFFSET: i64 = 14;

const DUMP_MAGIC: &[u8; 4] = b"HSPS";
const DUMP_VERSION: u8 = 1;

/// A 28x28 intensity window, optionally labeled with its center pixel's
/// class.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Vec<f64>,
    pub label: Option<u8>,
    /// Center coordinate in the source image.
    pub origin: (usize, usize),
}

/// A collection of patches drawn from one or more images.
#[derive(Debug, Clone, Default)]
pub struct PatchSet {
    patches: Vec<Patch>,
    classes: usize,
}

impl PatchSet {
    pub fn new(classes: usize) -> PatchSet {
        PatchSet {
            patches: Vec::new(),
            classes,
        }
    }

    pub fn push(&mut self, patch: Patch) -> Result<()> {
        if let Some(label) = patch.label {
            if label as usize >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label: label as usize,
                    classes: self.classes,
                });
            }
        }
        self.patches.push(patch);
        Ok(())
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Patch counts per class over the labeled patches; sums to the number
    /// of labeled patches.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut histogram = vec![0usize; self.classes];
        for patch in &self.patches {
            if let Some(label) = patch.label {
                histogram[label as usize] += 1;
            }
        }
        histogram
    }

    /// Writes the set in the debug dump format: magic `HSPS`, version,
    /// patch count, class count, then per patch 784 little-endian f32
    /// values followed by one label byte. Requires every patch labeled.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.into(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(io_err);
        write(DUMP_MAGIC)?;
        write(&[DUMP_VERSION])?;
        write(&(self.patches.len() as u64).to_le_bytes())?;
        write(&(self.classes as u32).to_le_bytes())?;
        for (i, patch) in self.patches.iter().enumerate() {
            let Some(label) = patch.label else {
                return Err(Error::PatchDump {
                    reason: format!("patch {i} has no label"),
                });
            };
            for &v in &patch.values {
                write(&(v as f32).to_le_bytes())?;
            }
            write(&[label])?;
        }
        out.into_inner()
            .map_err(|e| io_err(e.into_error()))?
            .flush()
            .map_err(io_err)
    }

    /// Reads a dump written by [`PatchSet::dump`]. Origins are not stored
    /// in the format and come back as (0, 0).
    pub fn load(path: &Path) -> Result<PatchSet> {
        let io_err = |source| Error::Io {
            path: path.into(),
            source,
        };
        let mut input = BufReader::new(File::open(path).map_err(io_err)?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(io_err)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::PatchDump {
                reason: format!("bad magic {magic:?}"),
            });
        }
        let mut version = [0u8; 1];
        input.read_exact(&mut version).map_err(io_err)?;
        if version[0] != DUMP_VERSION {
            return Err(Error::PatchDump {
                reason: format!("unsupported version {}", version[0]),
            });
        }
        let mut count = [0u8; 8];
        input.read_exact(&mut count).map_err(io_err)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut classes = [0u8; 4];
        input.read_exact(&mut classes).map_err(io_err)?;
        let classes = u32::from_le_bytes(classes) as usize;
        let mut set = PatchSet::new(classes);
        let mut record = vec![0u8; PATCH_LEN * 4 + 1];
        for _ in 0..count {
            input.read_exact(&mut record).map_err(io_err)?;
            let values = record[..PATCH_LEN * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            set.push(Patch {
                values,
                label: Some(record[PATCH_LEN * 4]),
                origin: (0, 0),
            })?;
        }
        Ok(set)
    }
}

/// Reflects an out-of-range index back into `[0, n)` as if the sequence
/// were mirrored at both ends (`-1 -> 0`, `n -> n-1`, and so on,
/// periodically).
fn mirror_index(i: i64, n: usize) -> usize {
    let period = 2 * n as i64;
    let folded = i.rem_euclid(period);
    if folded < n as i64 {
        folded as usize
    } else {
        (period - 1 - folded) as usize
    }
}

/// Cuts the 28x28 window centered at `center` (window rows
/// `center.1 - 14 ..= center.1 + 13`, likewise for columns), mirroring
/// across image edges where the window sticks out.
pub fn extract_patch(img: &GrayImage, center: (usize, usize)) -> Result<Patch> {
    let (cx, cy) = center;
    if cx >= img.width() || cy >= img.height() {
        return Err(Error::CenterOutOfBounds {
            x: cx,
            y: cy,
            width: img.width(),
            height: img.height(),
        });
    }
    let mut values = Vec::with_capacity(PATCH_LEN);
    for dy in 0..PATCH_SIDE as i64 {
        let y = mirror_index(cy as i64 + dy - CENTER_OFFSET, img.height());
        for dx in 0..PATCH_SIDE as i64 {
            let x = mirror_index(cx as i64 + dx - CENTER_OFFSET, img.width());
            values.push(img.get(x, y));
        }
    }
    Ok(Patch {
        values,
        label: None,
        origin: center,
    })
}

/// One labeled patch per superpixel per image: the patch at each rounded
/// centroid, labeled with the ground truth at that pixel. Images are
/// processed in order, so the output is deterministic.
pub fn build_training_set(
    images: &[GrayImage],
    labelmaps: &[LabelImage],
    spmaps: &[SuperpixelMap],
    classes: usize,
) -> Result<PatchSet> {
    if images.len() != labelmaps.len() {
        return Err(Error::ListLengthMismatch {
            context: "images vs label maps",
            left: images.len(),
            right: labelmaps.len(),
        });
    }
    if images.len() != spmaps.len() {
        return Err(Error::ListLengthMismatch {
            context: "images vs superpixel maps",
            left: images.len(),
            right: spmaps.len(),
        });
    }
    let mut set = PatchSet::new(classes);
    for (i, ((img, labels), map)) in images.iter().zip(labelmaps).zip(spmaps).enumerate() {
        for (actual, expected) in [
            ((labels.width(), labels.height()), (img.width(), img.height())),
            ((map.width(), map.height()), (img.width(), img.height())),
        ] {
            if actual != expected {
                return Err(Error::DimensionMismatch {
                    context: format!("image {i}"),
                    expected_width: expected.0,
                    expected_height: expected.1,
                    actual_width: actual.0,
                    actual_height: actual.1,
                });
            }
        }
        for (cx, cy) in centroids(map) {
            let mut patch = extract_patch(img, (cx, cy))?;
            patch.label = Some(labels.get(cx, cy) as u8);
            set.push(patch)?;
        }
    }
    Ok(set)
}

/// Spreads one class index per superpixel onto every member pixel.
pub fn project_labels(spmap: &SuperpixelMap, center_labels: &[u8]) -> Result<LabelImage> {
    if center_labels.len() != spmap.len() {
        return Err(Error::LabelCountMismatch {
            labels: center_labels.len(),
            superpixels: spmap.len(),
        });
    }
    let labels = spmap
        .assignment()
        .iter()
        .map(|&id| center_labels[id as usize])
        .collect();
    LabelImage::new(spmap.width(), spmap.height(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::slic;
    use crate::tensor::SplitMix64;

    fn gradient_image(w: usize, h: usize) -> GrayImage {
        // Distinct value per pixel so index mix-ups are visible.
        let pixels = (0..w * h).map(|i| i as f64 / (w * h) as f64).collect();
        GrayImage::new(w, h, pixels).unwrap()
    }

    /// Brute-force mirror mapper, written independently of `mirror_index`:
    /// walk toward the target index one step at a time; a step that would
    /// leave the image is consumed by the bounce (edge sample repeats).
    fn mirror_oracle(i: i64, n: usize) -> usize {
        let mut pos = 0i64;
        let mut dir = if i < 0 { -1i64 } else { 1 };
        for _ in 0..i.abs() {
            if pos + dir < 0 || pos + dir >= n as i64 {
                dir = -dir;
            } else {
                pos += dir;
            }
        }
        pos as usize
    }

    #[test]
    fn mirror_index_matches_step_oracle() {
        for n in 1..6usize {
            for i in -40i64..40 {
                assert_eq!(
                    mirror_index(i, n),
                    mirror_oracle(i, n),
                    "i={i} n={n}"
                );
            }
        }
    }

    #[test]
    fn constant_image_gives_constant_patch() {
        let img = GrayImage::constant(30, 30, 0.7);
        let patch = extract_patch(&img, (15, 15)).unwrap();
        assert_eq!(patch.values.len(), PATCH_LEN);
        assert!(patch.values.iter().all(|&v| v == 0.7));
        assert_eq!(patch.origin, (15, 15));
        assert_eq!(patch.label, None);
    }

    #[test]
    fn interior_patch_is_raw_window() {
        let img = gradient_image(60, 50);
        let patch = extract_patch(&img, (20, 19)).unwrap();
        for dy in 0..PATCH_SIDE {
            for dx in 0..PATCH_SIDE {
                let x = 20 + dx - 14;
                let y = 19 + dy - 14;
                assert_eq!(patch.values[dy * PATCH_SIDE + dx], img.get(x, y));
            }
        }
    }

    #[test]
    fn corner_patch_mirrors_across_edges() {
        let img = gradient_image(40, 40);
        let patch = extract_patch(&img, (0, 0)).unwrap();
        // offset (13,13) maps to source (-1,-1), which mirrors to (0,0)
        assert_eq!(patch.values[13 * PATCH_SIDE + 13], img.get(0, 0));
        // full cross-check against the independent mirror mapper
        for dy in 0..PATCH_SIDE {
            for dx in 0..PATCH_SIDE {
                let x = mirror_oracle(dx as i64 - 14, 40);
                let y = mirror_oracle(dy as i64 - 14, 40);
                assert_eq!(patch.values[dy * PATCH_SIDE + dx], img.get(x, y));
            }
        }
    }

    #[test]
    fn patch_values_stay_in_range_everywhere() {
        let mut rng = SplitMix64::new(11);
        let pixels = (0..20 * 16).map(|_| rng.next_f64()).collect();
        let img = GrayImage::new(20, 16, pixels).unwrap();
        for cy in 0..16 {
            for cx in 0..20 {
                let patch = extract_patch(&img, (cx, cy)).unwrap();
                assert_eq!(patch.values.len(), PATCH_LEN);
                assert!(patch.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn rejects_center_outside_image() {
        let img = GrayImage::constant(10, 10, 0.5);
        assert!(matches!(
            extract_patch(&img, (10, 3)),
            Err(Error::CenterOutOfBounds { .. })
        ));
    }

    #[test]
    fn training_set_one_patch_per_superpixel() {
        let mut rng = SplitMix64::new(2);
        let pixels = (0..48 * 48).map(|_| rng.next_f64()).collect();
        let img = GrayImage::new(48, 48, pixels).unwrap();
        let map = slic(&img, 9, 10.0, 10).unwrap();
        let labels =
            LabelImage::new(48, 48, vec![1; 48 * 48]).unwrap();
        let set =
            build_training_set(&[img], &[labels], std::slice::from_ref(&map), 3).unwrap();
        assert_eq!(set.len(), map.len());
        assert!(set.patches().iter().all(|p| p.label == Some(1)));
        assert_eq!(set.class_histogram(), vec![0, map.len(), 0]);
    }

    #[test]
    fn empty_input_gives_empty_set() {
        let set = build_training_set(&[], &[], &[], 5).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.classes(), 5);
    }

    #[test]
    fn training_set_catches_dimension_mismatch() {
        let img = GrayImage::constant(16, 16, 0.5);
        let map = slic(&img, 4, 10.0, 10).unwrap();
        let labels = LabelImage::new(16, 15, vec![0; 16 * 15]).unwrap();
        let err = build_training_set(&[img], &[labels], &[map], 2).unwrap_err();
        match err {
            Error::DimensionMismatch { context, .. } => assert_eq!(context, "image 0"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn training_set_catches_arity_mismatch() {
        let img = GrayImage::constant(16, 16, 0.5);
        assert!(matches!(
            build_training_set(&[img], &[], &[], 2),
            Err(Error::ListLengthMismatch { .. })
        ));
    }

    #[test]
    fn project_labels_k1_uniform() {
        let img = GrayImage::constant(12, 8, 0.4);
        let map = slic(&img, 1, 10.0, 10).unwrap();
        let out = project_labels(&map, &[2]).unwrap();
        assert_eq!((out.width(), out.height()), (12, 8));
        assert!(out.labels().iter().all(|&l| l == 2));
    }

    #[test]
    fn project_labels_quadrants_match_per_pixel_lookup() {
        let img = GrayImage::constant(100, 100, 0.5);
        let map = slic(&img, 4, 10.0, 10).unwrap();
        let out = project_labels(&map, &[0, 1, 2, 3]).unwrap();
        // brute force: each pixel's label is its superpixel id's label
        for y in 0..100 {
            for x in 0..100 {
                let id = map.assignment()[y * 100 + x] as usize;
                assert_eq!(out.get(x, y), id);
            }
        }
    }

    #[test]
    fn project_labels_histogram_matches_member_counts() {
        let mut rng = SplitMix64::new(7);
        let pixels = (0..40 * 30).map(|_| rng.next_f64()).collect();
        let img = GrayImage::new(40, 30, pixels).unwrap();
        let map = slic(&img, 8, 10.0, 10).unwrap();
        let labels: Vec<u8> = (0..map.len()).map(|i| (i % 3) as u8).collect();
        let out = project_labels(&map, &labels).unwrap();
        let mut histogram = [0usize; 3];
        for &l in out.labels() {
            histogram[l as usize] += 1;
        }
        let mut expected = [0usize; 3];
        for sp in map.superpixels() {
            expected[labels[sp.id] as usize] += sp.members.len();
        }
        assert_eq!(histogram, expected);
    }

    #[test]
    fn project_labels_rejects_wrong_count() {
        let img = GrayImage::constant(10, 10, 0.5);
        let map = slic(&img, 4, 10.0, 10).unwrap();
        assert!(matches!(
            project_labels(&map, &[0, 1]),
            Err(Error::LabelCountMismatch { .. })
        ));
    }

    #[test]
    fn dump_round_trips_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.hsps");
        let mut rng = SplitMix64::new(13);
        let mut set = PatchSet::new(4);
        for i in 0..10 {
            let values: Vec<f64> = (0..PATCH_LEN).map(|_| rng.next_f64()).collect();
            set.push(Patch {
                values,
                label: Some((i % 4) as u8),
                origin: (i, i),
            })
            .unwrap();
        }
        set.dump(&path).unwrap();
        let loaded = PatchSet::load(&path).unwrap();
        assert_eq!(loaded.len(), set.len());
        assert_eq!(loaded.classes(), 4);
        for (a, b) in loaded.patches().iter().zip(set.patches()) {
            assert_eq!(a.label, b.label);
            for (&va, &vb) in a.values.iter().zip(&b.values) {
                assert_eq!(va, vb as f32 as f64);
            }
        }
    }

    #[test]
    fn dump_header_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.hsps");
        PatchSet::new(3).dump(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"HSPS");
        assert_eq!(bytes[4], 1);
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 17);
    }

    #[test]
    fn dump_requires_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hsps");
        let mut set = PatchSet::new(2);
        set.push(Patch {
            values: vec![0.0; PATCH_LEN],
            label: None,
            origin: (0, 0),
        })
        .unwrap();
        assert!(matches!(
            set.dump(&path),
            Err(Error::PatchDump { .. })
        ));
    }

    #[test]
    fn push_rejects_out_of_range_label() {
        let mut set = PatchSet::new(2);
        let err = set
            .push(Patch {
                values: vec![0.0; PATCH_LEN],
                label: Some(2),
                origin: (0, 0),
            })
            .unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { .. }));
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.hsps");
        std::fs::write(&path, b"NOPE\x01").unwrap();
        assert!(matches!(
            PatchSet::load(&path),
            Err(Error::PatchDump { .. })
        ));
    }
}
