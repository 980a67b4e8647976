//! SLIC superpixel segmentation.
//!
//! Localized k-means over a combined intensity + spatial distance. Seeds are
//! placed on a regular grid with step `S = sqrt(w*h/k)`, nudged to the lowest
//! gradient position in a 3x3 neighborhood, then refined by assigning every
//! pixel within a 2Sx2S window of a cluster center to the center minimizing
//!
//! `D^2 = d_intensity^2 + (d_spatial / S)^2 * m^2`
//!
//! where `m` is the compactness weight and intensities are scaled by 100 to
//! mimic the range of a CIELAB L channel. A connectivity pass then absorbs
//! every 4-connected fragment smaller than `S^2/4` into its largest adjacent
//! superpixel, so each final superpixel is one contiguous region.
//!
//! The whole procedure is deterministic: no random seeding, fixed scan
//! orders, ties broken toward earlier candidates.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::GrayImage;

pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const DEFAULT_ITERATIONS: usize = 10;

/// Intensities in [0,1] are multiplied by this before entering the distance,
/// mirroring the 0..100 range of the L channel SLIC was designed around.
const INTENSITY_SCALE: f64 = 100.0;

/// One contiguous superpixel.
#[derive(Debug, Clone)]
pub struct Superpixel {
    pub id: usize,
    /// Mean (x, y) of the member pixels.
    pub centroid: (f64, f64),
    /// Member pixel coordinates in row-major order.
    pub members: Vec<(u32, u32)>,
}

/// A partition of an image into superpixels.
#[derive(Debug, Clone)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    assignment: Vec<u32>,
    superpixels: Vec<Superpixel>,
}

impl SuperpixelMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Superpixel id per pixel, row-major.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn superpixels(&self) -> &[Superpixel] {
        &self.superpixels
    }

    pub fn len(&self) -> usize {
        self.superpixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.superpixels.is_empty()
    }
}

struct Cluster {
    intensity: f64, // scaled by INTENSITY_SCALE
    x: f64,
    y: f64,
}

pub fn slic(
    img: &GrayImage,
    k: usize,
    compactness: f64,
    iterations: usize,
) -> Result<SuperpixelMap> {
    let (w, h) = (img.width(), img.height());
    let n_pixels = w * h;
    if k == 0 || k > n_pixels {
        return Err(Error::InvalidSuperpixelCount {
            requested: k,
            pixels: n_pixels,
        });
    }

    let step = (n_pixels as f64 / k as f64).sqrt();
    let mut clusters = seed_clusters(img, step);
    let mut labels = vec![u32::MAX; n_pixels];
    let mut dists = vec![f64::INFINITY; n_pixels];

    let m2 = compactness * compactness;
    let inv_s2 = 1.0 / (step * step);

    for _ in 0..iterations.max(1) {
        dists.fill(f64::INFINITY);
        for (n, c) in clusters.iter().enumerate() {
            let x_lo = (c.x - step).floor().max(0.0) as usize;
            let x_hi = ((c.x + step).ceil() as usize).min(w - 1);
            let y_lo = (c.y - step).floor().max(0.0) as usize;
            let y_hi = ((c.y + step).ceil() as usize).min(h - 1);
            for y in y_lo..=y_hi {
                let dy = y as f64 - c.y;
                let row = y * w;
                for x in x_lo..=x_hi {
                    let idx = row + x;
                    let di = img.pixels()[idx] * INTENSITY_SCALE - c.intensity;
                    let dx = x as f64 - c.x;
                    let d2 = di * di + (dx * dx + dy * dy) * inv_s2 * m2;
                    if d2 < dists[idx] {
                        dists[idx] = d2;
                        labels[idx] = n as u32;
                    }
                }
            }
        }

        // A pixel can fall outside every search window once centers drift;
        // give it the globally nearest center.
        for (idx, label) in labels.iter_mut().enumerate() {
            if *label == u32::MAX {
                let x = (idx % w) as f64;
                let y = (idx / w) as f64;
                let v = img.pixels()[idx] * INTENSITY_SCALE;
                let mut best = (f64::INFINITY, 0u32);
                for (n, c) in clusters.iter().enumerate() {
                    let di = v - c.intensity;
                    let (dx, dy) = (x - c.x, y - c.y);
                    let d2 = di * di + (dx * dx + dy * dy) * inv_s2 * m2;
                    if d2 < best.0 {
                        best = (d2, n as u32);
                    }
                }
                *label = best.1;
            }
        }

        // Recompute centers as the mean of their pixels.
        let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); clusters.len()];
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                let a = &mut acc[labels[idx] as usize];
                a.0 += img.pixels()[idx] * INTENSITY_SCALE;
                a.1 += x as f64;
                a.2 += y as f64;
                a.3 += 1;
            }
        }
        for (c, a) in clusters.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let inv = 1.0 / a.3 as f64;
                c.intensity = a.0 * inv;
                c.x = a.1 * inv;
                c.y = a.2 * inv;
            }
        }
    }

    let assignment = enforce_connectivity(&labels, w, h, step);
    Ok(build_map(img, assignment, w, h))
}

/// Rounded (half-up in both axes) centroid per superpixel; one labeling site
/// each.
pub fn centroids(map: &SuperpixelMap) -> Vec<(usize, usize)> {
    map.superpixels
        .iter()
        .map(|sp| {
            (
                (sp.centroid.0 + 0.5).floor() as usize,
                (sp.centroid.1 + 0.5).floor() as usize,
            )
        })
        .collect()
}

fn seed_clusters(img: &GrayImage, step: f64) -> Vec<Cluster> {
    let (w, h) = (img.width(), img.height());
    let nx = ((w as f64 / step).round() as usize).max(1);
    let ny = ((h as f64 / step).round() as usize).max(1);
    let mut clusters = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let px = (((i as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let py = (((j as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let (px, py) = lowest_gradient_neighbor(img, px, py);
            clusters.push(Cluster {
                intensity: img.get(px, py) * INTENSITY_SCALE,
                x: px as f64,
                y: py as f64,
            });
        }
    }
    clusters
}

fn gradient(img: &GrayImage, x: usize, y: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let gx = img.get((x + 1).min(w - 1), y) - img.get(x.saturating_sub(1), y);
    let gy = img.get(x, (y + 1).min(h - 1)) - img.get(x, y.saturating_sub(1));
    gx * gx + gy * gy
}

/// 3x3 perturbation of a seed toward the flattest position; the center wins
/// ties.
fn lowest_gradient_neighbor(img: &GrayImage, x: usize, y: usize) -> (usize, usize) {
    let (w, h) = (img.width(), img.height());
    let mut best = (gradient(img, x, y), x, y);
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            let g = gradient(img, nx, ny);
            if g < best.0 {
                best = (g, nx, ny);
            }
        }
    }
    (best.1, best.2)
}

/// Splits the raw k-means labeling into 4-connected components and absorbs
/// every component smaller than `S^2/4` into its largest adjacent component.
/// Returns a dense relabeling (ids ordered by first pixel in scan order).
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, step: f64) -> Vec<u32> {
    let n_pixels = w * h;

    // Connected components in row-major discovery order.
    let mut comp_of = vec![u32::MAX; n_pixels];
    let mut comp_sizes: Vec<usize> = Vec::new();
    let mut stack: Vec<u32> = Vec::new();
    for start in 0..n_pixels {
        if comp_of[start] != u32::MAX {
            continue;
        }
        let cid = comp_sizes.len() as u32;
        let cluster = labels[start];
        comp_of[start] = cid;
        stack.push(start as u32);
        let mut size = 0usize;
        while let Some(p) = stack.pop() {
            size += 1;
            let p = p as usize;
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp_of[q] == u32::MAX && labels[q] == cluster {
                    comp_of[q] = cid;
                    stack.push(q as u32);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        comp_sizes.push(size);
    }
    let n_comps = comp_sizes.len();

    // Component adjacency graph.
    let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n_comps];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let a = comp_of[idx];
            if x + 1 < w {
                let b = comp_of[idx + 1];
                if a != b {
                    adj[a as usize].insert(b);
                    adj[b as usize].insert(a);
                }
            }
            if y + 1 < h {
                let b = comp_of[idx + w];
                if a != b {
                    adj[a as usize].insert(b);
                    adj[b as usize].insert(a);
                }
            }
        }
    }

    // Union-find merge of undersized components, smallest group first.
    let threshold = step * step / 4.0;
    let mut parent: Vec<u32> = (0..n_comps as u32).collect();
    let mut group_size = comp_sizes.clone();
    let mut group_members: Vec<Vec<u32>> = (0..n_comps as u32).map(|c| vec![c]).collect();

    fn find(parent: &mut [u32], mut c: u32) -> u32 {
        while parent[c as usize] != c {
            parent[c as usize] = parent[parent[c as usize] as usize];
            c = parent[c as usize];
        }
        c
    }

    let mut heap: BinaryHeap<Reverse<(usize, u32)>> = (0..n_comps as u32)
        .filter(|&c| (comp_sizes[c as usize] as f64) < threshold)
        .map(|c| Reverse((comp_sizes[c as usize], c)))
        .collect();

    while let Some(Reverse((size, c))) = heap.pop() {
        if find(&mut parent, c) != c || group_size[c as usize] != size {
            continue; // stale entry
        }
        if size as f64 >= threshold {
            continue; // grew past the threshold by absorbing others
        }
        // Largest adjacent group; ties go to the smaller id.
        let mut neighbors: Vec<u32> = group_members[c as usize]
            .iter()
            .flat_map(|&m| adj[m as usize].iter().copied())
            .map(|n| find(&mut parent, n))
            .filter(|&n| n != c)
            .collect();
        neighbors.sort_unstable();
        neighbors.dedup();
        let Some(&target) = neighbors
            .iter()
            .max_by_key(|&&n| (group_size[n as usize], Reverse(n)))
        else {
            continue; // isolated group (single-component image)
        };
        parent[c as usize] = target;
        group_size[target as usize] += size;
        let members = std::mem::take(&mut group_members[c as usize]);
        group_members[target as usize].extend(members);
        heap.push(Reverse((group_size[target as usize], target)));
    }

    // Dense ids, ordered by each group's first pixel in scan order (the
    // minimum original component id in the group).
    let mut first_comp: Vec<u32> = vec![u32::MAX; n_comps];
    for c in 0..n_comps as u32 {
        let root = find(&mut parent, c);
        first_comp[root as usize] = first_comp[root as usize].min(c);
    }
    let mut roots: Vec<u32> = (0..n_comps as u32)
        .filter(|&c| find(&mut parent, c) == c)
        .collect();
    roots.sort_unstable_by_key(|&r| first_comp[r as usize]);
    let mut dense = vec![u32::MAX; n_comps];
    for (new_id, &root) in roots.iter().enumerate() {
        dense[root as usize] = new_id as u32;
    }

    comp_of
        .iter()
        .map(|&c| dense[find(&mut parent, c) as usize])
        .collect()
}

fn build_map(img: &GrayImage, assignment: Vec<u32>, w: usize, h: usize) -> SuperpixelMap {
    let count = assignment.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut members: Vec<Vec<(u32, u32)>> = vec![Vec::new(); count];
    for y in 0..h {
        for x in 0..w {
            members[assignment[y * w + x] as usize].push((x as u32, y as u32));
        }
    }
    let superpixels = members
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let inv = 1.0 / members.len() as f64;
            let (sx, sy) = members
                .iter()
                .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
            Superpixel {
                id,
                centroid: (sx * inv, sy * inv),
                members,
            }
        })
        .collect();
    let _ = img;
    SuperpixelMap {
        width: w,
        height: h,
        assignment,
        superpixels,
    }
}

/// Writes the assignment raster as a 16-bit grayscale PNG, id per pixel.
pub fn write_assignment_png(map: &SuperpixelMap, path: &Path) -> Result<()> {
    if map.len() > u16::MAX as usize + 1 {
        return Err(Error::LabelOutOfRange {
            label: map.len() - 1,
            classes: u16::MAX as usize + 1,
        });
    }
    let data: Vec<u16> = map.assignment.iter().map(|&id| id as u16).collect();
    let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_vec(map.width as u32, map.height as u32, data).unwrap();
    buf.save(path).map_err(|source| Error::WriteImage {
        path: path.into(),
        source,
    })
}

/// Writes the source image with superpixel boundaries drawn in red.
pub fn write_boundary_overlay(map: &SuperpixelMap, img: &GrayImage, path: &Path) -> Result<()> {
    let (w, h) = (map.width, map.height);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        let (x, y) = (x as usize, y as usize);
        let idx = y * w + x;
        let id = map.assignment[idx];
        let boundary = (x > 0 && map.assignment[idx - 1] != id)
            || (y > 0 && map.assignment[idx - w] != id);
        p.0 = if boundary {
            [255, 0, 0]
        } else {
            let v = (img.get(x, y) * 255.0).round() as u8;
            [v, v, v]
        };
    }
    buf.save(path).map_err(|source| Error::WriteImage {
        path: path.into(),
        source,
    })
}
