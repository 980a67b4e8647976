//! Binary model files: a trained network plus the palette it was trained
//! against, so a model is self-describing at segmentation time.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "HSEG" | version u8 | conv layer count u32 | kernel count u32 ...
//! | max pool u8 | dense width u32 | classes u32 | input side u32
//! | palette entry count u32 | (name len u32, name bytes, r, g, b) ...
//! | parameter count u64 | parameters f32 ...
//! ```
//!
//! Parameters are stored as 32-bit floats in [`Network::params`] order.
//! Saving quantizes; loading a saved file therefore reproduces the exact
//! post-quantization network, which is also what `train` leaves in memory
//! after its final [`Network::quantize_f32`] call.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pageseg_core::imageio::Palette;
use pageseg_core::nn::{Network, NetworkConfig};

pub const MAGIC: [u8; 4] = *b"HSEG";
pub const VERSION: u8 = 1;

/// Upper bounds on header fields, to fail fast on corrupt files instead of
/// attempting enormous allocations.
const MAX_CONV_LAYERS: usize = 64;
const MAX_FIELD: usize = 1 << 20;

pub fn save(path: &Path, network: &Network, palette: &Palette) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("creating model file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let cfg = network.config();

    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    write_u32(&mut w, cfg.conv_kernel_counts.len() as u32)?;
    for &k in &cfg.conv_kernel_counts {
        write_u32(&mut w, k as u32)?;
    }
    w.write_all(&[cfg.use_max_pool as u8])?;
    write_u32(&mut w, cfg.dense_width as u32)?;
    write_u32(&mut w, cfg.num_classes as u32)?;
    write_u32(&mut w, cfg.input_side as u32)?;

    write_u32(&mut w, palette.len() as u32)?;
    for (name, rgb) in palette.entries() {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_all(rgb)?;
    }

    let params = network.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()
        .with_context(|| format!("writing model file {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Network, Palette)> {
    let file = File::open(path)
        .with_context(|| format!("opening model file {}", path.display()))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).context("model file truncated")?;
    if magic != MAGIC {
        bail!("{} is not a model file (bad magic)", path.display());
    }
    let version = read_u8(&mut r)?;
    if version != VERSION {
        bail!("unsupported model format version {version}");
    }

    let n_conv = read_len(&mut r, MAX_CONV_LAYERS, "conv layer count")?;
    let mut conv_kernel_counts = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        conv_kernel_counts.push(read_len(&mut r, MAX_FIELD, "kernel count")?);
    }
    let use_max_pool = match read_u8(&mut r)? {
        0 => false,
        1 => true,
        other => bail!("corrupt model file: pool flag {other}"),
    };
    let dense_width = read_len(&mut r, MAX_FIELD, "dense width")?;
    let num_classes = read_len(&mut r, MAX_FIELD, "class count")?;
    let input_side = read_len(&mut r, MAX_FIELD, "input side")?;

    let n_entries = read_len(&mut r, MAX_FIELD, "palette entry count")?;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = read_len(&mut r, MAX_FIELD, "palette name length")?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).context("model file truncated")?;
        let name = String::from_utf8(name).context("palette name is not UTF-8")?;
        let mut rgb = [0u8; 3];
        r.read_exact(&mut rgb).context("model file truncated")?;
        entries.push((name, rgb));
    }
    let palette = Palette::new(entries).context("model palette is invalid")?;
    if palette.len() != num_classes {
        bail!(
            "model declares {num_classes} classes but its palette has {} entries",
            palette.len()
        );
    }

    let config = NetworkConfig {
        conv_kernel_counts,
        use_max_pool,
        dense_width,
        num_classes,
        input_side,
    };
    let mut network =
        Network::new(config, 0).context("model declares an invalid network shape")?;

    let mut count = [0u8; 8];
    r.read_exact(&mut count).context("model file truncated")?;
    let stored = u64::from_le_bytes(count) as usize;
    let expected = network.param_count();
    if stored != expected {
        bail!("model stores {stored} parameters but its shape needs {expected}");
    }
    let mut params = Vec::with_capacity(expected);
    let mut buf = [0u8; 4];
    for _ in 0..expected {
        r.read_exact(&mut buf).context("model file truncated")?;
        params.push(f32::from_le_bytes(buf) as f64);
    }
    network.set_params(&params)?;

    if r.read(&mut buf).context("reading model file")? != 0 {
        bail!("trailing bytes after model payload in {}", path.display());
    }
    Ok((network, palette))
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).context("model file truncated")?;
    Ok(b[0])
}

fn read_len(r: &mut impl Read, max: usize, what: &str) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).context("model file truncated")?;
    let v = u32::from_le_bytes(b) as usize;
    if v > max {
        bail!("corrupt model file: {what} {v} exceeds limit {max}");
    }
    Ok(v)
}
