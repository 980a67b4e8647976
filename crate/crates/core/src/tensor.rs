//! Dense row-major tensors plus the deterministic random generator used for
//! weight initialization, dropout masks, and batch sampling.
//!
//! Training runs at 64-bit precision so finite-difference gradient checks are
//! meaningful; models are quantized to 32-bit only at serialization time.

use crate::error::{Error, Result};

/// Dense multi-dimensional array, row-major, `f64` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeDataMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rejects NaN and infinities; reports the first offending index.
    pub fn validate_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// Reinterprets the data under a new shape; the element order is kept.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("add", other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("hadamard", other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Matrix-vector product: `w` is `[m, n]`, `x` is `[n]`, result is `[m]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: "matvec",
        left: w.shape.clone(),
        right: x.shape.clone(),
    };
    if w.shape.len() != 2 || x.shape.len() != 1 || w.shape[1] != x.shape[0] {
        return Err(mismatch());
    }
    let (m, n) = (w.shape[0], w.shape[1]);
    let mut out = vec![0.0; m];
    for (row, dst) in w.data.chunks_exact(n).zip(out.iter_mut()) {
        *dst = row.iter().zip(&x.data).map(|(a, b)| a * b).sum();
    }
    Tensor::from_vec(&[m], out)
}

/// SplitMix64 generator.
///
/// Update rule: `state += 0x9E3779B97F4A7C15`, then the output is
/// `z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
/// z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`.
///
/// The same seed always yields the same stream on every platform, which is
/// what makes training runs bit-reproducible. `split` derives an independent
/// child stream, used to give each sweep point its own seed.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `[0, n)` via the multiply-shift reduction.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Child generator with an independent stream.
    pub fn split(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }
}

/// Tensor of uniform draws in `[lo, hi)`, deterministic in the seed.
pub fn rng_uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Result<Tensor> {
    if lo >= hi {
        return Err(Error::BadRange { lo, hi });
    }
    let mut rng = SplitMix64::new(seed);
    let mut t = Tensor::zeros(shape);
    fill_uniform(&mut t, lo, hi, &mut rng);
    Ok(t)
}

/// Overwrites `t` with uniform draws from an existing generator.
pub fn fill_uniform(t: &mut Tensor, lo: f64, hi: f64, rng: &mut SplitMix64) {
    for v in t.data_mut() {
        *v = rng.uniform(lo, hi);
    }
}
